"""Compiled inner loops for ray tracing and IF synthesis.

Everything here operates on flat numpy arrays so it can run without the GIL.
Triangles are addressed by a global index that is ordered by
``(mesh_id, triangle_index)``, so "lowest global index" is also the
tie-breaking order for equal-distance hits.
"""
import math

import numpy as np
from numba import njit

EPSILON = 1e-6
PARALLEL_DET = 1e-15

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, nogil=True)
def _mix64(z):
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def counter_uniform(seed, stream, counter):
    """Uniform in [0, 1) from a stateless hash of (seed, stream, counter)."""
    key = _mix64(np.uint64(seed) + _GOLDEN * (np.uint64(stream) + _ONE))
    z = _mix64(key ^ (_GOLDEN * (np.uint64(counter) + _ONE)))
    return float(z >> _S11) * _INV53


@njit(cache=True, nogil=True)
def _triangle_hit(ox, oy, oz, dx, dy, dz, v0, v1, v2):
    """Moller-Trumbore. Returns (t, u, v); t = inf on a miss."""
    e1x = v1[0] - v0[0]
    e1y = v1[1] - v0[1]
    e1z = v1[2] - v0[2]
    e2x = v2[0] - v0[0]
    e2y = v2[1] - v0[1]
    e2z = v2[2] - v0[2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < PARALLEL_DET:
        return np.inf, 0.0, 0.0
    inv = 1.0 / det
    sx = ox - v0[0]
    sy = oy - v0[1]
    sz = oz - v0[2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return np.inf, 0.0, 0.0
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    return t, u, v


@njit(cache=True, nogil=True)
def _box_entry(ox, oy, oz, dx, dy, dz, lo, hi):
    """Entry distance of the ray into an AABB, inf if it misses."""
    tnear = -np.inf
    tfar = np.inf
    o = (ox, oy, oz)
    d = (dx, dy, dz)
    for a in range(3):
        if d[a] == 0.0:
            if o[a] < lo[a] or o[a] > hi[a]:
                return np.inf
        else:
            inv = 1.0 / d[a]
            t0 = (lo[a] - o[a]) * inv
            t1 = (hi[a] - o[a]) * inv
            if t0 > t1:
                t0, t1 = t1, t0
            if t0 > tnear:
                tnear = t0
            if t1 < tfar:
                tfar = t1
    if tnear > tfar or tfar < 0.0:
        return np.inf
    return max(tnear, 0.0)


@njit(cache=True, nogil=True)
def closest_hit(ox, oy, oz, dx, dy, dz, tmin, tmax,
                node_lo, node_hi, node_left, node_right, node_start, node_count,
                prim_order, v0, v1, v2):
    """Nearest triangle with tmin < t < tmax. Returns (tri, t, u, v), tri=-1 on miss."""
    best_tri = -1
    best_t = tmax
    best_u = 0.0
    best_v = 0.0
    stack = np.empty(128, dtype=np.int64)
    top = 0
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        if _box_entry(ox, oy, oz, dx, dy, dz, node_lo[node], node_hi[node]) > best_t:
            continue
        if node_left[node] < 0:
            for k in range(node_start[node], node_start[node] + node_count[node]):
                tri = prim_order[k]
                t, u, v = _triangle_hit(ox, oy, oz, dx, dy, dz, v0[tri], v1[tri], v2[tri])
                if t <= tmin or t == np.inf:
                    continue
                if t < best_t or (t == best_t and best_tri >= 0 and tri < best_tri):
                    best_t = t
                    best_tri = tri
                    best_u = u
                    best_v = v
        else:
            stack[top] = node_left[node]
            top += 1
            stack[top] = node_right[node]
            top += 1
    if best_tri < 0:
        return -1, np.inf, 0.0, 0.0
    return best_tri, best_t, best_u, best_v


@njit(cache=True, nogil=True)
def occluded(ox, oy, oz, dx, dy, dz, tmin, tmax,
             node_lo, node_hi, node_left, node_right, node_start, node_count,
             prim_order, v0, v1, v2):
    stack = np.empty(128, dtype=np.int64)
    top = 0
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        if _box_entry(ox, oy, oz, dx, dy, dz, node_lo[node], node_hi[node]) >= tmax:
            continue
        if node_left[node] < 0:
            for k in range(node_start[node], node_start[node] + node_count[node]):
                tri = prim_order[k]
                t, u, v = _triangle_hit(ox, oy, oz, dx, dy, dz, v0[tri], v1[tri], v2[tri])
                if tmin < t < tmax:
                    return True
        else:
            stack[top] = node_left[node]
            top += 1
            stack[top] = node_right[node]
            top += 1
    return False


@njit(cache=True, nogil=True)
def intersect_many(origins, directions, tmin,
                   node_lo, node_hi, node_left, node_right, node_start, node_count,
                   prim_order, v0, v1, v2):
    n = origins.shape[0]
    tri = np.full(n, -1, dtype=np.int64)
    dist = np.full(n, np.inf)
    us = np.zeros(n)
    vs = np.zeros(n)
    for i in range(n):
        o = origins[i]
        d = directions[i]
        tri[i], dist[i], us[i], vs[i] = closest_hit(
            o[0], o[1], o[2], d[0], d[1], d[2], tmin, np.inf,
            node_lo, node_hi, node_left, node_right, node_start, node_count,
            prim_order, v0, v1, v2)
    return tri, dist, us, vs


@njit(cache=True, nogil=True)
def _basis(nx, ny, nz):
    # Duff et al. 2017 branchless orthonormal basis
    sign = 1.0 if nz >= 0.0 else -1.0
    a = -1.0 / (sign + nz)
    b = nx * ny * a
    return (1.0 + sign * nx * nx * a, sign * b, -sign * nx,
            b, sign + ny * ny * a, -ny)


@njit(cache=True, nogil=True)
def bounce(dx, dy, dz, nx, ny, nz, p_specular, xi0, xi1, xi2):
    """Outgoing direction and specular flag; the normal must face the incoming ray."""
    if xi0 < p_specular:
        k = 2.0 * (dx * nx + dy * ny + dz * nz)
        rx = dx - k * nx
        ry = dy - k * ny
        rz = dz - k * nz
        norm = math.sqrt(rx * rx + ry * ry + rz * rz)
        return rx / norm, ry / norm, rz / norm, True
    tx, ty, tz, bx, by, bz = _basis(nx, ny, nz)
    r = math.sqrt(xi1)
    phi = 2.0 * math.pi * xi2
    a = r * math.cos(phi)
    b = r * math.sin(phi)
    c = math.sqrt(max(0.0, 1.0 - xi1))
    rx = a * tx + b * bx + c * nx
    ry = a * ty + b * by + c * ny
    rz = a * tz + b * bz + c * nz
    norm = math.sqrt(rx * rx + ry * ry + rz * rz)
    return rx / norm, ry / norm, rz / norm, False


@njit(cache=True, nogil=True)
def bounce_batch(incoming, normal, p_specular, xi):
    n = xi.shape[0]
    out = np.empty((n, 3))
    specular = np.empty(n, dtype=np.bool_)
    for i in range(n):
        x, y, z, s = bounce(incoming[0], incoming[1], incoming[2],
                            normal[0], normal[1], normal[2],
                            p_specular, xi[i, 0], xi[i, 1], xi[i, 2])
        out[i, 0] = x
        out[i, 1] = y
        out[i, 2] = z
        specular[i] = s
    return out, specular


@njit(cache=True, nogil=True)
def gain(pattern, dx, dy, dz):
    """Raised-cosine gain; ``pattern`` = [iso, fx, fy, fz, lx, ly, lz, ux, uy, uz, k_az, k_el]."""
    if pattern[0] != 0.0:
        return 1.0
    x = dx * pattern[1] + dy * pattern[2] + dz * pattern[3]
    if x <= 0.0:
        return 0.0
    y = dx * pattern[4] + dy * pattern[5] + dz * pattern[6]
    rho = math.sqrt(x * x + y * y)
    if rho > 1.0:
        rho = 1.0
    g = 1.0
    if pattern[10] != 0.0:
        g *= (x / rho) ** pattern[10]
    if pattern[11] != 0.0:
        g *= rho ** pattern[11]
    return g


@njit(cache=True, nogil=True)
def _launch(pattern, seed, ray):
    xi1 = counter_uniform(seed, ray, 0)
    xi2 = counter_uniform(seed, ray, 1)
    phi = 2.0 * math.pi * xi2
    if pattern[0] != 0.0:
        z = 1.0 - 2.0 * xi1
        r = math.sqrt(max(0.0, 1.0 - z * z))
        return r * math.cos(phi), r * math.sin(phi), z
    # uniform over the hemisphere around boresight: cos(theta) ~ U[0, 1)
    c = 1.0 - xi1
    r = math.sqrt(max(0.0, 1.0 - c * c))
    a = r * math.cos(phi)
    b = r * math.sin(phi)
    dx = c * pattern[1] + a * pattern[4] + b * pattern[7]
    dy = c * pattern[2] + a * pattern[5] + b * pattern[8]
    dz = c * pattern[3] + a * pattern[6] + b * pattern[9]
    norm = math.sqrt(dx * dx + dy * dy + dz * dz)
    return dx / norm, dy / norm, dz / norm


@njit(cache=True, nogil=True)
def trace_rays(first_ray, n_rays, seed, max_bounces, tx, rx, pattern_tx, pattern_rx,
               node_lo, node_hi, node_left, node_right, node_start, node_count,
               prim_order, v0, v1, v2, tri_specular, tri_reflectivity,
               chain_tri, chain_u, chain_v, connected, lengths, amplitudes):
    """Trace rays ``first_ray .. first_ray + n_rays`` and fill the per-ray output rows.

    After every bounce the hit point is joined to RX by a shadow ray. A
    successful join marks ``connected[r, b]`` and stores the full
    TX -> hits -> RX length and amplitude of that path.
    """
    for r in range(n_rays):
        ray = first_ray + r
        dx, dy, dz = _launch(pattern_tx, seed, ray)
        launch_gain = gain(pattern_tx, dx, dy, dz)
        if launch_gain <= 0.0:
            continue
        ox, oy, oz = tx[0], tx[1], tx[2]
        travelled = 0.0
        reflect = 1.0
        for b in range(max_bounces):
            tri, t, u, v = closest_hit(ox, oy, oz, dx, dy, dz, EPSILON, np.inf,
                                       node_lo, node_hi, node_left, node_right,
                                       node_start, node_count, prim_order, v0, v1, v2)
            if tri < 0:
                break
            px = ox + t * dx
            py = oy + t * dy
            pz = oz + t * dz
            travelled += t
            chain_tri[r, b] = tri
            chain_u[r, b] = u
            chain_v[r, b] = v
            a0 = v0[tri]
            a1 = v1[tri]
            a2 = v2[tri]
            e1x = a1[0] - a0[0]
            e1y = a1[1] - a0[1]
            e1z = a1[2] - a0[2]
            e2x = a2[0] - a0[0]
            e2y = a2[1] - a0[1]
            e2z = a2[2] - a0[2]
            nx = e1y * e2z - e1z * e2y
            ny = e1z * e2x - e1x * e2z
            nz = e1x * e2y - e1y * e2x
            nn = math.sqrt(nx * nx + ny * ny + nz * nz)
            nx /= nn
            ny /= nn
            nz /= nn
            if nx * dx + ny * dy + nz * dz > 0.0:
                nx = -nx
                ny = -ny
                nz = -nz
            reflect *= tri_reflectivity[tri]

            cx = rx[0] - px
            cy = rx[1] - py
            cz = rx[2] - pz
            dist = math.sqrt(cx * cx + cy * cy + cz * cz)
            # RX must lie on the lit side of the surface
            if dist > EPSILON and cx * nx + cy * ny + cz * nz > 0.0:
                cx /= dist
                cy /= dist
                cz /= dist
                if not occluded(px, py, pz, cx, cy, cz, EPSILON, dist - EPSILON,
                                node_lo, node_hi, node_left, node_right,
                                node_start, node_count, prim_order, v0, v1, v2):
                    total = travelled + dist
                    g_rx = gain(pattern_rx, -cx, -cy, -cz)
                    connected[r, b] = True
                    lengths[r, b] = total
                    amplitudes[r, b] = launch_gain * g_rx * reflect / (total * total)

            counter = 2 + 3 * b
            dx, dy, dz, _ = bounce(dx, dy, dz, nx, ny, nz, tri_specular[tri],
                                   counter_uniform(seed, ray, counter),
                                   counter_uniform(seed, ray, counter + 1),
                                   counter_uniform(seed, ray, counter + 2))
            ox, oy, oz = px, py, pz


@njit(cache=True, nogil=True)
def synthesize_rows(lengths, amplitudes, t_fast, mu, f_c, c, out, row_start, row_stop):
    """IF samples for chirp rows ``row_start:row_stop``; paths summed in ascending order."""
    n_paths = lengths.shape[1]
    n_samples = t_fast.shape[0]
    two_pi = 2.0 * math.pi
    for j in range(row_start, row_stop):
        for n in range(n_samples):
            out[j, n] = 0.0
        for i in range(n_paths):
            a = amplitudes[i]
            if a == 0.0:
                continue
            tau = lengths[j, i] / c
            carrier = f_c * tau
            carrier -= math.floor(carrier)
            slope = mu * tau
            for n in range(n_samples):
                cycles = slope * t_fast[n] + carrier
                cycles -= math.floor(cycles)
                phase = two_pi * cycles
                out[j, n] += complex(a * math.cos(phase), a * math.sin(phase))
