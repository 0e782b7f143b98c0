"""FMCW chirp-sequence synthesis and range-Doppler processing.

The IF model is the complex sum over paths
``a_i * exp(i*2*pi*(mu*t*tau_i(j) + f_c*tau_i(j)))`` with fast-time samples
``t_n = n*T_c/n_samples`` and one delay per path and chirp (stop-and-hop).
"""
from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import get_window

from . import _kernels

SPEED_OF_LIGHT = 299792458.0


@dataclass(frozen=True)
class RadarParams:
    f_c: float = 77e9
    bandwidth: float = 1e9
    chirp_duration: float = 100e-6
    chirp_interval: float = 100e-6
    n_samples: int = 256
    n_chirps: int = 128
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        errors = self.violations()
        if errors:
            raise ValueError("; ".join(errors))

    def violations(self):
        out = []
        if not self.bandwidth > 0:
            out.append(f"bandwidth must be > 0 (got {self.bandwidth})")
        if not self.chirp_duration > 0:
            out.append(f"chirp_duration must be > 0 (got {self.chirp_duration})")
        if self.chirp_interval < self.chirp_duration:
            out.append(f"chirp_interval {self.chirp_interval} < chirp_duration {self.chirp_duration}")
        if self.n_samples < 1 or self.n_chirps < 1:
            out.append("n_samples and n_chirps must be >= 1")
        return out

    @property
    def wavelength(self) -> float:
        return self.c / self.f_c

    @property
    def slope(self) -> float:
        return chirp_slope(self)

    def fast_time(self) -> np.ndarray:
        return np.arange(self.n_samples) * (self.chirp_duration / self.n_samples)

    def chirp_times(self) -> np.ndarray:
        return np.arange(self.n_chirps) * self.chirp_interval


@dataclass(eq=False)
class ChirpMatrix:
    """Complex IF samples, shape ``(n_chirps, n_samples)`` (slow time x fast time)."""

    samples: np.ndarray
    params: RadarParams

    def __add__(self, other: "ChirpMatrix") -> "ChirpMatrix":
        return ChirpMatrix(self.samples + other.samples, self.params)


@dataclass(eq=False)
class RangeDopplerMap:
    """2-D spectrum with zero Doppler centred along axis 0.

    ``range_m[k]`` is the one-way range of range bin ``k`` for a monostatic
    radar, i.e. half the path length. ``velocity[m]`` is the radial speed
    of Doppler row ``m`` (positive = receding).
    """

    spectrum: np.ndarray
    range_hz: np.ndarray
    doppler_hz: np.ndarray
    range_m: np.ndarray
    velocity: np.ndarray
    zero_pad: int = 1
    window: Tuple[Optional[str], Optional[str]] = ("hann", "hann")

    @property
    def shape(self):
        return self.spectrum.shape

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.spectrum)

    def db(self, reference: Optional[float] = None) -> np.ndarray:
        """``20*log10|S|`` relative to ``reference`` (default: this map's peak)."""
        mag = self.magnitude
        ref = mag.max() if reference is None else reference
        if ref <= 0:
            return np.full(mag.shape, -np.inf)
        with np.errstate(divide="ignore"):
            return 20.0 * np.log10(mag / ref)

    @property
    def zero_doppler_row(self) -> int:
        return self.spectrum.shape[0] // 2

    def peak(self) -> Tuple[int, int]:
        """(doppler_row, range_bin) of the largest magnitude."""
        row, col = np.unravel_index(int(np.argmax(self.magnitude)), self.spectrum.shape)
        return int(row), int(col)

    def range_bin_of(self, path_length: float, params: RadarParams) -> float:
        """Fractional range bin of a path of the given total length."""
        return path_length * params.bandwidth / params.c * self.zero_pad

    def doppler_bin_of(self, velocity: float, params: RadarParams) -> float:
        """Fractional Doppler bin offset from the zero-Doppler row for a radial speed."""
        return (2.0 * velocity * params.f_c * params.chirp_interval
                * params.n_chirps * self.zero_pad / params.c)


def delay_of(d: float, c: float = SPEED_OF_LIGHT) -> float:
    if d < 0:
        raise ValueError(f"path length must be non-negative (got {d})")
    return d / c


def chirp_slope(params: Optional[RadarParams] = None, *, bandwidth: Optional[float] = None,
                chirp_duration: Optional[float] = None) -> float:
    """Frequency slope ``B / T_c`` in Hz/s.

    Keyword values override ``params``; ``bandwidth=0`` is accepted and gives
    a constant-frequency (CW) slope of zero.
    """
    b = bandwidth if bandwidth is not None else params.bandwidth
    tc = chirp_duration if chirp_duration is not None else params.chirp_duration
    if tc <= 0:
        raise ValueError(f"chirp_duration must be positive (got {tc})")
    return b / tc


def synthesize_if(lengths_per_chirp, amplitudes, params: RadarParams,
                  noise_std: float = 0.0, rng: Optional[np.random.Generator] = None,
                  workers: int = 1) -> ChirpMatrix:
    """IF chirp matrix from path lengths (``n_chirps x n_paths``, meters).

    Paths are summed in ascending column order for every sample, so the
    result does not depend on ``workers``. Optional additive complex white
    Gaussian noise has standard deviation ``noise_std`` per sample.
    """
    lengths = np.asarray(lengths_per_chirp, dtype=np.float64)
    amplitudes = np.asarray(amplitudes, dtype=np.float64).reshape(-1)
    if lengths.ndim == 1 and len(amplitudes) == 0:
        lengths = lengths.reshape(params.n_chirps, 0)
    if lengths.ndim != 2 or lengths.shape != (params.n_chirps, len(amplitudes)):
        raise ValueError(
            f"lengths shape {lengths.shape} does not match "
            f"({params.n_chirps}, {len(amplitudes)})")
    if not (np.all(np.isfinite(lengths)) and np.all(np.isfinite(amplitudes))):
        raise ValueError("non-finite path lengths or amplitudes")
    if np.any(lengths < 0):
        raise ValueError("negative path length")
    out = np.zeros((params.n_chirps, params.n_samples), dtype=np.complex128)
    lengths = np.ascontiguousarray(lengths)
    t_fast = params.fast_time()
    if lengths.shape[1]:
        rows = np.linspace(0, params.n_chirps, max(1, min(workers, params.n_chirps)) + 1).astype(int)
        tiles = list(zip(rows[:-1], rows[1:]))

        def run(tile):
            _kernels.synthesize_rows(lengths, amplitudes, t_fast, chirp_slope(params),
                                     params.f_c, params.c, out, tile[0], tile[1])

        if len(tiles) == 1:
            run(tiles[0])
        else:
            with concurrent.futures.ThreadPoolExecutor(max_workers=len(tiles)) as pool:
                list(pool.map(run, tiles))
    if noise_std > 0:
        rng = np.random.default_rng() if rng is None else rng
        scale = noise_std / np.sqrt(2.0)
        out += scale * (rng.standard_normal(out.shape) + 1j * rng.standard_normal(out.shape))
    return ChirpMatrix(out, params)


WindowSpec = Union[None, str, Sequence[Optional[str]]]


def _window_pair(window: WindowSpec) -> Tuple[Optional[str], Optional[str]]:
    """Normalise to (slow-time window, fast-time window)."""
    if window is None or isinstance(window, str):
        pair = (window, window)
    else:
        pair = tuple(window)
        if len(pair) != 2:
            raise ValueError("window must be one name or a (slow, fast) pair")
    for w in pair:
        if w not in (None, "none", "hann"):
            raise ValueError(f"unsupported window {w!r}")
    return tuple(None if w in (None, "none") else w for w in pair)


def range_doppler(chirps: Union[ChirpMatrix, np.ndarray], window: WindowSpec = "hann",
                  zero_pad_factor: int = 2, params: Optional[RadarParams] = None) -> RangeDopplerMap:
    """Windowed, zero-padded 2-D DFT; the Doppler axis is shifted so zero is centred.

    ``window`` is ``"hann"``, ``None`` or a ``(slow_time, fast_time)`` pair.
    Hann windows are the periodic (DFT-even) variant.
    """
    if isinstance(chirps, ChirpMatrix):
        samples, params = chirps.samples, chirps.params
    else:
        samples = np.asarray(chirps)
        if params is None:
            raise ValueError("params are required for a bare sample array")
    if zero_pad_factor < 1:
        raise ValueError("zero_pad_factor must be >= 1")
    slow_w, fast_w = _window_pair(window)
    n_chirps, n_samples = samples.shape
    data = samples.astype(np.complex128, copy=True)
    if slow_w:
        data *= get_window(slow_w, n_chirps)[:, None]
    if fast_w:
        data *= get_window(fast_w, n_samples)[None, :]
    shape = (n_chirps * zero_pad_factor, n_samples * zero_pad_factor)
    spectrum = np.fft.fftshift(np.fft.fft2(data, s=shape), axes=0)

    range_hz = np.arange(shape[1]) / (params.chirp_duration * zero_pad_factor)
    doppler_hz = (np.arange(shape[0]) - shape[0] // 2) / (params.chirp_interval * shape[0])
    return RangeDopplerMap(
        spectrum=spectrum, range_hz=range_hz, doppler_hz=doppler_hz,
        range_m=range_hz * params.c / (2.0 * chirp_slope(params)),
        velocity=doppler_hz * params.c / (2.0 * params.f_c),
        zero_pad=zero_pad_factor, window=(slow_w, fast_w))
