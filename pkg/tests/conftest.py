import pytest

from raymeta import AntennaPattern, Material, Scene, TraceConfig, trace_paths
from raymeta.scene import linear_track, plate

C = 299792458.0


def mirror_scene(distance=10.0, width=1.0, mesh_id=1, track=None):
    """Specular plate facing the origin along -x."""
    mesh = plate(mesh_id, (distance, 0.0, 0.0), (-1.0, 0.0, 0.0), width)
    tracks = {mesh_id: track} if track is not None else {}
    return Scene([mesh], [Material(1.0, 1.0)], tracks)


def receding_scene(velocity, n_chirps=128, chirp_interval=1e-4, distance=10.0, width=0.5):
    duration = n_chirps * chirp_interval
    return mirror_scene(distance, width, track=linear_track((velocity, 0.0, 0.0), duration))


def ghost_scene():
    """Target plate at 10 m plus a side wall that creates a longer double-bounce path."""
    materials = [Material(0.5, 1.0), Material(0.5, 0.5)]
    target = plate(1, (10.0, 0.0, 0.0), (-1.0, 0.0, 0.0), 0.3)
    wall = plate(2, (3.5, 1.5, 0.0), (0.0, -1.0, 0.0), 5.0, 2.0, material_id=1)
    return Scene([target, wall], materials)


@pytest.fixture(scope="session")
def ghost():
    scene = ghost_scene()
    paths = trace_paths(scene, TraceConfig(1_000_000, 3, 3))
    return scene, paths


@pytest.fixture(scope="session")
def mirror_paths():
    scene = mirror_scene()
    paths = trace_paths(scene, TraceConfig(200_000, 1, 7), AntennaPattern.raised_cosine(2),
                        AntennaPattern.raised_cosine(2))
    return scene, paths


ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(line[1])
