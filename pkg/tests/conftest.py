import numpy as np
import pytest

from scenepaint import raster, scenegraph as sg
from scenepaint.toyroom import toy_room_dir


@pytest.fixture(scope="session")
def toy_paths():
    d = toy_room_dir()
    return {"dir": d, "scene": d / "scene.txt", "cameras": d / "cameras.txt", "styles": d / "styles.txt"}


@pytest.fixture(scope="session")
def toy_scene(toy_paths):
    return sg.load_scene(toy_paths["scene"])


@pytest.fixture(scope="session")
def toy_cameras(toy_paths):
    return sg.load_cameras(toy_paths["cameras"])


@pytest.fixture(scope="session")
def toy_styles(toy_paths):
    return sg.load_styles(toy_paths["styles"])


@pytest.fixture(scope="session")
def toy_frames(toy_scene, toy_cameras):
    return [raster.rasterize_view(toy_scene, c) for c in toy_cameras]


def unit_cube_mesh(name="cube"):
    v = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)], float)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = [(a, b, c) for a, b, c, d in quads] + [(a, c, d) for a, b, c, d in quads]
    return sg.Mesh(v, np.array(tris), name=name)


def quad_mesh(size=1.0, name="quad"):
    h = size / 2
    v = np.array([[-h, -h, 0], [h, -h, 0], [h, h, 0], [-h, h, 0]], float)
    return sg.Mesh(v, np.array([[0, 1, 2], [0, 2, 3]]), name=name)


def random_scene(rng, n_objects=4, tris_per_object=6, class_count=5):
    """Random triangle soup objects in front of a camera at the origin looking +z."""
    objects = []
    for k in range(n_objects):
        center = rng.uniform([-1.0, -1.0, 2.0], [1.0, 1.0, 5.0])
        verts = center + rng.uniform(-0.8, 0.8, size=(3 * tris_per_object, 3))
        tris = np.arange(3 * tris_per_object).reshape(-1, 3)
        mesh = sg.Mesh(verts, tris, name=f"soup{k}")
        objects.append(sg.ObjectInstance(f"o{k}", f"soup{k}.obj", mesh, np.eye(4), int(rng.integers(1, class_count + 1))))
    return sg.Scene(tuple(objects), class_count)


def origin_camera(width=32, height=24, f=30.0):
    K = np.array([[f, 0, width / 2], [0, f, height / 2], [0, 0, 1.0]])
    return sg.Camera(K, np.eye(4), width, height)


# ------------------------------------------------------- acceptance summary

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(name: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
