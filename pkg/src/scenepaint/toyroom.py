"""Procedural desk-scale bedroom used as the shipped example scene.

The room is a closed box (walls, floor, ceiling) with eight pieces of
furniture built from axis-aligned boxes, plus 20 cameras placed inside it.
``write_toy_room`` produces the text files shipped under ``data/toyroom``.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .scenegraph import (
    Camera,
    Mesh,
    ObjectInstance,
    Scene,
    look_at,
    rotation,
    sample_styles,
    save_cameras,
    save_scene,
    save_styles,
    translation,
)

CLASS_NAMES = (
    "wall", "floor", "ceiling", "bed", "cabinet", "chair",
    "table", "painting", "sofa", "lamp", "rug", "door",
)  # fmt: skip

ROOM_MIN = np.array([-2.0, -1.5, 0.0])
ROOM_MAX = np.array([2.0, 1.5, 2.6])


def _box(center, size):
    c, h = np.asarray(center, float), 0.5 * np.asarray(size, float)
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
    verts = c + corners * h
    faces = [
        (0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1),
        (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3),
    ]  # fmt: skip
    tris = [(a, b, c_) for a, b, c_, d in faces] + [(a, c_, d) for a, b, c_, d in faces]
    return verts, np.array(tris)


def _merge(parts, name):
    verts, tris, off = [], [], 0
    for v, t in parts:
        verts.append(v)
        tris.append(t + off)
        off += len(v)
    return Mesh(np.concatenate(verts), np.concatenate(tris), name=name)


def _quad(corners):
    return np.asarray(corners, float), np.array([(0, 1, 2), (0, 2, 3)])


def _room_meshes():
    (x0, y0, z0), (x1, y1, z1) = ROOM_MIN, ROOM_MAX
    floor = _merge([_quad([(x0, y0, z0), (x1, y0, z0), (x1, y1, z0), (x0, y1, z0)])], "floor")
    ceiling = _merge([_quad([(x0, y0, z1), (x0, y1, z1), (x1, y1, z1), (x1, y0, z1)])], "ceiling")
    walls = _merge(
        [
            _quad([(x0, y0, z0), (x0, y1, z0), (x0, y1, z1), (x0, y0, z1)]),
            _quad([(x1, y0, z0), (x1, y0, z1), (x1, y1, z1), (x1, y1, z0)]),
            _quad([(x0, y0, z0), (x0, y0, z1), (x1, y0, z1), (x1, y0, z0)]),
            _quad([(x0, y1, z0), (x1, y1, z0), (x1, y1, z1), (x0, y1, z1)]),
        ],
        "walls",
    )
    return floor, ceiling, walls


def _furniture_meshes():
    leg = 0.05
    bed = _merge([_box((0, 0, 0.2), (1.4, 2.0, 0.4)), _box((0, -0.97, 0.5), (1.4, 0.06, 1.0))], "bed")
    cabinet = _merge([_box((0, 0, 0.6), (0.8, 0.5, 1.2))], "cabinet")
    table_parts = [_box((0, 0, 0.72), (1.0, 0.7, 0.06))]
    chair_parts = [_box((0, 0, 0.45), (0.45, 0.45, 0.05)), _box((0, 0.2, 0.72), (0.45, 0.05, 0.5))]
    for sx in (-1, 1):
        for sy in (-1, 1):
            table_parts.append(_box((sx * 0.45, sy * 0.3, 0.345), (leg, leg, 0.69)))
            chair_parts.append(_box((sx * 0.19, sy * 0.19, 0.21), (0.04, 0.04, 0.42)))
    table = _merge(table_parts, "table")
    chair = _merge(chair_parts, "chair")
    painting = _merge([_box((0, 0, 0), (0.9, 0.03, 0.6))], "painting")
    rug = _merge([_box((0, 0, 0.005), (1.6, 1.0, 0.01))], "rug")
    return bed, cabinet, table, chair, painting, rug


def _place(x, y, z=0.0, yaw=0.0):
    return translation((x, y, z)) @ rotation("z", yaw)


def build_toy_scene() -> Scene:
    floor, ceiling, walls = _room_meshes()
    bed, cabinet, table, chair, painting, rug = _furniture_meshes()
    cid = {n: i + 1 for i, n in enumerate(CLASS_NAMES)}
    I = np.eye(4)
    objects = [
        ObjectInstance("walls", "meshes/walls.obj", walls, I, cid["wall"]),
        ObjectInstance("floor", "meshes/floor.obj", floor, I, cid["floor"]),
        ObjectInstance("ceiling", "meshes/ceiling.obj", ceiling, I, cid["ceiling"]),
        ObjectInstance("bed", "meshes/bed.obj", bed, _place(-1.25, -0.48), cid["bed"]),
        ObjectInstance("cabinet", "meshes/cabinet.obj", cabinet, _place(1.5, -1.2), cid["cabinet"]),
        ObjectInstance("table", "meshes/table.obj", table, _place(1.0, 0.8), cid["table"]),
        ObjectInstance("chair_1", "meshes/chair.obj", chair, _place(1.0, 0.15, yaw=180.0), cid["chair"]),
        ObjectInstance("chair_2", "meshes/chair.obj", chair, _place(0.25, 0.8, yaw=90.0), cid["chair"]),
        ObjectInstance("painting", "meshes/painting.obj", painting, _place(-0.6, 1.48, 1.5), cid["painting"]),
        ObjectInstance("rug", "meshes/rug.obj", rug, _place(0.1, -0.4), cid["rug"]),
    ]
    return Scene(tuple(objects), len(CLASS_NAMES), class_names=CLASS_NAMES)


def build_toy_cameras(count: int = 20, resolution: int = 64, seed: int = 7) -> list[Camera]:
    """Cameras at head height looking down into the room, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    cams = []
    while len(cams) < count:
        eye = rng.uniform((-1.4, -0.9, 1.4), (1.4, 0.9, 1.9))
        target = rng.uniform((-1.9, -1.4, 0.2), (1.9, 1.4, 1.3))
        if np.linalg.norm(target - eye) < 1.2:
            continue
        cams.append(Camera.from_fov(look_at(eye, target), resolution, resolution, 70.0))
    return cams


def write_toy_room(out_dir: str | Path, n_styles: int = 3, dim_z: int = 64) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_scene(build_toy_scene(), out / "scene.txt", write_meshes=True)
    save_cameras(build_toy_cameras(), out / "cameras.txt")
    save_styles(sample_styles(n_styles, dim_z, seed=3), out / "styles.txt")
    (out / "edit_chair.txt").write_text(
        "# scenepaint-edit v1\n"
        "# move one chair away from the table and turn it\n"
        "chair_2 translate 0.0 -0.5 0.0\n"
        "chair_2 rotate z 30\n"
    )
    return out


def toy_room_dir() -> Path:
    """Directory of the shipped toy room files."""
    return Path(str(resources.files("scenepaint") / "data" / "toyroom"))
