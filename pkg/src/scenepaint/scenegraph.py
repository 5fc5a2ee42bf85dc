"""Scene data model: labeled meshes, rigid transforms, cameras and style sets.

Text formats handled here all start with a versioned header line:

    # scenepaint-scene v1      scene description (objects + class count)
    # scenepaint-cameras v1    camera list
    # scenepaint-styles v1     style vectors, one per line
    # scenepaint-edit v1       declarative edit script

Meshes are Wavefront OBJ files (``v`` and ``f`` records only).
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

SCENE_HEADER = "# scenepaint-scene v1"
CAMERA_HEADER = "# scenepaint-cameras v1"
STYLE_HEADER = "# scenepaint-styles v1"
EDIT_HEADER = "# scenepaint-edit v1"

_RIGID_TOL = 1e-6


class SceneError(ValueError):
    """Raised for invalid scene content (bad ids, degenerate bounds, ...)."""


class ParseError(SceneError):
    """Malformed text input. Carries the offending line number when known."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class MissingMeshError(SceneError, FileNotFoundError):
    pass


@dataclass(frozen=True)
class AABB:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise SceneError("bounds must be finite")
        if np.any(hi - lo <= 0):
            raise SceneError(f"degenerate bounds: extent {hi - lo} must be positive on every axis")

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> bool:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        slack = tol * np.maximum(1.0, np.abs(self.extent))
        return bool(np.all(p >= self.min - slack) and np.all(p <= self.max + slack))

    @classmethod
    def from_points(cls, points: np.ndarray) -> "AABB":
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(p) == 0:
            raise SceneError("cannot compute bounds of an empty point set")
        return cls(p.min(axis=0), p.max(axis=0))

    def to_list(self) -> list[list[float]]:
        return [self.min.tolist(), self.max.tolist()]


@dataclass(frozen=True)
class Mesh:
    """Indexed triangle mesh in object-local coordinates."""

    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int64
    name: str = ""

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise SceneError(f"mesh {self.name!r}: triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if not np.any(triangle_areas(v, t) > 0):
            raise SceneError(f"mesh {self.name!r} has no non-degenerate triangle")


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a, b, c = (vertices[triangles[:, i]] for i in range(3))
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclass(frozen=True)
class ObjectInstance:
    name: str
    mesh_ref: str
    mesh: Mesh
    transform: np.ndarray  # (4, 4) world-from-object
    class_id: int

    def __post_init__(self):
        m = np.array(self.transform, dtype=np.float64).reshape(4, 4)
        check_rigid(m, allow_scale=True)
        m.setflags(write=False)
        object.__setattr__(self, "transform", m)

    def world_vertices(self) -> np.ndarray:
        return transform_points(self.transform, self.mesh.vertices)


@dataclass(frozen=True)
class Scene:
    objects: tuple[ObjectInstance, ...]
    class_count: int
    bounds: AABB = field(init=False)
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        objs = tuple(self.objects)
        object.__setattr__(self, "objects", objs)
        if self.class_count < 1:
            raise SceneError("class count must be >= 1")
        if not objs:
            raise SceneError("scene has no objects")
        names = [o.name for o in objs]
        if len(set(names)) != len(names):
            raise SceneError("object names must be unique")
        for o in objs:
            if not 1 <= o.class_id <= self.class_count:
                raise SceneError(
                    f"object {o.name!r}: class id {o.class_id} outside [1, {self.class_count}]"
                )
        object.__setattr__(
            self, "bounds", AABB.from_points(np.concatenate([o.world_vertices() for o in objs]))
        )

    def index_of(self, object_id: str | int) -> int:
        if isinstance(object_id, (int, np.integer)) and not isinstance(object_id, bool):
            if 0 <= object_id < len(self.objects):
                return int(object_id)
        else:
            for i, o in enumerate(self.objects):
                if o.name == object_id:
                    return i
        raise KeyError(f"unknown object id {object_id!r}")


@dataclass(frozen=True)
class Camera:
    K: np.ndarray  # (3, 3)
    pose: np.ndarray  # (4, 4) world-from-camera
    width: int
    height: int

    def __post_init__(self):
        K = np.array(self.K, dtype=np.float64).reshape(3, 3)
        pose = np.array(self.pose, dtype=np.float64).reshape(4, 4)
        fx, fy, cx, cy = K[0, 0], K[1, 1], K[0, 2], K[1, 2]
        if not (fx > 0 and fy > 0):
            raise SceneError("focal lengths must be positive")
        if not (0 < cx < self.width and 0 < cy < self.height):
            raise SceneError("principal point must lie inside the image")
        check_rigid(pose, allow_scale=False)
        K.setflags(write=False)
        pose.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "pose", pose)

    @classmethod
    def from_fov(cls, pose: np.ndarray, width: int = 64, height: int = 64, fov_deg: float = 70.0) -> "Camera":
        f = 0.5 * width / math.tan(math.radians(fov_deg) / 2)
        K = np.array([[f, 0, width / 2], [0, f, height / 2], [0, 0, 1]])
        return cls(K, pose, width, height)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.width, self.height


def look_at(eye: Sequence[float], target: Sequence[float], up: Sequence[float] = (0, 0, 1)) -> np.ndarray:
    """World-from-camera pose for a camera at ``eye`` looking at ``target``.

    Camera axes follow the pinhole convention: x right, y down, z forward.
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        raise SceneError("look_at: up vector parallel to viewing direction")
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = right, down, fwd, eye
    return pose


# ---------------------------------------------------------------- transforms

def check_rigid(m: np.ndarray, allow_scale: bool = False) -> float:
    """Validate a 4x4 rigid transform and return its uniform scale."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (4, 4) or not np.all(np.isfinite(m)):
        raise SceneError("transform must be a finite 4x4 matrix")
    if not np.allclose(m[3], [0, 0, 0, 1], atol=_RIGID_TOL):
        raise SceneError("transform bottom row must be (0, 0, 0, 1)")
    r = m[:3, :3]
    det = np.linalg.det(r)
    if det <= 0:
        raise SceneError("transform rotation block must have positive determinant")
    scale = det ** (1.0 / 3.0)
    if not allow_scale and abs(scale - 1.0) > _RIGID_TOL:
        raise SceneError("transform is not rigid (scaled)")
    if not np.allclose(r.T @ r, scale * scale * np.eye(3), atol=_RIGID_TOL * max(1.0, scale * scale)):
        raise SceneError("transform is not rigid (rotation block not orthogonal up to uniform scale)")
    return float(scale)


def transform_points(m: np.ndarray, points: np.ndarray) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    return p @ m[:3, :3].T + m[:3, 3]


def translation(t: Sequence[float]) -> np.ndarray:
    m = np.eye(4)
    m[:3, 3] = t
    return m


def rotation(axis: str, degrees: float) -> np.ndarray:
    """Rotation about a principal axis ('x', 'y' or 'z') through the origin."""
    a = math.radians(degrees)
    c, s = math.cos(a), math.sin(a)
    i, j = {"x": (1, 2), "y": (2, 0), "z": (0, 1)}[axis]
    m = np.eye(4)
    m[i, i], m[i, j], m[j, i], m[j, j] = c, -s, s, c
    return m


def rigid_inverse(m: np.ndarray) -> np.ndarray:
    scale = check_rigid(m, allow_scale=True)
    r_inv = m[:3, :3].T / (scale * scale)
    out = np.eye(4)
    out[:3, :3] = r_inv
    out[:3, 3] = -r_inv @ m[:3, 3]
    return out


def apply_transform(
    scene: Scene,
    object_id: str | int,
    delta: np.ndarray,
    frozen_bounds: AABB | None = None,
    allow_scale: bool = False,
) -> Scene:
    """Left-compose ``delta`` onto one object's transform.

    Uniform scaling is experimental and only accepted with ``allow_scale``.
    If ``frozen_bounds`` (the painter's training bounds) is given, a warning is
    emitted when the edited object leaves them.
    """
    idx = scene.index_of(object_id)
    check_rigid(delta, allow_scale=allow_scale)
    objs = list(scene.objects)
    obj = objs[idx]
    objs[idx] = dataclasses.replace(obj, transform=np.asarray(delta, dtype=np.float64) @ obj.transform)
    edited = Scene(tuple(objs), scene.class_count, class_names=scene.class_names)
    assert edited.bounds.contains(np.concatenate([o.world_vertices() for o in edited.objects]))
    if frozen_bounds is not None and not frozen_bounds.contains(objs[idx].world_vertices()):
        warnings.warn(
            f"object {obj.name!r} moved outside the painter's frozen bounds; colors there are extrapolated",
            stacklevel=2,
        )
    return edited


def normalize_coord(x: np.ndarray, bounds: AABB) -> np.ndarray:
    """Affine map sending ``bounds.min`` to -1 and ``bounds.max`` to +1 per axis."""
    ext = bounds.extent
    if np.any(ext <= 0):
        raise SceneError("zero-extent bounds")
    return 2.0 * (np.asarray(x, dtype=np.float64) - bounds.min) / ext - 1.0


def unnormalize_coord(u: np.ndarray, bounds: AABB) -> np.ndarray:
    return (np.asarray(u, dtype=np.float64) + 1.0) * 0.5 * bounds.extent + bounds.min


# ----------------------------------------------------------------------- I/O

def _content_lines(path: Path, header: str):
    """Yield (line number, tokens) for non-blank, non-comment lines after the header."""
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc}", path) from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != header:
        raise ParseError(f"expected header {header!r}", path, 1)
    for no, raw in enumerate(lines[1:], start=2):
        s = raw.split("#", 1)[0].strip()
        if s:
            yield no, s.split()


def _floats(tokens: Sequence[str], n: int, path, line) -> list[float]:
    if len(tokens) != n:
        raise ParseError(f"expected {n} numbers, got {len(tokens)}", path, line)
    try:
        vals = [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(str(exc), path, line) from None
    if not all(math.isfinite(v) for v in vals):
        raise ParseError("non-finite value", path, line)
    return vals


def load_obj(path: str | Path) -> Mesh:
    """Read the ``v``/``f`` records of an OBJ file. Polygons are fan-triangulated."""
    path = Path(path)
    if not path.is_file():
        raise MissingMeshError(f"mesh file not found: {path}")
    verts, tris = [], []
    for no, raw in enumerate(path.read_text().splitlines(), start=1):
        tok = raw.split("#", 1)[0].split()
        if not tok:
            continue
        if tok[0] == "v":
            verts.append(_floats(tok[1:4], 3, path, no))
        elif tok[0] == "f":
            try:
                idx = [int(t.split("/")[0]) for t in tok[1:]]
            except ValueError:
                raise ParseError("bad face index", path, no) from None
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            if len(idx) < 3:
                raise ParseError("face needs >= 3 vertices", path, no)
            for k in range(1, len(idx) - 1):
                tris.append((idx[0], idx[k], idx[k + 1]))
    if not verts or not tris:
        raise ParseError("mesh has no vertices or faces", path)
    return Mesh(np.array(verts), np.array(tris), name=path.stem)


def save_obj(mesh: Mesh, path: str | Path) -> None:
    lines = [f"# {mesh.name}"] if mesh.name else []
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_scene(path: str | Path) -> Scene:
    """Parse a scene description file.

    Format after the header::

        classes <C> [name_1 ... name_C]
        object <name> <mesh.obj> <class_id> <16 numbers, row-major 4x4>

    Mesh paths are resolved relative to the scene file.
    """
    path = Path(path)
    class_count, class_names = None, ()
    objects = []
    for no, tok in _content_lines(path, SCENE_HEADER):
        if tok[0] == "classes":
            try:
                class_count = int(tok[1])
            except (IndexError, ValueError):
                raise ParseError("classes needs an integer count", path, no) from None
            class_names = tuple(tok[2:])
            if class_names and len(class_names) != class_count:
                raise ParseError("class name count does not match class count", path, no)
        elif tok[0] == "object":
            if len(tok) != 20:
                raise ParseError("object line needs name, mesh, class id and 16 matrix entries", path, no)
            name, mesh_ref = tok[1], tok[2]
            try:
                class_id = int(tok[3])
            except ValueError:
                raise ParseError("class id must be an integer", path, no) from None
            m = np.array(_floats(tok[4:], 16, path, no)).reshape(4, 4)
            mesh = load_obj(path.parent / mesh_ref)
            try:
                objects.append(ObjectInstance(name, mesh_ref, mesh, m, class_id))
            except SceneError as exc:
                raise ParseError(str(exc), path, no) from None
        else:
            raise ParseError(f"unknown record {tok[0]!r}", path, no)
    if class_count is None:
        raise ParseError("missing 'classes' record", path)
    return Scene(tuple(objects), class_count, class_names=class_names)


def _fmt_matrix(m: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(m).reshape(-1))


def save_scene(scene: Scene, path: str | Path, write_meshes: bool = False) -> None:
    """Write a scene description. Mesh references are kept as given.

    With ``write_meshes`` the referenced OBJ files are (re)written next to the
    scene file as well.
    """
    path = Path(path)
    lines = [SCENE_HEADER, " ".join(["classes", str(scene.class_count), *scene.class_names])]
    for o in scene.objects:
        lines.append(f"object {o.name} {o.mesh_ref} {o.class_id} {_fmt_matrix(o.transform)}")
        if write_meshes:
            target = path.parent / o.mesh_ref
            target.parent.mkdir(parents=True, exist_ok=True)
            save_obj(o.mesh, target)
    path.write_text("\n".join(lines) + "\n")


def load_cameras(path: str | Path) -> list[Camera]:
    """Parse a camera list. Each line after the header::

        camera <W> <H> <fx> <fy> <cx> <cy> <16 numbers, world-from-camera row-major>
    """
    path = Path(path)
    cams = []
    for no, tok in _content_lines(path, CAMERA_HEADER):
        if tok[0] != "camera" or len(tok) != 23:
            raise ParseError("expected 'camera W H fx fy cx cy' followed by 16 pose entries", path, no)
        try:
            w, h = int(tok[1]), int(tok[2])
        except ValueError:
            raise ParseError("resolution must be integers", path, no) from None
        fx, fy, cx, cy = _floats(tok[3:7], 4, path, no)
        pose = np.array(_floats(tok[7:], 16, path, no)).reshape(4, 4)
        K = np.array([[fx, 0, cx], [0, fy, cy], [0, 0, 1]])
        try:
            cams.append(Camera(K, pose, w, h))
        except SceneError as exc:
            raise ParseError(str(exc), path, no) from None
    if not cams:
        raise ParseError("no cameras in file", path)
    return cams


def save_cameras(cameras: Sequence[Camera], path: str | Path) -> None:
    lines = [CAMERA_HEADER]
    for c in cameras:
        k = c.K
        intr = _fmt_matrix([k[0, 0], k[1, 1], k[0, 2], k[1, 2]])
        lines.append(f"camera {c.width} {c.height} {intr} {_fmt_matrix(c.pose)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_styles(path: str | Path) -> np.ndarray:
    """Read style vectors (one per line) into an (S, dim_z) float64 array."""
    path = Path(path)
    rows = []
    for no, tok in _content_lines(path, STYLE_HEADER):
        rows.append(_floats(tok, len(tok), path, no))
        if len(rows[-1]) != len(rows[0]):
            raise ParseError("style vectors must share one dimension", path, no)
    if not rows:
        raise ParseError("no style vectors in file", path)
    return np.array(rows, dtype=np.float64)


def save_styles(styles: np.ndarray, path: str | Path) -> None:
    lines = [STYLE_HEADER] + [" ".join(repr(float(v)) for v in row) for row in np.asarray(styles)]
    Path(path).write_text("\n".join(lines) + "\n")


def sample_styles(count: int = 9, dim_z: int = 64, seed: int = 0) -> np.ndarray:
    """Fixed style set drawn from N(0, 1); nine vectors unless told otherwise."""
    return np.random.default_rng(seed).standard_normal((count, dim_z))


@dataclass(frozen=True)
class Edit:
    object_id: str
    delta: np.ndarray
    line: int = 0


def load_edit_script(path: str | Path) -> list[Edit]:
    """Parse an edit script. One edit per line::

        <object> translate <tx> <ty> <tz>
        <object> rotate <x|y|z> <degrees>          # about the object's own centroid
        <object> matrix <16 numbers>
        <object> scale <s>                          # experimental, uniform about centroid

    Rotations and scales are resolved against the object's centroid when the
    script is applied, so the delta is stored in a symbolic form here.
    """
    path = Path(path)
    edits = []
    for no, tok in _content_lines(path, EDIT_HEADER):
        if len(tok) < 2:
            raise ParseError("expected '<object> <op> ...'", path, no)
        obj, op, args = tok[0], tok[1], tok[2:]
        if op == "translate":
            delta = translation(_floats(args, 3, path, no))
        elif op == "rotate":
            if len(args) != 2 or args[0] not in ("x", "y", "z"):
                raise ParseError("rotate needs an axis (x|y|z) and degrees", path, no)
            delta = ("rotate", args[0], _floats(args[1:], 1, path, no)[0])
        elif op == "matrix":
            delta = np.array(_floats(args, 16, path, no)).reshape(4, 4)
        elif op == "scale":
            delta = ("scale", _floats(args, 1, path, no)[0])
        else:
            raise ParseError(f"unknown edit op {op!r}", path, no)
        edits.append(Edit(obj, delta, no))
    return edits


def _about_centroid(m: np.ndarray, centroid: np.ndarray) -> np.ndarray:
    return translation(centroid) @ m @ translation(-centroid)


def apply_edits(scene: Scene, edits: Sequence[Edit], frozen_bounds: AABB | None = None) -> Scene:
    for e in edits:
        delta = e.delta
        allow_scale = False
        if isinstance(delta, tuple):
            obj = scene.objects[scene.index_of(e.object_id)]
            centroid = obj.world_vertices().mean(axis=0)
            if delta[0] == "rotate":
                delta = _about_centroid(rotation(delta[1], delta[2]), centroid)
            else:
                s = delta[1]
                if s <= 0:
                    raise SceneError(f"line {e.line}: scale must be positive")
                delta = _about_centroid(np.diag([s, s, s, 1.0]), centroid)
                allow_scale = True
        scene = apply_transform(scene, e.object_id, delta, frozen_bounds, allow_scale=allow_scale)
    return scene
