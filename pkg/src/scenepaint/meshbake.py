"""Vertex-color baking by back-projecting painted views onto scene meshes."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .painter import PaintingGenerator
from .raster import FrameMaps, project_points, rasterize_view
from .scenegraph import Camera, Scene

DEFAULT_TAU = 0.01
PLY_HEADER_COMMENT = "scenepaint colored mesh v1"


class BakeError(ValueError):
    pass


@dataclass(frozen=True)
class ColoredMesh:
    vertices: np.ndarray  # (V, 3) world coordinates
    triangles: np.ndarray  # (T, 3)
    colors: np.ndarray  # (V, 3) in [0, 1]
    sample_count: np.ndarray  # (V,) accepted samples per vertex
    object_index: np.ndarray  # (V,) owning object

    @property
    def unpainted(self) -> np.ndarray:
        return self.sample_count == 0


def bilinear_lookup(image: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Sample (H, W, C) ``image`` at continuous pixel coords (pixel centers at +0.5).

    Interpolation uses the lerp form ``a + (b - a) t`` so equal neighbors
    reproduce their value exactly.  Coordinates are clamped to the image.
    """
    H, W = image.shape[:2]
    img = image.astype(np.float64)
    x = np.clip(uv[:, 0] - 0.5, 0.0, W - 1.0)
    y = np.clip(uv[:, 1] - 0.5, 0.0, H - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    tx = (x - x0)[:, None]
    ty = (y - y0)[:, None]
    top = img[y0, x0] + (img[y0, x1] - img[y0, x0]) * tx
    bot = img[y1, x0] + (img[y1, x1] - img[y1, x0]) * tx
    return top + (bot - top) * ty


def visible_samples(points: np.ndarray, frames: FrameMaps, camera: Camera, tau: float = DEFAULT_TAU):
    """Mask of points passing the depth test in one view, and their pixel coords.

    A point is visible when it projects inside the image, in front of the
    camera, and its depth is within ``tau`` (relative) of the depth map at the
    pixel containing the projection.
    """
    uv, z = project_points(points, camera)
    H, W = frames.shape
    ok = np.isfinite(uv).all(axis=1) & (z > 0)
    ok &= (uv[:, 0] >= 0) & (uv[:, 0] < W) & (uv[:, 1] >= 0) & (uv[:, 1] < H)
    px = np.zeros(len(points), dtype=np.int64)
    py = np.zeros(len(points), dtype=np.int64)
    px[ok] = np.floor(uv[ok, 0]).astype(np.int64)
    py[ok] = np.floor(uv[ok, 1]).astype(np.int64)
    d = np.full(len(points), np.inf)
    d[ok] = frames.depth[py[ok], px[ok]]
    ok &= np.isfinite(d)
    with np.errstate(invalid="ignore"):
        ok &= np.abs(z - d) <= tau * d
    return ok, uv


def point_colors(gen: PaintingGenerator, points: np.ndarray, class_ids: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Painter output evaluated directly at world points, as a 1 x N "image".

    Only meaningful for per-point (MLP) painters, where it equals the color
    any view would paint at that point.
    """
    n = len(points)
    frames = FrameMaps(
        label=np.asarray(class_ids, dtype=np.int64).reshape(1, n),
        depth=np.ones((1, n)),
        coord=np.asarray(points, dtype=np.float64).reshape(1, n, 3),
        class_count=gen.config.class_count,
    )
    return gen.paint_view(frames, z, allow_holes=False)[0].astype(np.float64)


def bake(
    scene: Scene,
    gen: PaintingGenerator,
    cameras: Sequence[Camera],
    z: np.ndarray,
    tau: float = DEFAULT_TAU,
    fallback: np.ndarray | None = None,
    check_bounds: bool = True,
    sampling: str = "auto",
) -> ColoredMesh:
    """Average painted colors of every visible view into per-vertex colors.

    ``sampling`` picks how a visible view contributes its sample:
    ``"bilinear"`` looks the vertex up in the painted image, ``"point"``
    evaluates the painter at the vertex itself (exact for MLP painters, where
    every view paints a point identically).  ``"auto"`` uses point sampling
    for MLP painters and bilinear lookup otherwise.

    Vertices seen by no camera get ``fallback[class_id - 1]`` (default: the
    generator's class palette).
    """
    if sampling == "auto":
        sampling = "point" if gen.config.kind == "MLP" else "bilinear"
    if sampling not in ("point", "bilinear"):
        raise BakeError(f"unknown sampling mode {sampling!r}")
    if not cameras:
        raise BakeError("at least one camera is required")
    if gen.bounds is None:
        raise BakeError("painter has no frozen bounds")
    if check_bounds and not np.allclose(gen.bounds.to_list(), scene.bounds.to_list(), rtol=0, atol=1e-9):
        # edited scenes may legitimately move objects; only reject a different scene extent
        if not gen.bounds.contains(np.concatenate([o.world_vertices() for o in scene.objects]), tol=0.05):
            raise BakeError("scene geometry is far outside the painter's frozen bounds (different scene?)")

    verts = np.concatenate([o.world_vertices() for o in scene.objects])
    tris, owner, offset = [], [], 0
    for i, o in enumerate(scene.objects):
        tris.append(o.mesh.triangles + offset)
        owner.append(np.full(len(o.mesh.vertices), i))
        offset += len(o.mesh.vertices)
    tris = np.concatenate(tris)
    owner = np.concatenate(owner)

    class_ids = np.array([o.class_id for o in scene.objects])[owner]
    own = point_colors(gen, verts, class_ids, z) if sampling == "point" else None

    acc = np.zeros((len(verts), 3))
    count = np.zeros(len(verts), dtype=np.int64)
    for cam in cameras:
        frames = rasterize_view(scene, cam)
        ok, uv = visible_samples(verts, frames, cam, tau)
        if not ok.any():
            continue
        if own is None:
            acc[ok] += bilinear_lookup(gen.paint_view(frames, z, allow_holes=True), uv[ok])
        else:
            acc[ok] += own[ok]
        count[ok] += 1

    colors = np.zeros_like(acc)
    seen = count > 0
    colors[seen] = acc[seen] / count[seen, None]
    if fallback is None:
        fallback = gen.palette if gen.palette is not None else np.full((scene.class_count, 3), 0.5)
    colors[~seen] = np.asarray(fallback)[class_ids[~seen] - 1]
    return ColoredMesh(verts, tris, colors, count, owner)


def colored_mesh_bytes(mesh: ColoredMesh) -> bytes:
    """ASCII PLY with float xyz and uchar rgb per vertex, triangle faces."""
    if len(mesh.vertices) == 0 or len(mesh.triangles) == 0:
        raise BakeError("cannot export an empty mesh")
    rgb = np.clip(np.round(mesh.colors * 255.0), 0, 255).astype(np.int64)
    lines = [
        "ply",
        "format ascii 1.0",
        f"comment {PLY_HEADER_COMMENT}",
        f"element vertex {len(mesh.vertices)}",
        "property double x",
        "property double y",
        "property double z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        f"element face {len(mesh.triangles)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    for (x, y, zc), (r, g, b) in zip(mesh.vertices.tolist(), rgb.tolist()):
        lines.append(f"{x!r} {y!r} {zc!r} {r} {g} {b}")
    for a, b, c in mesh.triangles.tolist():
        lines.append(f"3 {a} {b} {c}")
    return ("\n".join(lines) + "\n").encode("ascii")


def export_colored_mesh(mesh: ColoredMesh, path: str | Path) -> None:
    Path(path).write_bytes(colored_mesh_bytes(mesh))


def read_colored_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read back (vertices, triangles, colors in [0, 1]) from an exported file."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "ply":
        raise BakeError("not a PLY file")
    nv = nf = 0
    end = None
    for i, ln in enumerate(lines):
        tok = ln.split()
        if tok[:2] == ["element", "vertex"]:
            nv = int(tok[2])
        elif tok[:2] == ["element", "face"]:
            nf = int(tok[2])
        elif ln == "end_header":
            end = i
            break
    if end is None:
        raise BakeError("PLY header not terminated")
    vrows = np.array([ln.split() for ln in lines[end + 1 : end + 1 + nv]], dtype=np.float64).reshape(nv, 6)
    frows = np.array([ln.split()[1:] for ln in lines[end + 1 + nv : end + 1 + nv + nf]], dtype=np.int64).reshape(nf, 3)
    return vrows[:, :3], frows, vrows[:, 3:] / 255.0
