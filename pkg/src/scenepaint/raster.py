"""Software rasterization of labeled scenes into per-view maps.

Each pixel is sampled at its center ``(u + 0.5, v + 0.5)`` and takes the
closest hit over all triangles of all objects.  No backface culling is done.
Depth ties resolve to the lower (object index, triangle index) pair because
triangles are visited in that order and only strictly closer hits replace the
buffer entry.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .scenegraph import Camera, Scene

FRAME_MAGIC = b"SPFM"
FRAME_VERSION = 1


class ProjectionError(ValueError):
    pass


@dataclass(frozen=True)
class FrameMaps:
    label: np.ndarray  # (H, W) int64, 0 = no hit
    depth: np.ndarray  # (H, W) float64, camera-space z, inf where uncovered
    coord: np.ndarray  # (H, W, 3) float64 world coordinates, 0 where uncovered
    class_count: int

    @property
    def coverage(self) -> np.ndarray:
        return self.label >= 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.label.shape


def pixel_rays(camera: Camera) -> np.ndarray:
    """Camera-space ray directions (z = 1) through all pixel centers, (H, W, 3)."""
    v, u = np.mgrid[0 : camera.height, 0 : camera.width].astype(np.float64)
    pix = np.stack([u + 0.5, v + 0.5, np.ones_like(u)], axis=-1)
    return pix @ np.linalg.inv(camera.K).T


def rasterize_view(scene: Scene, camera: Camera) -> FrameMaps:
    """Closest-hit label, depth and world coordinate for every pixel."""
    H, W = camera.height, camera.width
    rays = pixel_rays(camera).reshape(-1, 3)
    n_pix = rays.shape[0]
    zbuf = np.full(n_pix, np.inf)
    label = np.zeros(n_pix, dtype=np.int64)
    coord = np.zeros((n_pix, 3))

    cam_from_world = np.linalg.inv(camera.pose)
    K = camera.K
    for obj in scene.objects:
        world = obj.world_vertices()
        cam = world @ cam_from_world[:3, :3].T + cam_from_world[:3, 3]
        for tri in obj.mesh.triangles:
            a, b, c = cam[tri]
            normal = np.cross(b - a, c - a)
            if not np.any(normal):
                continue  # degenerate triangle
            idx = _candidate_pixels(a, b, c, K, W, H)
            if idx is not None and idx.size == 0:
                continue
            r = rays if idx is None else rays[idx]
            # Edge tests through the camera center: the ray hits the triangle's
            # cone iff the three triple products share a sign.
            t0 = r @ np.cross(b, c)
            t1 = r @ np.cross(c, a)
            t2 = r @ np.cross(a, b)
            inside = ((t0 >= 0) & (t1 >= 0) & (t2 >= 0)) | ((t0 <= 0) & (t1 <= 0) & (t2 <= 0))
            denom = r @ normal
            with np.errstate(divide="ignore", invalid="ignore"):
                z = (a @ normal) / denom
            hit = inside & (denom != 0) & (z > 0)
            if not np.any(hit):
                continue
            sel = np.flatnonzero(hit)
            gidx = sel if idx is None else idx[sel]
            closer = z[sel] < zbuf[gidx]
            if not np.any(closer):
                continue
            sel, gidx = sel[closer], gidx[closer]
            zbuf[gidx] = z[sel]
            label[gidx] = obj.class_id
            s = t0[sel] + t1[sel] + t2[sel]
            w0, w1, w2 = t0[sel] / s, t1[sel] / s, t2[sel] / s
            wa, wb, wc = world[tri]
            coord[gidx] = w0[:, None] * wa + w1[:, None] * wb + w2[:, None] * wc

    return FrameMaps(
        label=label.reshape(H, W),
        depth=zbuf.reshape(H, W),
        coord=coord.reshape(H, W, 3),
        class_count=scene.class_count,
    )


def _candidate_pixels(a, b, c, K, W, H):
    """Flat pixel indices inside the triangle's screen bounding box.

    Returns None (meaning: test every pixel) when a vertex is not in front of
    the camera, since its projection is then meaningless.
    """
    pts = np.stack([a, b, c])
    if np.any(pts[:, 2] <= 1e-9):
        return None
    uv = (pts @ K.T)[:, :2] / pts[:, 2:3]
    lo = np.floor(uv.min(axis=0) - 1.0)
    hi = np.ceil(uv.max(axis=0) + 1.0)
    u0, v0 = int(max(lo[0], 0)), int(max(lo[1], 0))
    u1, v1 = int(min(hi[0], W)), int(min(hi[1], H))
    if u0 >= u1 or v0 >= v1:
        return np.empty(0, dtype=np.int64)
    vv, uu = np.mgrid[v0:v1, u0:u1]
    return (vv * W + uu).reshape(-1)


def unproject(p, d, camera: Camera) -> np.ndarray:
    """World point at continuous pixel coordinates ``p`` and camera-space depth ``d``.

    Works elementwise on arrays: ``p`` (..., 2), ``d`` (...).
    """
    p = np.asarray(p, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if np.any(~(d > 0)):
        raise ProjectionError("depth must be positive")
    hom = np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1)
    cam = (hom @ np.linalg.inv(camera.K).T) * d[..., None]
    return cam @ camera.pose[:3, :3].T + camera.pose[:3, 3]


def project(x, camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole projection of world points; returns (pixel coords, camera depth)."""
    x = np.asarray(x, dtype=np.float64)
    cam_from_world = np.linalg.inv(camera.pose)
    cam = x @ cam_from_world[:3, :3].T + cam_from_world[:3, 3]
    z = cam[..., 2]
    if np.any(~(z > 0)):
        raise ProjectionError("point behind camera")
    uvw = cam @ camera.K.T
    return uvw[..., :2] / z[..., None], z


def project_points(x, camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Like :func:`project` but never raises; points behind the camera get nan pixels."""
    x = np.asarray(x, dtype=np.float64)
    cam_from_world = np.linalg.inv(camera.pose)
    cam = x @ cam_from_world[:3, :3].T + cam_from_world[:3, 3]
    z = cam[..., 2]
    uvw = cam @ camera.K.T
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.where((z > 0)[..., None], uvw[..., :2] / z[..., None], np.nan)
    return uv, z


# ---------------------------------------------------------------- serialization

def frames_to_bytes(frames: FrameMaps) -> bytes:
    """Binary container: magic, version, W, H, C (uint32 LE), then label
    (int16), depth (float32) and coord (float32, xyz interleaved), row-major."""
    H, W = frames.shape
    if frames.class_count > np.iinfo(np.int16).max:
        raise ValueError("class count does not fit 16-bit labels")
    head = FRAME_MAGIC + struct.pack("<4I", FRAME_VERSION, W, H, frames.class_count)
    return b"".join(
        [
            head,
            frames.label.astype("<i2").tobytes(),
            frames.depth.astype("<f4").tobytes(),
            frames.coord.astype("<f4").tobytes(),
        ]
    )


def frames_from_bytes(data: bytes) -> FrameMaps:
    if data[:4] != FRAME_MAGIC or len(data) < 20:
        raise ValueError("not a frame-maps container")
    version, W, H, C = struct.unpack("<4I", data[4:20])
    if version != FRAME_VERSION:
        raise ValueError(f"unsupported frame-maps version {version}")
    n = W * H
    expected = 20 + n * 2 + n * 4 + n * 12
    if len(data) != expected:
        raise ValueError(f"frame-maps payload has {len(data)} bytes, expected {expected}")
    off = 20
    label = np.frombuffer(data, "<i2", n, off).reshape(H, W).astype(np.int64)
    off += n * 2
    depth = np.frombuffer(data, "<f4", n, off).reshape(H, W).astype(np.float64)
    off += n * 4
    coord = np.frombuffer(data, "<f4", n * 3, off).reshape(H, W, 3).astype(np.float64)
    return FrameMaps(label, depth, coord, C)


def save_frames(frames: FrameMaps, path: str | Path) -> None:
    Path(path).write_bytes(frames_to_bytes(frames))


def load_frames(path: str | Path) -> FrameMaps:
    return frames_from_bytes(Path(path).read_bytes())


def label_palette(class_count: int) -> np.ndarray:
    """Deterministic, well-separated preview colors; row 0 (no hit) is black."""
    pal = np.zeros((class_count + 1, 3))
    golden = 0.618033988749895
    for c in range(1, class_count + 1):
        h = (c * golden) % 1.0
        pal[c] = _hsv_to_rgb(h, 0.65, 0.95 if c % 2 else 0.75)
    return pal


def _hsv_to_rgb(h, s, v):
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


def label_preview(frames: FrameMaps) -> np.ndarray:
    return label_palette(frames.class_count)[frames.label]


def depth_preview(frames: FrameMaps) -> np.ndarray:
    d = frames.depth
    cov = np.isfinite(d)
    out = np.zeros(d.shape)
    if cov.any():
        lo, hi = d[cov].min(), d[cov].max()
        out[cov] = 1.0 - (d[cov] - lo) / max(hi - lo, 1e-12)
    return out


def save_png(image: np.ndarray, path: str | Path) -> None:
    """Write an (H, W) or (H, W, 3) image in [0, 1] as 8-bit PNG."""
    arr = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def load_png(path: str | Path) -> np.ndarray:
    """Decode an 8-bit RGB PNG into float64 values in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0
