"""Reference image sources: a procedural mock and a directory adapter.

The mock colors every covered pixel from its class and the style vector,
optionally darkens it with depth, and adds a per-(class, view) color offset of
amplitude ``eps`` so that views disagree in a controlled, known way.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .raster import FrameMaps, load_png

_NAME_RE = re.compile(r"^view(\d+)_style(\d+)\.png$")


class ReferenceError(ValueError):
    pass


class MissingPairError(ReferenceError, KeyError):
    def __str__(self):
        return self.args[0]


class DimensionError(ReferenceError):
    pass


@dataclass(frozen=True)
class MockPalette:
    """Per-class style projections P_c of shape (3, dim_z), fixed by a seed."""

    seed: int
    class_count: int
    dim_z: int
    projections: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rng = np.random.default_rng([self.seed, self.class_count, self.dim_z])
        proj = rng.standard_normal((self.class_count, 3, self.dim_z)) / np.sqrt(max(self.dim_z, 1))
        proj.setflags(write=False)
        object.__setattr__(self, "projections", proj)

    def base_colors(self, z: np.ndarray) -> np.ndarray:
        """(C, 3) colors 0.5 + 0.5 tanh(P_c z) for every class."""
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.dim_z,):
            raise DimensionError(f"style has shape {z.shape}, palette expects ({self.dim_z},)")
        return 0.5 + 0.5 * np.tanh(self.projections @ z)


def view_offsets(view_seed: int, style_index: int, class_count: int, eps: float) -> np.ndarray:
    """Per-class color offsets (C, 3) for one (view, style), uniform in [-eps, eps]."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    rng = np.random.default_rng([view_seed, style_index])
    return eps * rng.uniform(-1.0, 1.0, size=(class_count, 3))


def shading_factor(depth: np.ndarray, max_depth: float) -> np.ndarray:
    """0.7 + 0.3 (1 - depth / max_depth), in [0.7, 1] for depths in [0, max_depth]."""
    return 0.7 + 0.3 * (1.0 - np.clip(depth / max_depth, 0.0, 1.0))


def mock_reference(
    frames: FrameMaps,
    z: np.ndarray,
    view_seed: int,
    eps: float,
    palette: MockPalette,
    style_index: int = 0,
    shading: bool = True,
    max_depth: float | None = None,
) -> np.ndarray:
    """Stylized (H, W, 3) reference image in [0, 1]; uncovered pixels are black.

    ``max_depth`` defaults to the frame's largest covered depth.
    """
    if frames.class_count != palette.class_count:
        raise DimensionError("frame class count does not match palette")
    cov = frames.coverage
    out = np.zeros(frames.shape + (3,))
    if not cov.any():
        return out
    base = palette.base_colors(z)
    offs = view_offsets(view_seed, style_index, palette.class_count, eps)
    lab = frames.label[cov] - 1
    col = base[lab]
    if shading:
        md = frames.depth[cov].max() if max_depth is None else max_depth
        col = col * shading_factor(frames.depth[cov], md)[:, None]
    out[cov] = np.clip(col + offs[lab], 0.0, 1.0)
    return out


@dataclass
class ReferenceSet:
    """Reference images keyed by (view index, style index)."""

    images: dict[tuple[int, int], np.ndarray]
    provenance: str  # "mock" or "external"
    params: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.images)

    def __getitem__(self, key: tuple[int, int]) -> np.ndarray:
        try:
            return self.images[key]
        except KeyError:
            v, s = key
            raise MissingPairError(f"no reference image for view{v}_style{s}") from None

    def keys(self):
        return sorted(self.images)

    def check_covers(self, views: Sequence[int], styles: Sequence[int], shape: tuple[int, int] | None = None):
        for v in views:
            for s in styles:
                img = self[(v, s)]
                if shape is not None and img.shape != tuple(shape) + (3,):
                    raise DimensionError(f"view{v}_style{s}: image shape {img.shape}, expected {tuple(shape) + (3,)}")


def view_seed_for(seed: int, view: int) -> int:
    return int(np.random.SeedSequence([seed, view]).generate_state(1)[0])


def mock_reference_set(
    frames: Sequence[FrameMaps],
    styles: np.ndarray,
    palette: MockPalette,
    eps: float,
    seed: int = 0,
    shading: bool = True,
) -> ReferenceSet:
    images = {}
    for v, fr in enumerate(frames):
        vs = view_seed_for(seed, v)
        for s, z in enumerate(styles):
            images[(v, s)] = mock_reference(fr, z, vs, eps, palette, s, shading)
    params = {"palette_seed": palette.seed, "eps": eps, "seed": seed, "shading": shading}
    return ReferenceSet(images, "mock", params)


def load_reference_dir(
    path: str | Path,
    views: Sequence[int] | int,
    styles: Sequence[int] | int,
    resolution: tuple[int, int] | None = None,
) -> ReferenceSet:
    """Load ``view{v}_style{s}.png`` files covering every requested pair.

    ``resolution`` is (W, H); images with other sizes are rejected.
    """
    path = Path(path)
    if isinstance(views, int):
        views = range(views)
    if isinstance(styles, int):
        styles = range(styles)
    if not path.is_dir():
        raise ReferenceError(f"reference directory not found: {path}")
    found = {}
    for p in path.iterdir():
        m = _NAME_RE.match(p.name)
        if m:
            found[(int(m.group(1)), int(m.group(2)))] = p
    images = {}
    for v in views:
        for s in styles:
            if (v, s) not in found:
                raise MissingPairError(f"missing reference view{v}_style{s}.png in {path}")
            img = load_png(found[(v, s)])
            if resolution is not None and img.shape[:2] != (resolution[1], resolution[0]):
                raise DimensionError(
                    f"view{v}_style{s}.png is {img.shape[1]}x{img.shape[0]}, expected {resolution[0]}x{resolution[1]}"
                )
            images[(v, s)] = img
    return ReferenceSet(images, "external", {"path": str(path)})
