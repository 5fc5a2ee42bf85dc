"""Coordinate encodings and generator input assembly.

Channel layout of the generator input, per pixel::

    [ sinusoidal (6F+3) | learned (dim_ne) | fourier (optional) | one-hot label (C) | style (dim_z) ]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensornet as tn
from .raster import FrameMaps
from .scenegraph import AABB, normalize_coord


class CoverageError(ValueError):
    pass


def pe_dim(F: int) -> int:
    return 6 * F + 3


def gamma_pe(x: np.ndarray, F: int) -> np.ndarray:
    """Sinusoidal encoding of normalized coordinates, shape (..., 3) -> (..., 6F+3).

    Layout: ``[x, y, z]`` followed, for each frequency f = 0..F-1, by
    ``sin/cos(2^f pi x), sin/cos(2^f pi y), sin/cos(2^f pi z)``.
    """
    if F < 0:
        raise ValueError("F must be >= 0")
    x = np.asarray(x)
    parts = [x]
    for f in range(F):
        arg = (2.0**f * np.pi) * x
        s, c = np.sin(arg), np.cos(arg)
        parts.append(np.stack([s, c], axis=-1).reshape(x.shape[:-1] + (6,)))
    return np.concatenate(parts, axis=-1)


def gamma_fourier(x: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Random Fourier features ``[sin(x B), cos(x B)]`` (ablation only)."""
    proj = np.asarray(x) @ B
    return np.concatenate([np.sin(proj), np.cos(proj)], axis=-1)


class NonlinearEncoder:
    """Learnable two-layer embedding ``W2^T [sigma(W1^T [x, 1]), 1]``.

    ``W1`` is (4, hidden) and ``W2`` is (hidden + 1, dim_ne); sigma is a leaky
    ReLU with the generator's slope.
    """

    def __init__(self, W1: np.ndarray, W2: np.ndarray, slope: float = 0.2):
        if W1.shape[0] != 4 or W2.shape[0] != W1.shape[1] + 1:
            raise tn.ShapeError(f"incompatible encoder shapes {W1.shape}, {W2.shape}")
        self.W1 = W1
        self.W2 = W2
        self.slope = slope

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int = 64, dim_ne: int = 64, slope: float = 0.2, dtype=np.float32):
        a1 = np.sqrt(1.0 / 4)
        a2 = np.sqrt(1.0 / (hidden + 1))
        W1 = rng.uniform(-a1, a1, size=(4, hidden)).astype(dtype)
        W2 = rng.uniform(-a2, a2, size=(hidden + 1, dim_ne)).astype(dtype)
        return cls(W1, W2, slope)

    @property
    def dim(self) -> int:
        return self.W2.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"enc.W1": self.W1, "enc.W2": self.W2}

    def forward(self, x: np.ndarray):
        """Encode points (..., 3). Returns (output, cache for backward)."""
        x = np.asarray(x, dtype=self.W1.dtype)
        lead = x.shape[:-1]
        xh = np.concatenate([x.reshape(-1, 3), np.ones((int(np.prod(lead, dtype=np.int64)), 1), x.dtype)], axis=1)
        pre = tn.rowwise_matmul(xh, self.W1)
        act = tn.leaky_relu(pre, self.slope)
        acth = np.concatenate([act, np.ones((act.shape[0], 1), dtype=act.dtype)], axis=1)
        out = tn.rowwise_matmul(acth, self.W2)
        return out.reshape(lead + (self.dim,)), (xh, pre, acth, lead)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, grad_out: np.ndarray, cache):
        """Returns (grad wrt x, {"enc.W1": ..., "enc.W2": ...})."""
        xh, pre, acth, lead = cache
        g = grad_out.reshape(-1, self.dim)
        gW2 = acth.T @ g
        gact = (g @ self.W2.T)[:, :-1]
        gpre = tn.leaky_relu_backward(gact, pre, self.slope)
        gW1 = xh.T @ gpre
        gx = (gpre @ self.W1.T)[:, :3].reshape(lead + (3,))
        return gx, {"enc.W1": gW1, "enc.W2": gW2}


def gamma_ne(x: np.ndarray, enc: NonlinearEncoder) -> np.ndarray:
    return enc(x)


def one_hot_labels(label: np.ndarray, class_count: int, dtype=np.float32) -> np.ndarray:
    """(..., C) one-hot of labels 1..C; label 0 (no hit) maps to all zeros."""
    out = np.zeros(label.shape + (class_count,), dtype=dtype)
    covered = label >= 1
    if np.any(label > class_count):
        raise ValueError("label exceeds class count")
    idx = np.nonzero(covered)
    out[idx + (label[covered] - 1,)] = 1
    return out


@dataclass(frozen=True)
class StaticChannels:
    """Input channels that do not depend on learnable parameters."""

    pe: np.ndarray  # (H, W, n_pe)
    fourier: np.ndarray  # (H, W, n_ff)
    label: np.ndarray  # (H, W, C)
    style: np.ndarray  # (dim_z,)
    coord: np.ndarray  # (H, W, 3) normalized coordinates
    coverage: np.ndarray  # (H, W) bool


def static_channels(
    frames: FrameMaps,
    z: np.ndarray,
    bounds: AABB,
    F: int | None,
    fourier_B: np.ndarray | None = None,
    allow_holes: bool = False,
    dtype=np.float32,
) -> StaticChannels:
    cov = frames.coverage
    if not allow_holes and not np.all(cov):
        raise CoverageError(f"{int((~cov).sum())} uncovered pixels and allow_holes is not set")
    u = np.where(cov[..., None], normalize_coord(frames.coord, bounds), 0.0)
    H, W = cov.shape
    if F is None:
        pe = np.zeros((H, W, 0), dtype=dtype)
    else:
        pe = np.where(cov[..., None], gamma_pe(u, F), 0.0).astype(dtype)
    if fourier_B is None:
        ff = np.zeros((H, W, 0), dtype=dtype)
    else:
        ff = np.where(cov[..., None], gamma_fourier(u, fourier_B), 0.0).astype(dtype)
    return StaticChannels(
        pe=pe,
        fourier=ff,
        label=one_hot_labels(frames.label, frames.class_count, dtype),
        style=np.asarray(z, dtype=dtype),
        coord=u.astype(dtype),
        coverage=cov,
    )


def concat_channels(static: StaticChannels, ne: np.ndarray | None) -> np.ndarray:
    """Build the (H, W, D) input from static channels and learned-encoding output."""
    H, W = static.coverage.shape
    z = np.broadcast_to(static.style, (H, W, static.style.shape[0])) * static.coverage[..., None]
    parts = [static.pe]
    if ne is not None:
        parts.append(ne * static.coverage[..., None])
    parts += [static.fourier, static.label, z.astype(static.label.dtype)]
    return np.concatenate(parts, axis=-1)


def assemble_input(
    frames: FrameMaps,
    z: np.ndarray,
    enc: NonlinearEncoder | None,
    F: int | None,
    bounds: AABB,
    allow_holes: bool = False,
    fourier_B: np.ndarray | None = None,
    dtype=np.float32,
) -> np.ndarray:
    """Generator input tensor X of shape (H, W, D) for one view and style.

    Uncovered pixels (only permitted with ``allow_holes``) get all-zero channels.
    ``F=None`` drops the sinusoidal channels, ``enc=None`` the learned ones.
    """
    st = static_channels(frames, z, bounds, F, fourier_B, allow_holes, dtype)
    ne = enc(st.coord) if enc is not None else None
    return concat_channels(st, ne)
