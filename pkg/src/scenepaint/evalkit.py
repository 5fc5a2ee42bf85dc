"""View consistency over a 3D grid, reconstruction error, and reports."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

DEFAULT_CELL = 0.01


@dataclass(frozen=True)
class ConsistencyGrid:
    """Pixel colors (0-255 scale) grouped by integer grid cell.

    ``cells`` holds the unique cell indices (sorted lexicographically),
    ``starts`` the offset of each cell's run in ``colors``.
    """

    cell_size: float
    cells: np.ndarray  # (G, 3) int64
    starts: np.ndarray  # (G + 1,) int64
    colors: np.ndarray  # (P, 3) float64

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.starts)


@dataclass(frozen=True)
class VCResult:
    vc: float
    qualifying_cells: int
    total_cells: int
    mean_colors_per_cell: float


def build_grid(images: Sequence[np.ndarray], coord_maps: Sequence[np.ndarray], coverage: Sequence[np.ndarray], s: float) -> ConsistencyGrid:
    if not (len(images) == len(coord_maps) == len(coverage)):
        raise ValueError("images, coord maps and coverage masks must be aligned lists")
    if not s > 0:
        raise ValueError("cell size must be positive")
    cells, colors = [], []
    for img, crd, cov in zip(images, coord_maps, coverage):
        img, crd, cov = np.asarray(img), np.asarray(crd), np.asarray(cov, dtype=bool)
        if img.shape[:2] != cov.shape or crd.shape[:2] != cov.shape:
            raise ValueError("image, coord map and coverage shapes disagree")
        cells.append(np.floor(crd[cov].astype(np.float64) / s).astype(np.int64))
        colors.append(img[cov].astype(np.float64) * 255.0)
    cells = np.concatenate(cells) if cells else np.zeros((0, 3), np.int64)
    colors = np.concatenate(colors) if colors else np.zeros((0, 3))
    order = np.lexsort((cells[:, 2], cells[:, 1], cells[:, 0])) if len(cells) else np.zeros(0, np.int64)
    cells, colors = cells[order], colors[order]
    if len(cells):
        new = np.ones(len(cells), dtype=bool)
        new[1:] = np.any(cells[1:] != cells[:-1], axis=1)
        starts = np.append(np.flatnonzero(new), len(cells))
        uniq = cells[new]
    else:
        starts, uniq = np.zeros(1, np.int64), cells
    return ConsistencyGrid(s, uniq, starts, colors)


def _max_pairwise(colors: np.ndarray) -> float:
    """Exact max Euclidean distance among the rows of a (n, 3) array."""
    best = 0.0
    n = len(colors)
    for i in range(n - 1):
        d = colors[i + 1 :] - colors[i]
        dist = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2])
        m = float(dist.max())
        if m > best:
            best = m
    return best


def view_consistency_detail(images, coord_maps, coverage, s: float = DEFAULT_CELL) -> VCResult:
    grid = build_grid(images, coord_maps, coverage, s)
    counts = grid.counts
    qual = np.flatnonzero(counts >= 2)
    per_cell = np.zeros(len(qual))
    # batch cells of equal size so the all-pairs max is vectorized
    sizes = counts[qual]
    for n in np.unique(sizes):
        which = np.flatnonzero(sizes == n)
        if n > 64:
            for w in which:
                a = grid.starts[qual[w]]
                per_cell[w] = _max_pairwise(grid.colors[a : a + n])
            continue
        idx = grid.starts[qual[which]][:, None] + np.arange(n)
        for chunk in range(0, len(which), 4096):
            sl = slice(chunk, chunk + 4096)
            col = grid.colors[idx[sl]]  # (g, n, 3)
            d = col[:, :, None, :] - col[:, None, :, :]
            dist = np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])
            per_cell[which[sl]] = dist.reshape(len(col), -1).max(axis=1)
    if len(qual) == 0:
        warnings.warn("no grid cell holds two or more pixels; view consistency is reported as 0", stacklevel=2)
        vc = 0.0
    else:
        vc = math.fsum(per_cell.tolist()) / len(qual)
    total = len(counts)
    return VCResult(vc, len(qual), total, float(counts.mean()) if total else 0.0)


def view_consistency(images, coord_maps, coverage, s: float = DEFAULT_CELL) -> float:
    """Mean over cells with >= 2 pixels of the max pairwise color distance (0-255 scale).

    ``coord_maps`` hold normalized coordinates; cells are ``floor(coord / s)``.
    """
    return view_consistency_detail(images, coord_maps, coverage, s).vc


def psnr_from_mse(mse: float, peak: float = 1.0) -> float:
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def recon_error(painted: Mapping, references: Mapping) -> dict:
    """Per-key and aggregate mean L1 (per channel) and PSNR (peak 1.0).

    Identical images give PSNR ``inf``.
    """
    if set(painted) != set(references):
        missing = sorted(set(painted) ^ set(references))
        raise KeyError(f"key mismatch between painted and reference sets: {missing}")
    per = {}
    abs_sum = sq_sum = 0.0
    n = 0
    for k in sorted(painted):
        a, b = np.asarray(painted[k], np.float64), np.asarray(references[k], np.float64)
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch for key {k}")
        d = a - b
        l1 = float(np.abs(d).mean())
        mse = float((d * d).mean())
        per[k] = (l1, psnr_from_mse(mse))
        abs_sum += float(np.abs(d).sum())
        sq_sum += float((d * d).sum())
        n += d.size
    return {
        "per_key": per,
        "l1": abs_sum / n if n else 0.0,
        "psnr": psnr_from_mse(sq_sum / n) if n else math.inf,
    }


def format_report(sections: Mapping[str, Mapping], params: Mapping) -> str:
    """Plain-text report: ``key,value`` CSV rows grouped by section."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["section", "key", "value"])
    for k, v in params.items():
        w.writerow(["params", k, v])
    for name, rows in sections.items():
        for k, v in rows.items():
            w.writerow([name, k, _fmt(v)])
    w.writerow(["note", "not_computed", "mIoU and FID need pre-trained networks and are not reported"])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return v
