"""Independent brute-force reference implementations used by the tests.

These are deliberately written as plain loops with no shared code from the
package, so agreement is meaningful.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d_naive(x, kernel, bias, stride=1, padding=0):
    """Six nested loops over (n, out row, out col, out channel, tap row, tap col)."""
    n, h, w, cin = x.shape
    kh, kw, _, cout = kernel.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, ho, wo, cout))
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                for o in range(cout):
                    acc = float(bias[o])
                    for di in range(kh):
                        for dj in range(kw):
                            r = i * stride + di - padding
                            c = j * stride + dj - padding
                            if 0 <= r < h and 0 <= c < w:
                                acc += float(np.dot(x[b, r, c, :], kernel[di, dj, :, o]))
                    out[b, i, j, o] = acc
    return out


def ray_triangle(origin, direction, a, b, c):
    """Möller–Trumbore intersection; returns the ray parameter t or None."""
    e1 = b - a
    e2 = c - a
    pvec = np.cross(direction, e2)
    det = float(np.dot(e1, pvec))
    if det == 0.0:
        return None
    inv = 1.0 / det
    tvec = origin - a
    u = float(np.dot(tvec, pvec)) * inv
    if u < 0.0 or u > 1.0:
        return None
    qvec = np.cross(tvec, e1)
    v = float(np.dot(direction, qvec)) * inv
    if v < 0.0 or u + v > 1.0:
        return None
    t = float(np.dot(e2, qvec)) * inv
    return t if t > 0 else None


def raycast_pixel(scene, camera, u, v):
    """Closest hit (label, depth) for pixel (u, v) by brute force over every triangle.

    The ray direction has unit camera-space z, so t equals camera depth.
    Ties keep the first hit in (object, triangle) order.
    """
    K = camera.K
    d_cam = np.array([(u + 0.5 - K[0, 2]) / K[0, 0], (v + 0.5 - K[1, 2]) / K[1, 1], 1.0])
    R, origin = camera.pose[:3, :3], camera.pose[:3, 3]
    d_world = R @ d_cam
    best_t, best_label = math.inf, 0
    for obj in scene.objects:
        M = obj.transform
        verts = obj.mesh.vertices @ M[:3, :3].T + M[:3, 3]
        for tri in obj.mesh.triangles:
            a, b, c = verts[tri]
            t = ray_triangle(origin, d_world, a, b, c)
            if t is not None and t < best_t:
                best_t, best_label = t, obj.class_id
    return best_label, best_t


def view_consistency_exhaustive(images, coord_maps, coverage, s):
    """View consistency by dictionary grouping and all-pairs loops in pure Python."""
    cells: dict[tuple, list] = {}
    for img, crd, cov in zip(images, coord_maps, coverage):
        H, W = cov.shape
        for i in range(H):
            for j in range(W):
                if not cov[i, j]:
                    continue
                key = tuple(int(math.floor(float(crd[i, j, k]) / s)) for k in range(3))
                cells.setdefault(key, []).append([float(img[i, j, k]) * 255.0 for k in range(3)])
    per_cell = []
    for cols in cells.values():
        if len(cols) < 2:
            continue
        best = 0.0
        for p in range(len(cols)):
            for q in range(p + 1, len(cols)):
                d0 = cols[p][0] - cols[q][0]
                d1 = cols[p][1] - cols[q][1]
                d2 = cols[p][2] - cols[q][2]
                best = max(best, math.sqrt(d0 * d0 + d1 * d1 + d2 * d2))
        per_cell.append(best)
    return math.fsum(per_cell) / len(per_cell) if per_cell else 0.0


def _log_softmax_row(row):
    m = max(row)
    lse = m + math.log(sum(math.exp(r - m) for r in row))
    return [r - lse for r in row]


def adv_loss_triple_loop(logits, labels, alpha):
    """-(1/K) sum_b sum_i sum_c alpha_c L_bic log D_bic over real classes c = 1..C."""
    B, H, W, C1 = logits.shape
    C = C1 - 1
    total = 0.0
    for b in range(B):
        for i in range(H * W):
            r, q = divmod(i, W)
            logp = _log_softmax_row(list(logits[b, r, q]))
            for c in range(1, C + 1):
                L = 1.0 if labels[b, r, q] == c else 0.0
                total += alpha[c - 1] * L * logp[c - 1]
    return -total / (B * H * W)


def disc_loss_triple_loop(logits_ref, logits_fake, labels, alpha):
    """Reference term against true classes plus fake term against class C+1."""
    B, H, W, C1 = logits_ref.shape
    real = adv_loss_triple_loop(logits_ref, labels, alpha)
    fake = 0.0
    for b in range(B):
        for i in range(H * W):
            r, q = divmod(i, W)
            logp = _log_softmax_row(list(logits_fake[b, r, q]))
            fake += logp[C1 - 1]
    return real - fake / (B * H * W)


def max_rel_err(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.abs(a).max(), np.abs(n).max(), 1e-12)
    return float(np.abs(a - n).max() / scale)


def central_diff(f, x, h=1e-5, idx=None):
    """Numerical gradient of scalar f at array x (modified in place, restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    indices = range(flat.size) if idx is None else idx
    for k in indices:
        old = flat[k]
        flat[k] = old + h
        fp = f()
        flat[k] = old - h
        fm = f()
        flat[k] = old
        gflat[k] = (fp - fm) / (2 * h)
    return g
