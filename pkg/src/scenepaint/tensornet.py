"""Dense-tensor numeric core with hand-written reverse-mode gradients.

All image tensors are NHWC.  Convolution kernels are laid out
``(kh, kw, c_in, c_out)``.  Every op preserves the input dtype, so float64
inputs give float64 gradients (used by the finite-difference tests).

Set ``SCENEPAINT_DEBUG=1`` to assert finiteness after every op.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

DEBUG = os.environ.get("SCENEPAINT_DEBUG", "") not in ("", "0")


class ShapeError(ValueError):
    pass


def _check(*arrays):
    if DEBUG:
        for a in arrays:
            if not np.all(np.isfinite(a)):
                raise FloatingPointError("non-finite value produced")


def rowwise_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` for 2-D ``a`` whose output rows depend only on the matching input row.

    BLAS takes a different (gemv) path for a single row, whose rounding differs
    from the gemm path; padding to two rows keeps per-row results bitwise stable.
    """
    if a.shape[0] == 1:
        return (np.concatenate([a, np.zeros_like(a)]) @ b)[:1]
    return a @ b


def _out_size(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Zero-padded 2-D cross-correlation.

    Stride 1 sums one contiguous matmul per kernel tap in a fixed order;
    larger strides use an im2col patch matrix.  Results are deterministic
    for a fixed BLAS and thread count.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError("conv2d expects NHWC input and (kh, kw, cin, cout) kernel")
    kh, kw, cin, cout = kernel.shape
    if x.shape[3] != cin:
        raise ShapeError(f"input has {x.shape[3]} channels, kernel expects {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} != ({cout},)")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("kernel size must be odd")
    n, h, w, _ = x.shape
    ho, wo = _out_size(h, kh, stride, padding), _out_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError("input too small for kernel")

    if kh == kw == 1 and stride == 1 and padding == 0:
        out = rowwise_matmul(x.reshape(-1, cin), kernel[0, 0])
        out += bias
        out = out.reshape(n, h, w, cout)
        _check(out)
        return out

    if stride == 1:
        xp, offsets, length = _shifted_rows(x, kh, kw, padding)
        acc = np.zeros((xp.shape[0], cout), dtype=np.result_type(x, kernel))
        for t, off in enumerate(offsets):
            acc[:length] += xp[off : off + length] @ kernel[t // kw, t % kw]
        out = _unpad_rows(acc, n, h + 2 * padding, w + 2 * padding, ho, wo)
    else:
        cols = _im2col(x, kh, kw, stride, padding, ho, wo)
        out = (cols @ kernel.reshape(kh * kw * cin, cout)).reshape(n, ho, wo, cout)
    out += bias
    _check(out)
    return out


def _shifted_rows(x, kh, kw, padding):
    """Flattened padded input plus the row offset of each kernel tap.

    With the padded image flattened to rows, tap (i, j) of every output pixel
    reads the row ``i * Wp + j`` further on, so each tap is one contiguous
    matmul.  Rows that straddle an image edge land in discarded positions.
    """
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x
    n, hp, wp, cin = xp.shape
    offsets = [i * wp + j for i in range(kh) for j in range(kw)]
    return xp.reshape(-1, cin), offsets, n * hp * wp - offsets[-1]


def _unpad_rows(acc, n, hp, wp, ho, wo):
    return np.ascontiguousarray(acc.reshape(n, hp, wp, -1)[:, :ho, :wo, :])


def _im2col(x, kh, kw, stride, padding, ho, wo):
    """(N*Ho*Wo, kh*kw*cin) patch matrix, taps ordered to match ``kernel.reshape``."""
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x
    taps = [xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] for i in range(kh) for j in range(kw)]
    return np.concatenate(taps, axis=-1).reshape(-1, kh * kw * x.shape[3])


def conv2d_backward(
    grad_out: np.ndarray,
    x: np.ndarray,
    kernel: np.ndarray,
    stride: int = 1,
    padding: int = 0,
    need_input_grad: bool = True,
    need_kernel_grad: bool = True,
):
    """Gradients of :func:`conv2d` w.r.t. input, kernel and bias.

    ``x`` is the saved forward input.  Returns ``(grad_input, grad_kernel,
    grad_bias)``; gradients not requested are returned as None.
    """
    kh, kw, cin, cout = kernel.shape
    n, h, w, _ = x.shape
    ho, wo = _out_size(h, kh, stride, padding), _out_size(w, kw, stride, padding)
    if grad_out.shape != (n, ho, wo, cout):
        raise ShapeError(f"grad_out shape {grad_out.shape} != {(n, ho, wo, cout)}")
    g = grad_out.reshape(-1, cout)
    grad_bias = g.sum(axis=0)

    if kh == kw == 1 and stride == 1 and padding == 0:
        xf = x.reshape(-1, cin)
        grad_kernel = (xf.T @ g)[None, None] if need_kernel_grad else None
        grad_input = (g @ kernel[0, 0].T).reshape(x.shape) if need_input_grad else None
        _check(*(a for a in (grad_kernel, grad_bias) if a is not None))
        return grad_input, grad_kernel, grad_bias

    if stride == 1:
        xp, offsets, length = _shifted_rows(x, kh, kw, padding)
        hp, wp = h + 2 * padding, w + 2 * padding
        gp = np.zeros((n, hp, wp, cout), dtype=grad_out.dtype)
        gp[:, :ho, :wo, :] = grad_out
        gp = gp.reshape(-1, cout)[:length]
        grad_kernel = np.empty(kernel.shape, dtype=np.result_type(x, grad_out)) if need_kernel_grad else None
        gxp = np.zeros(xp.shape, dtype=np.result_type(grad_out, kernel)) if need_input_grad else None
        for t, off in enumerate(offsets):
            i, j = divmod(t, kw)
            if need_kernel_grad:
                grad_kernel[i, j] = xp[off : off + length].T @ gp
            if need_input_grad:
                gxp[off : off + length] += gp @ kernel[i, j].T
        grad_input = None
        if need_input_grad:
            grad_input = np.ascontiguousarray(gxp.reshape(n, hp, wp, cin)[:, padding : padding + h, padding : padding + w])
    else:
        cols = _im2col(x, kh, kw, stride, padding, ho, wo)
        grad_kernel = (cols.T @ g).reshape(kernel.shape) if need_kernel_grad else None
        grad_input = None
        if need_input_grad:
            gcols = (g @ kernel.reshape(-1, cout).T).reshape(n, ho, wo, kh * kw, cin)
            gxp = np.zeros((n, h + 2 * padding, w + 2 * padding, cin), dtype=gcols.dtype)
            for t in range(kh * kw):
                i, j = divmod(t, kw)
                gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += gcols[:, :, :, t, :]
            grad_input = np.ascontiguousarray(gxp[:, padding : padding + h, padding : padding + w, :])
    _check(*(a for a in (grad_kernel, grad_bias) if a is not None))
    return grad_input, grad_kernel, grad_bias


def leaky_relu(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    out = np.maximum(x, x * x.dtype.type(slope)) if 0 <= slope <= 1 else np.where(x > 0, x, x * x.dtype.type(slope))
    _check(out)
    return out


def leaky_relu_backward(grad_out: np.ndarray, x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    # derivative at exactly 0 is the slope
    return np.where(x > 0, grad_out, grad_out * grad_out.dtype.type(slope))


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def tanh_backward(grad_out: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``y`` is the saved forward output tanh(x)."""
    return grad_out * (1 - y * y)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    m = logits.max(axis=axis, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax_ce(logits: np.ndarray, target: np.ndarray, weight: np.ndarray, normalizer: float | None = None):
    """Weighted per-pixel cross-entropy ``sum(w * -log softmax[target]) / normalizer``.

    ``logits`` is (..., K); ``target`` and ``weight`` have the leading shape.
    The default normalizer is the number of pixels, matching the 1/(B*H*W)
    factor of the adversarial losses.  Returns ``(loss, grad_logits)``.
    """
    k = logits.shape[-1]
    target = np.asarray(target)
    if target.shape != logits.shape[:-1] or np.shape(weight) != logits.shape[:-1]:
        raise ShapeError("target/weight shape must match logits without the class axis")
    if target.size and (target.min() < 0 or target.max() >= k):
        raise ValueError(f"target class outside [0, {k})")
    if np.any(np.asarray(weight) < 0):
        raise ValueError("weights must be non-negative")
    if normalizer is None:
        normalizer = target.size
    logp = log_softmax(logits)
    picked = np.take_along_axis(logp, target[..., None], axis=-1)[..., 0]
    w = np.asarray(weight, dtype=logits.dtype)
    loss = float(-(w * picked).sum() / normalizer)
    grad = np.exp(logp)
    np.put_along_axis(grad, target[..., None], np.take_along_axis(grad, target[..., None], -1) - 1, axis=-1)
    grad *= (w / logits.dtype.type(normalizer))[..., None]
    _check(grad)
    return loss, grad


def avg_pool2(x: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError("avg_pool2 needs even spatial dims")
    return x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def avg_pool2_backward(grad_out: np.ndarray) -> np.ndarray:
    g = grad_out * grad_out.dtype.type(0.25)
    return np.repeat(np.repeat(g, 2, axis=1), 2, axis=2)


def _bilinear_matrix(n: int, dtype) -> np.ndarray:
    """(2n, n) linear map for 2x bilinear upsampling with half-pixel centers."""
    m = np.zeros((2 * n, n), dtype=dtype)
    for dst in range(2 * n):
        src = max((dst + 0.5) / 2 - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n - 1)
        i1 = min(i0 + 1, n - 1)
        lam = src - i0
        m[dst, i0] += 1 - lam
        m[dst, i1] += lam
    return m


def upsample2(x: np.ndarray) -> np.ndarray:
    _, h, w, _ = x.shape
    mh, mw = _bilinear_matrix(h, x.dtype), _bilinear_matrix(w, x.dtype)
    return np.einsum("ih,nhwc,jw->nijc", mh, x, mw, optimize=True)


def upsample2_backward(grad_out: np.ndarray) -> np.ndarray:
    _, h2, w2, _ = grad_out.shape
    mh, mw = _bilinear_matrix(h2 // 2, grad_out.dtype), _bilinear_matrix(w2 // 2, grad_out.dtype)
    return np.einsum("ih,nijc,jw->nhwc", mh, grad_out, mw, optimize=True)


@dataclass
class Adam:
    """Adam with bias correction over a dict of named parameter arrays.

    Parameters are updated in place, in the dict's insertion order.
    """

    lr: float
    beta1: float = 0.0
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        if grads.keys() != params.keys():
            raise ShapeError("gradient names do not match parameter names")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            dt = p.dtype.type
            m *= dt(self.beta1)
            m += dt(1 - self.beta1) * g
            v *= dt(self.beta2)
            v += dt(1 - self.beta2) * (g * g)
            p -= dt(self.lr) * (m / dt(c1)) / (np.sqrt(v / dt(c2)) + dt(self.eps))
            _check(p)

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"{prefix}m/{name}"] = self.m[name]
            out[f"{prefix}v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str, step_count: int) -> None:
        self.step_count = step_count
        self.m, self.v = {}, {}
        for key, arr in arrays.items():
            if key.startswith(prefix + "m/"):
                self.m[key[len(prefix) + 2 :]] = arr.copy()
            elif key.startswith(prefix + "v/"):
                self.v[key[len(prefix) + 2 :]] = arr.copy()
