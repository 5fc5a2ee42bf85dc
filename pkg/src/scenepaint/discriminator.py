"""Per-pixel (C+1)-way segmentation discriminator.

A three-level encoder-decoder with skip connections: 3x3 convs at each level,
2x2 average pooling down, bilinear 2x upsampling up, and a final 1x1
projection to C+1 logits (the last channel is the fake class).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensornet as tn


class Discriminator:
    def __init__(self, params: dict[str, np.ndarray], class_count: int, slope: float = 0.2):
        self.params = params
        self.class_count = class_count
        self.slope = slope

    @classmethod
    def init(
        cls,
        class_count: int,
        channels: Sequence[int] = (32, 64, 128),
        seed: int | np.random.Generator = 0,
        slope: float = 0.2,
        dtype=np.float32,
    ) -> "Discriminator":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        c1, c2, c3 = channels
        shapes = {
            "e1": (3, 3, 3, c1),
            "e2": (3, 3, c1, c2),
            "e3": (3, 3, c2, c3),
            "d2": (3, 3, c3 + c2, c2),
            "d1": (3, 3, c2 + c1, c1),
            "out": (1, 1, c1, class_count + 1),
        }
        params = {}
        for name, shp in shapes.items():
            a = np.sqrt(1.0 / (shp[0] * shp[1] * shp[2]))
            params[f"{name}.W"] = rng.uniform(-a, a, size=shp).astype(dtype)
            params[f"{name}.b"] = rng.uniform(-a, a, size=shp[3:]).astype(dtype)
        return cls(params, class_count, slope)

    @property
    def fake_class(self) -> int:
        """Index of the fake class along the logit axis (0-based)."""
        return self.class_count

    def _conv(self, name, x, act=True):
        p = self.params
        pad = (p[f"{name}.W"].shape[0] - 1) // 2
        y = tn.conv2d(x, p[f"{name}.W"], p[f"{name}.b"], padding=pad)
        return (tn.leaky_relu(y, self.slope) if act else y), y

    def forward(self, images: np.ndarray):
        """Logits (N, H, W, C+1) for images (N, H, W, 3) in [0, 1]."""
        n, h, w, _ = images.shape
        if h % 4 or w % 4:
            raise tn.ShapeError("discriminator needs H and W divisible by 4")
        x0 = images * images.dtype.type(2) - 1
        e1, e1p = self._conv("e1", x0)
        p1 = tn.avg_pool2(e1)
        e2, e2p = self._conv("e2", p1)
        p2 = tn.avg_pool2(e2)
        e3, e3p = self._conv("e3", p2)
        u2 = tn.upsample2(e3)
        c2 = np.concatenate([u2, e2], axis=-1)
        d2, d2p = self._conv("d2", c2)
        u1 = tn.upsample2(d2)
        c1 = np.concatenate([u1, e1], axis=-1)
        d1, d1p = self._conv("d1", c1)
        logits, _ = self._conv("out", d1, act=False)
        cache = dict(x0=x0, e1p=e1p, p1=p1, e2p=e2p, p2=p2, e3p=e3p, c2=c2, d2p=d2p, c1=c1, d1p=d1p, d1=d1)
        return logits, cache

    def __call__(self, images):
        return self.forward(images)[0]

    def backward(self, cache, grad_logits: np.ndarray, need_input_grad: bool = False, need_param_grads: bool = True):
        """Returns (param grads or None, grad wrt input images or None)."""
        p = self.params
        grads = {}

        def conv_back(name, g, x, pre, need_in=True):
            if pre is not None:
                g = tn.leaky_relu_backward(g, pre, self.slope)
            pad = (p[f"{name}.W"].shape[0] - 1) // 2
            gi, gw, gb = tn.conv2d_backward(
                g, x, p[f"{name}.W"], padding=pad, need_input_grad=need_in, need_kernel_grad=need_param_grads
            )
            grads[f"{name}.W"], grads[f"{name}.b"] = gw, gb
            return gi

        c = cache
        g_d1 = conv_back("out", grad_logits, c["d1"], None)
        g_c1 = conv_back("d1", g_d1, c["c1"], c["d1p"])
        c_up1 = c["d2p"].shape[-1]
        g_u1, g_e1 = g_c1[..., :c_up1], g_c1[..., c_up1:]
        g_d2 = tn.upsample2_backward(g_u1)
        g_c2 = conv_back("d2", g_d2, c["c2"], c["d2p"])
        c_up2 = c["e3p"].shape[-1]
        g_u2, g_e2 = g_c2[..., :c_up2], g_c2[..., c_up2:]
        g_e3 = tn.upsample2_backward(g_u2)
        g_p2 = conv_back("e3", g_e3, c["p2"], c["e3p"])
        g_e2 = g_e2 + tn.avg_pool2_backward(g_p2)
        g_p1 = conv_back("e2", g_e2, c["p1"], c["e2p"])
        g_e1 = g_e1 + tn.avg_pool2_backward(g_p1)
        g_x0 = conv_back("e1", g_e1, c["x0"], c["e1p"], need_in=need_input_grad)
        grad_images = g_x0 * g_x0.dtype.type(2) if need_input_grad else None
        if not need_param_grads:
            grads = None
        else:
            grads = {k: grads[k] for k in p}
        return grads, grad_images
