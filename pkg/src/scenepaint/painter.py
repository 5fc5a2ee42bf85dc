"""The scene painting generator: encodings + conv body + tanh, and checkpoints."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import container
from . import tensornet as tn
from .encoding import NonlinearEncoder, StaticChannels, concat_channels, pe_dim, static_channels
from .raster import FrameMaps, label_palette
from .scenegraph import AABB

CHECKPOINT_MAGIC = b"SPCK"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


class ChannelMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    kind: str = "CNN"  # "MLP" (1x1 convs) or "CNN" (3x3 convs, padding 1)
    layers: int = 3  # conv layers including the 3-channel output layer
    hidden: int = 128
    slope: float = 0.2
    F: int | None = 2  # sinusoidal frequencies; None disables the channels
    dim_ne: int = 64  # learned encoding width; 0 disables it
    ne_hidden: int = 64
    fourier_dim: int = 0  # random Fourier features (ablation); must be even
    dim_z: int = 64
    class_count: int = 150

    def __post_init__(self):
        if self.kind not in ("MLP", "CNN"):
            raise ConfigError(f"unknown generator kind {self.kind!r}")
        if self.layers < 2:
            raise ConfigError("need at least 2 layers")
        if self.hidden < 1 or self.class_count < 1 or self.dim_z < 0 or self.dim_ne < 0:
            raise ConfigError("widths must be positive")
        if self.F is not None and self.F < 0:
            raise ConfigError("F must be >= 0")
        if self.fourier_dim % 2:
            raise ConfigError("fourier_dim must be even")

    @property
    def kernel(self) -> int:
        return 1 if self.kind == "MLP" else 3

    @property
    def padding(self) -> int:
        return (self.kernel - 1) // 2

    @property
    def input_dim(self) -> int:
        pe = 0 if self.F is None else pe_dim(self.F)
        return pe + self.dim_ne + self.fourier_dim + self.class_count + self.dim_z

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


PRESETS = {
    # three 3x3 layers of width 512
    "paper-cnn": dict(kind="CNN", layers=3, hidden=512),
    # the parameter-matched pair of the architecture comparison
    "parity-cnn": dict(kind="CNN", layers=5, hidden=192),
    "parity-mlp": dict(kind="MLP", layers=7, hidden=512),
    "desk-cnn": dict(kind="CNN", layers=3, hidden=128),
    "desk-mlp": dict(kind="MLP", layers=4, hidden=64),
}


def preset(name: str, **overrides) -> GeneratorConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    unknown = set(overrides) - {f.name for f in dataclasses.fields(GeneratorConfig)}
    if unknown:
        raise ConfigError(f"unknown generator fields: {sorted(unknown)}")
    return GeneratorConfig(**{**base, **overrides})


@dataclass
class PaintingGenerator:
    config: GeneratorConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    encoder: NonlinearEncoder | None = None
    fourier_B: np.ndarray | None = None
    bounds: AABB | None = None  # frozen normalization bounds
    styles: np.ndarray | None = None  # (S, dim_z) style set
    palette: np.ndarray | None = None  # (C, 3) per-class fallback/preview colors
    meta: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return self.weights[0].dtype

    def params(self) -> dict[str, np.ndarray]:
        """Learnable parameters in checkpoint order (encoder first, then layers)."""
        out = dict(self.encoder.params()) if self.encoder is not None else {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"layer{i}.W"] = w
            out[f"layer{i}.b"] = b
        return out

    def body_parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params().values())

    # ------------------------------------------------------------ forward

    def static_inputs(self, frames: FrameMaps, z: np.ndarray, allow_holes: bool = False) -> StaticChannels:
        if self.bounds is None:
            raise ConfigError("generator has no frozen scene bounds")
        if frames.class_count != self.config.class_count:
            raise ChannelMismatchError(
                f"frames have {frames.class_count} classes, generator expects {self.config.class_count}"
            )
        return static_channels(frames, z, self.bounds, self.config.F, self.fourier_B, allow_holes, self.dtype)

    def assemble(self, statics: Sequence[StaticChannels]):
        """Stack per-view inputs into (N, H, W, D), evaluating the learned encoding."""
        if self.encoder is None:
            return np.stack([concat_channels(s, None) for s in statics]), None
        coords = np.stack([s.coord for s in statics])
        ne, cache = self.encoder.forward(coords)
        X = np.stack([concat_channels(s, ne[i]) for i, s in enumerate(statics)])
        return X, cache

    def forward(self, X: np.ndarray):
        """Body forward pass on (N, H, W, D). Returns (image in [0, 1], cache)."""
        if X.shape[-1] != self.config.input_dim:
            raise ChannelMismatchError(f"input has {X.shape[-1]} channels, generator expects {self.config.input_dim}")
        pad = self.config.padding
        acts = [X]
        pre = []
        h = X
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            y = tn.conv2d(h, w, b, padding=pad)
            pre.append(y)
            h = tn.tanh(y) if i == last else tn.leaky_relu(y, self.config.slope)
            acts.append(h)
        half = h.dtype.type(0.5)
        image = (h + 1) * half
        return image, (acts, pre)

    def backward(self, cache, grad_image: np.ndarray, need_input_grad: bool = False):
        """Gradients of a scalar loss w.r.t. body parameters (and optionally X)."""
        acts, pre = cache
        pad = self.config.padding
        grads = {}
        g = tn.tanh_backward(grad_image * grad_image.dtype.type(0.5), acts[-1])
        grad_x = None
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                g = tn.leaky_relu_backward(g, pre[i], self.config.slope)
            need = i > 0 or need_input_grad
            gin, gw, gb = tn.conv2d_backward(g, acts[i], self.weights[i], padding=pad, need_input_grad=need)
            grads[f"layer{i}.W"] = gw
            grads[f"layer{i}.b"] = gb
            g = gin
            if i == 0:
                grad_x = gin
        return grads, grad_x

    def ne_slice(self) -> slice:
        start = 0 if self.config.F is None else pe_dim(self.config.F)
        return slice(start, start + self.config.dim_ne)

    def paint_view(self, frames: FrameMaps, z: np.ndarray, allow_holes: bool = True) -> np.ndarray:
        X, _ = self.assemble([self.static_inputs(frames, z, allow_holes)])
        return self.forward(X)[0][0]


def build_generator(config: GeneratorConfig, seed: int | np.random.Generator = 0, dtype=np.float32) -> PaintingGenerator:
    """Fresh generator with fan-in uniform init, deterministic in ``seed``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    encoder = None
    if config.dim_ne:
        encoder = NonlinearEncoder.init(rng, config.ne_hidden, config.dim_ne, config.slope, dtype)
    fourier_B = None
    if config.fourier_dim:
        fourier_B = rng.standard_normal((3, config.fourier_dim // 2)).astype(dtype)
    k = config.kernel
    widths = [config.input_dim] + [config.hidden] * (config.layers - 1) + [3]
    weights, biases = [], []
    for cin, cout in zip(widths[:-1], widths[1:]):
        a = np.sqrt(1.0 / (cin * k * k))
        weights.append(rng.uniform(-a, a, size=(k, k, cin, cout)).astype(dtype))
        biases.append(rng.uniform(-a, a, size=(cout,)).astype(dtype))
    return PaintingGenerator(
        config,
        weights,
        biases,
        encoder,
        fourier_B,
        palette=label_palette(config.class_count)[1:],
    )


def paint(gen: PaintingGenerator, X: np.ndarray) -> np.ndarray:
    """Run the generator on an (H, W, D) or (N, H, W, D) input; RGB in [0, 1]."""
    batched = X.ndim == 4
    out, _ = gen.forward(X if batched else X[None])
    return out if batched else out[0]


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(gen: PaintingGenerator) -> bytes:
    arrays = dict(gen.params())
    if gen.fourier_B is not None:
        arrays["fourier.B"] = gen.fourier_B
    if gen.bounds is not None:
        arrays["bounds"] = np.stack([gen.bounds.min, gen.bounds.max])
    if gen.styles is not None:
        arrays["styles"] = gen.styles
    if gen.palette is not None:
        arrays["palette"] = gen.palette
    meta = {
        "config": gen.config.to_dict(),
        "dtype": np.dtype(gen.dtype).str,
        "slope": gen.encoder.slope if gen.encoder is not None else gen.config.slope,
        "meta": gen.meta,
    }
    return container.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, meta, arrays)


def load_checkpoint(data: bytes) -> PaintingGenerator:
    meta, arrays = container.unpack(data, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    config = GeneratorConfig(**meta["config"])
    encoder = None
    if config.dim_ne:
        encoder = NonlinearEncoder(arrays["enc.W1"], arrays["enc.W2"], meta["slope"])
    weights = [arrays[f"layer{i}.W"] for i in range(config.layers)]
    biases = [arrays[f"layer{i}.b"] for i in range(config.layers)]
    bounds = None
    if "bounds" in arrays:
        bounds = AABB(arrays["bounds"][0], arrays["bounds"][1])
    return PaintingGenerator(
        config,
        weights,
        biases,
        encoder,
        arrays.get("fourier.B"),
        bounds,
        arrays.get("styles"),
        arrays.get("palette"),
        meta.get("meta", {}),
    )
