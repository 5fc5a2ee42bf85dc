"""Per-scene training: reconstruction + segmentation-adversarial losses.

Each iteration samples B (view, style) pairs, paints them, takes one
discriminator Adam step on the batch, then one generator step (body and
learned encoding) on the same batch with the updated discriminator.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import container
from . import tensornet as tn
from .discriminator import Discriminator
from .painter import GeneratorConfig, PaintingGenerator, build_generator
from .raster import FrameMaps
from .refgen import ReferenceSet
from .scenegraph import AABB

log = logging.getLogger(__name__)

LOSS_MODES = ("recon_only", "adv_only", "full")
STATE_MAGIC = b"SPTS"
STATE_VERSION = 1


class TrainingDivergedError(RuntimeError):
    def __init__(self, message: str, state: bytes | None = None):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class TrainingConfig:
    batch: int = 4
    iterations: int = 20000
    lambda_adv: float = 10.0
    lr_g: float = 1e-3
    lr_d: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss_mode: str = "full"
    views: tuple[int, ...] | None = None  # None: every camera
    styles: tuple[int, ...] | None = None  # None: every style vector
    disc_channels: tuple[int, int, int] = (32, 64, 128)
    allow_holes: bool = True

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.lambda_adv < 0:
            raise ValueError("lambda_adv must be >= 0")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        for name in ("views", "styles", "disc_channels"):
            val = getattr(self, name)
            if val is not None and not isinstance(val, tuple):
                object.__setattr__(self, name, tuple(val))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config fields: {sorted(unknown)}")
        return cls(**d)


# ------------------------------------------------------------------- losses

def class_weights(labels: np.ndarray, class_count: int) -> np.ndarray:
    """Inverse-frequency class weights over a batch of label maps.

    alpha_c = N / (C_present * n_c) for present classes, 0 otherwise, where N
    is the number of labeled pixels and n_c the pixels of class c.
    """
    lab = np.asarray(labels)
    counts = np.bincount(lab[lab > 0].ravel(), minlength=class_count + 1)[1 : class_count + 1]
    total = counts.sum()
    if total == 0:
        raise ValueError("batch has no labeled pixels")
    present = counts > 0
    alpha = np.zeros(class_count)
    alpha[present] = total / (present.sum() * counts[present])
    return alpha


def recon_loss(painted: np.ndarray, refs: np.ndarray):
    """Sum of per-pixel L1 norms (over RGB) divided by K = B*H*W.

    Returns ``(loss, grad wrt painted)``.
    """
    if painted.shape != refs.shape:
        raise tn.ShapeError(f"painted {painted.shape} vs refs {refs.shape}")
    diff = painted - refs.astype(painted.dtype)
    K = int(np.prod(painted.shape[:-1]))
    loss = float(np.abs(diff).sum(dtype=np.float64) / K)
    return loss, np.sign(diff) / painted.dtype.type(K)


def _targets(labels: np.ndarray, alpha: np.ndarray):
    lab = np.asarray(labels)
    target = np.maximum(lab - 1, 0)
    weight = np.where(lab > 0, alpha[target], 0.0)
    return target, weight


def adv_loss_gen_from_logits(logits: np.ndarray, labels: np.ndarray, alpha: np.ndarray):
    """Weighted CE pushing every labeled pixel toward its true class."""
    target, weight = _targets(labels, alpha)
    return tn.softmax_ce(logits, target, weight.astype(logits.dtype))


def adv_loss_gen(painted: np.ndarray, labels: np.ndarray, alpha: np.ndarray, disc: Discriminator):
    """Generator adversarial loss; returns ``(loss, grad wrt painted)``."""
    logits, cache = disc.forward(painted)
    loss, g = adv_loss_gen_from_logits(logits, labels, alpha)
    _, grad_img = disc.backward(cache, g, need_input_grad=True, need_param_grads=False)
    return loss, grad_img


def disc_loss(refs: np.ndarray, painted: np.ndarray, labels: np.ndarray, alpha: np.ndarray, disc: Discriminator):
    """Discriminator loss: references toward their true classes, painted
    pixels toward the fake class.  ``painted`` is treated as a constant.

    Returns ``(loss, grads wrt discriminator params)``.
    """
    if refs.shape != painted.shape:
        raise tn.ShapeError("refs and painted batches differ in shape")
    B = refs.shape[0]
    K = int(np.prod(refs.shape[:-1]))
    both = np.concatenate([refs.astype(painted.dtype), painted])
    logits, cache = disc.forward(both)
    target, weight = _targets(labels, alpha)
    target = np.concatenate([target, np.full_like(target, disc.fake_class)])
    weight = np.concatenate([weight, np.ones_like(weight)]).astype(logits.dtype)
    loss, g = tn.softmax_ce(logits, target, weight, normalizer=K)
    assert logits.shape[0] == 2 * B
    grads, _ = disc.backward(cache, g)
    return loss, grads


# ------------------------------------------------------------------ trainer

class Trainer:
    """Owns all training state. Single-threaded and deterministic given the seed."""

    def __init__(
        self,
        frames: Sequence[FrameMaps],
        styles: np.ndarray,
        refs: ReferenceSet,
        bounds: AABB,
        gen_config: GeneratorConfig,
        config: TrainingConfig,
        dtype=np.float32,
    ):
        self.config = config
        self.gen_config = gen_config
        self.frames = list(frames)
        self.styles = np.asarray(styles, dtype=np.float64)
        views = config.views if config.views is not None else tuple(range(len(self.frames)))
        style_ids = config.styles if config.styles is not None else tuple(range(len(self.styles)))
        if self.styles.shape[1] != gen_config.dim_z:
            raise ValueError(f"style dimension {self.styles.shape[1]} != generator dim_z {gen_config.dim_z}")
        shape = self.frames[0].shape
        refs.check_covers(views, style_ids, shape)
        self.refs = refs

        seq_g, seq_d, seq_sample = np.random.SeedSequence(config.seed).spawn(3)
        self.gen = build_generator(gen_config, np.random.default_rng(seq_g), dtype)
        self.gen.bounds = bounds
        self.gen.styles = self.styles.copy()
        self.gen.meta = {"reference": {"provenance": refs.provenance, **refs.params}, "train_seed": config.seed}
        self.disc = None
        if config.loss_mode != "recon_only":
            self.disc = Discriminator.init(
                gen_config.class_count, config.disc_channels, np.random.default_rng(seq_d), gen_config.slope, dtype
            )
        self.rng = np.random.default_rng(seq_sample)
        adam = dict(beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
        self.opt_g = tn.Adam(config.lr_g, **adam)
        self.opt_d = tn.Adam(config.lr_d, **adam)
        self.iteration = 0
        self.history: list[tuple[int, float, float, float]] = []

        self.pairs = [(v, s) for v in views for s in style_ids]
        view_static = {}
        for v in views:
            view_static[v] = self.gen.static_inputs(self.frames[v], self.styles[style_ids[0]], config.allow_holes)
        self._static = {
            (v, s): dataclasses.replace(view_static[v], style=self.styles[s].astype(dtype)) for v, s in self.pairs
        }
        self._refs = {k: refs[k].astype(dtype) for k in self.pairs}

    # ---------------------------------------------------------------- step

    def sample_batch(self) -> list[tuple[int, int]]:
        idx = self.rng.integers(len(self.pairs), size=self.config.batch)
        return [self.pairs[i] for i in idx]

    def step(self) -> dict[str, float]:
        cfg = self.config
        batch = self.sample_batch()
        statics = [self._static[k] for k in batch]
        X, enc_cache = self.gen.assemble(statics)
        painted, gcache = self.gen.forward(X)
        refs = np.stack([self._refs[k] for k in batch])
        labels = np.stack([self.frames[v].label for v, _ in batch])
        alpha = class_weights(labels, self.gen_config.class_count)

        l_rec, g_rec = recon_loss(painted, refs)
        l_adv = l_d = math.nan
        if cfg.loss_mode == "recon_only":
            grad_img = g_rec
        else:
            d_before = _fingerprint(self.gen.params())
            l_d, d_grads = disc_loss(refs, painted, labels, alpha, self.disc)
            self.opt_d.step(self.disc.params, d_grads)
            assert _fingerprint(self.gen.params()) == d_before
            l_adv, g_adv = adv_loss_gen(painted, labels, alpha, self.disc)
            lam = g_adv.dtype.type(cfg.lambda_adv)
            grad_img = lam * g_adv if cfg.loss_mode == "adv_only" else g_rec + lam * g_adv

        checked = (l_rec,) if cfg.loss_mode == "recon_only" else (l_rec, l_adv, l_d)
        if not all(math.isfinite(x) for x in checked):
            raise TrainingDivergedError(
                f"non-finite loss at iteration {self.iteration}: rec={l_rec} adv={l_adv} disc={l_d}",
                self.state_bytes(),
            )

        need_x = self.gen.encoder is not None
        grads, grad_x = self.gen.backward(gcache, grad_img, need_input_grad=need_x)
        if need_x:
            g_ne = grad_x[..., self.gen.ne_slice()] * np.stack([s.coverage for s in statics])[..., None]
            _, enc_grads = self.gen.encoder.backward(g_ne, enc_cache)
            grads.update(enc_grads)
        d_fp = _fingerprint(self.disc.params) if self.disc is not None else None
        self.opt_g.step(self.gen.params(), grads)
        if self.disc is not None:
            assert _fingerprint(self.disc.params) == d_fp

        self.iteration += 1
        self.history.append((self.iteration, l_rec, l_adv, l_d))
        return {"rec": l_rec, "adv": l_adv, "disc": l_d}

    def run(self, iterations: int | None = None, callback: Callable[["Trainer"], None] | None = None) -> None:
        n = self.config.iterations - self.iteration if iterations is None else iterations
        t0 = time.perf_counter()
        for _ in range(n):
            losses = self.step()
            if callback is not None:
                callback(self)
            if self.iteration % 100 == 0:
                log.info(
                    "iter %d rec %.4f adv %.4f disc %.4f (%.2fs/it)",
                    self.iteration,
                    losses["rec"],
                    losses["adv"],
                    losses["disc"],
                    (time.perf_counter() - t0) / max(1, _ + 1),
                )

    # --------------------------------------------------------------- state

    def state_bytes(self) -> bytes:
        arrays = {f"G/{k}": v for k, v in self.gen.params().items()}
        arrays.update(self.opt_g.state_arrays("optG/"))
        if self.disc is not None:
            arrays.update({f"D/{k}": v for k, v in self.disc.params.items()})
            arrays.update(self.opt_d.state_arrays("optD/"))
        meta = {
            "iteration": self.iteration,
            "rng": self.rng.bit_generator.state,
            "opt_g_steps": self.opt_g.step_count,
            "opt_d_steps": self.opt_d.step_count,
            "history": [list(h) for h in self.history],
            "config": self.config.to_dict(),
            "gen_config": self.gen_config.to_dict(),
        }
        return container.pack(STATE_MAGIC, STATE_VERSION, meta, arrays)

    def load_state_bytes(self, data: bytes) -> None:
        meta, arrays = container.unpack(data, STATE_MAGIC, STATE_VERSION)
        if meta["gen_config"] != self.gen_config.to_dict():
            raise ValueError("train state was produced with a different generator config")
        for k, p in self.gen.params().items():
            p[...] = arrays[f"G/{k}"]
        self.opt_g.load_state_arrays(arrays, "optG/", meta["opt_g_steps"])
        if self.disc is not None:
            for k, p in self.disc.params.items():
                p[...] = arrays[f"D/{k}"]
            self.opt_d.load_state_arrays(arrays, "optD/", meta["opt_d_steps"])
        self.rng.bit_generator.state = meta["rng"]
        self.iteration = meta["iteration"]
        self.history = [tuple(h) for h in meta["history"]]

    def manifest(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "generator": self.gen_config.to_dict(),
            "seed": self.config.seed,
            "iterations_done": self.iteration,
            "reference": {"provenance": self.refs.provenance, **self.refs.params},
            "pairs": len(self.pairs),
        }


def _fingerprint(params: dict[str, np.ndarray]) -> int:
    return hash(tuple(p.tobytes() for p in params.values()))


def train(
    frames: Sequence[FrameMaps],
    styles: np.ndarray,
    refs: ReferenceSet,
    bounds: AABB,
    gen_config: GeneratorConfig,
    config: TrainingConfig,
    callback: Callable[[Trainer], None] | None = None,
) -> tuple[PaintingGenerator, dict]:
    """Train a painter from scratch; returns the painter and a manifest dict."""
    t0 = time.time()
    trainer = Trainer(frames, styles, refs, bounds, gen_config, config)
    trainer.run(callback=callback)
    manifest = trainer.manifest()
    manifest["wall_clock_s"] = time.time() - t0
    manifest["history"] = trainer.history
    return trainer.gen, manifest


def write_loss_csv(history, path: str | Path) -> None:
    lines = ["iteration,rec,adv,disc"]
    for it, rec, adv, d in history:
        lines.append(",".join([str(it)] + ["" if math.isnan(x) else repr(x) for x in (rec, adv, d)]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_manifest(manifest: dict, path: str | Path) -> None:
    m = {k: v for k, v in manifest.items() if k != "history"}
    Path(path).write_text(json.dumps(m, indent=2, sort_keys=True, default=str) + "\n")
