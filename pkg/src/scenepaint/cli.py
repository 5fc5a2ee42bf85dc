"""Command-line pipeline: render, train, paint, eval, bake, edit.

Exit codes: 0 success, 1 usage error, 2 invalid input, 3 training diverged.
Every command writes a JSON run manifest (command, resolved config, seeds,
SHA-256 of inputs, outputs, wall-clock).
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import re
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, container
from . import evalkit, meshbake, painter, raster, refgen, scenegraph, trainer

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2, 3
MANIFEST_NAME = "run_manifest.json"
_PAINTED_RE = re.compile(r"^view(\d+)_style(\d+)\.png$")

log = logging.getLogger("scenepaint")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ------------------------------------------------------------------ helpers

def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _scene_inputs(scene_path: Path, scene: scenegraph.Scene) -> list[Path]:
    refs = sorted({o.mesh_ref for o in scene.objects})
    return [scene_path] + [scene_path.parent / r for r in refs]


class Run:
    """Collects manifest fields while a command executes."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.args = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.config: dict = {}
        self.seeds: dict = {}
        self.t0 = time.time()

    def input(self, *paths):
        for p in paths:
            self.inputs[str(p)] = sha256_file(p)

    def output(self, path):
        self.outputs.append(str(path))

    def write(self, path: Path) -> None:
        manifest = {
            "command": self.command,
            "version": __version__,
            "arguments": self.args,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "wall_clock_s": round(time.time() - self.t0, 3),
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (tuple, set)):
        return list(o)
    return str(o)


def _load_scene_and_cameras(run: Run, scene_path: Path, cameras_path: Path):
    scene = scenegraph.load_scene(scene_path)
    cameras = scenegraph.load_cameras(cameras_path)
    if not cameras:
        raise scenegraph.SceneError(f"{cameras_path}: no cameras")
    run.input(*_scene_inputs(scene_path, scene), cameras_path)
    return scene, cameras


def _load_painter(run: Run, path: Path) -> painter.PaintingGenerator:
    run.input(path)
    gen = painter.load_checkpoint(path.read_bytes())
    run.config["generator"] = gen.config.to_dict()
    return gen


def _resolve_styles(run: Run, gen: painter.PaintingGenerator, styles_path: Path | None) -> np.ndarray:
    if styles_path is not None:
        run.input(styles_path)
        return scenegraph.load_styles(styles_path)
    if gen.styles is None:
        raise ValueError("checkpoint stores no style vectors; pass --styles")
    return gen.styles


def _pick_styles(styles: np.ndarray, indices) -> list[int]:
    idx = list(range(len(styles))) if not indices else list(indices)
    for s in idx:
        if not 0 <= s < len(styles):
            raise ValueError(f"style index {s} outside [0, {len(styles)})")
    return idx


def _mock_refs(frames, styles, class_count, args) -> refgen.ReferenceSet:
    palette = refgen.MockPalette(args.palette_seed, class_count, styles.shape[1])
    return refgen.mock_reference_set(frames, styles, palette, args.eps, seed=args.ref_seed, shading=not args.no_shading)


def _add_mock_flags(p):
    p.add_argument("--eps", type=float, default=0.2, help="mock cross-view inconsistency amplitude (default 0.2)")
    p.add_argument("--palette-seed", type=int, default=0, help="mock class palette seed (default 0)")
    p.add_argument("--ref-seed", type=int, default=0, help="mock per-view offset seed (default 0)")
    p.add_argument("--no-shading", action="store_true", help="disable depth shading in mock references")


# ----------------------------------------------------------------- commands

def cmd_render(args) -> Path:
    run = Run("render", args)
    scene, cameras = _load_scene_and_cameras(run, args.scene, args.cameras)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    for v, cam in enumerate(cameras):
        fr = raster.rasterize_view(scene, cam)
        for name, write in (
            (f"view{v:03d}.frames", lambda p: raster.save_frames(fr, p)),
            (f"view{v:03d}_label.png", lambda p: raster.save_png(raster.label_preview(fr), p)),
            (f"view{v:03d}_depth.png", lambda p: raster.save_png(raster.depth_preview(fr), p)),
        ):
            write(out / name)
            run.output(out / name)
        log.info("view %d: coverage %.3f", v, fr.coverage.mean())
    run.config = {"views": len(cameras), "class_count": scene.class_count}
    run.write(out / MANIFEST_NAME)
    return out


def _training_config(args) -> tuple[trainer.TrainingConfig, tuple[str, dict]]:
    raw: dict = {}
    if args.config is not None:
        raw = json.loads(args.config.read_text())
        if not isinstance(raw, dict):
            raise ValueError(f"{args.config}: expected a JSON object")
    gen_raw = dict(raw.pop("generator", {}))
    preset_name = args.preset or gen_raw.pop("preset", "desk-cnn")
    gen_raw.pop("preset", None)
    for key, val in (
        ("iterations", args.iterations),
        ("seed", args.seed),
        ("loss_mode", args.loss_mode),
        ("lambda_adv", args.lambda_adv),
        ("batch", args.batch),
    ):
        if val is not None:
            raw[key] = val
    return trainer.TrainingConfig.from_dict(raw), (preset_name, gen_raw)


def cmd_train(args) -> Path:
    run = Run("train", args)
    scene, cameras = _load_scene_and_cameras(run, args.scene, args.cameras)
    run.input(args.styles)
    if args.config is not None:
        run.input(args.config)
    styles = scenegraph.load_styles(args.styles)
    cfg, (preset_name, gen_over) = _training_config(args)
    gen_cfg = painter.preset(preset_name, class_count=scene.class_count, dim_z=styles.shape[1], **gen_over)
    frames = [raster.rasterize_view(scene, c) for c in cameras]

    views = cfg.views if cfg.views is not None else range(len(frames))
    style_ids = cfg.styles if cfg.styles is not None else range(len(styles))
    if args.refs == "mock":
        refs = _mock_refs(frames, styles, scene.class_count, args)
    else:
        w, h = cameras[0].resolution
        refs = refgen.load_reference_dir(args.refs, views, style_ids, (w, h))
        for v in views:
            for s in style_ids:
                run.input(Path(args.refs) / f"view{v}_style{s}.png")

    tr = trainer.Trainer(frames, styles, refs, scene.bounds, gen_cfg, cfg)
    if args.resume is not None:
        run.input(args.resume)
        tr.load_state_bytes(args.resume.read_bytes())
        log.info("resumed at iteration %d", tr.iteration)

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    state_path = out / "train_state.bin"

    def on_step(t: trainer.Trainer):
        if args.checkpoint_every and t.iteration % args.checkpoint_every == 0:
            state_path.write_bytes(t.state_bytes())

    try:
        tr.run(callback=on_step)
    except trainer.TrainingDivergedError as exc:
        if exc.state is not None:
            (out / "diverged_state.bin").write_bytes(exc.state)
        raise

    ckpt = out / "painter.ckpt"
    ckpt.write_bytes(painter.save_checkpoint(tr.gen))
    state_path.write_bytes(tr.state_bytes())
    trainer.write_loss_csv(tr.history, out / "losses.csv")
    trainer.write_manifest(tr.manifest(), out / "train_manifest.json")
    for p in (ckpt, state_path, out / "losses.csv", out / "train_manifest.json"):
        run.output(p)
    run.config = {"training": cfg.to_dict(), "generator": gen_cfg.to_dict(), "preset": preset_name, "reference": refs.params}
    run.seeds = {"train": cfg.seed, **({k: refs.params[k] for k in ("palette_seed", "seed") if k in refs.params})}
    run.write(out / MANIFEST_NAME)
    return ckpt


def cmd_paint(args) -> Path:
    run = Run("paint", args)
    gen = _load_painter(run, args.checkpoint)
    scene, cameras = _load_scene_and_cameras(run, args.scene, args.cameras)
    styles = _resolve_styles(run, gen, args.styles)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    for s in _pick_styles(styles, args.style):
        for v, cam in enumerate(cameras):
            img = gen.paint_view(raster.rasterize_view(scene, cam), styles[s])
            path = out / f"view{v}_style{s}.png"
            raster.save_png(img, path)
            run.output(path)
    run.write(out / MANIFEST_NAME)
    return out


def _painted_from_dir(run: Run, images_dir: Path, frames_dir: Path):
    """(style -> [(view, image)]) and view -> FrameMaps from render/paint outputs."""
    by_style: dict[int, list] = {}
    for p in sorted(images_dir.iterdir()):
        m = _PAINTED_RE.match(p.name)
        if m:
            by_style.setdefault(int(m.group(2)), []).append((int(m.group(1)), raster.load_png(p)))
            run.input(p)
    if not by_style:
        raise ValueError(f"no view<V>_style<S>.png images in {images_dir}")
    frames = {}
    for items in by_style.values():
        for v, _ in items:
            if v not in frames:
                fp = frames_dir / f"view{v:03d}.frames"
                if not fp.exists():
                    raise FileNotFoundError(f"missing frame maps {fp}")
                run.input(fp)
                frames[v] = raster.load_frames(fp)
    return by_style, frames


def _vc_rows(images, frames_list, bounds, s):
    coords = [scenegraph.normalize_coord(f.coord, bounds) for f in frames_list]
    res = evalkit.view_consistency_detail(images, coords, [f.coverage for f in frames_list], s)
    return {
        "vc": res.vc,
        "qualifying_cells": res.qualifying_cells,
        "total_cells": res.total_cells,
        "mean_colors_per_cell": res.mean_colors_per_cell,
    }


def cmd_eval(args) -> Path:
    run = Run("eval", args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    if args.images is not None:
        if args.frames is None or args.bounds_from is None:
            raise UsageError("--images needs --frames and --bounds-from (a scene or checkpoint file)")
        by_style, frames = _painted_from_dir(run, args.images, args.frames)
        run.input(args.bounds_from)
        if args.bounds_from.suffix == ".ckpt":
            bounds = painter.load_checkpoint(args.bounds_from.read_bytes()).bounds
        else:
            bounds = scenegraph.load_scene(args.bounds_from).bounds
        painted = {(v, s): img for s, items in by_style.items() for v, img in items}
        styles = gen = None
    else:
        if args.checkpoint is None or args.scene is None or args.cameras is None:
            raise UsageError("eval needs either --images/--frames/--bounds-from or --checkpoint/--scene/--cameras")
        gen = _load_painter(run, args.checkpoint)
        scene, cameras = _load_scene_and_cameras(run, args.scene, args.cameras)
        styles = _resolve_styles(run, gen, args.styles)
        bounds = gen.bounds
        frames = {v: raster.rasterize_view(scene, c) for v, c in enumerate(cameras)}
        painted = {
            (v, s): gen.paint_view(frames[v], styles[s]) for s in _pick_styles(styles, args.style) for v in frames
        }

    sections: dict[str, dict] = {}
    style_ids = sorted({s for _, s in painted})
    views = sorted(frames)
    for s in style_ids:
        vs = [v for v in views if (v, s) in painted]
        sections[f"painted_style{s}"] = _vc_rows([painted[(v, s)] for v in vs], [frames[v] for v in vs], bounds, args.cell)
    keys = sorted(painted)
    sections["painted_pooled"] = _vc_rows([painted[k] for k in keys], [frames[k[0]] for k in keys], bounds, args.cell)

    if args.refs is not None:
        if args.refs == "mock":
            if styles is None:
                raise UsageError("mock references need style vectors: use --checkpoint mode or pass --styles")
            fl = [frames[v] for v in views]
            refs = _mock_refs(fl, styles, fl[0].class_count, args)
            ref_images = {k: refs[(views.index(k[0]), k[1])] for k in keys}
        else:
            refs = refgen.load_reference_dir(args.refs, views, style_ids)
            ref_images = {k: refs[k] for k in keys}
        for s in style_ids:
            ks = [k for k in keys if k[1] == s]
            sections[f"reference_style{s}"] = _vc_rows([ref_images[k] for k in ks], [frames[k[0]] for k in ks], bounds, args.cell)
        sections["reference_pooled"] = _vc_rows([ref_images[k] for k in keys], [frames[k[0]] for k in keys], bounds, args.cell)
        err = evalkit.recon_error(painted, ref_images)
        sections["recon"] = {"l1": err["l1"], "psnr": err["psnr"]}
        sections["recon_per_pair"] = {
            f"view{v}_style{s}": f"l1={l1!r};psnr={p!r}" for (v, s), (l1, p) in err["per_key"].items()
        }
    params = {"cell_size": args.cell, "views": len(views), "styles": len(style_ids), "refs": args.refs or "none"}
    report = out / "report.csv"
    report.write_text(evalkit.format_report(sections, params))
    (out / "report.json").write_text(json.dumps(sections, indent=2, sort_keys=True, default=_json_default) + "\n")
    run.output(report)
    run.output(out / "report.json")
    run.config = params
    run.write(out / MANIFEST_NAME)
    for name, rows in sections.items():
        if "vc" in rows:
            print(f"{name}: VC {rows['vc']:.3f} over {rows['qualifying_cells']} cells")
    if "recon" in sections:
        print(f"recon: L1 {sections['recon']['l1']:.4f} PSNR {sections['recon']['psnr']:.2f}")
    return report


def cmd_bake(args) -> Path:
    run = Run("bake", args)
    gen = _load_painter(run, args.checkpoint)
    scene, cameras = _load_scene_and_cameras(run, args.scene, args.cameras)
    styles = _resolve_styles(run, gen, args.styles)
    (s,) = _pick_styles(styles, [args.style])
    mesh = meshbake.bake(scene, gen, cameras, styles[s], tau=args.tau, sampling=args.sampling)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    meshbake.export_colored_mesh(mesh, args.out)
    run.output(args.out)
    run.config = {"tau": args.tau, "style": s, "sampling": args.sampling, "unpainted_vertices": int(mesh.unpainted.sum())}
    run.write(args.manifest or args.out.with_name(args.out.name + ".manifest.json"))
    return args.out


def cmd_edit(args) -> Path:
    run = Run("edit", args)
    scene = scenegraph.load_scene(args.scene)
    run.input(*_scene_inputs(args.scene, scene), args.script)
    bounds = None
    if args.checkpoint is not None:
        bounds = _load_painter(run, args.checkpoint).bounds
    edits = scenegraph.load_edit_script(args.script)
    edited = scenegraph.apply_edits(scene, edits, frozen_bounds=bounds or scene.bounds)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    same_dir = args.out.parent.resolve() == args.scene.parent.resolve()
    scenegraph.save_scene(edited, args.out, write_meshes=not same_dir)
    run.output(args.out)
    run.config = {"edits": len(edits)}
    run.write(args.manifest or args.out.with_name(args.out.name + ".manifest.json"))
    return args.out


# ------------------------------------------------------------------ parsing

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scenepaint", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"scenepaint {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.add_argument(
        "--deterministic", action="store_true", help="single-threaded BLAS so reruns are bitwise identical"
    )
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("render", help="rasterize label/depth/coordinate maps for every camera")
    r.add_argument("--scene", type=Path, required=True)
    r.add_argument("--cameras", type=Path, required=True)
    r.add_argument("--out", type=Path, required=True, help="output directory")
    r.set_defaults(func=cmd_render)

    t = sub.add_parser("train", help="train a painter for one scene")
    t.add_argument("--scene", type=Path, required=True)
    t.add_argument("--cameras", type=Path, required=True)
    t.add_argument("--styles", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True, help="output directory")
    t.add_argument("--refs", default="mock", help="'mock' (default) or a directory of view<V>_style<S>.png")
    _add_mock_flags(t)
    t.add_argument("--config", type=Path, help="JSON training config (TrainingConfig fields, optional 'generator')")
    t.add_argument("--preset", choices=sorted(painter.PRESETS), help="generator preset (default desk-cnn)")
    t.add_argument("--iterations", type=int)
    t.add_argument("--seed", type=int, help="training seed (default 0)")
    t.add_argument("--loss-mode", choices=trainer.LOSS_MODES)
    t.add_argument("--lambda-adv", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--checkpoint-every", type=int, default=0, help="write train_state.bin every N iterations")
    t.add_argument("--resume", type=Path, help="train_state.bin to continue from")
    t.set_defaults(func=cmd_train)

    pa = sub.add_parser("paint", help="paint every camera view for chosen styles")
    pa.add_argument("--checkpoint", type=Path, required=True)
    pa.add_argument("--scene", type=Path, required=True)
    pa.add_argument("--cameras", type=Path, required=True)
    pa.add_argument("--styles", type=Path, help="style file (default: styles stored in the checkpoint)")
    pa.add_argument("--style", type=int, action="append", help="style index, repeatable (default: all)")
    pa.add_argument("--out", type=Path, required=True)
    pa.set_defaults(func=cmd_paint)

    e = sub.add_parser("eval", help="view consistency and reconstruction error report")
    e.add_argument("--images", type=Path, help="directory of painted view<V>_style<S>.png")
    e.add_argument("--frames", type=Path, help="render output directory holding view<VVV>.frames")
    e.add_argument("--bounds-from", type=Path, help="scene or checkpoint defining coordinate normalization")
    e.add_argument("--checkpoint", type=Path)
    e.add_argument("--scene", type=Path)
    e.add_argument("--cameras", type=Path)
    e.add_argument("--styles", type=Path)
    e.add_argument("--style", type=int, action="append")
    e.add_argument("--refs", help="'mock' or a reference directory; adds reference VC and L1/PSNR")
    _add_mock_flags(e)
    e.add_argument("--cell", type=float, default=evalkit.DEFAULT_CELL, help="grid cell size (default 0.01)")
    e.add_argument("--out", type=Path, required=True)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bake", help="bake painted colors onto mesh vertices (PLY)")
    b.add_argument("--checkpoint", type=Path, required=True)
    b.add_argument("--scene", type=Path, required=True)
    b.add_argument("--cameras", type=Path, required=True)
    b.add_argument("--styles", type=Path)
    b.add_argument("--style", type=int, default=0)
    b.add_argument("--tau", type=float, default=meshbake.DEFAULT_TAU, help="relative depth tolerance (default 0.01)")
    b.add_argument(
        "--sampling",
        choices=("auto", "point", "bilinear"),
        default="auto",
        help="per-view sample: painter at the vertex (point) or image lookup (bilinear); auto picks point for MLP",
    )
    b.add_argument("--out", type=Path, required=True, help="output .ply file")
    b.add_argument("--manifest", type=Path)
    b.set_defaults(func=cmd_bake)

    ed = sub.add_parser("edit", help="apply an edit script to a scene")
    ed.add_argument("--scene", type=Path, required=True)
    ed.add_argument("--script", type=Path, required=True)
    ed.add_argument("--checkpoint", type=Path, help="painter whose frozen bounds edits are checked against")
    ed.add_argument("--out", type=Path, required=True, help="output scene file")
    ed.add_argument("--manifest", type=Path)
    ed.set_defaults(func=cmd_edit)
    return p


_INVALID = (
    scenegraph.SceneError,
    refgen.ReferenceError,
    container.ContainerError,
    painter.ConfigError,
    ValueError,
    KeyError,
    OSError,
    json.JSONDecodeError,
)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    limit = threadpool_limits(limits=1) if args.deterministic else contextlib.nullcontext()
    try:
        with limit:
            args.func(args)
    except UsageError as exc:
        print(f"scenepaint {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except trainer.TrainingDivergedError as exc:
        print(f"scenepaint {args.command}: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except _INVALID as exc:
        print(f"scenepaint {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
