"""Command-line interface: ``saanet <command> [options]``.

Commands: ``gen-synthetic``, ``train-ae``, ``train``, ``reconstruct``, ``eval``
and ``attn-dump``.  Each run writes one ``manifest.json`` next to its outputs.
Progress goes to standard error; results go to files.

Exit codes: 0 success, 2 configuration error, 3 runtime error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import __version__
from .checkpoint import load_autoencoder, load_network, save_checkpoint
from .config import AE_DEFAULTS, NETWORK_DEFAULTS, OVERFIT_PRESET, TRAIN_DEFAULTS, read_config_file, resolve, subset
from .datagen import (
    DecimationError,
    corpus_scene,
    gen_synthetic_slice,
    make_training_pairs,
    read_packed_pairs,
    PatchPair,
    SceneSpec,
)
from .lightfield import LightField4D, Slice3D, extract_epi, extract_slices, load_light_field, save_light_field, \
    slice_to_light_field
from .metrics import EvalReport, baseline_linear, baseline_nearest, evaluate, usable_views
from .network import NetworkConfig, ShapeError, cascade_array, forward_array, passes_for_factor, reconstruct_4d
from .perceptual import AETrainConfig, NumericalError, train_autoencoder
from .plotting import plot_attention_submap, plot_epi_comparison, plot_loss_curves, plot_per_view
from .saam import ConfigError, attention_submap, upsampled_views
from .training import TrainConfig, train, write_loss_csv

log = logging.getLogger("saanet")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_NUMERICAL = 0, 2, 3, 4
HOME_ENV = "SAANET_HOME"


def saanet_home() -> Path:
    """Root for run outputs and checkpoints (``$SAANET_HOME``, default ``~/.cache/saanet``)."""
    return Path(os.environ.get(HOME_ENV, Path.home() / ".cache" / "saanet"))


def resolve_path(path: str | Path) -> Path:
    """Use ``path`` as given if it exists, otherwise look for it under the home directory."""
    path = Path(path)
    if path.exists() or path.is_absolute():
        return path
    candidate = saanet_home() / path
    return candidate if candidate.exists() else path


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    version: str = __version__
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    wall_clock_s: float = 0.0
    argv: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, default=str))
        return path


def read_config_values(path: str | Path | None) -> dict:
    """Flat config file, or the resolved ``config`` of an earlier run's manifest."""
    if path is None:
        return {}
    path = resolve_path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        return dict(data.get("config", data))
    return read_config_file(path)


def _out_dir(args, command: str) -> Path:
    out = Path(args.out) if args.out else saanet_home() / "runs" / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scene_dirs(root: str | Path) -> list[Path]:
    root = resolve_path(root)
    if (root / "meta.json").exists():
        return [root]
    dirs = sorted(p.parent for p in root.glob("*/meta.json"))
    if not dirs:
        raise ConfigError(f"no light field directories (with meta.json) under {root}")
    return dirs


def _load_slices(root, min_views: int) -> list[Slice3D]:
    slices = []
    for d in _scene_dirs(root):
        for slc in extract_slices(load_light_field(d)):
            if slc.angular_size >= min_views:
                slices.append(slc.with_data(slc.data, source=d.name))
    if not slices:
        raise ConfigError(f"no slices with at least {min_views} views under {root}")
    return slices


def _load_pairs(root, alpha_a: int, in_views: int, shear_amounts) -> list[PatchPair]:
    root = resolve_path(root)
    if root.is_file():
        x, y, alpha = read_packed_pairs(root)
        if alpha != alpha_a:
            raise ConfigError(f"{root} was packed for alpha_a={alpha}, config says {alpha_a}")
        return [PatchPair(a.astype(np.float64), b.astype(np.float64), {"index": i}) for i, (a, b) in enumerate(zip(x, y))]
    slices = _load_slices(root, upsampled_views(in_views, alpha_a))
    pairs = list(make_training_pairs(slices, alpha_a, in_views, shear_amounts))
    if not pairs:
        raise ConfigError(f"no training patches could be cut from {root}")
    return pairs


# -- commands -----------------------------------------------------------------

def cmd_gen_synthetic(args) -> RunManifest:
    out = _out_dir(args, "gen-synthetic")
    disparities = tuple(float(v) for v in args.disparities.split(","))
    spec_template = None
    if args.spec:
        spec_template = SceneSpec.from_dict(json.loads(resolve_path(args.spec).read_text()))

    def make(i: int):
        if spec_template is not None:
            seed = args.seed + 101 * i
            spec = spec_template
        else:
            spec, seed = corpus_scene(i, args.views, disparities, args.seed, args.two_layer_every,
                                      (args.width, args.height))
        slc, disp = gen_synthetic_slice(spec, seed)
        scene = out / f"scene_{i:04d}"
        save_light_field(slice_to_light_field(slc), scene, seed=seed)
        np.save(scene / "disparity.npy", disp.astype(np.float32))
        (scene / "scene.json").write_text(json.dumps(spec.to_dict(), indent=2))
        log.info("scene %d/%d written to %s", i + 1, args.count, scene)
        return str(scene)

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        written = list(pool.map(make, range(args.count)))
    config = {"count": args.count, "disparities": disparities, "views": args.views, "width": args.width,
              "height": args.height, "two_layer_every": args.two_layer_every, "spec": args.spec}
    return RunManifest("gen-synthetic", config, args.seed, outputs=written)


def cmd_train_ae(args) -> RunManifest:
    out = _out_dir(args, "train-ae")
    defaults = {**AE_DEFAULTS, "alpha_a": 4, "in_views": 5}
    cfg = resolve(defaults, read_config_values(args.config),
                  {"steps": args.steps, "batch_size": args.batch_size, "learning_rate": args.learning_rate,
                   "seed": args.seed})
    pairs = _load_pairs(args.data, cfg["alpha_a"], cfg["in_views"], ())
    volumes = np.stack([p.target for p in pairs])
    rows: list = []
    ae_cfg = AETrainConfig(**subset(cfg, AETrainConfig.__dataclass_fields__))
    log.info("training auto-encoder on %d volumes of shape %s", len(volumes), volumes.shape[1:])
    ae = train_autoencoder(volumes, ae_cfg, log_rows=rows)
    ckpt = save_checkpoint(out / "autoencoder.npz", ae, model_kind="autoencoder", config={}, step=ae_cfg.steps)
    csv_path = out / "ae_loss.csv"
    csv_path.write_text("step,l_ae\n" + "".join(f"{s},{v}\n" for s, v in rows))
    outputs = [str(ckpt), str(csv_path)]
    if rows:
        outputs.append(str(plot_loss_curves([(s, v, 0.0, v) for s, v in rows], out / "ae_loss.png",
                                            title="auto-encoder loss")))
    return RunManifest("train-ae", cfg, cfg["seed"], inputs={"data": str(args.data)}, outputs=outputs)


def cmd_train(args) -> RunManifest:
    out = _out_dir(args, "train")
    file_values = read_config_values(args.config)
    defaults = {**TRAIN_DEFAULTS, **(OVERFIT_PRESET if args.preset == "overfit" else {})}
    cfg = resolve(defaults, file_values, {
        "max_steps": args.max_steps, "batch_size": args.batch_size, "learning_rate": args.learning_rate,
        "lambda_feat": args.lambda_feat, "alpha_a": args.alpha_a, "in_views": args.in_views,
        "use_saam": args.use_saam, "use_multiscale_skips": args.use_multiscale_skips, "seed": args.seed,
        "checkpoint_every": args.checkpoint_every,
    })
    net_cfg = NetworkConfig.from_dict(subset(cfg, NETWORK_DEFAULTS))
    train_cfg = TrainConfig(**subset(cfg, TrainConfig.__dataclass_fields__))
    ae = None
    if train_cfg.weights.uses_features:
        if not args.ae:
            raise ConfigError("the perceptual loss needs an auto-encoder checkpoint (--ae PATH); "
                              "run train-ae first or pass --lambda-feat 0,0,0")
        ae, _ = load_autoencoder(resolve_path(args.ae))
    pairs = [] if train_cfg.max_steps <= 0 else _load_pairs(args.data, net_cfg.alpha_a, cfg["in_views"],
                                                             cfg["shear_amounts"])
    log.info("training on %d pairs for %d steps", len(pairs), train_cfg.max_steps)
    result = train(net_cfg, train_cfg, pairs, ae=ae, out_dir=out)
    outputs = sorted(str(p) for p in out.glob("*.npz"))
    if result.losses:
        outputs.append(str(plot_loss_curves(result.losses, out / "loss.png")))
    details = {"final_step": result.steps, "n_pairs": len(pairs)}
    if result.losses:
        details["final_loss"] = result.losses[-1][3]
    return RunManifest("train", cfg, cfg["seed"], inputs={"data": str(args.data), "ae": args.ae},
                       outputs=outputs, details=details)


def _tiling(args) -> dict:
    return {"pad": bool(args.pad), "tile_width": args.tile_width, "overlap": args.overlap}


def write_attention_pngs(model, arr: np.ndarray, out: Path, plane: int | None = None, **tiling) -> list[Path]:
    """One 8-bit image per input-view pair ``(s0, s1)`` of the attention sub-map at one plane.

    Each row (one query position ``x0``) is scaled so its maximum maps to 255.
    """
    if not model.config.use_saam:
        raise ConfigError("this checkpoint was built without the attention module")
    tiling = {k: v for k, v in tiling.items() if k == "pad"}
    forward_array(model, arr, **tiling)
    attn = model.last_attention
    n_views = arr.shape[2]
    planes = attn.shape[0]
    width = attn.shape[1] // n_views
    plane = planes // 2 if plane is None else plane
    if not 0 <= plane < planes:
        raise ConfigError(f"plane {plane} out of range [0, {planes})")
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for s0 in range(n_views):
        for s1 in range(n_views):
            sub = attention_submap(attn, width, n_views, plane, s0, s1)
            peak = sub.max(axis=1, keepdims=True)
            img = np.round(255.0 * np.divide(sub, peak, out=np.zeros_like(sub), where=peak > 0)).astype(np.uint8)
            path = out / f"attn_plane{plane:03d}_s{s0:02d}_s{s1:02d}.png"
            Image.fromarray(img).save(path)
            paths.append(path)
    if n_views > 1:
        paths.append(plot_attention_submap(attention_submap(attn, width, n_views, plane, 0, 1),
                                           out / f"attn_plane{plane:03d}_s00_s01_heatmap.png", 0, 1))
    return paths


def cmd_reconstruct(args) -> RunManifest:
    out = _out_dir(args, "reconstruct")
    model, meta = load_network(resolve_path(args.checkpoint))
    passes = passes_for_factor(model.config.alpha_a, args.factor)
    lf = load_light_field(resolve_path(args.input))
    tiling = _tiling(args)
    kwargs = {k: v for k, v in tiling.items() if v is not None}
    start = time.perf_counter()
    dense = reconstruct_4d(model, lf, passes=passes, **kwargs)
    elapsed = time.perf_counter() - start
    save_light_field(dense, out / "views", factor=args.factor, passes=passes)
    outputs = [str(out / "views")]
    if args.attn_dump:
        first = extract_slices(lf)
        first = next(s for s in first if s.angular_size >= 2)
        outputs += [str(p) for p in write_attention_pngs(model, first.data, out / "attention", args.plane,
                                                        pad=args.pad)]
    width = lf.spatial_res[1]
    starts = None
    if args.tile_width and args.tile_width < width:
        step = args.tile_width - args.overlap
        starts = len(range(0, width - args.tile_width, step)) + 1
    details = {"passes": passes, "input_views": list(lf.angular_res), "output_views": list(dense.angular_res),
               "seconds": elapsed, "tiling": {**tiling, "tiles_per_row_slice": starts or 1}}
    cfg = {"factor": args.factor, "checkpoint_step": meta.get("step"), **tiling}
    return RunManifest("reconstruct", cfg, args.seed, inputs={"checkpoint": str(args.checkpoint),
                                                              "input": str(args.input)},
                       outputs=outputs, details=details)


def cmd_eval(args) -> RunManifest:
    out = _out_dir(args, "eval")
    tiling = {k: v for k, v in _tiling(args).items() if v is not None}
    if args.ground_truth:
        model, reconstruct, step = None, None, None
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint (or --ground-truth for the sanity check)")
        model, meta = load_network(resolve_path(args.checkpoint))
        passes = passes_for_factor(model.config.alpha_a, args.factor)
        step = meta.get("step")

        def reconstruct(sparse):
            return cascade_array(model, sparse, passes, **tiling)

    baselines = None
    if args.with_baselines:
        baselines = {"nearest": lambda s: baseline_nearest(s, args.factor),
                     "linear": lambda s: baseline_linear(s, args.factor)}
    all_slices, outputs = [], []
    for scene in _scene_dirs(args.data):
        slices = [s.data for s in extract_slices(load_light_field(scene)) if s.angular_size > args.factor]
        if not slices:
            log.warning("%s has no slice with more than %d views; skipped", scene, args.factor)
            continue
        report = evaluate(reconstruct, slices, args.factor, baselines)
        outputs += [str(p) for p in report.write(out / "scenes", stem=scene.name)]
        log.info("%s: %.3f dB / %.4f", scene.name, report.avg_psnr, report.avg_ssim)
        all_slices += slices
    if not all_slices:
        raise ConfigError(f"no evaluable slices under {args.data} for factor {args.factor}")
    report = evaluate(reconstruct, all_slices, args.factor, baselines)
    outputs += [str(p) for p in report.write(out, stem="report")]
    extra = {name: evaluate(fn, all_slices, args.factor) for name, fn in (baselines or {}).items()}
    outputs.append(str(_write_report_csv(report, out / "report.csv", extra)))
    outputs += [str(p) for p in _report_figures(report, out, reconstruct, all_slices[0], args.factor, extra)]
    sys.stdout.write(report.table())
    cfg = {"factor": args.factor, "with_baselines": bool(args.with_baselines), "ground_truth": bool(args.ground_truth),
           "checkpoint_step": step, **tiling}
    return RunManifest("eval", cfg, args.seed, inputs={"checkpoint": args.checkpoint, "data": str(args.data)},
                       outputs=outputs, details={"avg_psnr": report.avg_psnr, "avg_ssim": report.avg_ssim,
                                                 "baselines": report.baselines})


def _write_report_csv(report: EvalReport, path: Path, extra: dict[str, EvalReport]) -> Path:
    """Per-view table, comma-delimited, with one PSNR/SSIM column pair per baseline."""
    header = ["view", "psnr", "ssim"] + [f"{n}_{m}" for n in extra for m in ("psnr", "ssim")]
    lines = [",".join(header)]
    for i, v in enumerate(report.views):
        row = [str(v), f"{report.psnr[i]:.6f}", f"{report.ssim[i]:.6f}"]
        for rep in extra.values():
            row += [f"{rep.psnr[i]:.6f}", f"{rep.ssim[i]:.6f}"]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")
    return path


def _report_figures(report: EvalReport, out: Path, reconstruct, dense: np.ndarray, factor: int,
                    extra: dict[str, EvalReport]) -> list[Path]:
    curves = {name: {"psnr": rep.psnr, "ssim": rep.ssim} for name, rep in extra.items()}
    paths = [plot_per_view(report.views, report.psnr, report.ssim, out / "per_view.png", curves)]
    dense = dense[..., :usable_views(dense.shape[-1], factor)]
    sparse = dense[..., ::factor]
    row = dense.shape[1] // 2
    recon = dense if reconstruct is None else np.clip(reconstruct(sparse), 0, 1)
    panels = {"ground truth": extract_epi(Slice3D(dense), row).data,
              "model": extract_epi(Slice3D(recon), row).data,
              "nearest": extract_epi(Slice3D(baseline_nearest(sparse, factor)), row).data}
    paths.append(plot_epi_comparison(panels, out / "epi.png"))
    return paths


def cmd_attn_dump(args) -> RunManifest:
    out = _out_dir(args, "attn-dump")
    model, meta = load_network(resolve_path(args.checkpoint))
    slices = [s for s in extract_slices(load_light_field(resolve_path(args.input))) if s.angular_size >= 2]
    if not 0 <= args.slice < len(slices):
        raise ConfigError(f"slice {args.slice} out of range; the input has {len(slices)} usable slices")
    paths = write_attention_pngs(model, slices[args.slice].data, out, args.plane, pad=args.pad)
    cfg = {"slice": args.slice, "plane": args.plane, "pad": bool(args.pad), "checkpoint_step": meta.get("step")}
    return RunManifest("attn-dump", cfg, args.seed, inputs={"checkpoint": str(args.checkpoint),
                                                            "input": str(args.input)},
                       outputs=[str(p) for p in paths])


# -- argument parsing ---------------------------------------------------------

def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="saanet", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output directory (default ${HOME_ENV}/runs/<command>)")
    common.add_argument("--seed", type=int, default=None, help="seed for all randomness")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="threads (default: all cores)")
    common.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", parents=[common], help="render synthetic layered scenes")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--spec", help="JSON scene description used for every scene (seeds still vary)")
    p.add_argument("--disparities", default="-3,-2,-1,0,1,2,3", help="per-view disparities cycled over the corpus")
    p.add_argument("--views", type=int, default=17)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=24)
    p.add_argument("--two-layer-every", type=int, default=3, help="every n-th scene gets an occluder (0: never)")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train-ae", parents=[common], help="pre-train the perceptual auto-encoder")
    p.add_argument("--data", required=True, help="scene directory tree or packed pair file")
    p.add_argument("--config")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.set_defaults(func=cmd_train_ae)

    p = sub.add_parser("train", parents=[common], help="train the reconstruction network")
    p.add_argument("--data", help="scene directory tree or packed pair file")
    p.add_argument("--config", help="flat key = value file, or an earlier run's manifest.json")
    p.add_argument("--preset", choices=["full", "overfit"], default="full",
                   help="full: 800k steps at batch 28; overfit: 2000 steps at batch 8")
    p.add_argument("--ae", help="auto-encoder checkpoint for the perceptual loss")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--lambda-feat", help="three comma-separated weights, e.g. 0.2,0.2,0.1")
    p.add_argument("--alpha-a", type=int)
    p.add_argument("--in-views", type=int)
    p.add_argument("--use-saam", type=_bool)
    p.add_argument("--use-multiscale-skips", type=_bool)
    p.add_argument("--checkpoint-every", type=int)
    p.set_defaults(func=cmd_train)

    tiling = argparse.ArgumentParser(add_help=False)
    tiling.add_argument("--pad", action="store_true", help="reflect-pad inputs to valid sizes")
    tiling.add_argument("--tile-width", type=int, help="process the width in overlapping tiles")
    tiling.add_argument("--overlap", type=int, default=8)

    p = sub.add_parser("reconstruct", parents=[common, tiling], help="densify a light field")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="light field directory (view_SS_TT.png + meta.json)")
    p.add_argument("--factor", type=int, required=True, help="angular upsampling factor (a power of alpha_a)")
    p.add_argument("--attn-dump", action="store_true", help="also write attention sub-map images")
    p.add_argument("--plane", type=int, help="attention plane to dump (default: middle)")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", parents=[common, tiling], help="score reconstructions against dense ground truth")
    p.add_argument("--checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--factor", type=int, default=4)
    p.add_argument("--with-baselines", action="store_true", help="add nearest and linear view interpolation")
    p.add_argument("--ground-truth", action="store_true", help="sanity check: score the ground truth itself")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attn-dump", parents=[common], help="write attention sub-maps for one slice")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--slice", type=int, default=0)
    p.add_argument("--plane", type=int)
    p.add_argument("--pad", action="store_true")
    p.set_defaults(func=cmd_attn_dump)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(name)s: %(message)s", force=True)
    seed_given = args.seed is not None
    if args.command in ("gen-synthetic", "reconstruct", "eval", "attn-dump") and not seed_given:
        args.seed = 0
    torch.set_num_threads(max(1, args.workers))
    if args.seed is not None:
        torch.manual_seed(args.seed)
    start = time.perf_counter()
    try:
        manifest = args.func(args)
    except (ConfigError, ShapeError, DecimationError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except NumericalError as exc:
        log.error("numerical abort: %s", exc)
        return EXIT_NUMERICAL
    except Exception as exc:  # noqa: BLE001 - reported and mapped to an exit code
        log.error("runtime error: %s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME
    manifest.wall_clock_s = time.perf_counter() - start
    manifest.argv = argv
    path = manifest.write(_out_dir(args, args.command))
    log.info("manifest written to %s", path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
