"""Command-line interface: ``vfuse synth | fuse | eval | fit | cloud``.

Every command writes into an output directory:
- ``config.json``, the effective configuration after the config file, ``--set`` overrides and flags.
- ``vfuse.log``, the only output that carries timestamps.

All other outputs are deterministic: identical inputs and configs give
byte-identical files regardless of ``--jobs``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .config import PipelineConfig, load_config, parse_override
from .dataset import MAP_FORMATS, SceneData, read_fused, read_scene, view_name, write_fused, write_scene
from .evalbench.cloud import FilterParams, PointCloud, depth_to_cloud
from .evalbench.metrics import auc_sparsification, chamfer, inlier_pct, mae, pct_within
from .evalbench.scenes import SURFACE_KINDS, generate_scene
from .io import DataError, read_json, write_csv, write_json
from .losses import fit
from .pipeline import MODES, FusionParams, ReferenceInputs, fuse_reference, prepare_reference, select_sources

log = logging.getLogger("vfuse")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
PRESETS = ("windowed", "windowed-support-only", "brute-force")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- shared plumbing ------------------------------------------------------------


def resolve_jobs(jobs: int | None) -> int:
    if jobs is None:
        env = os.environ.get("VFUSE_THREADS", "").strip()
        if not env:
            return 1
        try:
            jobs = int(env)
        except ValueError:
            raise UsageError(f"VFUSE_THREADS must be an integer, got {env!r}") from None
    if jobs < 1:
        raise UsageError("the number of jobs must be at least 1")
    return jobs


def parallel_map(fn: Callable, items: Sequence, jobs: int) -> list:
    """``[fn(x) for x in items]`` on ``jobs`` threads, results in input order."""
    if jobs == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def load_params(spec: str | None, cfg: PipelineConfig) -> FusionParams:
    """``--params``: a packaged preset name, a params JSON file, or the config's params."""
    if spec is None:
        return cfg.params
    if spec in PRESETS:
        data = json.loads(resources.files("vfuse").joinpath("presets", f"{spec}.json").read_text())
    else:
        data = read_json(spec)
    try:
        return FusionParams.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{spec}: invalid parameters ({exc})") from None


def build_config(args) -> PipelineConfig:
    overrides = {}
    for text in args.set or []:
        try:
            key, value = parse_override(text)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        overrides[key] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    mode = "brute-force" if args.brute_force else args.mode
    if mode is not None:
        overrides["mode"] = mode
    if args.n_views is not None:
        overrides["n_views"] = args.n_views
    if args.n_hyp is not None:
        overrides["n_hyp"] = args.n_hyp
    for key, value in getattr(args, "scene_overrides", {}).items():
        overrides[f"scene.{key}"] = value
    try:
        return load_config(args.config, overrides)
    except DataError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def setup_output(out: Path, cfg: PipelineConfig) -> logging.Handler:
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.to_dict())
    handler = logging.FileHandler(out / "vfuse.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    return handler


def reference_inputs(scene: SceneData, cfg: PipelineConfig, index: int) -> tuple[ReferenceInputs, list[int]]:
    n_sources = min(cfg.n_views, len(scene.views)) - 1
    sources = select_sources(scene.cameras, index, n_sources)
    views = [scene.views[index]] + [scene.views[j] for j in sources]
    inputs = prepare_reference(views, scene.bounds, cfg.effective_n_hyp, cfg.mode, cfg.center_strategy)
    return inputs, sources


# -- commands -------------------------------------------------------------------


def cmd_synth(args, cfg: PipelineConfig) -> int:
    scene = generate_scene(cfg.scene)
    write_scene(args.out, scene, args.map_format)
    n_out = int(sum(m.sum() for m in scene.outlier_masks))
    log.info("wrote %d views of a %s scene to %s (%d outlier pixels)", len(scene.views), cfg.scene.kind, args.out, n_out)
    return EXIT_OK


def cmd_fuse(args, cfg: PipelineConfig) -> int:
    jobs = resolve_jobs(args.jobs)
    scene = read_scene(args.scene)
    params = load_params(args.params, cfg)

    def one(i):
        inputs, sources = reference_inputs(scene, cfg, i)
        res = fuse_reference(inputs, params)
        win = res.windows
        valid = win.valid
        sidecar = {
            "view": i,
            "sources": sources,
            "mode": cfg.mode,
            "n_hyp": cfg.effective_n_hyp,
            "bounds": {"b_min": scene.bounds.b_min, "b_max": scene.bounds.b_max},
            "params": params.to_dict(),
            "window": {
                "valid_px": int(valid.sum()),
                "b_min": float(win.b_min[valid].min()) if valid.any() else None,
                "b_max": float(win.b_max[valid].max()) if valid.any() else None,
                "mean_radius": float(win.radius[valid].mean()) if valid.any() else None,
            },
        }
        b_min = np.where(valid, win.b_min, np.nan)
        b_max = np.where(valid, win.b_max, np.nan)
        write_fused(args.out, i, res.depth, res.confidence, b_min, b_max, sidecar)
        if args.export_vcv and res.forward is not None:
            res.forward.cv.export(args.out / f"vcv_{view_name(i)}.bin")
        return i, int(np.isfinite(res.depth).sum())

    for i, n in parallel_map(one, range(len(scene.views)), jobs):
        log.info("view %s: fused %d pixels", view_name(i), n)
    return EXIT_OK


def _source_maps(scene: SceneData, fused_dir: Path | None) -> dict[str, tuple[list, list]]:
    maps = {"input": ([v.depth for v in scene.views], [v.confidence for v in scene.views])}
    if fused_dir is not None:
        fused = read_fused(fused_dir, len(scene.views))
        for f, v in zip(fused, scene.views):
            if f.depth.shape != v.camera.shape:
                raise DataError(f"fused map shape {f.depth.shape} does not match camera {v.camera.shape}")
        maps["fused"] = ([f.depth for f in fused], [f.confidence for f in fused])
    return maps


def _metric_row(label, view, depth, conf, gt, cfg):
    inl = inlier_pct(depth, gt, thresholds=cfg.inlier_thresholds)
    sp = auc_sparsification(depth, conf, gt, steps=cfg.auc_steps)
    n = int((np.isfinite(depth) & np.isfinite(gt)).sum())
    row = [label, view, n, mae(depth, gt)]
    row += inl if inl is not None else [None] * len(cfg.inlier_thresholds)
    row.append(sp.area if sp is not None else None)
    return row, sp


def cmd_eval(args, cfg: PipelineConfig) -> int:
    scene = read_scene(args.scene, need_gt=True)
    maps = _source_maps(scene, args.fused)
    header = ["source", "view", "valid_px", "mae"] + [f"inlier_{t:g}" for t in cfg.inlier_thresholds] + ["auc"]
    rows, curves = [], []
    for label, (depths, confs) in maps.items():
        for i, (d, c, gt) in enumerate(zip(depths, confs, scene.gt_depths)):
            rows.append(_metric_row(label, view_name(i), d, c, gt, cfg)[0])
        flat = [np.concatenate([a.ravel() for a in arrs])[None] for arrs in (depths, confs, scene.gt_depths)]
        row, sp = _metric_row(label, "all", *flat, cfg)
        rows.append(row)
        if sp is not None:
            write_csv(args.out / f"sparsification_{label}.csv", ["density", "mae"], zip(sp.density, sp.mae))
            curves.append((label, sp.density, sp.mae))
        log.info("%s: MAE %s, AUC %s", label, row[3], row[-1])
    write_csv(args.out / "metrics.csv", header, rows)

    if args.clouds:
        gt_params = FilterParams(confidence_threshold=0.0, min_consistent=0)
        gt_cloud = depth_to_cloud(scene.gt_depths, [np.ones_like(g) for g in scene.gt_depths], scene.cameras, gt_params)
        cloud_rows = []
        for label, (depths, confs) in maps.items():
            est = depth_to_cloud(depths, confs, scene.cameras, cfg.filter)
            ch = chamfer(est, gt_cloud)
            pw = pct_within(est, gt_cloud, cfg.chamfer_tau)
            cloud_rows.append(
                [label, len(est)]
                + ([ch.accuracy, ch.completeness, ch.overall] if ch else [None] * 3)
                + (list(pw) if pw else [None] * 3)
            )
        write_csv(
            args.out / "cloud_metrics.csv",
            ["source", "points", "accuracy", "completeness", "overall", "pct_accuracy", "pct_completeness", "pct_overall"],
            cloud_rows,
        )

    if args.report == "png":
        from .report import error_heatmap, sparsification_plot

        for i, gt in enumerate(scene.gt_depths):
            errs = np.concatenate([np.abs(maps[k][0][i] - gt).ravel() for k in maps])
            errs = errs[np.isfinite(errs)]
            vmax = float(np.quantile(errs, 0.99)) if errs.size else 1.0
            for label in maps:
                error_heatmap(
                    maps[label][0][i],
                    gt,
                    args.out / f"error_{label}_{view_name(i)}.png",
                    vmax=vmax if vmax > 0 else 1.0,
                    title=f"{label} view {view_name(i)}",
                )
        if curves:
            sparsification_plot(curves, args.out / "sparsification.png")
    return EXIT_OK


def cmd_fit(args, cfg: PipelineConfig) -> int:
    if cfg.mode == "conventional":
        raise UsageError("conventional mode has no fittable parameters")
    params = load_params(args.params, cfg)
    jobs = resolve_jobs(args.jobs)
    scenes = [read_scene(p, need_gt=True) for p in args.scenes]
    items = [(s, i) for s in scenes for i in range(len(s.views))]

    def one(item):
        scene, i = item
        return reference_inputs(scene, cfg, i)[0], scene.gt_depths[i]

    batch = parallel_map(one, items, jobs)
    log.info("fitting on %d reference views, %d epochs", len(batch), cfg.fit.epochs)
    result = fit(batch, params, cfg.fit, cfg.loss_weights)
    write_json(args.out / "params.json", result.params.to_dict())
    keys = ["epoch", "L_d", "L_c", "L_r", "L", "best", "grad_norm_d", "grad_norm_c", "grad_norm_r"]
    write_csv(args.out / "trace.csv", keys, ([row[k] for k in keys] for row in result.trace))
    if args.report == "png" and result.trace:
        from .report import loss_trace_plot

        loss_trace_plot(result.trace, args.out / "loss_trace.png")
    if result.diverged:
        log.error("fit diverged after %d epochs; wrote the best finite parameters", len(result.trace))
        return EXIT_DATA
    log.info("final loss %.6g, best %.6g", result.trace[-1]["L"], result.trace[-1]["best"])
    return EXIT_OK


def cmd_cloud(args, cfg: PipelineConfig) -> int:
    scene = read_scene(args.scene)
    label = "fused" if args.fused is not None else "input"
    depths, confs = _source_maps(scene, args.fused)[label]
    cloud = depth_to_cloud(depths, confs, scene.cameras, cfg.filter)
    cloud.write_ply(args.out / "cloud.ply")
    log.info("wrote %d points from %s maps", len(cloud), label)
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-o", "--out", type=Path, required=True, help="output directory")
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field (JSON value)")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--brute-force", action="store_true", help="same as --mode brute-force")
    p.add_argument("--n-views", type=int, help="views per reference, reference included")
    p.add_argument("--n-hyp", type=int, help="hypotheses per pixel in windowed mode")
    p.add_argument("--jobs", type=int, help="worker threads (default: $VFUSE_THREADS or 1)")
    p.add_argument("-q", "--quiet", action="store_true")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vfuse", description="Multi-view depth map fusion with visibility constraint volumes.")
    parser.add_argument("--version", action="version", version=f"vfuse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic scene with ground truth")
    _common(p)
    p.add_argument("--kind", choices=SURFACE_KINDS)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--views", type=int, help="number of cameras on the arc")
    p.add_argument("--map-format", choices=MAP_FORMATS, default="pfm")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fuse", help="fuse every view of a scene")
    _common(p)
    p.add_argument("scene", type=Path)
    p.add_argument("--params", help=f"params JSON or a preset ({', '.join(PRESETS)})")
    p.add_argument("--export-vcv", action="store_true", help="also write constraint volumes")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="depth and cloud metrics against ground truth")
    _common(p)
    p.add_argument("scene", type=Path)
    p.add_argument("--fused", type=Path, help="fused output directory to evaluate next to the inputs")
    p.add_argument("--clouds", action="store_true", help="also compute point-cloud metrics")
    p.add_argument("--report", choices=("png",), help="render figures")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fit", help="fit fusion parameters on scenes with ground truth")
    _common(p)
    p.add_argument("scenes", type=Path, nargs="+")
    p.add_argument("--params", help=f"initial params JSON or a preset ({', '.join(PRESETS)})")
    p.add_argument("--report", choices=("png",), help="render the loss trace")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cloud", help="export a filtered point cloud as ASCII PLY")
    _common(p)
    p.add_argument("scene", type=Path)
    p.add_argument("--fused", type=Path, help="use fused maps instead of the inputs")
    p.set_defaults(func=cmd_cloud)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "synth":
        pairs = (("kind", args.kind), ("width", args.width), ("height", args.height), ("n_cameras", args.views))
        args.scene_overrides = {k: v for k, v in pairs if v is not None}

    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(logging.Formatter("%(message)s"))
    log.addHandler(console)
    log.setLevel(logging.INFO)
    console.setLevel(logging.WARNING if args.quiet else logging.INFO)
    file_handler = None
    try:
        cfg = build_config(args)
        file_handler = setup_output(args.out, cfg)
        return args.func(args, cfg)
    except UsageError as exc:
        log.error("error: %s", exc)
        return EXIT_USAGE
    except (DataError, OSError, ValueError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    finally:
        log.removeHandler(console)
        if file_handler is not None:
            log.removeHandler(file_handler)
            file_handler.close()


if __name__ == "__main__":
    sys.exit(main())
