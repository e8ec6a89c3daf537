"""Command-line entry point.

Exit codes: 0 success, 2 usage or validation error, 3 data-format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import ablation, bench
from .affinity import AffinityMap, PatchEmbeddings, ZeroNormPatchError, compute_affinity
from .config import DEFAULTS, ConfigError, RunConfig, load_config, parse_config
from .formats import TensorFormatError, read_tensor, write_ablation_csv, write_heatmap, write_tensor
from .pipeline import InjectConfig, Position, PromptSpec, RunTrace, parameter_count, run_pipeline
from .scenes import LabeledPatches, SceneError, SceneSpec, Rect, generate_scene, random_scene_spec, render_scene

log = logging.getLogger("ivra")

EXIT_USAGE = 2
EXIT_DATA = 3

SCENE_FILES = ("patches.ivrt", "labels.txt", "scene.json")


class UsageError(ValueError):
    pass


class DataError(ValueError):
    pass


def _grid(text: str) -> tuple:
    try:
        h, w = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("grid dimensions must be positive")
    return h, w


def _layer_set(text: str) -> tuple:
    try:
        layers = tuple(int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"layer set must be comma-separated ints, got {text!r}") from None
    if any(i < 0 for i in layers):
        raise argparse.ArgumentTypeError("layer indices must be >= 0")
    return layers


def _unit_interval(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"lambda must lie in [0, 1], got {v}")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {v}")
    return v


# scene directory i/o

def tile_scene_spec(seed, grid_h, grid_w, n_objects, d, sigma) -> SceneSpec:
    """Objects as vertical strips that together cover the grid."""
    if n_objects > grid_w:
        raise SceneError(f"cannot tile {n_objects} strips across width {grid_w}")
    edges = np.linspace(0, grid_w, n_objects + 1).round().astype(int)
    objs = tuple(
        Rect(i + 1, 0, int(edges[i]), grid_h, int(edges[i + 1] - edges[i])) for i in range(n_objects)
    )
    return SceneSpec(grid_h, grid_w, objs, d, sigma, prototype_seed=seed, noise_seed=seed + 1)


def write_scene(out: Path, spec: SceneSpec, scene: LabeledPatches) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / "patches.ivrt", scene.patches.features)
    (out / "labels.txt").write_text("".join(f"{int(l)}\n" for l in scene.labels), encoding="ascii")
    (out / "scene.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_scene(path: Path) -> tuple:
    try:
        spec = SceneSpec.from_dict(json.loads((path / "scene.json").read_text(encoding="utf-8")))
        labels = np.array([int(t) for t in (path / "labels.txt").read_text(encoding="ascii").split()])
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as e:
        raise DataError(f"cannot read scene from {path}: {e}") from None
    feats = read_tensor(path / "patches.ivrt")
    if feats.ndim != 2 or feats.shape[0] != spec.grid_h * spec.grid_w or labels.size != feats.shape[0]:
        raise DataError(f"scene files in {path} disagree on the patch count")
    return spec, LabeledPatches(PatchEmbeddings(spec.grid_h, spec.grid_w, feats), labels)


# commands

def cmd_gen_scene(args) -> int:
    gh, gw = args.grid
    make = tile_scene_spec if args.layout == "tile" else random_scene_spec
    try:
        spec = make(args.seed, gh, gw, args.objects, args.dim, args.sigma)
        scene = generate_scene(spec)
    except SceneError as e:
        raise UsageError(str(e)) from None
    write_scene(Path(args.out), spec, scene)
    log.info("wrote %s", ", ".join(SCENE_FILES))
    return 0


def cmd_affinity(args) -> int:
    feats = read_tensor(args.embeddings)
    if feats.ndim != 2:
        raise DataError(f"embeddings must be a 2-D tensor, got {feats.ndim} dims")
    try:
        a = compute_affinity(PatchEmbeddings(1, feats.shape[0], feats))
    except ZeroNormPatchError as e:
        raise DataError(str(e)) from None
    write_tensor(args.out, a.values)
    return 0


def cmd_heatmap(args) -> int:
    values = read_tensor(args.affinity)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise DataError(f"affinity must be a square matrix, got shape {values.shape}")
    n = values.shape[0]
    if args.grid is not None:
        gh, gw = args.grid
    else:
        side = int(round(n ** 0.5))
        if side * side != n:
            raise UsageError(f"{n} patches is not a square grid; pass --grid")
        gh = gw = side
    if gh * gw != n:
        raise UsageError(f"grid {gh}x{gw} does not hold {n} patches")
    if not 0 <= args.ref < n:
        raise UsageError(f"--ref {args.ref} outside [0, {n})")
    try:
        a = AffinityMap.from_values(values, gh, gw)
    except ValueError as e:
        raise DataError(str(e)) from None
    out = Path(args.out)
    write_heatmap(out, a, args.ref)
    sidecar = {"ref_index": args.ref, "grid": [gh, gw]}
    out.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def _run_config(args) -> RunConfig:
    data = {}
    if args.config is not None:
        data = load_config(args.config).to_dict()
    overrides = {
        "lambda": args.lam,
        "inject_layers": list(args.inject_layers) if args.inject_layers is not None else None,
        "position": args.position,
        "clip": args.clip,
        "encoder_layer_offset": args.encoder_layer_offset,
        "seed": args.seed,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    return parse_config(data)


def cmd_run(args) -> int:
    cfg = _run_config(args)
    _, scene = read_scene(Path(args.scene))
    enc, dec = cfg.build_models()
    image = render_scene(scene, enc.patch_size, cfg.seed)
    prompt = PromptSpec(seed=cfg.seed)
    inject = cfg.inject_config()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace = RunTrace(record_hooks=True)
    final = run_pipeline(image, prompt, enc, dec, inject, trace)
    files = ["final.ivrt"]
    write_tensor(out / "final.ivrt", final.tokens)
    vis = final.visual_slice
    for rec in trace.hooks:
        for tag, mat in (("pre", rec.before), ("post", rec.after)):
            name = f"layer{rec.layer:02d}_{tag}.ivrt"
            write_tensor(out / name, mat[vis])
            files.append(name)
    if args.baseline:
        base = run_pipeline(image, prompt, enc, dec)
        write_tensor(out / "baseline_final.ivrt", base.tokens)
        files.append("baseline_final.ivrt")

    manifest = {
        "config": cfg.to_dict(),
        "affinity_computations": trace.affinity_calls,
        "inject_layers": list(inject.layers_for(dec.num_layers)),
        "position": inject.position.value,
        "visual_range": [final.visual_start, final.visual_start + final.n_visual],
        "grid": [final.grid_h, final.grid_w],
        "num_tokens": int(final.tokens.shape[0]),
        "parameter_count": parameter_count(dec, enc),
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def cmd_ablate(args) -> int:
    try:
        rows = ablation.sweep(
            args.lambdas, args.layers, args.positions, args.clips, args.seeds, tuple(args.metrics)
        )
    except SceneError as e:
        raise UsageError(str(e)) from None
    write_ablation_csv(args.out, rows)
    return 0


def cmd_bench(args) -> int:
    layers = tuple(args.inject_layers) if args.inject_layers is not None else None
    cfg = InjectConfig(lam=args.lam, inject_layers=layers, position=args.position, clip="relu")
    try:
        cfg.layers_for(args.layers)
    except ValueError as e:
        raise UsageError(str(e)) from None
    if args.d % args.heads and args.head_dim is None:
        raise UsageError("--heads must divide --d unless --head-dim is given")
    models = bench.bench_models(args.n, args.d, args.layers, args.heads, args.head_dim, args.mlp_ratio)
    report = bench.run_bench(args.n, args.d, args.layers, cfg, args.reps, args.warmups, args.parallel, models)
    text = report.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="ivra", description="Affinity-guided visual token pooling toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="generate a planted-cluster scene", formatter_class=fmt)
    p.add_argument("--seed", type=_nonneg, default=0)
    p.add_argument("--grid", type=_grid, default=(16, 16), help="HxW patch grid")
    p.add_argument("--objects", type=_positive, default=3)
    p.add_argument("--sigma", type=float, default=0.3, help="per-component noise scale")
    p.add_argument("--dim", type=int, default=32, help="feature dimension")
    p.add_argument("--layout", choices=("random", "tile"), default="random",
                   help="random rectangles over background, or strips covering the grid")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("affinity", help="cosine affinity of patch embeddings", formatter_class=fmt)
    p.add_argument("--embeddings", required=True, help="N x d IVRT tensor")
    p.add_argument("--out", required=True, help="N x N IVRT tensor")
    p.set_defaults(func=cmd_affinity)

    p = sub.add_parser("heatmap", help="P5 graymap of one affinity row", formatter_class=fmt)
    p.add_argument("--affinity", required=True)
    p.add_argument("--ref", type=int, default=0, help="reference patch index")
    p.add_argument("--grid", type=_grid, default=None, help="HxW grid (default: square)")
    p.add_argument("--out", required=True, help=".pgm path; a .json sidecar is written next to it")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("run", help="run the toy pipeline on a scene", formatter_class=fmt)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--scene", required=True, help="directory written by gen-scene")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--baseline", action="store_true", help="also write the uninjected run")
    p.add_argument("--lambda", dest="lam", type=_unit_interval, default=None,
                   help=f"token-mixing coefficient (default: {DEFAULTS['lambda']})")
    p.add_argument("--inject-layers", type=_layer_set, default=None,
                   help="comma-separated decoder layers (default: single layer at 20/32 depth, 5 of 8)")
    p.add_argument("--position", choices=[q.value for q in Position], default=None,
                   help=f"hook position (default: {DEFAULTS['position']})")
    p.add_argument("--clip", choices=("relu", "none"), default=None,
                   help=f"affinity clipping (default: {DEFAULTS['clip']})")
    p.add_argument("--encoder-layer-offset", type=_nonneg, default=None,
                   help=f"encoder blocks before the last to tap (default: {DEFAULTS['encoder_layer_offset']})")
    p.add_argument("--seed", type=_nonneg, default=None, help=f"model and prompt seed (default: {DEFAULTS['seed']})")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="sweep injection settings over synthetic scenes", formatter_class=fmt)
    p.add_argument("--lambdas", type=_unit_interval, nargs="+", default=[0.3])
    p.add_argument("--layers", type=_layer_set, nargs="+", default=[(5,)], help="layer sets, e.g. 5 5,6")
    p.add_argument("--positions", choices=[q.value for q in Position], nargs="+", default=["P0"])
    p.add_argument("--clips", choices=("relu", "none"), nargs="+", default=["relu"])
    p.add_argument("--seeds", type=_nonneg, nargs="+", default=[0])
    p.add_argument("--metrics", choices=ablation.METRICS, nargs="+", default=["contrast_delta"])
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="injection latency overhead", formatter_class=fmt)
    p.add_argument("--n", type=_positive, default=576, help="visual tokens")
    p.add_argument("--d", type=_positive, default=4096, help="decoder width")
    p.add_argument("--layers", type=_positive, default=8, help="decoder layers")
    p.add_argument("--heads", type=_positive, default=4)
    p.add_argument("--head-dim", type=_positive, default=64)
    p.add_argument("--mlp-ratio", type=float, default=0.25)
    p.add_argument("--reps", type=int, default=9)
    p.add_argument("--warmups", type=_nonneg, default=1)
    p.add_argument("--lambda", dest="lam", type=_unit_interval, default=0.3)
    p.add_argument("--inject-layers", type=lambda t: () if t == "" else _layer_set(t), default=None,
                   help="comma-separated layers, '' for none (default: single layer at 20/32 depth)")
    p.add_argument("--position", choices=[q.value for q in Position], default="P0")
    p.add_argument("--parallel", action="store_true", help="let BLAS use all cores")
    p.add_argument("--out", default=None, help="JSON path (default: stdout)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "reps", 5) < 5:
        parser.error("--reps must be >= 5")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"ivra: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, TensorFormatError) as e:
        print(f"ivra: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as e:
        print(f"ivra: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
