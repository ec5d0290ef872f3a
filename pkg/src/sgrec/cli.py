"""Command-line interface.

Subcommands: generate, forward, evaluate, identify, benchmark, converge.
Exit codes: 0 success, 1 internal error, 2 input validation failure. All
flags can be preloaded from a JSON config file via --config; explicit flags
override the file. Every command is deterministic given its seed, including
under --workers > 1 (results are always reduced in input order).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

from .bench import run_benchmark
from .converge import DivergenceError, run_convergence
from .decoder import (AttentionDesign, DecoderConfig, decoder_weights_from_entries,
                      forward_predictions, init_decoder_entries)
from .matching import CostWeights, LossWeights
from .members import identify_members
from .metrics import evaluate
from .queries import compose_group_queries
from .scene import (ValidationError, load_feature_maps, load_predictions, load_scene,
                    load_weights, save_feature_maps, save_predictions, save_scene,
                    save_weights)
from .synth import SynthConfig, generate_scene

DESIGN_NAMES = {
    "previous": "previous",
    "naive": "naive",
    "inter-only": "inter_only",
    "inter-intra": "inter_then_intra",
    "intra-inter": "intra_then_inter",
}


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _map_ordered(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _parse_size(text: str) -> tuple[int, int]:
    try:
        g, m = text.lower().split("x")
        return int(g), int(m)
    except ValueError:
        raise ValidationError(f"size {text!r} must look like 300x12") from None


# --- generate ------------------------------------------------------------------

def _generate_one(cfg: SynthConfig, index: int):
    return generate_scene(cfg, index)


def cmd_generate(args) -> int:
    map_sizes = tuple(_parse_size(s) for s in (args.map_size or ["16x16", "8x8"]))
    cfg = SynthConfig(
        seed=args.seed, n_scenes=args.n_scenes, n_classes=args.n_classes,
        n_id=args.n_members,
        groups_per_scene=(args.min_groups, args.max_groups),
        group_size=(args.min_size, args.max_size),
        spread=args.spread, n_levels=len(map_sizes), map_sizes=map_sizes,
        channels=args.channels, jitter_sigma=args.jitter,
        score_range=(args.score_min, args.score_max),
        false_positive_rate=args.fp_rate,
    )
    out = Path(args.out)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    (out / "maps").mkdir(parents=True, exist_ok=True)
    results = _map_ordered(partial(_generate_one, cfg), range(cfg.n_scenes),
                           args.workers)
    for scene, maps in results:
        save_scene(scene, out / "scenes" / f"{scene.image_id}.json")
        save_feature_maps(maps, out / "maps" / f"{scene.image_id}.manifest.json",
                          out / "maps" / f"{scene.image_id}.bin")
    print(f"generated {cfg.n_scenes} scenes under {out}")
    return 0


# --- forward -------------------------------------------------------------------

def _forward_scene(payload, item):
    entries, cfg_fields, design_fields, query_fields, n_classes = payload
    image_id, maps_path = item
    maps = load_feature_maps(maps_path)
    cfg = DecoderConfig(design=AttentionDesign(**design_fields), **cfg_fields)
    queries = compose_group_queries(manifest=entries, **query_fields)
    weights = decoder_weights_from_entries(entries, cfg, n_classes)
    return forward_predictions(queries, maps, cfg, weights, image_id)


def cmd_forward(args) -> int:
    maps_dir = Path(args.maps)
    manifests = sorted(maps_dir.glob("*.manifest.json"))
    if not manifests:
        raise ValidationError(f"no feature-map manifests found under {maps_dir}")
    items = [(p.name.removesuffix(".manifest.json"), p) for p in manifests]

    variant = DESIGN_NAMES[args.design]
    n_members = 1 if variant == "previous" else args.n_members
    first_maps = load_feature_maps(items[0][1])
    cfg_fields = dict(n_layers=args.layers, d_model=args.d_model,
                      n_sample_points=args.sample_points,
                      n_levels=len(first_maps.levels), ffn_dim=args.ffn_dim)
    design_fields = dict(variant=variant, heads=args.heads)
    query_fields = dict(mode=args.query_mode, n_groups=args.n_groups,
                        n_members=n_members, width=2 * args.d_model)

    if args.weights:
        entries = load_weights(args.weights)
    else:
        cfg = DecoderConfig(design=AttentionDesign(**design_fields), **cfg_fields)
        entries = init_decoder_entries(cfg, args.n_classes, args.seed)
        query_set = compose_group_queries(seed=args.seed, **query_fields)
        if query_set.mode == "naive":
            entries["query.naive"] = query_set.queries
        else:
            entries["query.location"] = query_set.location_queries
            entries["query.layout"] = query_set.layout_queries
    if args.dump_weights:
        save_weights(entries, args.dump_weights)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = (entries, cfg_fields, design_fields, query_fields, args.n_classes)
    results = _map_ordered(partial(_forward_scene, payload), items, args.workers)
    for preds in results:
        save_predictions(preds, out / f"{preds.image_id}.json")
    print(f"wrote {len(results)} prediction files under {out}")
    return 0


# --- evaluate --------------------------------------------------------------------

def _load_pred_file(path):
    return load_predictions(path)


def cmd_evaluate(args) -> int:
    gt_dir, pred_dir = Path(args.gt), Path(args.pred)
    pred_files = sorted(pred_dir.glob("*.json"))
    if not pred_files:
        raise ValidationError(f"no prediction files under {pred_dir}")
    preds = _map_ordered(_load_pred_file, pred_files, args.workers)
    n_id = preds[0].n_members
    scene_files = sorted(p for p in gt_dir.glob("*.json")
                         if not p.name.endswith(".manifest.json"))
    scenes = _map_ordered(partial(load_scene, n_id=n_id), scene_files, args.workers)

    gt_by_id = {s.image_id: s for s in scenes}
    pred_by_id = {p.image_id: p for p in preds}
    missing = sorted(set(gt_by_id) ^ set(pred_by_id))
    if missing:
        for image_id in missing:
            side = "predictions" if image_id in gt_by_id else "ground truth"
            print(f"missing {side} for image_id {image_id}", file=sys.stderr)
        return 2
    pairs = [(gt_by_id[i], pred_by_id[i]) for i in sorted(gt_by_id)]

    report = evaluate(pairs, protocol=args.protocol, iou_thresh=args.iou_thresh,
                      cost_weights=CostWeights(args.eta_v, args.eta_s, args.eta_u),
                      interpolation=args.interpolation)
    text = report.dumps()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    if args.csv:
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        Path(args.csv).write_text(report.per_class_csv())
    print(text, end="")
    return 0


# --- identify --------------------------------------------------------------------

def cmd_identify(args) -> int:
    preds = load_predictions(args.predictions)
    scene = load_scene(args.scene, n_id=preds.n_members)
    rows = []
    for k, pred in enumerate(preds.predictions):
        assignment = identify_members(pred, scene.individual_boxes,
                                      scene.individual_scores, preds.n_members,
                                      group_index=k)
        rows.append({
            "group_index": assignment.group_index,
            "member_indices": list(assignment.member_indices),
            "used_points": assignment.used_points,
            "shortfall": assignment.shortfall,
        })
    doc = {"image_id": preds.image_id, "assignments": rows}
    if args.out:
        _write_json(args.out, doc)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


# --- benchmark -------------------------------------------------------------------

def cmd_benchmark(args) -> int:
    designs = []
    for name in args.designs.split(","):
        name = name.strip()
        if name not in DESIGN_NAMES:
            raise ValidationError(f"unknown design {name!r}")
        designs.append(DESIGN_NAMES[name])
    sizes = [_parse_size(s) for s in args.sizes.split(",")]
    rows = run_benchmark(designs, sizes, d_model=args.d_model, heads=args.heads,
                         repeats=args.repeats, seed=args.seed)
    table = [{
        "design": r.design, "n_groups": r.n_groups, "n_members": r.n_members,
        "score_pairs": r.score_pairs,
        **({"median_seconds": r.median_seconds} if r.median_seconds is not None else {}),
    } for r in rows]
    if args.out:
        _write_json(Path(args.out).with_suffix(".json"), table)
        with open(Path(args.out).with_suffix(".csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["design", "n_groups", "n_members", "score_pairs",
                             "median_seconds"])
            for r in rows:
                writer.writerow([r.design, r.n_groups, r.n_members, r.score_pairs,
                                 "" if r.median_seconds is None else f"{r.median_seconds:.6f}"])
    for r in rows:
        timing = "" if r.median_seconds is None else f"  {r.median_seconds * 1e3:9.3f} ms"
        print(f"{r.design:18s} {r.n_groups:5d}x{r.n_members:<3d} "
              f"{r.score_pairs:>12,d} pairs{timing}")
    return 0


# --- converge --------------------------------------------------------------------

def cmd_converge(args) -> int:
    try:
        result = run_convergence(
            seed=args.seed, steps=args.steps, lr=args.lr, n_groups=args.n_groups,
            n_id=args.n_members, n_classes=args.n_classes, group_size=args.group_size,
            cost_weights=CostWeights(args.eta_v, args.eta_s, args.eta_u),
            loss_weights=LossWeights(args.lambda_v, args.lambda_s, args.lambda_u),
            focal_gamma=args.focal_gamma, clamp_eps=args.clamp_eps)
    except DivergenceError as err:
        print(f"divergence: {err}", file=sys.stderr)
        return 1
    doc = {
        "losses": list(result.losses),
        "final_point_errors": list(result.point_errors),
        "matched_prediction": result.matched_prediction,
        "initial_loss": result.initial_loss,
        "final_loss": result.final_loss,
        "reduction": result.reduction,
    }
    if args.out:
        _write_json(args.out, doc)
    print(f"loss {result.initial_loss:.6f} -> {result.final_loss:.6f} "
          f"({100 * result.reduction:.2f}% reduction), "
          f"max point L1 error {result.max_point_error:.6f}")
    return 0


# --- parser ----------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)


def _add_weights_flags(p: argparse.ArgumentParser):
    p.add_argument("--eta-v", type=float, default=2.0)
    p.add_argument("--eta-s", type=float, default=1.0)
    p.add_argument("--eta-u", type=float, default=5.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgrec",
        description="Group-recognition toolkit: synthetic scenes, decoder forward "
                    "pass, set-matching losses, member identification, metrics.")
    parser.add_argument("--config", type=str, default=None,
                        help="JSON file of flag defaults; explicit flags override")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic scenes and feature maps")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n-scenes", type=int, default=4)
    p.add_argument("--n-classes", type=int, default=4)
    p.add_argument("--n-members", type=int, default=12)
    p.add_argument("--min-groups", type=int, default=1)
    p.add_argument("--max-groups", type=int, default=2)
    p.add_argument("--min-size", type=int, default=2)
    p.add_argument("--max-size", type=int, default=4)
    p.add_argument("--spread", type=float, default=0.25)
    p.add_argument("--map-size", action="append",
                   help="HxW per level, repeatable (default 16x16, 8x8)")
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--score-min", type=float, default=0.6)
    p.add_argument("--score-max", type=float, default=1.0)
    p.add_argument("--fp-rate", type=float, default=0.0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("forward", help="run the decoder + heads over feature maps")
    _add_common(p)
    p.add_argument("--maps", required=True, help="directory of *.manifest.json maps")
    p.add_argument("--out", required=True)
    p.add_argument("--weights", default=None, help="weights manifest (else seeded)")
    p.add_argument("--dump-weights", default=None,
                   help="write the weights actually used to this manifest path")
    p.add_argument("--design", choices=sorted(DESIGN_NAMES), default="inter-intra")
    p.add_argument("--query-mode", choices=("naive", "decomposed"), default="decomposed")
    p.add_argument("--n-groups", type=int, default=300)
    p.add_argument("--n-members", type=int, default=12)
    p.add_argument("--n-classes", type=int, default=4)
    p.add_argument("--d-model", type=int, default=256)
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--sample-points", type=int, default=4)
    p.add_argument("--ffn-dim", type=int, default=None)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    _add_common(p)
    p.add_argument("--gt", required=True, help="directory of scene JSON files")
    p.add_argument("--pred", required=True, help="directory of prediction JSON files")
    p.add_argument("--protocol", choices=("volleyball", "collective"),
                   default="volleyball")
    p.add_argument("--iou-thresh", type=float, default=0.5)
    p.add_argument("--interpolation", choices=("all_point", "eleven_point"),
                   default="all_point", help="AP interpolation for mAP")
    p.add_argument("--out", default=None)
    p.add_argument("--csv", default=None, help="write per-class rows as CSV")
    _add_weights_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("identify", help="match member points to individuals")
    _add_common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("benchmark", help="score-pair counts and stage wall times")
    _add_common(p)
    p.add_argument("--designs", default="naive,inter-only,inter-intra")
    p.add_argument("--sizes", default="300x12")
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--repeats", type=int, default=3,
                   help="timing repeats; 0 emits score-pair counts only")
    p.add_argument("--out", default=None, help="path prefix for .json/.csv tables")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("converge", help="gradient-descent demo on the set loss")
    _add_common(p)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.015)
    p.add_argument("--n-groups", type=int, default=4)
    p.add_argument("--n-members", type=int, default=6)
    p.add_argument("--n-classes", type=int, default=4)
    p.add_argument("--group-size", type=int, default=3)
    p.add_argument("--out", default=None)
    _add_weights_flags(p)
    p.add_argument("--lambda-v", type=float, default=2.0)
    p.add_argument("--lambda-s", type=float, default=1.0)
    p.add_argument("--lambda-u", type=float, default=5.0)
    p.add_argument("--focal-gamma", type=float, default=2.0)
    p.add_argument("--clamp-eps", type=float, default=1e-7)
    p.set_defaults(func=cmd_converge)

    parser._subcommand_parsers = dict(sub.choices)  # for config-file defaults
    return parser


def _config_from_argv(argv: list[str]) -> dict:
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            return json.loads(Path(argv[i + 1]).read_text())
        if token.startswith("--config="):
            return json.loads(Path(token.split("=", 1)[1]).read_text())
    return {}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        config = _config_from_argv(argv)
        if config:
            parser.set_defaults(**config)
            for sub in parser._subcommand_parsers.values():
                sub.set_defaults(**{k: v for k, v in config.items()
                                    if any(a.dest == k for a in sub._actions)})
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return 2
    except SystemExit:
        raise
    except Exception:
        traceback.print_exc()
        return 1


def entry():  # console-script hook
    sys.exit(main())


if __name__ == "__main__":
    entry()
