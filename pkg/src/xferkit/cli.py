"""Command-line interface.

Every long option can also be supplied through a JSON config file passed
as --config: keys are the option names with dashes replaced by
underscores, either flat or nested under the command name (e.g.
{"assess": {"se_size": 63}}). Explicit flags override the file.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import forest as rf
from . import synth as synthmod
from . import transfer, xras
from .raster import (ClassLookup, MultibandRaster, Window,
                     compute_truncation_bounds, extract_patch,
                     merge_probability_patches, normalize_truncate,
                     parse_role, plan_tiles, remap_labels)


def _read_height(args) -> MultibandRaster | None:
    if not getattr(args, "height", None):
        return None
    return xras.read_xras(args.height)


def _height_is_agl(args) -> bool:
    return getattr(args, "height_kind", "dsm") == "agl"


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def cmd_normalize(args) -> int:
    roles = [parse_role(s) for s in args.bands.split(",") if s.strip()]
    if not roles:
        raise ValueError("no bands requested")
    rasters = [xras.read_xras(p) for p in args.input]
    bounds_by_role = {
        role: compute_truncation_bounds(rasters, role, args.lower, args.upper)
        for role in roles
    }
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path, raster in zip(args.input, rasters):
        per_band = {raster.band_index(role): bounds_by_role[role]
                    for role in roles if raster.has_band(role)}
        normalized = normalize_truncate(raster, per_band)
        xras.write_xras(normalized, out_dir / Path(path).name)
    report = {
        "lower_pct": args.lower,
        "upper_pct": args.upper,
        "bounds": {role.name.lower(): {"lo": b.lo, "hi": b.hi,
                                       "degenerate": b.degenerate}
                   for role, b in bounds_by_role.items()},
        "inputs": [Path(p).name for p in args.input],
    }
    xras.write_report(report, out_dir / "normalization.json")
    return 0


def cmd_remap(args) -> int:
    lookup = ClassLookup.from_json(Path(args.lookup).read_text())
    labels = remap_labels(xras.read_xras(args.labels), lookup)
    xras.write_xras(labels, args.out)
    return 0


def cmd_pseudolabel(args) -> int:
    raster = xras.read_xras(args.raster)
    height = _read_height(args)
    result = transfer.pseudo_labels(
        raster, height, height_is_agl=_height_is_agl(args),
        se_size=args.se_size, mbih_threshold=args.mbih_threshold,
        otsu_bins=args.otsu_bins)
    xras.write_xras(result.labels, args.out)
    if args.report:
        doc = {
            "thresholds": result.thresholds.to_dict(),
            "width": result.labels.width,
            "height": result.labels.height,
            "void_pixels": int((~result.labels.valid_mask()).sum()),
        }
        xras.write_report(doc, args.report)
    return 0


def cmd_assess(args) -> int:
    raster = xras.read_xras(args.raster)
    prediction = xras.read_label_map(args.pred)
    height = _read_height(args)
    probs = xras.read_probability_map(args.probs) if args.probs else None
    gt = xras.read_label_map(args.gt) if args.gt else None
    report = transfer.assess(
        prediction, raster, height, model_id=args.model_id,
        domain_id=args.domain_id, probs=probs, gt=gt,
        height_is_agl=_height_is_agl(args), se_size=args.se_size,
        mbih_threshold=args.mbih_threshold, otsu_bins=args.otsu_bins,
        timestamp=args.timestamp)
    xras.write_report(report, args.out)
    return 0


def cmd_evaluate(args) -> int:
    pred = xras.read_label_map(args.pred)
    gt = xras.read_label_map(args.gt)
    xras.write_report(transfer.evaluate_gt(pred, gt), args.out)
    return 0


def _load_reports(paths) -> list[transfer.TransferReport]:
    return [transfer.TransferReport.from_dict(json.loads(Path(p).read_text()))
            for p in paths]


def cmd_rank(args) -> int:
    ranking = transfer.rank_models(_load_reports(args.reports), by=args.by)
    rows = [(rank, model_id, score) for model_id, score, rank in ranking.entries]
    xras.write_csv(args.out, ("rank", "model_id", "score"), rows)
    return 0


def cmd_correlate(args) -> int:
    index_stats, conf_stats = transfer.correlate_predictors(_load_reports(args.reports))
    rows = [
        ("index_miou", index_stats.r, index_stats.r2, index_stats.slope,
         index_stats.intercept, index_stats.n),
        ("confidence", conf_stats.r, conf_stats.r2, conf_stats.slope,
         conf_stats.intercept, conf_stats.n),
    ]
    xras.write_csv(args.out, ("predictor", "r", "r2", "slope", "intercept", "n"),
                   rows)
    return 0


def cmd_tile(args) -> int:
    raster = xras.read_xras(args.input)
    plan = plan_tiles(raster.width, raster.height, args.patch, args.overlap)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    windows = []
    for window in plan.windows:
        name = f"tile_{window.y:05d}_{window.x:05d}.xras"
        patch = MultibandRaster(
            np.ascontiguousarray(extract_patch(raster.data, window)),
            raster.band_roles, nodata=raster.nodata, gsd=raster.gsd,
            normalized=raster.normalized)
        xras.write_xras(patch, out_dir / name)
        windows.append({"x": window.x, "y": window.y, "width": window.width,
                        "height": window.height, "file": name})
    manifest = {
        "width": raster.width, "height": raster.height,
        "patch": args.patch, "overlap": args.overlap, "stride": plan.stride,
        "undersized": plan.undersized, "windows": windows,
    }
    xras.write_report(manifest, out_dir / "tiles.json")
    return 0


def cmd_merge(args) -> int:
    manifest_path = Path(args.patches) / "tiles.json"
    manifest = json.loads(manifest_path.read_text())
    patches = []
    for entry in manifest["windows"]:
        window = Window(entry["x"], entry["y"], entry["width"], entry["height"])
        raster = xras.read_xras(Path(args.patches) / entry["file"])
        if raster.bands != 4:
            raise ValueError("merge expects 4-band probability patches")
        patches.append((window, raster.data.astype(np.float32)))
    pmap, labels = merge_probability_patches(patches, manifest["width"],
                                             manifest["height"])
    xras.write_xras(pmap, args.out)
    if args.labels_out:
        xras.write_xras(labels, args.labels_out)
    return 0


def _scene_feature_stack(raster_path, height_path, params) -> np.ndarray:
    raster = xras.read_xras(raster_path)
    glcm = rf.glcm_features(raster, params)
    height = xras.read_xras(height_path) if height_path else None
    return rf.stack_features(raster, glcm, height)


def cmd_rf_train(args) -> int:
    if len(args.labels) != len(args.raster):
        raise ValueError("need one --labels per --raster")
    if args.height and len(args.height) != len(args.raster):
        raise ValueError("need one --height per --raster (or none at all)")
    params = rf.GlcmParams(window=args.window, levels=args.levels)
    stacks = []
    labels = []
    for i, raster_path in enumerate(args.raster):
        height_path = args.height[i] if args.height else None
        stacks.append(_scene_feature_stack(raster_path, height_path, params))
        labels.append(xras.read_label_map(args.labels[i]))
    data = rf.sample_pixels(stacks, labels, args.samples, args.seed,
                            stratified=args.stratified)
    hp = rf.RfHyperparams(
        n_trees=args.trees, max_depth=args.max_depth,
        min_samples_leaf=args.min_leaf, min_samples_split=args.min_split,
        n_samples=args.samples, features_per_split=args.features_per_split,
        seed=args.seed)
    model = rf.rf_train(data, hp)
    rf.save_forest(model, args.out)
    if args.json_out:
        Path(args.json_out).write_text(rf.forest_to_json(model))
    return 0


def cmd_rf_predict(args) -> int:
    model = rf.load_forest(args.model)
    params = rf.GlcmParams(window=args.window, levels=args.levels)
    if model.d == 11 and not args.height:
        raise ValueError("model was trained with a height feature; pass --height")
    if model.d == 10 and args.height:
        raise ValueError("model has no height feature; drop --height")
    stack = _scene_feature_stack(args.raster, args.height, params)
    if stack.shape[0] != model.d:
        raise ValueError(f"feature stack has {stack.shape[0]} planes, model wants {model.d}")
    if args.patch > 0:
        pmap, labels = transfer.predict_tiled(model, stack, args.patch,
                                              args.overlap)
    else:
        pmap = rf.rf_predict(model, stack)
        labels = pmap.argmax_labels()
    xras.write_xras(pmap, args.out)
    if args.labels_out:
        xras.write_xras(labels, args.labels_out)
    return 0


def cmd_synth_generate(args) -> int:
    if args.spec:
        spec = synthmod.DomainSpec.from_dict(json.loads(Path(args.spec).read_text()))
    else:
        spec = synthmod.DomainSpec()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for i, (rgbn, agl, labels) in enumerate(synthmod.generate_domain(spec, args.scenes)):
        triple = {
            "rgbn": f"scene_{i:03d}_rgbn.xras",
            "agl": f"scene_{i:03d}_agl.xras",
            "labels": f"scene_{i:03d}_labels.xras",
        }
        xras.write_xras(rgbn, out_dir / triple["rgbn"])
        xras.write_xras(agl, out_dir / triple["agl"])
        xras.write_xras(labels, out_dir / triple["labels"])
        files.append(triple)
    manifest = {"spec": spec.to_dict(), "n_scenes": args.scenes, "files": files}
    xras.write_report(manifest, out_dir / "manifest.json")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with default option values")


def _add_height_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--height", help="height raster (XRAS, meters)")
    p.add_argument("--height-kind", choices=("dsm", "agl"), default="dsm")
    p.add_argument("--se-size", type=int, default=63,
                   help="structuring element size for the DSM top-hat")
    p.add_argument("--mbih-threshold", type=float, default=2.0,
                   help="building height threshold in meters")
    p.add_argument("--otsu-bins", type=int, default=256)


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="xferkit",
        description="Index-based transferability assessment for segmentation models")
    sub = parser.add_subparsers(dest="command", required=True)
    registry: dict[str, argparse.ArgumentParser] = {}

    p = sub.add_parser("normalize", help="dataset-level histogram truncation to [0,1]")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--bands", default="r,g,b,nir")
    p.add_argument("--lower", type=float, default=2.0)
    p.add_argument("--upper", type=float, default=2.0)
    p.add_argument("--out-dir", required=True)
    _add_config(p)
    p.set_defaults(func=cmd_normalize)
    registry["normalize"] = p

    p = sub.add_parser("remap", help="remap raw label codes into the 4-class schema")
    p.add_argument("--labels", required=True, help="raw single-band label raster")
    p.add_argument("--lookup", required=True,
                   help='JSON lookup: {"map": {"<src>": <dst>, ...}}')
    p.add_argument("--out", required=True)
    _add_config(p)
    p.set_defaults(func=cmd_remap)
    registry["remap"] = p

    p = sub.add_parser("pseudolabel", help="index-derived pseudo ground truth")
    p.add_argument("--raster", required=True)
    _add_height_opts(p)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    _add_config(p)
    p.set_defaults(func=cmd_pseudolabel)
    registry["pseudolabel"] = p

    p = sub.add_parser("assess", help="score a prediction against pseudo labels")
    p.add_argument("--raster", required=True)
    _add_height_opts(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--probs")
    p.add_argument("--gt")
    p.add_argument("--model-id", required=True)
    p.add_argument("--domain-id", required=True)
    p.add_argument("--timestamp", help="fixed ISO timestamp for reproducible reports")
    p.add_argument("--out", required=True)
    _add_config(p)
    p.set_defaults(func=cmd_assess)
    registry["assess"] = p

    p = sub.add_parser("evaluate", help="ground-truth mIoU of a prediction")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    _add_config(p)
    p.set_defaults(func=cmd_evaluate)
    registry["evaluate"] = p

    p = sub.add_parser("rank", help="rank models on one domain")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--by", choices=("index_miou", "confidence"),
                   default="index_miou")
    p.add_argument("--out", required=True)
    _add_config(p)
    p.set_defaults(func=cmd_rank)
    registry["rank"] = p

    p = sub.add_parser("correlate", help="predictor vs ground-truth correlation")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--out", required=True)
    _add_config(p)
    p.set_defaults(func=cmd_correlate)
    registry["correlate"] = p

    p = sub.add_parser("tile", help="cut a raster into overlapping patches")
    p.add_argument("--input", required=True)
    p.add_argument("--patch", type=int, default=512)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--out-dir", required=True)
    _add_config(p)
    p.set_defaults(func=cmd_tile)
    registry["tile"] = p

    p = sub.add_parser("merge", help="probability-voting merge of patches")
    p.add_argument("--patches", required=True, help="directory with tiles.json")
    p.add_argument("--out", required=True)
    p.add_argument("--labels-out")
    _add_config(p)
    p.set_defaults(func=cmd_merge)
    registry["merge"] = p

    p = sub.add_parser("rf", help="random-forest baseline")
    rf_sub = p.add_subparsers(dest="rf_command", required=True)

    p_train = rf_sub.add_parser("train")
    p_train.add_argument("--raster", action="append", required=True)
    p_train.add_argument("--labels", action="append", required=True)
    p_train.add_argument("--height", action="append")
    p_train.add_argument("--trees", type=int, default=500)
    p_train.add_argument("--max-depth", type=int, default=20)
    p_train.add_argument("--min-leaf", type=int, default=1000)
    p_train.add_argument("--min-split", type=int, default=4000)
    p_train.add_argument("--samples", type=int, default=4_000_000)
    p_train.add_argument("--features-per-split", type=int)
    p_train.add_argument("--stratified", action="store_true")
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--window", type=int, default=13)
    p_train.add_argument("--levels", type=int, default=32)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--json-out", help="also write a JSON debug dump")
    _add_config(p_train)
    p_train.set_defaults(func=cmd_rf_train)
    registry["rf train"] = p_train

    p_pred = rf_sub.add_parser("predict")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--raster", required=True)
    p_pred.add_argument("--height")
    p_pred.add_argument("--window", type=int, default=13)
    p_pred.add_argument("--levels", type=int, default=32)
    p_pred.add_argument("--patch", type=int, default=0,
                        help="tile size for tiled inference (0 = whole image)")
    p_pred.add_argument("--overlap", type=float, default=0.5)
    p_pred.add_argument("--out", required=True)
    p_pred.add_argument("--labels-out")
    _add_config(p_pred)
    p_pred.set_defaults(func=cmd_rf_predict)
    registry["rf predict"] = p_pred

    p = sub.add_parser("synth", help="synthetic domain generator")
    synth_sub = p.add_subparsers(dest="synth_command", required=True)
    p_gen = synth_sub.add_parser("generate")
    p_gen.add_argument("--spec", help="DomainSpec JSON (defaults when omitted)")
    p_gen.add_argument("--scenes", type=int, default=3)
    p_gen.add_argument("--out-dir", required=True)
    _add_config(p_gen)
    p_gen.set_defaults(func=cmd_synth_generate)
    registry["synth generate"] = p_gen

    return parser, registry


def _find_config(argv: list[str]) -> str | None:
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if token.startswith("--config="):
            return token.split("=", 1)[1]
    return None


def _command_path(argv: list[str]) -> str:
    words = []
    for token in argv:
        if token.startswith("-"):
            break
        words.append(token)
        if len(words) == 2:
            break
    return " ".join(words)


def _apply_config(registry: dict, argv: list[str]) -> None:
    path = _find_config(argv)
    if path is None:
        return
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ValueError("config file must hold a JSON object")
    command = _command_path(argv)
    section = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    for key in (command, command.replace(" ", "_")):
        nested = doc.get(key)
        if isinstance(nested, dict):
            section.update(nested)
    sub = registry.get(command)
    if sub is None:
        return
    dests = {a.dest for a in sub._actions}
    defaults = {k: v for k, v in section.items() if k in dests}
    sub.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, registry = build_parser()
    try:
        _apply_config(registry, argv)
        args = parser.parse_args(argv)
        return args.func(args) or 0
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
