"""``vlgrasp`` command line: gen, run, ablate, split, eval.

Exit codes: 0 success, 1 pipeline failure (failed run record, violated split),
2 or more for operational errors (bad flags, IO, config).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import Config, ConfigError, SplitRatios, load_config
from .data import (DatasetError, GenSpec, generate_bundle, load_dataset, manifest_sha256, write_dataset)
from .eval.ablation import SuiteConfig, run_ablation
from .eval.metrics import iou, mask_iou
from .eval.pipeline import run_pipeline
from .eval.splits import SplitSpec, make_splits, verify_splits
from .geometry import BBox2D
from .grounding import GroundingFailure, ground_lexical, ground_oracle, rle_decode, rle_encode
from .pcfilter import STRATEGIES
from .reg import Lexicon, default_lexicon
from .scene import SceneGenerationError

EXIT_OK, EXIT_FAIL, EXIT_OPERATIONAL = 0, 1, 2
FILTER_CHOICES = ("none", "mask", "bbox", "mask_only", "bbox_dilated")


class OperationalError(RuntimeError):
    pass


def _lexicon(cfg: Config) -> Lexicon:
    return Lexicon.load(cfg.lexicon_path) if cfg.lexicon_path else default_lexicon()


def _emit(obj: dict, as_json: bool, text: str) -> None:
    if as_json:
        print(json.dumps(obj, sort_keys=True))
    else:
        print(text, end="" if text.endswith("\n") else "\n")


# -- gen -----------------------------------------------------------------------------------

def _bundle_job(args):
    i, spec, lexicon_path = args
    return generate_bundle(i, spec, Lexicon.load(lexicon_path) if lexicon_path else None)


def cmd_gen(args, cfg: Config) -> int:
    seed = cfg.seed if args.seed is None else args.seed
    sc = cfg.scene_config()
    if args.resolution_scale is not None:
        sc = cfg.scene_config(intrinsics=sc.intrinsics.scaled(args.resolution_scale))
    spec = GenSpec(args.scenes, args.frames_per_scene, args.expr_per_frame, seed, sc)
    lex = _lexicon(cfg)
    jobs = [(i, spec, cfg.lexicon_path) for i in range(spec.n_scenes)]
    gen_info = {**spec.to_dict(), "width": sc.intrinsics.width, "height": sc.intrinsics.height}
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            manifest = write_dataset(pool.map(_bundle_job, jobs), args.out, lex, gen_info)
    else:
        manifest = write_dataset((_bundle_job(j) for j in jobs), args.out, lex, gen_info)
    digest = manifest_sha256(args.out)
    summary = {"root": str(args.out), "n_scenes": manifest.n_scenes, "n_frames": manifest.n_frames,
               "n_expressions": manifest.n_expressions, "manifest_sha256": digest}
    _emit(summary, args.json, f"wrote {manifest.n_scenes} scenes, {manifest.n_frames} frames, "
                              f"{manifest.n_expressions} expressions to {args.out}\nmanifest sha256 {digest}")
    return EXIT_OK


# -- run -----------------------------------------------------------------------------------

def cmd_run(args, cfg: Config) -> int:
    ds = load_dataset(args.dataset, _lexicon(cfg), validate=False)
    try:
        rec = ds.record(args.record)
    except KeyError:
        raise OperationalError(f"no record {args.record!r} in {args.dataset}") from None
    if not (args.grounder in ("oracle", "lexical") or args.grounder.startswith("external:")):
        raise OperationalError(f"unknown grounder {args.grounder!r}")
    seed = cfg.seed if args.seed is None else args.seed
    run = run_pipeline(ds.scene_at(rec.scene_id, rec.frame_id), ds.frame(rec.scene_id, rec.frame_id),
                       rec.directive, rec.target_id, args.grounder,
                       cfg.filter_strategy(args.filter), seed, cfg.gripper, cfg.sampler, cfg.cap,
                       rec.scene_id, rec.frame_id, rec.record_id, _lexicon(cfg), cfg.grounder_timeout)
    if args.json:
        print(run.to_json())
    elif run.success:
        print(f"{rec.record_id}: success with {run.strategy}")
        print(json.dumps({k: run.grasp[k] for k in ("x", "y", "z", "rx", "ry", "rz", "width", "score")},
                         sort_keys=True))
    else:
        print(f"{rec.record_id}: failed at {run.failure_stage}: {run.failure_reason}"
              + (f" ({run.detail})" if run.detail else ""))
    return EXIT_OK if run.success else EXIT_FAIL


# -- ablate --------------------------------------------------------------------------------

def cmd_ablate(args, cfg: Config) -> int:
    seed = cfg.seed if args.seed is None else args.seed
    suite = SuiteConfig(args.scenes, seed, resolution_scale=args.resolution_scale or cfg.resolution_scale)
    dilation = cfg.dilation if args.dilation is None else args.dilation
    report = run_ablation(suite, args.filters, dilation, cfg.cap, cfg.gripper, cfg.sampler, args.jobs)
    if args.out:
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "summary.json").write_text(report.to_json())
            (out / "records.jsonl").write_text(report.records_jsonl())
            (out / "table.txt").write_text(report.to_text())
            (out / "table.csv").write_text(report.to_csv())
        except OSError as exc:
            raise OperationalError(f"{out}: {exc.strerror or exc}") from exc
    _emit(report.summary(), args.json, report.to_text())
    return EXIT_OK


# -- split ---------------------------------------------------------------------------------

def cmd_split(args, cfg: Config) -> int:
    ds = load_dataset(args.dataset, _lexicon(cfg), validate=False)
    r = cfg.splits
    ratios = SplitRatios(r.train if args.train is None else args.train,
                         r.testA if args.testA is None else args.testA,
                         r.testB_scene_fraction if args.testB_fraction is None else args.testB_fraction,
                         r.holdout_layouts if args.holdout is None else tuple(args.holdout))
    spec = make_splits(ds.manifest, ratios, cfg.seed if args.seed is None else args.seed)
    text = spec.to_json()
    if args.out:
        try:
            Path(args.out).write_text(text)
        except OSError as exc:
            raise OperationalError(f"{args.out}: {exc.strerror or exc}") from exc
    counts = {k: {"scenes": len(v["scenes"]), "frames": len(v["frames"])}
              for k, v in spec.to_dict().items() if k in ("train", "testA", "testB")}
    _emit(counts, args.json, "\n".join(f"{k}: {v['scenes']} scenes, {v['frames']} frames"
                                       for k, v in counts.items()))
    return EXIT_OK


# -- eval ----------------------------------------------------------------------------------

def _read_split(path: str) -> SplitSpec:
    try:
        return SplitSpec.from_dict(json.loads(Path(path).read_text()))
    except OSError as exc:
        raise OperationalError(f"{path}: {exc.strerror or exc}") from exc
    except (ValueError, KeyError) as exc:
        raise OperationalError(f"{path}: not a split file ({exc})") from exc


def _predict(ds, rec, grounder: str, lexicon: Lexicon) -> Optional[dict]:
    frame = ds.frame(rec.scene_id, rec.frame_id)
    try:
        if grounder == "oracle":
            g = ground_oracle(ds.scene_at(rec.scene_id, rec.frame_id), frame, rec.target_id)
        else:
            g = ground_lexical(ds.view(rec.scene_id, rec.frame_id), frame, rec.directive, lexicon)
    except GroundingFailure as exc:
        return {"record_id": rec.record_id, "failure": exc.reason}
    return {"record_id": rec.record_id, "bbox": g.bbox.as_list(), "mask": rle_encode(g.mask)}


def cmd_eval(args, cfg: Config) -> int:
    lexicon = _lexicon(cfg)
    ds = load_dataset(args.dataset, lexicon, validate=False)
    result: dict = {}
    code = EXIT_OK
    if args.verify_splits:
        problems = verify_splits(_read_split(args.verify_splits), ds.manifest)
        result["split_violations"] = problems
        if problems:
            code = EXIT_FAIL
    if args.predictions or args.grounder:
        records = ds.records
        if args.split:
            frames = set(_read_split(args.split).frames_of(args.subset))
            records = [r for r in records if (r.scene_id, r.frame_id) in frames]
        if not records:
            raise OperationalError("no records to evaluate")
        if args.predictions:
            try:
                preds = {p["record_id"]: p for p in map(json.loads, Path(args.predictions).read_text().splitlines())
                         if p}
            except OSError as exc:
                raise OperationalError(f"{args.predictions}: {exc.strerror or exc}") from exc
        else:
            preds = {r.record_id: _predict(ds, r, args.grounder, lexicon) for r in records}
        hits, mious, failures = 0, [], {}
        for r in records:
            p = preds.get(r.record_id)
            gt_mask = ds.frame(r.scene_id, r.frame_id).instances == r.target_id
            if p is None or "bbox" not in p:
                reason = "missing" if p is None else p.get("failure", "missing")
                failures[reason] = failures.get(reason, 0) + 1
                mious.append(0.0 if gt_mask.any() else 1.0)
                continue
            hits += iou(BBox2D(*p["bbox"]), r.bbox) > 0.5
            mious.append(mask_iou(rle_decode(p["mask"]), gt_mask))
        result.update({"n": len(records), "prec@0.5": hits / len(records), "miou": float(np.mean(mious)),
                       "failures": failures})
        if args.out and not args.predictions:
            _write_lines(args.out, [json.dumps(preds[r.record_id], sort_keys=True) for r in records])
    if not result:
        raise OperationalError("eval needs --predictions, --grounder or --verify-splits")
    lines = []
    if "n" in result:
        lines.append(f"n={result['n']} prec@0.5={result['prec@0.5']:.4f} miou={result['miou']:.4f}")
        lines.extend(f"  {k}: {v}" for k, v in sorted(result["failures"].items()))
    if "split_violations" in result:
        v = result["split_violations"]
        lines.append("splits ok" if not v else "split violations:\n" + "\n".join(f"  {x}" for x in v))
    _emit(result, args.json, "\n".join(lines))
    return code


def _write_lines(path: str, lines: Sequence[str]) -> None:
    try:
        Path(path).write_text("".join(line + "\n" for line in lines))
    except OSError as exc:
        raise OperationalError(f"{path}: {exc.strerror or exc}") from exc


# -- entry point ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vlgrasp", description="Language-directed grasping on synthetic RGB-D scenes.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--config", help="config file (default: $VLGRASP_CONFIG)")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--json", action="store_true", help="machine-readable output")
        if seed:
            p.add_argument("--seed", type=int, help="master seed (default from config)")

    p = sub.add_parser("gen", help="generate a dataset")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--frames-per-scene", type=int, required=True)
    p.add_argument("--expr-per-frame", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution-scale", type=float, help="scale the 640x480 camera")
    p.add_argument("--jobs", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="run the pipeline on one annotation record")
    p.add_argument("--dataset", required=True)
    p.add_argument("--record", required=True)
    p.add_argument("--grounder", default="oracle", help="oracle, lexical or external:ADDR")
    p.add_argument("--filter", choices=FILTER_CHOICES, default=None)
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="compare filter strategies on a cluttered suite")
    p.add_argument("--scenes", type=int, default=100)
    p.add_argument("--filters", nargs="+", choices=FILTER_CHOICES, default=list(STRATEGIES))
    p.add_argument("--dilation", type=float)
    p.add_argument("--resolution-scale", type=float)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="directory for summary.json, records.jsonl, table.txt, table.csv")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("split", help="make train/testA/testB splits")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    p.add_argument("--train", type=float)
    p.add_argument("--testA", type=float)
    p.add_argument("--testB-fraction", type=float)
    p.add_argument("--holdout", nargs="*", help="layouts reserved for testB")
    common(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("eval", help="grounding metrics and split checks")
    p.add_argument("--dataset", required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--predictions", help="JSONL of {record_id, bbox, mask(RLE)}")
    src.add_argument("--grounder", choices=("oracle", "lexical"))
    p.add_argument("--split", help="split file restricting the records")
    p.add_argument("--subset", default="testA", choices=("train", "testA", "testB"))
    p.add_argument("--verify-splits", metavar="SPLIT_FILE")
    p.add_argument("--out", help="write generated predictions here")
    common(p, seed=False)
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        for name in ("scenes", "frames_per_scene", "expr_per_frame", "jobs"):
            if getattr(args, name, 1) < 1:
                raise OperationalError(f"--{name.replace('_', '-')} must be >= 1")
        return args.func(args, cfg)
    except (OperationalError, ConfigError, DatasetError, SceneGenerationError, ValueError) as exc:
        print(f"vlgrasp {args.command}: {exc}", file=sys.stderr)
        return EXIT_OPERATIONAL
    except OSError as exc:
        print(f"vlgrasp {args.command}: {exc}", file=sys.stderr)
        return EXIT_OPERATIONAL
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
