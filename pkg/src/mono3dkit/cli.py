"""Command-line entry point wiring the library over JSONL and binary files.

One executable with subcommands; every subcommand is deterministic given
its inputs and flags, with all randomness keyed off --seed.  Structured
reports go to stdout or --out; per-record data errors go to stderr with
the offending record id and flip the exit status to 1.  Usage errors exit
with status 2.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import augment as aug
from . import eval3d, gradcheck, losses, similarity
from .embfile import (
    EmbeddingBundle,
    read_bundle,
    read_params,
    validate_bundle,
    write_bundle,
    write_params,
)
from .errors import DataError, FormatError
from .text3d import Caption, parse_unit
from .tge import (
    attention_params_from_dict,
    attention_params_to_dict,
    init_attention_params,
    init_projection_params,
    projection_params_from_dict,
    projection_params_to_dict,
    tge_forward,
)


def _open_input(path: str) -> Iterable[str]:
    if path == "-":
        return sys.stdin
    return Path(path).read_text(encoding="utf-8").splitlines()


def _write_output(text: str, out: Optional[str]) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        if text and not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        Path(out).write_text(text, encoding="utf-8")


def _csv_text(rows: list[list]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _units_flag(value: str) -> tuple:
    return tuple(parse_unit(tok) for tok in value.split(","))


def _cmd_scan(args) -> int:
    out_lines = []
    failures = 0
    for n, line in enumerate(_open_input(args.input), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            caption = Caption.parse(str(obj["id"]), obj["text"])
        except (KeyError, TypeError, ValueError) as e:
            print(f"record on line {n}: {e}", file=sys.stderr)
            failures += 1
            continue
        out_lines.append(json.dumps({
            "id": caption.id,
            "descriptors": [
                {
                    "start": d.start, "end": d.end, "value_text": d.value_text,
                    "unit": d.unit.word, "micrometers": d.micrometers,
                    "form": d.form.value, "attribute": d.attribute,
                }
                for d in caption.descriptors
            ],
        }, ensure_ascii=False, separators=(",", ":")))
    _write_output("\n".join(out_lines) + ("\n" if out_lines else ""), args.out)
    return 1 if failures else 0


def _run_augment(args, cfg: aug.AugmentConfig) -> int:
    out_lines = []
    failures = 0
    for out_line, error in aug.augment_corpus(_open_input(args.input), cfg, jobs=args.jobs):
        if error is not None:
            print(error, file=sys.stderr)
            failures += 1
        else:
            out_lines.append(out_line)
    _write_output("\n".join(out_lines) + ("\n" if out_lines else ""), args.out)
    return 1 if failures else 0


def _cmd_augment(args) -> int:
    cfg = aug.AugmentConfig(unit_pool=args.units, plan=args.plan, seed=args.seed)
    return _run_augment(args, cfg)


def _cmd_remap(args) -> int:
    cfg = aug.AugmentConfig(plan=aug.PLAN_FIXED, fixed_unit=args.unit, seed=args.seed)
    return _run_augment(args, cfg)


def _cmd_similarity(args) -> int:
    report = similarity.corpus_similarity(args.pairs, normalize_rows=args.normalize_rows)
    if args.format == "csv":
        _write_output(_csv_text(report.to_csv_rows()), args.out)
    else:
        _write_output(json.dumps(report.to_dict(), indent=2), args.out)
    for pair_id, error in report.failures:
        print(f"pair {pair_id!r}: {error}", file=sys.stderr)
    return 1 if report.failures else 0


def _cmd_validate_emb(args) -> int:
    results = []
    for path in args.files:
        report = validate_bundle(path)
        results.append({"path": path, "ok": report.ok, "issues": report.issues})
        for issue in report.issues:
            print(f"{path}: {issue}", file=sys.stderr)
    _write_output(json.dumps(results, indent=2), args.out)
    return 0 if all(r["ok"] for r in results) else 1


def _masked(bundle: EmbeddingBundle) -> np.ndarray:
    return bundle.data64[bundle.mask == 1]


def _cmd_tge_forward(args) -> int:
    try:
        text = read_bundle(args.text)
        geometry = read_bundle(args.geometry)
    except (FormatError, DataError, OSError) as e:
        print(f"bundle error: {e}", file=sys.stderr)
        return 1
    if text.dim != geometry.dim:
        print(
            f"record {geometry.caption_id!r}: text dim {text.dim} != geometry dim "
            f"{geometry.dim}", file=sys.stderr,
        )
        return 1
    if args.params:
        tensors = read_params(args.params)
        proj = projection_params_from_dict(tensors)
        attn = attention_params_from_dict(tensors)
    else:
        proj = init_projection_params(text.dim, seed=args.seed)
        attn = init_attention_params(text.dim, n_heads=args.heads, seed=args.seed)
    result = tge_forward(_masked(geometry), _masked(text), proj, attn)
    out = EmbeddingBundle(
        caption_id=geometry.caption_id,
        mask=np.ones(result.shape[0], dtype=np.uint8),
        data=result.astype(np.float32),
    )
    write_bundle(out, args.out)
    if args.save_params:
        tensors = {**projection_params_to_dict(proj), **attention_params_to_dict(attn)}
        write_params(tensors, args.save_params)
    return 0


def _cmd_grad_check(args) -> int:
    known = gradcheck.available_ops()
    ops = known if args.ops == "all" else args.ops.split(",")
    unknown = [op for op in ops if op not in known]
    if unknown:
        print(f"unknown ops: {', '.join(unknown)}; known: {', '.join(known)}",
              file=sys.stderr)
        return 2
    failed = False
    lines = []
    for fn_id in ops:
        worst = 0.0
        for k in range(args.seeds):
            report = gradcheck.grad_check(
                fn_id, seed=args.seed + k, step=args.step, tolerance=args.tolerance
            )
            worst = max(worst, report.max_relative_error)
        ok = worst < args.tolerance
        failed = failed or not ok
        lines.append(
            f"{'PASS' if ok else 'FAIL'} {fn_id} max_rel={worst:.3e} "
            f"seeds={args.seeds} step={args.step:g} tol={args.tolerance:g}"
        )
    _write_output("\n".join(lines) + "\n", args.out)
    return 1 if failed else 0


def _record_losses(obj: dict, weights: losses.LossWeights) -> dict:
    components: dict[str, Optional[float]] = {}

    def part(name):
        return components.get(name, 0.0)

    if "class" in obj:
        c = obj["class"]
        components["class"] = losses.focal_loss(
            c["probs"], int(c["target"]),
            alpha=float(c.get("alpha", losses.DEFAULT_FOCAL_ALPHA)),
            gamma=float(c.get("gamma", losses.DEFAULT_FOCAL_GAMMA)),
        )
    if "lrtb" in obj:
        components["lrtb"] = losses.l1_loss(obj["lrtb"]["pred"], obj["lrtb"]["target"])
    if "giou" in obj:
        components["giou"] = losses.giou_loss(
            losses.Box2D(*obj["giou"]["pred"]), losses.Box2D(*obj["giou"]["target"])
        )
    if "xy3d" in obj:
        components["xy3d"] = losses.l1_loss(obj["xy3d"]["pred"], obj["xy3d"]["target"])
    if "size3d" in obj:
        components["size3d"] = losses.iou3d_loss(
            losses.Box3D.from_dict(obj["size3d"]["pred"]),
            losses.Box3D.from_dict(obj["size3d"]["target"]),
        )
    if "orientation" in obj:
        o = obj["orientation"]
        target = losses.OrientationTarget(
            int(o["bin"]), float(o["residual"]), n_bins=len(o["logits"])
        )
        components["orientation"] = losses.multibin_loss(o["logits"], o["residuals"], target)
    if "depth" in obj:
        d = obj["depth"]
        components["depth"] = losses.laplacian_depth_loss(
            float(d["pred"]), float(d["log_scale"]), float(d["target"])
        )
    if "dmap" in obj:
        components["dmap"] = losses.depth_map_focal(obj["dmap"]["probs"], obj["dmap"]["targets"])

    l_2d = losses.loss_2d(part("class"), part("lrtb"), part("giou"), part("xy3d"), weights)
    l_3d = losses.loss_3d(part("size3d"), part("orientation"), part("depth"))
    l_overall = losses.loss_overall(l_2d, l_3d, part("dmap"))
    return {
        "id": obj.get("id"),
        "components": components,
        "l_2d": l_2d,
        "l_3d": l_3d,
        "l_overall": l_overall,
    }


def _cmd_losses(args) -> int:
    weights = losses.LossWeights(*args.weights)
    results = []
    failures = 0
    for n, line in enumerate(_open_input(args.input), 1):
        if not line.strip():
            continue
        rid = None
        try:
            obj = json.loads(line)
            rid = obj.get("id")
            results.append(_record_losses(obj, weights))
        except (KeyError, TypeError, ValueError) as e:
            label = repr(rid) if rid is not None else f"line {n}"
            print(f"record {label}: {e}", file=sys.stderr)
            failures += 1
    aggregate = {
        "n_records": len(results),
        "mean_l_2d": float(np.mean([r["l_2d"] for r in results])) if results else None,
        "mean_l_3d": float(np.mean([r["l_3d"] for r in results])) if results else None,
        "mean_l_overall": (
            float(np.mean([r["l_overall"] for r in results])) if results else None
        ),
    }
    _write_output(
        json.dumps({"records": results, "aggregate": aggregate}, indent=2), args.out
    )
    return 1 if failures else 0


def _cmd_eval(args) -> int:
    try:
        records = eval3d.read_records(args.input)
        table = eval3d.scenario_report(records, thresholds=args.thresholds)
    except (ValueError, OSError) as e:
        print(str(e), file=sys.stderr)
        return 1
    if args.format == "csv":
        _write_output(_csv_text(table.to_csv_rows()), args.out)
    else:
        _write_output(json.dumps(table.to_dict(), indent=2), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mono3dkit",
        description="Unit-aware caption tools, embedding similarity, geometry "
        "attention, detection losses, and 3D-IoU evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="locate distance descriptors in caption JSONL")
    p.add_argument("input", help="caption JSONL path or - for stdin")
    p.add_argument("--out", help="output path (default stdout)")
    p.set_defaults(func=_cmd_scan)

    p = sub.add_parser("augment", help="randomly remap descriptor units, plan A or B")
    p.add_argument("input", help="caption JSONL path or - for stdin")
    p.add_argument("--plan", choices=[aug.PLAN_A, aug.PLAN_B], default=aug.PLAN_A)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--units", type=_units_flag, default=aug.DEFAULT_POOL,
                   help="comma-separated unit pool, e.g. m,dm,cm")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="output path (default stdout)")
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("remap", help="remap every descriptor to one fixed unit")
    p.add_argument("input", help="caption JSONL path or - for stdin")
    p.add_argument("--unit", type=parse_unit, required=True,
                   help="target unit word or code, e.g. mm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="output path (default stdout)")
    p.set_defaults(func=_cmd_remap)

    p = sub.add_parser("similarity", help="masked similarity report over bundle pairs")
    p.add_argument("--pairs", required=True, help="manifest JSONL path")
    p.add_argument("--normalize-rows", action="store_true",
                   help="L2-normalize rows before the euclidean score")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--out", help="output path (default stdout)")
    p.set_defaults(func=_cmd_similarity)

    p = sub.add_parser("tge-forward", help="project text features and cross-attend "
                       "geometry queries onto them")
    p.add_argument("--text", required=True, help="token-features .emb path")
    p.add_argument("--geometry", required=True, help="geometry-features .emb path")
    p.add_argument("--params", help="PRM1 checkpoint (default: seeded init)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--out", required=True, help="output .emb path")
    p.add_argument("--save-params", help="write the parameters used to this PRM1 path")
    p.set_defaults(func=_cmd_tge_forward)

    p = sub.add_parser("grad-check", help="verify analytic gradients against "
                       "central differences")
    p.add_argument("--ops", default="all", help="comma-separated op names or 'all'")
    p.add_argument("--seeds", type=int, default=50)
    p.add_argument("--seed", type=int, default=0, help="base seed for the cases")
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--out", help="output path (default stdout)")
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("losses", help="per-record and aggregate losses over JSONL")
    p.add_argument("input", help="prediction/target JSONL path or - for stdin")
    p.add_argument("--weights", type=lambda s: tuple(float(x) for x in s.split(",")),
                   default=(2.0, 5.0, 2.0, 10.0),
                   help="2D aggregate weights, e.g. 2,5,2,10")
    p.add_argument("--out", help="output path (default stdout)")
    p.set_defaults(func=_cmd_losses)

    p = sub.add_parser("eval", help="accuracy at IoU thresholds with scenario buckets")
    p.add_argument("input", help="scenario JSONL path")
    p.add_argument("--thresholds", type=lambda s: tuple(float(x) for x in s.split(",")),
                   default=(0.25, 0.5))
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--out", help="output path (default stdout)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("validate-emb", help="check .emb files against the format "
                       "invariants")
    p.add_argument("files", nargs="+", help=".emb paths")
    p.add_argument("--out", help="output path (default stdout)")
    p.set_defaults(func=_cmd_validate_emb)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(level=os.environ.get("MONO3DKIT_LOG", "WARNING").upper())
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
