"""Command-line interface: ``filament-eval <subcommand>``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 selftest mismatch.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import io as fio
from .metrics import THRESHOLDS
from .report import EvalReport, EvaluationError, evaluate, summarize_runs
from .skeleton import skeleton_cache
from .synth import EDGE_CASES, edge_case, random_filament_phantom
from .volume import InstanceSet, LabeledImage, Labeling

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MISMATCH = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


# -- evaluate -----------------------------------------------------------------


def _load_images(args) -> list[list[LabeledImage]]:
    """One list of labeled images per prediction directory."""
    gt_files = fio.fiv_files(args.gt)
    labeling = {}
    if args.manifest:
        rows = fio.read_manifest(args.manifest)
        if args.split:
            rows = [r for r in rows if r.split == args.split]
        for r in rows:
            if r.name not in gt_files:
                raise FileNotFoundError(f"gt image {r.name!r} listed in {args.manifest} not found in {args.gt}")
            labeling[r.name] = r.labeling
        names = [r.name for r in rows]
    else:
        if args.split:
            raise UsageError("--split needs --manifest")
        names = sorted(gt_files)
    if args.labeling:
        labeling = {n: Labeling(args.labeling) for n in names}
    if not names:
        raise FileNotFoundError(f"no images to evaluate in {args.gt}")

    dims = {}
    if args.dim:
        dims = fio.read_dim_list(args.dim)
    else:
        _warn("no dim list given; dim subset metrics are reported as absent")

    gts = {n: fio.read_fiv(gt_files[n])[1] for n in names}
    for name, ids in dims.items():
        if name in gts:
            missing = [i for i in ids if i not in gts[name]]
            if missing:
                raise ValueError(f"dim list names unknown instance ids {missing} of image {name!r}")

    runs = []
    for pred_dir in args.pred:
        pred_files = fio.fiv_files(pred_dir)
        images = []
        for n in names:
            if n not in pred_files:
                raise FileNotFoundError(f"prediction for image {n!r} missing in {pred_dir}")
            _, pred = fio.read_fiv(pred_files[n])
            images.append(
                LabeledImage(
                    n,
                    gts[n],
                    pred,
                    labeling.get(n, Labeling.COMPLETELY),
                    frozenset(dims.get(n, ())),
                )
            )
        runs.append(images)
    return runs


def cmd_evaluate(args) -> int:
    runs = _load_images(args)
    reports = [evaluate(images, workers=args.threads) for images in runs]
    report = reports[0] if len(reports) == 1 else summarize_runs(reports)
    _emit(report, args)
    return EXIT_OK


def _emit(report: EvalReport, args) -> None:
    if args.out:
        fio.write_report(report, args.out, args.format)
    else:
        sys.stdout.write(fio.render_report(report, args.format))


# -- synth --------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    if args.random is not None:
        phantoms = [
            random_filament_phantom(
                seed, n_instances=args.n_instances, overlap_prob=args.overlap_prob, max_preds=args.max_preds
            )
            for seed in args.random
        ]
    else:
        names = EDGE_CASES if args.case in (None, ["all"]) else args.case
        for n in names:
            if n not in EDGE_CASES:
                raise UsageError(f"unknown edge case {n!r}; choose from {', '.join(EDGE_CASES)} or all")
        phantoms = [edge_case(n) for n in names]
    (out / "gt").mkdir(parents=True, exist_ok=True)
    (out / "pred").mkdir(parents=True, exist_ok=True)
    expectations = {}
    for ph in phantoms:
        fio.write_fiv(out / "gt" / f"{ph.image.name}.fiv", ph.image.gt)
        fio.write_fiv(out / "pred" / f"{ph.image.name}.fiv", ph.image.pred)
        entry = {k: {"value": v, "tol": t} for k, (v, t) in sorted(ph.expected.items())}
        if ph.f1_row is not None:
            entry["f1"] = {"value": list(ph.f1_row), "tol": 0.01}
        expectations[ph.image.name] = entry
    with open(out / "expectations.json", "w") as fh:
        json.dump(expectations, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(phantoms)} gt/pred pairs to {out}")
    return EXIT_OK


# -- selftest -----------------------------------------------------------------


def run_selftest(perturb: float = 0.0, workers: int | None = 1) -> list[tuple[str, str, float, float, float, bool]]:
    """Evaluate every edge case; rows are (case, metric, value, expected, tol, ok)."""
    rows = []
    for name in EDGE_CASES:
        ph = edge_case(name)
        scores = evaluate([ph.image], workers=workers).per_split["completely"]
        for metric, (want, tol) in sorted(ph.expected.items()):
            got = getattr(scores, metric)
            want = want + perturb
            rows.append((name, metric, float(got), float(want), tol, abs(got - want) <= tol))
        if ph.f1_row is not None:
            for th, got, want in zip(THRESHOLDS, scores.f1, ph.f1_row):
                want = want + perturb
                rows.append((name, f"F1@{th}", got, want, 0.01, abs(got - want) <= 0.01))
    return rows


def cmd_selftest(args) -> int:
    start = time.perf_counter()
    rows = run_selftest(args.perturb, workers=args.threads)
    elapsed = time.perf_counter() - start
    print(f"{'case':<5} {'metric':<10} {'value':>9} {'expected':>9} {'tol':>7}  result")
    for name, metric, got, want, tol, ok in rows:
        print(f"{name:<5} {metric:<10} {got:>9.4f} {want:>9.4f} {tol:>7.0e}  {'pass' if ok else 'FAIL'}")
    failed = sum(not r[-1] for r in rows)
    print(f"{len(rows) - failed}/{len(rows)} checks passed in {elapsed:.2f} s")
    return EXIT_OK if failed == 0 else EXIT_MISMATCH


# -- skeletonize / convert ----------------------------------------------------


def cmd_skeletonize(args) -> int:
    shape, instances = fio.read_fiv(args.input)
    if not len(instances):
        raise ValueError(f"{args.input}: file holds no instances")
    skels = skeleton_cache(instances, workers=args.threads)
    fio.write_fiv(args.out, InstanceSet(shape, {k: skels[k].mask for k in instances}))
    return EXIT_OK


def cmd_convert(args) -> int:
    image = fio.read_dataset_container(args.input)
    fio.write_fiv(args.out, image.gt, image.raw_channels)
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="filament-eval", description="Evaluate 3D instance segmentations of thin filaments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def threads(p):
        p.add_argument(
            "--threads", type=int, default=os.cpu_count() or 1, help="parallel image workers (default: all cores)"
        )

    p = sub.add_parser("evaluate", help="evaluate prediction directories against gt")
    p.add_argument("--gt", required=True, help="directory of gt .fiv files")
    p.add_argument("--pred", required=True, nargs="+", help="one directory of prediction .fiv files per run")
    p.add_argument("--manifest", help="CSV name,split,labeling")
    p.add_argument("--split", choices=("train", "val", "test"), help="restrict to one manifest split")
    p.add_argument("--labeling", choices=[m.value for m in Labeling], help="override every image's labeling")
    p.add_argument("--dim", help="CSV name,instance_id listing dim gt instances")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--format", choices=("json", "csv", "md"), default="json")
    threads(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="write edge-case or random phantoms as FIV pairs")
    p.add_argument("--out", required=True, help="output directory")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--case", nargs="+", help="edge cases a..i or 'all' (default: all)")
    g.add_argument("--random", nargs="+", type=int, metavar="SEED", help="random phantoms for these seeds")
    p.add_argument("--n-instances", type=int, default=3)
    p.add_argument("--overlap-prob", type=float, default=0.0)
    p.add_argument("--max-preds", type=int, default=4)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("selftest", help="evaluate all edge cases against their expectations")
    p.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)
    threads(p)
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("skeletonize", help="thin every instance of a FIV file")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    threads(p)
    p.set_defaults(func=cmd_skeletonize)

    p = sub.add_parser("convert", help="convert a dataset container to FIV")
    p.add_argument("input", help="container directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (OSError, ValueError, EvaluationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
