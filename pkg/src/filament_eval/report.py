"""Per-image evaluation, split pooling and multi-run summaries."""

from __future__ import annotations

import statistics
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import metrics as M
from .localize import PairTable, build_pair_table
from .matching import (
    FM_THRESHOLD,
    FS_THRESHOLD,
    CoverageMatching,
    ManyToManyMatching,
    OneToOneMatching,
    coverage_assign,
    greedy_many_to_many,
    greedy_one_to_one,
)
from .skeleton import skeleton_cache
from .volume import InstanceSet, LabeledImage, Labeling, overlapping_gt_ids

SPLITS = ("completely", "partly", "combined")


class EvaluationError(RuntimeError):
    """An image could not be evaluated; the message names the image."""


@dataclass(frozen=True)
class ImageEvaluation:
    image: LabeledImage
    table: PairTable
    one_to_one: OneToOneMatching
    coverage: CoverageMatching
    gt_coverage: dict
    fs_matching: ManyToManyMatching
    fm_matching: ManyToManyMatching
    ovlp_ids: frozenset

    @property
    def partly(self) -> bool:
        return self.image.labeling is Labeling.PARTLY

    def tp(self) -> tuple:
        return M.tp_counts(self.one_to_one)

    def fp(self) -> tuple:
        if self.partly:
            return M.fp_partly_counts(self.one_to_one, self.coverage)
        return tuple(len(self.image.pred) - t for t in self.tp())

    def fn(self) -> tuple:
        return tuple(len(self.image.gt) - t for t in self.tp())

    def row(self) -> dict:
        """Raw per-image counts, enough to re-pool any split."""
        img = self.image
        return {
            "labeling": img.labeling.value,
            "n_gt": len(img.gt),
            "n_pred": len(img.pred),
            "tp": list(self.tp()),
            "fp": list(self.fp()),
            "fn": list(self.fn()),
            "FS": M.false_splits([self.fs_matching]),
            "FM": M.false_merges([self.fm_matching]),
            "gt_coverage": {str(g): v for g, v in self.gt_coverage.items()},
            "dim_ids": [str(g) for g in img.gt.sorted_ids if g in img.dim_ids],
            "ovlp_ids": [str(g) for g in img.gt.sorted_ids if g in self.ovlp_ids],
        }


def evaluate_image(img: LabeledImage) -> ImageEvaluation:
    try:
        pred = img.pred if img.pred is not None else InstanceSet(img.gt.shape)
        img = img.with_pred(pred)
        gt_skels = skeleton_cache(img.gt)
        pred_skels = skeleton_cache(img.pred)
        table = build_pair_table(img, gt_skels, pred_skels)
        coverage = coverage_assign(table)
        return ImageEvaluation(
            image=img,
            table=table,
            one_to_one=greedy_one_to_one(table),
            coverage=coverage,
            gt_coverage=M.gt_coverage(img, coverage, gt_skels),
            fs_matching=greedy_many_to_many(img, gt_skels, FS_THRESHOLD),
            fm_matching=greedy_many_to_many(img, gt_skels, FM_THRESHOLD),
            ovlp_ids=frozenset(overlapping_gt_ids(img.gt)),
        )
    except EvaluationError:
        raise
    except Exception as exc:
        raise EvaluationError(f"image {img.name!r}: {exc}") from exc


def evaluate_images(images: Sequence[LabeledImage], workers: int | None = 1) -> list[ImageEvaluation]:
    """Evaluate images (possibly in parallel); the result is sorted by image name."""
    images = sorted(images, key=lambda im: im.name)
    names = [im.name for im in images]
    if len(set(names)) != len(names):
        raise EvaluationError("image names must be unique")
    if workers == 1 or len(images) < 2:
        return [evaluate_image(im) for im in images]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(evaluate_image, images))


def split_scores(evals: Sequence[ImageEvaluation]) -> M.SplitScores:
    labelings = {e.image.labeling for e in evals}
    if len(labelings) > 1:
        raise EvaluationError("a split must not mix completely and partly labeled images")
    partly = labelings == {Labeling.PARTLY}
    if partly:
        sweep = M.av_f1_partly([(e.image, e.one_to_one, e.coverage) for e in evals])
    else:
        sweep = M.av_f1([(e.image, e.one_to_one) for e in evals])
    avf1 = sweep.av_f1
    c = M.coverage_C(e.gt_coverage for e in evals)
    tp, fp, fn = sweep.at(M.TP_THRESHOLD)
    n_gt = sum(len(e.image.gt) for e in evals)
    c_dim, tp_dim = M.subset_metrics((e.image.dim_ids, e.gt_coverage, e.one_to_one) for e in evals)
    c_ovlp, tp_ovlp = M.subset_metrics((e.ovlp_ids, e.gt_coverage, e.one_to_one) for e in evals)
    return M.SplitScores(
        S=M.score_S(avf1, c),
        avF1=avf1,
        C=c,
        clDice_TP=M.cl_dice_tp(e.one_to_one for e in evals),
        FS=M.false_splits(e.fs_matching for e in evals),
        FM=M.false_merges(e.fm_matching for e in evals),
        TP=tp,
        FP=fp,
        FN=fn,
        f1=sweep.f1,
        tp=tp / n_gt if n_gt else None,
        C_dim=c_dim,
        C_ovlp=c_ovlp,
        tp_dim=tp_dim,
        tp_ovlp=tp_ovlp,
    )


def evaluate_split(images: Sequence[LabeledImage], workers: int | None = 1) -> M.SplitScores:
    """All split-level metrics for images sharing one labeling mode."""
    return split_scores(evaluate_images(images, workers))


@dataclass
class EvalReport:
    per_image: dict = field(default_factory=dict)
    per_split: dict = field(default_factory=dict)
    runs: list = field(default_factory=list)
    summary: dict | None = None

    def to_dict(self) -> dict:
        out = {
            "per_image": self.per_image,
            "per_split": {k: (v.as_dict() if v is not None else None) for k, v in self.per_split.items()},
        }
        if self.runs:
            out["runs"] = [r.to_dict() for r in self.runs]
        if self.summary is not None:
            out["summary"] = self.summary
        return out


def evaluate(images: Sequence[LabeledImage], workers: int | None = 1) -> EvalReport:
    """Evaluate a mixed set of images into completely, partly and combined scores."""
    evals = evaluate_images(images, workers)
    groups = {
        "completely": [e for e in evals if not e.partly],
        "partly": [e for e in evals if e.partly],
    }
    per_split = {k: (split_scores(v) if v else None) for k, v in groups.items()}
    a, b = per_split["completely"], per_split["partly"]
    if a is not None and b is not None:
        per_split["combined"] = M.aggregate_combined(a, b)
    else:
        per_split["combined"] = a if a is not None else b
    return EvalReport(per_image={e.image.name: e.row() for e in evals}, per_split=per_split)


def _flatten(scores: M.SplitScores) -> dict:
    d = scores.as_dict()
    f1 = d.pop("f1")
    for th, v in zip(M.THRESHOLDS, f1):
        d[f"F1_{th}"] = v
    return d


def summarize_runs(reports: Sequence[EvalReport]) -> EvalReport:
    """Mean and sample standard deviation of every metric across runs."""
    reports = list(reports)
    if not reports:
        raise ValueError("no runs to summarize")
    names = set(reports[0].per_image)
    for r in reports[1:]:
        if set(r.per_image) != names:
            raise ValueError("runs cover different image sets")
    if len(reports) == 1:
        return reports[0]
    summary = {}
    for split in SPLITS:
        present = [r.per_split.get(split) for r in reports]
        if any(s is None for s in present):
            summary[split] = None
            continue
        flat = [_flatten(s) for s in present]
        entry = {}
        for key in flat[0]:
            vals = [f[key] for f in flat]
            if any(v is None for v in vals):
                entry[key] = None
            else:
                entry[key] = {"mean": statistics.fmean(vals), "std": statistics.stdev(vals)}
        summary[split] = entry
    return EvalReport(runs=reports, summary=summary)
