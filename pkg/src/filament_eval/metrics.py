"""Scalar metrics and their pooling over the images of a split."""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, fields, replace

from .localize import BG, cl_recall
from .matching import (
    FM_THRESHOLD,
    FS_THRESHOLD,
    CoverageMatching,
    ManyToManyMatching,
    OneToOneMatching,
)
from .skeleton import Skeleton
from .volume import LabeledImage, union_all

THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
TP_THRESHOLD = 0.5


def f1_score(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


@dataclass(frozen=True)
class ThresholdSweep:
    thresholds: tuple
    tp: tuple
    fp: tuple
    fn: tuple

    @property
    def f1(self) -> tuple:
        return tuple(f1_score(*c) for c in zip(self.tp, self.fp, self.fn))

    @property
    def av_f1(self) -> float:
        return sum(self.f1) / len(self.thresholds)

    def at(self, th: float) -> tuple[int, int, int]:
        i = self.thresholds.index(th)
        return self.tp[i], self.fp[i], self.fn[i]


def tp_counts(matching: OneToOneMatching, thresholds=THRESHOLDS) -> tuple:
    scores = matching.scores()
    return tuple(sum(s > th for s in scores) for th in thresholds)


def _sweep(per_image_tp, per_image_fp, per_image_fn, thresholds) -> ThresholdSweep:
    n = len(thresholds)
    tp = [0] * n
    fp = [0] * n
    fn = [0] * n
    for a, b, c in zip(per_image_tp, per_image_fp, per_image_fn):
        for i in range(n):
            tp[i] += a[i]
            fp[i] += b[i]
            fn[i] += c[i]
    return ThresholdSweep(tuple(thresholds), tuple(tp), tuple(fp), tuple(fn))


def av_f1(images: Sequence[tuple[LabeledImage, OneToOneMatching]], thresholds=THRESHOLDS) -> ThresholdSweep:
    """F1 sweep with TP/FP/FN pooled over all images (completely labeled)."""
    tps, fps, fns = [], [], []
    for img, matching in images:
        tp = tp_counts(matching, thresholds)
        n_pred = len(img.pred) if img.pred is not None else 0
        tps.append(tp)
        fps.append(tuple(n_pred - t for t in tp))
        fns.append(tuple(len(img.gt) - t for t in tp))
    return _sweep(tps, fps, fns, thresholds)


def fp_partly_counts(matching: OneToOneMatching, coverage: CoverageMatching, thresholds=THRESHOLDS) -> tuple:
    """Per threshold, predictions that are not true positives yet lie mainly inside a gt instance."""
    score = {p: s for p, _, s in matching.pairs}
    out = []
    for th in thresholds:
        out.append(
            sum(1 for p, target in coverage.assignment.items() if target is not BG and not score.get(p, 0.0) > th)
        )
    return tuple(out)


def av_f1_partly(
    images: Sequence[tuple[LabeledImage, OneToOneMatching, CoverageMatching]], thresholds=THRESHOLDS
) -> ThresholdSweep:
    """F1 sweep for partly labeled images, with FP replaced by the in-gt false positives."""
    tps, fps, fns = [], [], []
    for img, matching, coverage in images:
        tp = tp_counts(matching, thresholds)
        tps.append(tp)
        fps.append(fp_partly_counts(matching, coverage, thresholds))
        fns.append(tuple(len(img.gt) - t for t in tp))
    return _sweep(tps, fps, fns, thresholds)


def gt_coverage(img: LabeledImage, coverage: CoverageMatching, gt_skels: Mapping[object, Skeleton]) -> dict:
    """clRecall of every gt instance against the union of its assigned predictions."""
    out = {}
    for g in img.gt.sorted_ids:
        assigned = [img.pred[p] for p in coverage.preds_of(g)]
        if not assigned:
            out[g] = 0.0
            continue
        out[g] = cl_recall(img.gt[g], union_all(img.gt.shape, assigned), gt_skels[g])
    return out


def coverage_C(coverages: Iterable[Mapping]) -> float:
    values = [v for cov in coverages for v in cov.values()]
    return math.fsum(values) / len(values) if values else 0.0


def false_splits(matchings: Iterable[ManyToManyMatching]) -> int:
    total = 0
    for m in matchings:
        if m.threshold != FS_THRESHOLD:
            raise ValueError(f"false splits need a matching at threshold {FS_THRESHOLD}, got {m.threshold}")
        total += sum(max(n - 1, 0) for n in m.count_per_gt().values())
    return total


def false_merges(matchings: Iterable[ManyToManyMatching]) -> int:
    total = 0
    for m in matchings:
        if m.threshold != FM_THRESHOLD:
            raise ValueError(f"false merges need a matching at threshold {FM_THRESHOLD}, got {m.threshold}")
        total += sum(max(n - 1, 0) for n in m.count_per_pred().values())
    return total


def cl_dice_tp(matchings: Iterable[OneToOneMatching]) -> float:
    scores = [s for m in matchings for s in m.scores() if s > TP_THRESHOLD]
    return math.fsum(scores) / len(scores) if scores else 0.0


def subset_metrics(
    entries: Iterable[tuple[Iterable, Mapping, OneToOneMatching]],
) -> tuple[float | None, float | None]:
    """Coverage and relative TP count restricted to a subset of gt instances.

    Each entry holds the subset ids of one image, that image's per-gt
    coverage and its (global) one-to-one matching. Returns ``(None, None)``
    when no image has a subset member.
    """
    cov_values, n, hits = [], 0, 0
    for ids, coverage, matching in entries:
        ids = set(ids)
        matched = matching.gt_scores()
        for g in ids:
            cov_values.append(coverage[g])
            n += 1
            hits += matched.get(g, 0.0) > TP_THRESHOLD
    if not n:
        return None, None
    return math.fsum(cov_values) / n, hits / n


def score_S(av_f1: float, c: float) -> float:
    return 0.5 * av_f1 + 0.5 * c


@dataclass(frozen=True)
class SplitScores:
    S: float
    avF1: float
    C: float
    clDice_TP: float
    FS: int
    FM: int
    TP: int
    FP: int
    FN: int
    f1: tuple
    tp: float | None = None
    C_dim: float | None = None
    C_ovlp: float | None = None
    tp_dim: float | None = None
    tp_ovlp: float | None = None

    NORMALIZED = ("S", "avF1", "C", "clDice_TP", "tp", "C_dim", "C_ovlp", "tp_dim", "tp_ovlp")
    COUNTS = ("FS", "FM", "TP", "FP", "FN")

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["f1"] = list(self.f1)
        return out


def _mean_or_pass(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return (a + b) / 2


def aggregate_combined(completely: SplitScores, partly: SplitScores) -> SplitScores:
    """Average normalized measures, sum counting measures."""
    values = {name: _mean_or_pass(getattr(completely, name), getattr(partly, name)) for name in SplitScores.NORMALIZED}
    counts = {name: getattr(completely, name) + getattr(partly, name) for name in SplitScores.COUNTS}
    f1 = tuple((a + b) / 2 for a, b in zip(completely.f1, partly.f1))
    return replace(completely, **values, **counts, f1=f1)
