"""Greedy matching schemes: one-to-one, one-to-many (coverage) and many-to-many.

Ties between equal scores are broken by the canonical instance order of
:attr:`InstanceSet.canonical_ids`, gt first, then prediction. That order
depends on mask geometry rather than on id values, so every matching is
deterministic and relabeling instances only renames the matched pairs.
"""

from __future__ import annotations

import hashlib
import heapq
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from .localize import BG, PairTable, harmonic
from .skeleton import Skeleton, skeleton_cache, skeletonize
from .volume import LabeledImage, id_sort_key

FS_THRESHOLD = 0.05
FM_THRESHOLD = 0.1


@dataclass(frozen=True)
class OneToOneMatching:
    """Matched ``(pred id, gt id, clDice)`` triples in acceptance order."""

    pairs: tuple

    def scores(self) -> list[float]:
        return [s for _, _, s in self.pairs]

    def gt_scores(self) -> dict:
        return {g: s for _, g, s in self.pairs}

    def as_set(self) -> frozenset:
        return frozenset(self.pairs)


@dataclass(frozen=True)
class CoverageMatching:
    """Each prediction assigned to one gt id or to ``BG``."""

    assignment: Mapping

    def preds_of(self, gt_id) -> list:
        return [p for p, g in self.assignment.items() if g == gt_id]


@dataclass(frozen=True)
class ManyToManyMatching:
    pairs: frozenset
    threshold: float
    trace: tuple = ()

    def count_per_gt(self) -> dict:
        out: dict = {}
        for g, _ in self.pairs:
            out[g] = out.get(g, 0) + 1
        return out

    def count_per_pred(self) -> dict:
        out: dict = {}
        for _, p in self.pairs:
            out[p] = out.get(p, 0) + 1
        return out


def greedy_one_to_one(table: PairTable) -> OneToOneMatching:
    gt_rank = {g: i for i, g in enumerate(table.gt_ids)}
    pred_rank = {p: i for i, p in enumerate(table.pred_ids)}
    order = sorted(table.cl_dice.items(), key=lambda kv: (-kv[1], gt_rank[kv[0][0]], pred_rank[kv[0][1]]))
    used_gt, used_pred, pairs = set(), set(), []
    for (g, p), score in order:
        if score <= 0:
            break
        if g in used_gt or p in used_pred:
            continue
        used_gt.add(g)
        used_pred.add(p)
        pairs.append((p, g, score))
    return OneToOneMatching(tuple(pairs))


def coverage_assign(table: PairTable) -> CoverageMatching:
    """Assign each prediction to its highest-clPrecision target.

    Foreground wins ties against the background; among gt instances the
    one first in canonical order wins.
    """
    assignment = {}
    for p in table.pred_ids:
        best, best_score = BG, table.cl_precision[p, BG]
        fg_best, fg_score = None, -1.0
        for g in table.gt_ids:
            s = table.cl_precision[p, g]
            if s > fg_score:
                fg_best, fg_score = g, s
        if fg_best is not None and fg_score >= best_score:
            best = fg_best
        assignment[p] = best
    return CoverageMatching(assignment)


def greedy_many_to_many(
    img: LabeledImage,
    gt_skels: Mapping[object, Skeleton] | None = None,
    threshold: float = FM_THRESHOLD,
) -> ManyToManyMatching:
    """Greedy many-to-many matching on clRecall with free-voxel bookkeeping.

    Matching ``(g, p)`` removes ``p`` from the free skeleton voxels of ``g``
    and ``g`` from the free voxels of ``p``. Remaining scores of the same gt
    are recomputed from the free skeleton of ``g`` against full predictions;
    those of the same prediction from full gt skeletons against the free
    voxels of ``p``. The most recent update of a pair defines its score.

    Scores never rise above their initial value, so pairs starting at or
    below ``threshold`` are never matched and are not tracked.
    """
    if img.pred is None:
        raise ValueError(f"{img.name}: image has no prediction")
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    gt, pred = img.gt, img.pred
    if gt_skels is None:
        gt_skels = skeleton_cache(gt)
    gt_ids, pred_ids = gt.canonical_ids, pred.canonical_ids
    g_free = {g: gt_skels[g].mask for g in gt_ids}
    p_free = {p: pred[p] for p in pred_ids}
    size = {g: gt_skels[g].count for g in gt_ids}

    score, version, heap = {}, {}, []
    by_gt: dict = {g: set() for g in gt_ids}
    by_pred: dict = {p: set() for p in pred_ids}
    for gi, g in enumerate(gt_ids):
        for pi, p in enumerate(pred_ids):
            v = g_free[g].intersect_count(pred[p]) / size[g]
            if v > threshold:
                score[g, p] = v
                version[g, p] = 0
                by_gt[g].add(p)
                by_pred[p].add(g)
                heap.append((-v, gi, pi, 0, g, p))
    heapq.heapify(heap)
    gt_rank = {g: i for i, g in enumerate(gt_ids)}
    pred_rank = {p: i for i, p in enumerate(pred_ids)}

    def push(g, p, v):
        score[g, p] = v
        version[g, p] += 1
        heapq.heappush(heap, (-v, gt_rank[g], pred_rank[p], version[g, p], g, p))

    pairs, trace = set(), []
    while heap:
        neg, _, _, ver, g, p = heapq.heappop(heap)
        if (g, p) not in score or version[g, p] != ver:
            continue
        if -neg <= threshold:
            break
        del score[g, p]
        by_gt[g].discard(p)
        by_pred[p].discard(g)
        pairs.add((g, p))
        trace.append((g, p, -neg))
        g_free[g] = g_free[g] - pred[p]
        p_free[p] = p_free[p] - gt[g]
        for n in by_gt[g]:
            push(g, n, g_free[g].intersect_count(pred[n]) / size[g])
        for m in by_pred[p]:
            push(m, p, gt_skels[m].mask.intersect_count(p_free[p]) / size[m])
    return ManyToManyMatching(frozenset(pairs), threshold, tuple(trace))


# -- brute-force oracle -------------------------------------------------------

ORACLE_MAX_INSTANCES = 4
ORACLE_MAX_EXTENT = 16


def brute_force_matching_oracle(img: LabeledImage, scheme: str, threshold: float | None = None):
    """Naive re-scan implementation of every matching scheme for tiny images.

    Works on dense full-grid arrays, recomputes every score from scratch and
    finds each greedy step by scanning all candidate pairs. ``scheme`` is one
    of ``"one_to_one"``, ``"coverage"`` or ``"many_to_many"``.
    """
    gt, pred = img.gt, img.pred
    if pred is None:
        raise ValueError(f"{img.name}: image has no prediction")
    if len(gt) > ORACLE_MAX_INSTANCES or len(pred) > ORACLE_MAX_INSTANCES:
        raise ValueError("oracle is limited to 4 gt and 4 predicted instances")
    if max(gt.shape) > ORACLE_MAX_EXTENT:
        raise ValueError("oracle is limited to grids of at most 16^3 voxels")

    G = {g: gt[g].to_dense() for g in gt}
    P = {p: pred[p].to_dense() for p in pred}
    gts = sorted(gt, key=lambda g: (_dense_key(G[g]), id_sort_key(g)))
    preds = sorted(pred, key=lambda p: (_dense_key(P[p]), id_sort_key(p)))
    SG = {g: skeletonize(gt[g]).mask.to_dense() for g in gts}

    if scheme == "many_to_many":
        if threshold is None:
            raise ValueError("many_to_many needs a threshold")
        return _oracle_many_to_many(gts, preds, G, P, SG, threshold)

    SP = {p: skeletonize(pred[p]).mask.to_dense() for p in preds}

    def prec(p, target):
        return np.logical_and(SP[p], target).sum() / SP[p].sum()

    def rec(g, target):
        return np.logical_and(SG[g], target).sum() / SG[g].sum()

    if scheme == "coverage":
        background = ~np.any([G[g] for g in gts], axis=0) if gts else np.ones(gt.shape, dtype=bool)
        assignment = {}
        for p in preds:
            options = [(prec(p, G[g]), 1, -i, g) for i, g in enumerate(gts)]
            options.append((prec(p, background), 0, 0, BG))
            assignment[p] = max(options, key=lambda o: o[:3])[3]
        return CoverageMatching(assignment)

    if scheme == "one_to_one":
        dice = {(g, p): harmonic(prec(p, G[g]), rec(g, P[p])) for g in gts for p in preds}
        pairs = []
        free_g, free_p = set(gts), set(preds)
        while True:
            best = None
            for gi, g in enumerate(gts):
                for pi, p in enumerate(preds):
                    if g in free_g and p in free_p and dice[g, p] > 0:
                        key = (dice[g, p], -gi, -pi)
                        if best is None or key > best[0]:
                            best = (key, g, p)
            if best is None:
                break
            _, g, p = best
            free_g.discard(g)
            free_p.discard(p)
            pairs.append((p, g, dice[g, p]))
        return OneToOneMatching(tuple(pairs))

    raise ValueError(f"unknown matching scheme {scheme!r}")


def _dense_key(a: np.ndarray) -> tuple:
    lin = np.flatnonzero(a).astype(">i8")
    return int(lin[0]), len(lin), hashlib.blake2b(lin.tobytes(), digest_size=16).digest()


def _oracle_many_to_many(gts, preds, G, P, SG, threshold):
    g_free = {g: SG[g].copy() for g in gts}
    p_free = {p: P[p].copy() for p in preds}
    clr = {(g, p): np.logical_and(SG[g], P[p]).sum() / SG[g].sum() for g in gts for p in preds}
    pairs, trace = set(), []
    while clr:
        top = max(clr, key=lambda k: (clr[k], -gts.index(k[0]), -preds.index(k[1])))
        value = clr[top]
        if not value > threshold:
            break
        g, p = top
        del clr[top]
        pairs.add((g, p))
        trace.append((g, p, value))
        g_free[g] &= ~P[p]
        p_free[p] &= ~G[g]
        for gm, pn in list(clr):
            if gm == g:
                clr[gm, pn] = np.logical_and(g_free[gm], P[pn]).sum() / SG[gm].sum()
            if pn == p:
                clr[gm, pn] = np.logical_and(SG[gm], p_free[pn]).sum() / SG[gm].sum()
    return ManyToManyMatching(frozenset(pairs), threshold, tuple(trace))
