"""Centerline localization scores between predicted and ground-truth instances."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

from .skeleton import Skeleton, skeleton_cache
from .volume import LabeledImage, VoxelMask


class _Background:
    """Sentinel target standing for the background of an instance set."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "BG"

    def __reduce__(self):
        return (_Background, ())


BG = _Background()


def cl_precision(p: VoxelMask, target: VoxelMask, skel_p: Skeleton) -> float:
    """Fraction of the skeleton of ``p`` lying inside ``target``."""
    return skel_p.mask.intersect_count(target) / skel_p.count


def cl_recall(g: VoxelMask, target: VoxelMask, skel_g: Skeleton) -> float:
    """Fraction of the skeleton of ``g`` covered by ``target``."""
    return skel_g.mask.intersect_count(target) / skel_g.count


def harmonic(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def cl_dice(g: VoxelMask, p: VoxelMask, skel_g: Skeleton, skel_p: Skeleton) -> float:
    return harmonic(cl_precision(p, g, skel_p), cl_recall(g, p, skel_g))


@dataclass(frozen=True)
class PairTable:
    """All pairwise scores of one image.

    ``cl_precision`` is keyed ``(pred, gt or BG)``, ``cl_recall`` is keyed
    ``(gt, pred or BG)`` and ``cl_dice`` ``(gt, pred)``. The background is
    never skeletonized, so it only ever appears as a target.
    """

    image: LabeledImage
    gt_ids: tuple
    pred_ids: tuple
    cl_precision: Mapping
    cl_recall: Mapping
    cl_dice: Mapping


def build_pair_table(
    img: LabeledImage,
    gt_skels: Mapping[object, Skeleton] | None = None,
    pred_skels: Mapping[object, Skeleton] | None = None,
) -> PairTable:
    if img.pred is None:
        raise ValueError(f"{img.name}: image has no prediction")
    gt, pred = img.gt, img.pred
    if gt_skels is None:
        gt_skels = skeleton_cache(gt)
    if pred_skels is None:
        pred_skels = skeleton_cache(pred)
    gt_ids = tuple(gt.canonical_ids)
    pred_ids = tuple(pred.canonical_ids)

    prec, rec, dice = {}, {}, {}
    # the background is the complement of the union, so count hits on the union
    gt_union = gt.union()
    pred_union = pred.union()
    for p in pred_ids:
        sp = pred_skels[p]
        for g in gt_ids:
            prec[p, g] = cl_precision(pred[p], gt[g], sp)
        prec[p, BG] = (sp.count - sp.mask.intersect_count(gt_union)) / sp.count
    for g in gt_ids:
        sg = gt_skels[g]
        for p in pred_ids:
            rec[g, p] = cl_recall(gt[g], pred[p], sg)
        rec[g, BG] = (sg.count - sg.mask.intersect_count(pred_union)) / sg.count
        for p in pred_ids:
            dice[g, p] = harmonic(prec[p, g], rec[g, p])
    return PairTable(img, gt_ids, pred_ids, prec, rec, dice)
