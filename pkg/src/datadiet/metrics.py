"""Per-sample segmentation measurements: Dice, loss, FP and FN volume.

FP/FN volumes are component-wise: a predicted lesion only counts as a false
positive when it overlaps no ground-truth voxel, and a ground-truth lesion
only counts as a false negative when the prediction misses it entirely.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator

import numba
import numpy as np

from .errors import OutOfRangeProbabilityError, ShapeMismatchError
from .labeling import connected_components
from .volume import VoxelGrid

LOSS_FORMULA = "soft_dice+bce"
DEFAULT_SMOOTH = 1e-5
DEFAULT_EPS = 1e-7
DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class MetricReport:
    sample_id: str
    dice: float
    loss: float
    fpv_ml: float
    fnv_ml: float
    threshold: float = DEFAULT_THRESHOLD
    loss_formula: str = LOSS_FORMULA

    def __post_init__(self):
        if not 0.0 <= self.dice <= 1.0:
            raise ValueError(f"dice {self.dice} outside [0, 1]")
        if self.fpv_ml < 0 or self.fnv_ml < 0:
            raise ValueError("volumes must be non-negative")
        if not math.isfinite(self.loss):
            raise ValueError(f"loss {self.loss} is not finite")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> MetricReport:
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def write_reports(reports: Iterable[MetricReport], path) -> int:
    n = 0
    with open(path, "w") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_dict(), sort_keys=False) + "\n")
            n += 1
    return n


def read_reports(path) -> Iterator[MetricReport]:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield MetricReport.from_dict(json.loads(line))


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, VoxelGrid) else np.asarray(x)


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shapes differ: {a.shape} vs {b.shape}")


def _paired_flat(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flatten two same-shaped arrays in a common voxel order, copying only if needed."""
    if a.flags.c_contiguous and b.flags.c_contiguous:
        return a.reshape(-1), b.reshape(-1)
    return a.ravel(order="F"), b.ravel(order="F")


def _resolve_spacing(spacing, *grids) -> tuple[float, float, float]:
    if spacing is not None:
        return tuple(float(s) for s in spacing)
    for g in grids:
        if isinstance(g, VoxelGrid):
            return g.spacing
    return (1.0, 1.0, 1.0)


def dice_score(pred, gt) -> float:
    """``2|P & G| / (|P| + |G|)``; two empty masks score 1.0."""
    p, g = _arr(pred).astype(bool, copy=False), _arr(gt).astype(bool, copy=False)
    _check_shapes(p, g)
    n_p = int(np.count_nonzero(p))
    n_g = int(np.count_nonzero(g))
    if n_p + n_g == 0:
        return 1.0
    inter = int(np.count_nonzero(np.logical_and(p, g)))
    return 2.0 * inter / (n_p + n_g)


@numba.njit(cache=True, nogil=True)
def _loss_sums(prob, gt, eps):
    s_pg = 0.0
    s_p = 0.0
    s_g = 0.0
    s_bce = 0.0
    bad = -1
    for i in range(prob.size):
        p = float(prob[i])
        if not (p >= 0.0 and p <= 1.0):
            bad = i
            break
        if gt[i]:
            s_pg += p
            s_g += 1.0
            s_bce += math.log(p + eps)
        else:
            s_bce += math.log(1.0 - p + eps)
        s_p += p
    return s_pg, s_p, s_g, s_bce, bad


def dice_ce_loss(prob, gt, smooth: float = DEFAULT_SMOOTH, eps: float = DEFAULT_EPS) -> float:
    """Soft-Dice plus binary cross-entropy of a probability map against a mask.

    ``loss = 1 - (2 sum(p g) + smooth) / (sum(p) + sum(g) + smooth) + bce`` with
    ``bce = -mean(g log(p + eps) + (1 - g) log(1 - p + eps))``.  The BCE term is
    floored at zero, which only matters for exact 0/1 predictions where
    ``log(1 + eps)`` is positive.
    """
    p = _arr(prob)
    g = _arr(gt).astype(bool, copy=False)
    _check_shapes(p, g)
    pf, gf = _paired_flat(p, g)
    s_pg, s_p, s_g, s_bce, bad = _loss_sums(pf, gf, eps)
    if bad >= 0:
        raise OutOfRangeProbabilityError(f"probability {pf[bad]!r} outside [0, 1]")
    soft_dice = 1.0 - (2.0 * s_pg + smooth) / (s_p + s_g + smooth)
    bce = max(-s_bce / pf.size, 0.0)
    return soft_dice + bce


def _missed_voxels(mask: np.ndarray, other: np.ndarray, connectivity: int) -> int:
    """Voxels of ``mask`` components that share no voxel with ``other``."""
    _check_shapes(mask, other)
    cc = connected_components(mask, connectivity)
    if cc.component_count == 0:
        return 0
    touched = cc.components_touching(other)
    return int(cc.component_sizes[~touched].sum())


def false_positive_voxels(pred, gt, connectivity: int = 26) -> int:
    return _missed_voxels(_arr(pred), _arr(gt), connectivity)


def false_negative_voxels(pred, gt, connectivity: int = 26) -> int:
    return _missed_voxels(_arr(gt), _arr(pred), connectivity)


def false_positive_volume(pred, gt, spacing=None, connectivity: int = 26) -> float:
    """Volume in mL of predicted components that do not touch the ground truth.

    ``spacing`` defaults to the spacing of ``pred`` (or ``gt``) when grids
    are passed.
    """
    sx, sy, sz = _resolve_spacing(spacing, pred, gt)
    return false_positive_voxels(pred, gt, connectivity) * sx * sy * sz / 1000.0


def false_negative_volume(pred, gt, spacing=None, connectivity: int = 26) -> float:
    """Volume in mL of ground-truth components the prediction misses entirely."""
    sx, sy, sz = _resolve_spacing(spacing, gt, pred)
    return false_negative_voxels(pred, gt, connectivity) * sx * sy * sz / 1000.0


def evaluate_sample(
    pred_prob,
    gt,
    spacing=None,
    threshold: float = DEFAULT_THRESHOLD,
    sample_id: str = "",
    smooth: float = DEFAULT_SMOOTH,
    eps: float = DEFAULT_EPS,
    connectivity: int = 26,
) -> MetricReport:
    """All four measurements for one sample.

    The prediction mask is ``pred_prob >= threshold``; the loss is computed
    on the probabilities themselves.
    """
    prob = _arr(pred_prob)
    truth = _arr(gt).astype(bool, copy=False)
    _check_shapes(prob, truth)
    sx, sy, sz = _resolve_spacing(spacing, gt, pred_prob)
    voxel_ml = sx * sy * sz / 1000.0

    loss = dice_ce_loss(prob, truth, smooth=smooth, eps=eps)
    pred = prob >= threshold
    dice = dice_score(pred, truth)
    fpv = _missed_voxels(pred, truth, connectivity) * voxel_ml
    fnv = _missed_voxels(truth, pred, connectivity) * voxel_ml
    return MetricReport(
        sample_id=sample_id,
        dice=dice,
        loss=loss,
        fpv_ml=fpv,
        fnv_ml=fnv,
        threshold=threshold,
        loss_formula=LOSS_FORMULA,
    )


def load_reports_by_id(path) -> dict[str, MetricReport]:
    return {r.sample_id: r for r in read_reports(Path(path))}
