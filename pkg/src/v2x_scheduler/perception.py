"""Confidence-map algebra: feature selection, masking, fusion, losses and metrics.

Maps are plain ``H x W`` float arrays with entries in ``[0, 1]``. Selection masks are
boolean arrays of the same shape wrapped in :class:`SelectionMask`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Sequence

import numpy as np

from v2x_scheduler.context import LossWeights

logger = logging.getLogger(__name__)

ConfidenceMap = np.ndarray

LOG_CLAMP = 1e-6
XI_GRID = (0.001, 0.005, 0.01, 0.05)


def _same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


@dataclass(frozen=True)
class SelectionMask:
    """Cells chosen for transmission in one slot."""

    bits: np.ndarray

    @property
    def popcount(self) -> int:
        """Number of selected cells."""
        return int(np.count_nonzero(self.bits))

    @classmethod
    def empty(cls, shape: tuple[int, int]) -> "SelectionMask":
        """Return a mask with no cell selected."""
        return cls(np.zeros(shape, dtype=bool))


def priority_scores(tau_j: ConfidenceMap, tau_e_ref: ConfidenceMap) -> np.ndarray:
    """Return ``tau_j^2 * (1 - tau_e_ref)``, the value of sending each cell."""
    tau_j = np.asarray(tau_j, dtype=np.float64)
    tau_e_ref = np.asarray(tau_e_ref, dtype=np.float64)
    _same_shape(tau_j, tau_e_ref, "priority_scores")
    return np.clip(tau_j**2 * (1.0 - tau_e_ref), 0.0, 1.0)


def selection_mask(scores: np.ndarray, budget: int) -> SelectionMask:
    """Select the ``budget`` highest positive scores.

    Ties are broken by ascending row-major index. Cells with a zero score are never
    selected.
    """
    if budget < 0:
        raise ValueError(f"budget must be >= 0, got {budget}")
    scores = np.asarray(scores, dtype=np.float64)
    flat = scores.ravel()
    k = min(int(budget), int(np.count_nonzero(flat > 0)))
    bits = np.zeros(flat.shape, dtype=bool)
    if k:
        order = np.argsort(-flat, kind="stable")
        bits[order[:k]] = True
    return SelectionMask(bits.reshape(scores.shape))


def mask_out(tau_j: ConfidenceMap, mask: SelectionMask) -> ConfidenceMap:
    """Zero the transmitted cells of a collaborator map."""
    tau_j = np.asarray(tau_j, dtype=np.float64)
    _same_shape(tau_j, mask.bits, "mask_out")
    return np.where(mask.bits, 0.0, tau_j)


def fuse_confidence(
    tau_e: ConfidenceMap, tau_j: ConfidenceMap, mask: SelectionMask, mode: str = "noisy_or"
) -> ConfidenceMap:
    """Fuse the transmitted cells of ``tau_j`` into the ego map.

    ``noisy_or`` gives ``1 - (1 - tau_e)(1 - tau_j)``; ``max`` keeps the larger value.
    Cells outside the mask are left untouched.
    """
    tau_e = np.asarray(tau_e, dtype=np.float64)
    tau_j = np.asarray(tau_j, dtype=np.float64)
    _same_shape(tau_e, tau_j, "fuse_confidence")
    _same_shape(tau_e, mask.bits, "fuse_confidence")
    if mode == "noisy_or":
        fused = 1.0 - (1.0 - tau_e) * (1.0 - tau_j)
    elif mode == "max":
        fused = np.maximum(tau_e, tau_j)
    else:
        raise ValueError(f"unknown fusion mode {mode!r}")
    return np.clip(np.where(mask.bits, fused, tau_e), 0.0, 1.0)


def focal_terms(tau: ConfidenceMap, gt: np.ndarray, w: LossWeights) -> np.ndarray:
    """Return the per-cell focal classification loss."""
    tau = np.asarray(tau, dtype=np.float64)
    gt = np.asarray(gt).astype(bool)
    _same_shape(tau, gt, "focal_cls_loss")
    p = np.clip(np.where(gt, tau, 1.0 - tau), LOG_CLAMP, 1.0 - LOG_CLAMP)
    alpha = np.where(gt, w.eta, 1.0 - w.eta)
    return -alpha * (1.0 - p) ** w.beta * np.log(p)


def focal_cls_loss(tau: ConfidenceMap, gt: np.ndarray, w: LossWeights) -> float:
    """Return the focal classification loss summed over all cells."""
    return float(np.sum(focal_terms(tau, gt, w)))


def detection_loss(tau: ConfidenceMap, gt: np.ndarray, w: LossWeights) -> float:
    """Return the weighted detection loss.

    The surrogate has no regression or direction head, so only the classification
    term carries weight.
    """
    if w.lambda_cls == 0.0:
        return 0.0
    return w.lambda_cls * focal_cls_loss(tau, gt, w)


def utility_terms(
    tau_prev: ConfidenceMap, tau_new: ConfidenceMap, w: LossWeights
) -> np.ndarray:
    """Return ``max(T, G)`` per cell.

    ``T`` flags a crossing of the classification threshold and ``G`` is the squared
    change above ``xi``.
    """
    tau_prev = np.asarray(tau_prev, dtype=np.float64)
    tau_new = np.asarray(tau_new, dtype=np.float64)
    _same_shape(tau_prev, tau_new, "utility")
    crossed = ((tau_new - w.zeta) * (tau_prev - w.zeta) < 0).astype(np.float64)
    gain = np.maximum((tau_new - tau_prev) ** 2 - w.xi, 0.0)
    return np.maximum(crossed, gain)


def utility(
    tau_prev: ConfidenceMap, tau_new: ConfidenceMap, region: SelectionMask, w: LossWeights
) -> float:
    """Return the label-free utility summed over the transmitted cells."""
    terms = utility_terms(tau_prev, tau_new, w)
    _same_shape(terms, region.bits, "utility")
    return float(np.sum(terms[region.bits]))


def grid_metrics(tau: ConfidenceMap, gt: np.ndarray, zeta: float = 0.5) -> Dict[str, float]:
    """Return cell-level precision, recall, F1 and accuracy at threshold ``zeta``.

    Precision is 1 when nothing is predicted and nothing is occupied, and 0 when
    nothing is predicted but something is. Recall is 1 when nothing is occupied.
    """
    tau = np.asarray(tau, dtype=np.float64)
    gt = np.asarray(gt).astype(bool)
    _same_shape(tau, gt, "grid_metrics")
    pred = tau > zeta
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(gt.size - tp - fp - fn)
    positives = tp + fn
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision = 1.0 if positives == 0 else 0.0
    recall = tp / positives if positives else 1.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "cls_accuracy": (tp + tn) / gt.size if gt.size else 1.0,
    }


@dataclass(frozen=True)
class ObservationTrace:
    """The ego map before every slot and after the last one, with the ground truth."""

    ego_maps: np.ndarray
    gt: np.ndarray
    n_collaborators: int = 0

    def __post_init__(self) -> None:
        """Check the trace layout."""
        if self.ego_maps.ndim != 3 or self.ego_maps.shape[1:] != np.shape(self.gt):
            raise ValueError(
                f"ego_maps must be (T+1, H, W) matching gt {np.shape(self.gt)}, got {self.ego_maps.shape}"
            )


@dataclass(frozen=True)
class ObservationReport:
    """Empirical true-to-false and violation probabilities."""

    true_to_false_prob: float
    true_to_false_prob_positive: float
    violation_prob: Dict[float, float] = field(default_factory=dict)
    violation_prob_positive: Dict[float, float] = field(default_factory=dict)
    correct_events: int = 0
    wrong_direction_updates: int = 0


def measure_observations(
    traces: Iterable[ObservationTrace],
    zeta: float = 0.5,
    xi_grid: Sequence[float] = XI_GRID,
) -> ObservationReport:
    """Measure how often correct cells turn wrong and how large wrong updates are.

    A cell is correct at slot ``t`` when ``(tau_e^t - zeta)(gt - zeta) > 0``. The
    true-to-false probability counts correct-to-incorrect transitions between
    consecutive slots over all correct ``(cell, slot)`` events, once over every cell
    and once over the occupied cells only. A wrong-direction update moves a cell away
    from its label; ``violation_prob[xi]`` is the share of those whose squared change
    exceeds ``xi``.
    """
    correct_all = flips_all = 0
    correct_pos = flips_pos = 0
    wrong_changes: list[np.ndarray] = []
    wrong_positive: list[np.ndarray] = []
    for trace in traces:
        maps = np.asarray(trace.ego_maps, dtype=np.float64)
        gt = np.asarray(trace.gt).astype(bool)
        if maps.shape[0] < 2:
            continue
        label = np.where(gt, 1.0, 0.0)
        correct = (maps - zeta) * (label - zeta) > 0
        before, after = correct[:-1], correct[1:]
        flipped = before & ~after
        correct_all += int(np.count_nonzero(before))
        flips_all += int(np.count_nonzero(flipped))
        correct_pos += int(np.count_nonzero(before & gt))
        flips_pos += int(np.count_nonzero(flipped & gt))

        delta = np.diff(maps, axis=0)
        wrong = np.where(gt, delta < 0, delta > 0)
        wrong_changes.append(delta[wrong] ** 2)
        wrong_positive.append(delta[wrong & gt[None]] ** 2)

    squared = np.concatenate(wrong_changes) if wrong_changes else np.zeros(0)
    squared_pos = np.concatenate(wrong_positive) if wrong_positive else np.zeros(0)
    if squared.size == 0:
        logger.warning("no wrong-direction updates observed; violation probabilities are 0")
    return ObservationReport(
        true_to_false_prob=flips_all / correct_all if correct_all else 0.0,
        true_to_false_prob_positive=flips_pos / correct_pos if correct_pos else 0.0,
        violation_prob=_exceedance(squared, xi_grid),
        violation_prob_positive=_exceedance(squared_pos, xi_grid),
        correct_events=correct_all,
        wrong_direction_updates=int(squared.size),
    )


def remaining_scores(collab_maps: np.ndarray, tau_e: ConfidenceMap) -> np.ndarray:
    """Return ``sum(R_j^2)`` per collaborator with ``R_j = tau_j^2 (1 - tau_e)``."""
    collab_maps = np.asarray(collab_maps, dtype=np.float64)
    r = collab_maps**2 * (1.0 - np.asarray(tau_e, dtype=np.float64))[None]
    return np.sum(r**2, axis=(1, 2))


def _exceedance(squared: np.ndarray, xi_grid: Sequence[float]) -> Dict[float, float]:
    if squared.size == 0:
        return {float(xi): 0.0 for xi in xi_grid}
    return {float(xi): float(np.count_nonzero(squared > xi) / squared.size) for xi in xi_grid}
