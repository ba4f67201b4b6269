"""Unit tests for selection, fusion, losses, utility and grid metrics."""

import math

import numpy as np
import pytest

from v2x_scheduler.context import LossWeights
from v2x_scheduler.perception import (
    XI_GRID,
    ObservationTrace,
    SelectionMask,
    detection_loss,
    focal_cls_loss,
    focal_terms,
    fuse_confidence,
    grid_metrics,
    mask_out,
    measure_observations,
    priority_scores,
    remaining_scores,
    selection_mask,
    utility,
)


def cell(value: float) -> np.ndarray:
    return np.array([[value]])


def full_mask(shape) -> SelectionMask:
    return SelectionMask(np.ones(shape, dtype=bool))


def sort_oracle(scores: np.ndarray, budget: int) -> np.ndarray:
    flat = scores.ravel().tolist()
    order = sorted(range(len(flat)), key=lambda i: (-flat[i], i))
    chosen = [i for i in order if flat[i] > 0][:budget]
    bits = np.zeros(len(flat), dtype=bool)
    bits[chosen] = True
    return bits.reshape(scores.shape)


def direct_focal(tau: np.ndarray, gt: np.ndarray, eta: float, beta: float) -> float:
    total = 0.0
    for value, label in zip(tau.ravel().tolist(), gt.ravel().tolist()):
        p = value if label else 1.0 - value
        p = min(max(p, 1e-6), 1.0 - 1e-6)
        a = eta if label else 1.0 - eta
        total += -a * (1.0 - p) ** beta * math.log(p)
    return total


class TestPriorityScores:
    """Tests for the per-cell transmission priority."""

    def test_examples(self):
        """Test the hand-computed scores."""
        assert priority_scores(cell(1.0), cell(0.0))[0, 0] == 1.0
        assert priority_scores(cell(0.7), cell(1.0))[0, 0] == 0.0
        assert priority_scores(cell(0.8), cell(0.5))[0, 0] == pytest.approx(0.32)

    def test_zero_where_collaborator_is_empty(self, rng):
        """Test a zero collaborator cell never scores."""
        tau_j = rng.random((8, 8))
        tau_j[2:4] = 0.0
        assert not priority_scores(tau_j, rng.random((8, 8)))[2:4].any()

    def test_shape_mismatch(self):
        """Test mismatched maps are rejected."""
        with pytest.raises(ValueError):
            priority_scores(np.zeros((2, 2)), np.zeros((3, 3)))


class TestSelectionMask:
    """Tests for top-B selection."""

    def test_zero_budget_is_empty(self, rng):
        """Test B = 0 selects nothing."""
        assert selection_mask(rng.random((4, 4)), 0).popcount == 0

    def test_large_budget_takes_all_positive(self):
        """Test B >= H*W selects exactly the positive cells."""
        scores = np.array([[0.5, 0.0], [0.2, 0.0]])
        mask = selection_mask(scores, 10)
        assert np.array_equal(mask.bits, scores > 0)

    def test_ties_break_by_row_major_index(self):
        """Test equal scores go to the lower row-major index first."""
        mask = selection_mask(np.full((2, 2), 0.3), 2)
        assert np.array_equal(mask.bits, np.array([[True, True], [False, False]]))

    def test_matches_sort_oracle(self):
        """Test a thousand random 16x16 instances against a full sort."""
        rng = np.random.default_rng(0)
        for _ in range(1000):
            scores = rng.random((16, 16))
            scores[rng.random((16, 16)) < 0.2] = 0.0
            # Coarse values force ties.
            scores = np.round(scores, 1)
            budget = int(rng.integers(0, 300))
            assert np.array_equal(selection_mask(scores, budget).bits, sort_oracle(scores, budget))

    def test_negative_budget(self):
        """Test a negative budget is rejected."""
        with pytest.raises(ValueError):
            selection_mask(np.ones((2, 2)), -1)


class TestMaskAndFuse:
    """Tests for masking and confidence fusion."""

    def test_mask_out(self, rng):
        """Test masking zeros exactly the selected cells."""
        tau = rng.random((5, 5)) + 0.01
        assert np.array_equal(mask_out(tau, SelectionMask.empty((5, 5))), tau)
        assert not mask_out(tau, full_mask((5, 5))).any()
        bits = np.zeros((5, 5), dtype=bool)
        bits[2, 3] = True
        out = mask_out(tau, SelectionMask(bits))
        assert out[2, 3] == 0.0
        assert np.array_equal(out[~bits], tau[~bits])

    def test_noisy_or_examples(self):
        """Test the noisy-OR examples."""
        assert fuse_confidence(cell(0.0), cell(0.8), full_mask((1, 1)))[0, 0] == pytest.approx(0.8)
        assert fuse_confidence(cell(0.5), cell(0.5), full_mask((1, 1)))[0, 0] == pytest.approx(0.75)

    def test_unmasked_cells_unchanged(self):
        """Test cells outside the mask keep the ego value."""
        fused = fuse_confidence(cell(0.3), cell(0.9), SelectionMask.empty((1, 1)))
        assert fused[0, 0] == 0.3

    def test_max_fusion(self):
        """Test max fusion keeps the larger value."""
        assert fuse_confidence(cell(0.3), cell(0.6), full_mask((1, 1)), mode="max")[0, 0] == 0.6
        with pytest.raises(ValueError):
            fuse_confidence(cell(0.3), cell(0.6), full_mask((1, 1)), mode="mean")

    def test_fusion_is_nondecreasing(self, rng):
        """Test fusion never lowers the ego map and is monotone in both inputs."""
        tau_e, tau_j = rng.random((16, 16)), rng.random((16, 16))
        mask = full_mask((16, 16))
        fused = fuse_confidence(tau_e, tau_j, mask)
        assert np.all(fused >= tau_e)
        assert np.all(fuse_confidence(tau_e, np.minimum(tau_j + 0.1, 1.0), mask) >= fused)
        assert np.all(fuse_confidence(np.minimum(tau_e + 0.1, 1.0), tau_j, mask) >= fused)


class TestLosses:
    """Tests for the focal and detection losses."""

    def test_focal_examples(self):
        """Test the single-cell focal values."""
        w = LossWeights()
        assert focal_cls_loss(cell(0.5), cell(1), w) == pytest.approx(0.25 * 0.25 * math.log(2.0), rel=1e-12)
        assert focal_cls_loss(cell(0.5), cell(1), w) == pytest.approx(0.04332, abs=1e-5)
        assert focal_cls_loss(cell(0.5), cell(0), w) == pytest.approx(0.12997, abs=1e-5)

    def test_perfect_prediction_is_near_zero(self, rng):
        """Test tau = gt gives a loss at the clamp floor."""
        gt = (rng.random((8, 8)) < 0.3).astype(float)
        assert focal_cls_loss(gt, gt, LossWeights()) < 1e-9

    def test_matches_direct_evaluator(self):
        """Test a thousand random maps against a cell-by-cell evaluator."""
        rng = np.random.default_rng(1)
        w = LossWeights()
        for _ in range(1000):
            tau = rng.random((6, 6))
            gt = rng.random((6, 6)) < 0.3
            expected = direct_focal(tau, gt, w.eta, w.beta)
            assert focal_cls_loss(tau, gt, w) == pytest.approx(expected, rel=1e-9)

    def test_detection_loss_weights(self):
        """Test the detection loss scales with lambda_cls."""
        tau, gt = cell(0.5), cell(1)
        base = focal_cls_loss(tau, gt, LossWeights())
        assert detection_loss(tau, gt, LossWeights()) == base
        assert detection_loss(tau, gt, LossWeights(lambda_cls=0.0)) == 0.0
        assert detection_loss(tau, gt, LossWeights(lambda_cls=2.0)) == pytest.approx(2.0 * base)

    def test_raising_positive_confidence_lowers_its_loss(self):
        """Test the focal term on an occupied cell falls as its confidence rises."""
        tau = np.linspace(0.01, 0.99, 99)[None]
        terms = focal_terms(tau, np.ones_like(tau), LossWeights())[0]
        assert np.all(np.diff(terms) < 0)


class TestUtility:
    """Tests for the label-free utility."""

    def test_identity_transition(self, rng):
        """Test an unchanged map has zero utility."""
        tau = rng.random((4, 4))
        assert utility(tau, tau, full_mask((4, 4)), LossWeights()) == 0.0

    def test_threshold_crossing_counts_one(self):
        """Test a crossing of zeta contributes one."""
        assert utility(cell(0.4), cell(0.6), full_mask((1, 1)), LossWeights()) == 1.0

    def test_large_change_without_crossing(self):
        """Test 0.6 to 0.9 contributes 0.09 - 0.05."""
        value = utility(cell(0.6), cell(0.9), full_mask((1, 1)), LossWeights(xi=0.05))
        assert value == pytest.approx(0.04)

    def test_only_region_counts(self):
        """Test changes outside the region do not count."""
        assert utility(cell(0.4), cell(0.6), SelectionMask.empty((1, 1)), LossWeights()) == 0.0


class TestGridMetrics:
    """Tests for the cell-level detection metrics."""

    def test_perfect_prediction(self, rng):
        """Test tau = gt scores one everywhere."""
        gt = (rng.random((8, 8)) < 0.3).astype(float)
        gt[0, 0] = 1.0
        metrics = grid_metrics(gt, gt)
        assert metrics["precision"] == metrics["recall"] == metrics["f1"] == 1.0

    def test_inverted_prediction(self):
        """Test an inverted map has zero recall."""
        gt = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert grid_metrics(1.0 - gt, gt)["recall"] == 0.0

    def test_mixed_four_cells(self):
        """Test one TP, one FP and one FN give P = R = F1 = 0.5."""
        gt = np.array([[1, 1, 0, 0]])
        tau = np.array([[0.9, 0.2, 0.7, 0.1]])
        metrics = grid_metrics(tau, gt)
        assert metrics["precision"] == 0.5
        assert metrics["recall"] == 0.5
        assert metrics["f1"] == pytest.approx(0.5)
        assert metrics["cls_accuracy"] == 0.5

    def test_empty_edges(self):
        """Test the empty-prediction and empty-ground-truth edges."""
        empty = grid_metrics(np.zeros((2, 2)), np.zeros((2, 2)))
        assert empty["precision"] == empty["recall"] == 1.0
        missed = grid_metrics(np.zeros((2, 2)), np.eye(2))
        assert missed["precision"] == 0.0
        assert missed["f1"] == 0.0


class TestObservations:
    """Tests for the true-to-false and violation measurements."""

    def _noisy_or_trace(self, rng, slots: int = 10) -> ObservationTrace:
        gt = rng.random((8, 8)) < 0.3
        tau = rng.random((8, 8))
        maps = [tau]
        for _ in range(slots):
            mask = SelectionMask(rng.random((8, 8)) < 0.2)
            tau = fuse_confidence(tau, rng.random((8, 8)) * 0.6, mask)
            maps.append(tau)
        return ObservationTrace(ego_maps=np.stack(maps), gt=gt)

    def test_noisy_or_never_flips_positives(self, rng):
        """Test monotone fusion keeps occupied cells correct once they are correct."""
        report = measure_observations([self._noisy_or_trace(rng) for _ in range(20)])
        assert report.true_to_false_prob_positive == 0.0
        assert report.correct_events > 0

    def test_violation_nonincreasing_in_xi(self, rng):
        """Test the violation probability shrinks as the threshold grows."""
        report = measure_observations([self._noisy_or_trace(rng) for _ in range(20)])
        values = [report.violation_prob[xi] for xi in XI_GRID]
        assert values == sorted(values, reverse=True)
        assert report.wrong_direction_updates > 0

    def test_hand_built_flip(self):
        """Test a single correct-to-wrong transition is counted."""
        gt = np.array([[0]])
        maps = np.array([[[0.2]], [[0.7]], [[0.99]]])
        report = measure_observations([ObservationTrace(ego_maps=maps, gt=gt)])
        assert report.correct_events == 1
        assert report.true_to_false_prob == 1.0
        assert report.wrong_direction_updates == 2
        assert report.violation_prob[0.05] == 1.0
        assert report.violation_prob_positive[0.05] == 0.0

    def test_trace_shape_checked(self):
        """Test a trace whose maps do not match the ground truth is rejected."""
        with pytest.raises(ValueError):
            ObservationTrace(ego_maps=np.zeros((2, 3, 3)), gt=np.zeros((4, 4)))


class TestRemainingScores:
    """Tests for the remaining-score summary."""

    def test_single_cell(self):
        """Test R = 0.5 on one cell gives 0.25."""
        collab = np.zeros((2, 3, 3))
        collab[0, 1, 1] = 1.0
        tau_e = np.full((3, 3), 0.5)
        assert np.allclose(remaining_scores(collab, tau_e), [0.25, 0.0])
