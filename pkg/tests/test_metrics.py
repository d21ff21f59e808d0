import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from datadiet.errors import OutOfRangeProbabilityError, ShapeMismatchError
from datadiet.metrics import (
    LOSS_FORMULA,
    MetricReport,
    dice_ce_loss,
    dice_score,
    evaluate_sample,
    false_negative_volume,
    false_negative_voxels,
    false_positive_volume,
    false_positive_voxels,
    read_reports,
    write_reports,
)
from datadiet.volume import VoxelGrid, binary_mask

from oracles import brute_dice, brute_missed_voxels

CHALLENGE = (2.036, 2.036, 3.0)
masks8 = arrays(np.bool_, (6, 5, 4))


def loss_reference(p, g, smooth=1e-5, eps=1e-7):
    p = np.asarray(p, float).ravel()
    g = np.asarray(g, float).ravel()
    soft = 1 - (2 * (p * g).sum() + smooth) / (p.sum() + g.sum() + smooth)
    bce = -np.mean(g * np.log(p + eps) + (1 - g) * np.log(1 - p + eps))
    return soft, bce


class TestDice:
    def test_identical(self):
        m = np.zeros((3, 3, 3), bool)
        m[1, 1, :] = True
        assert dice_score(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((3, 3, 3), bool)
        b = a.copy()
        a[0, 0, 0] = b[2, 2, 2] = True
        assert dice_score(a, b) == 0.0

    def test_partial_overlap(self):
        p = np.zeros((3, 3, 3), bool)
        g = p.copy()
        p[0, 0, :2] = True
        g[0, 0, :] = True
        g[1, 0, 0] = True
        assert brute_dice(p, g) == pytest.approx(2 * 2 / 6)
        assert dice_score(p, g) == pytest.approx(2 / 3, abs=1e-15)

    def test_both_empty(self):
        z = np.zeros((2, 2, 2), bool)
        assert dice_score(z, z) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            dice_score(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))

    @settings(max_examples=100, deadline=None)
    @given(a=masks8, b=masks8)
    def test_symmetric_and_matches_sets(self, a, b):
        assert dice_score(a, b) == dice_score(b, a)
        assert dice_score(a, b) == pytest.approx(brute_dice(a, b), abs=1e-12)


class TestLoss:
    def test_perfect_prediction(self):
        g = np.zeros((4, 4, 4), bool)
        g[1:3, 1:3, 1:3] = True
        assert 0.0 <= dice_ce_loss(g.astype(np.float32), g) < 1e-5

    def test_half_everywhere(self):
        g = np.random.default_rng(0).random((4, 4, 4)) < 0.3
        _, bce = loss_reference(np.full(g.shape, 0.5), g)
        assert bce == pytest.approx(-math.log(0.5 + 1e-7), abs=1e-12)
        assert bce == pytest.approx(0.6931, abs=1e-4)
        soft, _ = loss_reference(np.full(g.shape, 0.5), g)
        assert dice_ce_loss(np.full(g.shape, 0.5), g) == pytest.approx(soft + bce, rel=1e-9)

    def test_worst_case(self):
        g = np.zeros((2, 2, 2), bool)
        g[0, 0, 0] = g[1, 1, 1] = True
        prob = 1.0 - g
        soft, bce = loss_reference(prob, g)
        assert soft > 0.99 and bce > 10
        loss = dice_ce_loss(prob, g)
        assert loss > 1
        assert loss == pytest.approx(soft + bce, rel=1e-9)

    @pytest.mark.parametrize("bad", [-0.1, 1.5, np.nan])
    def test_out_of_range(self, bad):
        p = np.zeros((2, 2, 2))
        p[1, 1, 1] = bad
        with pytest.raises(OutOfRangeProbabilityError):
            dice_ce_loss(p, np.zeros((2, 2, 2)))

    @settings(max_examples=80, deadline=None)
    @given(
        p=arrays(np.float64, (3, 4, 2), elements=st.floats(0, 1)),
        g=arrays(np.bool_, (3, 4, 2)),
    )
    def test_matches_reference_and_perfect_is_minimal(self, p, g):
        soft, bce = loss_reference(p, g)
        assert dice_ce_loss(p, g) == pytest.approx(soft + max(bce, 0.0), rel=1e-9, abs=1e-12)
        assert dice_ce_loss(p, g) >= dice_ce_loss(g.astype(float), g)

    def test_layouts_agree(self):
        rng = np.random.default_rng(3)
        p = rng.random((5, 6, 7))
        g = rng.random((5, 6, 7)) < 0.4
        ref = dice_ce_loss(p, g)
        assert dice_ce_loss(np.asfortranarray(p), g) == pytest.approx(ref, rel=1e-12)
        assert dice_ce_loss(p[::-1], g[::-1]) == pytest.approx(ref, rel=1e-12)


class TestVolumes:
    def test_identical_is_zero(self):
        m = np.zeros((5, 5, 5), bool)
        m[1:3, 1:3, 1:3] = True
        assert false_positive_volume(m, m, CHALLENGE) == 0.0
        assert false_negative_volume(m, m, CHALLENGE) == 0.0

    def test_disjoint_component_at_challenge_spacing(self):
        pred = np.zeros((12, 4, 4), bool)
        pred[:10, 0, 0] = True
        gt = np.zeros_like(pred)
        gt[0:2, 3, 3] = True
        expected = 10 * 2.036 * 2.036 * 3.0 / 1000
        assert expected == pytest.approx(0.12435888, rel=1e-12)
        assert false_positive_volume(pred, gt, CHALLENGE) == pytest.approx(expected, rel=1e-12)

    def test_single_voxel_overlap_exonerates(self):
        pred = np.zeros((8, 3, 3), bool)
        pred[:6, 1, 1] = True
        gt = np.zeros_like(pred)
        gt[5:8, 1, 1] = True
        assert brute_missed_voxels(pred, gt) == 0
        assert false_positive_volume(pred, gt, (1, 1, 1)) == 0.0

    def test_missed_second_component(self):
        gt = np.zeros((20, 3, 3), bool)
        gt[0:5, 0, 0] = True
        gt[10:17, 2, 2] = True
        pred = np.zeros_like(gt)
        pred[2, 0, 0] = True
        assert false_negative_volume(pred, gt, (1, 1, 1)) == pytest.approx(0.007)

    def test_empty_prediction(self):
        gt = np.zeros((10, 10, 10), bool)
        gt[:, :, 0] = True
        assert false_negative_volume(np.zeros_like(gt), gt, (1, 1, 1)) == pytest.approx(0.1)

    def test_superset_prediction(self):
        gt = np.zeros((6, 6, 6), bool)
        gt[2:4, 2:4, 2:4] = True
        assert false_negative_volume(np.ones_like(gt), gt, (1, 1, 1)) == 0.0

    def test_spacing_from_grid(self):
        pred = binary_mask(np.ones((2, 2, 2)), spacing=(2, 2, 2))
        gt = binary_mask(np.zeros((2, 2, 2)), spacing=(2, 2, 2))
        assert false_positive_volume(pred, gt) == pytest.approx(8 * 8 / 1000)

    @settings(max_examples=80, deadline=None)
    @given(p=masks8, g=masks8)
    def test_brute_force_and_duality(self, p, g):
        fp = false_positive_voxels(p, g)
        fn = false_negative_voxels(p, g)
        assert fp == brute_missed_voxels(p, g)
        assert fn == brute_missed_voxels(g, p)
        s = (1.3, 0.7, 2.1)
        assert false_positive_volume(p, g, s) == false_negative_volume(g, p, s)

    @settings(max_examples=50, deadline=None)
    @given(p=masks8, g=masks8, perm=st.permutations([0, 1, 2]))
    def test_axis_permutation_invariance(self, p, g, perm):
        s = np.array([1.1, 2.2, 3.3])
        pt, gt, st_ = np.transpose(p, perm), np.transpose(g, perm), tuple(s[list(perm)])
        assert false_positive_volume(pt, gt, st_) == pytest.approx(false_positive_volume(p, g, s), rel=1e-12)
        assert false_negative_volume(pt, gt, st_) == pytest.approx(false_negative_volume(p, g, s), rel=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(p=masks8, g=masks8, extra=masks8)
    def test_monotone_in_gt_overlap(self, p, g, extra):
        more = p | (extra & g)
        assert false_negative_voxels(more, g) <= false_negative_voxels(p, g)

    def test_removing_isolated_fp_component(self):
        gt = np.zeros((10, 10, 10), bool)
        gt[1:3, 1:3, 1:3] = True
        pred = gt.copy()
        pred[6:9, 6:9, 6:9] = True  # 27 voxels, isolated
        pred[0, 9, 9] = True
        s = (2.0, 1.0, 1.5)
        before = false_positive_volume(pred, gt, s)
        pred[6:9, 6:9, 6:9] = False
        after = false_positive_volume(pred, gt, s)
        assert before - after == pytest.approx(27 * 3.0 / 1000)


class TestEvaluate:
    def gt(self):
        g = np.zeros((4, 4, 4), bool)
        g[0:2, 0:2, 0:2] = True
        return g

    def test_perfect(self):
        g = self.gt()
        r = evaluate_sample(g.astype(np.float32), g, (1, 1, 1), sample_id="s")
        assert (r.dice, r.fpv_ml, r.fnv_ml) == (1.0, 0.0, 0.0)
        assert r.loss < 1e-5
        assert r.loss_formula == LOSS_FORMULA

    def test_all_zero_prediction(self):
        g = self.gt()
        r = evaluate_sample(np.zeros(g.shape), g, (1, 1, 1))
        assert r.dice == 0.0 and r.fpv_ml == 0.0
        assert r.fnv_ml == pytest.approx(8 / 1000)

    def test_all_one_prediction(self):
        g = self.gt()
        r = evaluate_sample(np.ones(g.shape), g, (1, 1, 1))
        # the single predicted component overlaps gt, so nothing counts as FP
        assert r.fnv_ml == 0.0 and r.fpv_ml == 0.0
        assert r.dice == pytest.approx(2 * 8 / (64 + 8))

    def test_complement_prediction(self):
        # a gt wall splits its complement into two slabs, neither touching gt
        g = np.zeros((4, 4, 4), bool)
        g[1] = True
        assert evaluate_sample(np.ones(g.shape), g, (1, 1, 1)).fpv_ml == 0.0
        r = evaluate_sample((~g).astype(float), g, (1, 1, 1))
        assert r.fpv_ml == pytest.approx(48 / 1000)
        assert r.fnv_ml == pytest.approx(16 / 1000)

    def test_threshold(self):
        g = self.gt()
        prob = np.where(g, 0.6, 0.4)
        assert evaluate_sample(prob, g, threshold=0.5).dice == 1.0
        assert evaluate_sample(prob, g, threshold=0.7).dice == 0.0

    def test_grids(self):
        g = self.gt()
        prob = VoxelGrid(g.astype(float), spacing=(2, 2, 2))
        r = evaluate_sample(np.zeros(g.shape), binary_mask(g, like=prob))
        assert r.fnv_ml == pytest.approx(8 * 8 / 1000)


def test_report_json_lines(tmp_path):
    reports = [MetricReport("a", 0.5, 0.2, 1.0, 2.0), MetricReport("b", 1.0, 0.0, 0.0, 0.0)]
    path = tmp_path / "r.jsonl"
    assert write_reports(reports, path) == 2
    lines = path.read_text().splitlines()
    assert list(json.loads(lines[0])) == [
        "sample_id", "dice", "loss", "fpv_ml", "fnv_ml", "threshold", "loss_formula"
    ]
    assert list(read_reports(path)) == reports


@pytest.mark.parametrize(
    "kwargs", [dict(dice=1.5), dict(fpv_ml=-1.0), dict(loss=float("inf"))]
)
def test_report_invariants(kwargs):
    base = dict(sample_id="x", dice=0.5, loss=0.1, fpv_ml=0.0, fnv_ml=0.0)
    base.update(kwargs)
    with pytest.raises(ValueError):
        MetricReport(**base)
