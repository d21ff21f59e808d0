import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from datadiet.cohort import CohortManifest, Tracer, cohort_stats
from datadiet.errors import LesionOutOfBoundsError
from datadiet.labeling import connected_components
from datadiet.metrics import evaluate_sample
from datadiet.nifti import load_nifti
from datadiet.synth import (
    MANIFEST_FILE,
    Lesion,
    Shape,
    SynthSpec,
    count_for_rate,
    lesion_mask,
    make_cohort,
    make_mask,
    make_preset,
)
from datadiet.volume import Kind


def test_box_at_origin():
    g = make_mask(SynthSpec((4, 4, 4), (1, 1, 1), (Lesion((0.5, 0.5, 0.5), 0.5, Shape.BOX),)))
    assert int(g.data.sum()) == 8
    assert g.data[:2, :2, :2].all()
    assert int(g.data.sum()) * g.voxel_volume_ml == pytest.approx(0.008)


def test_two_disjoint_balls():
    spec = SynthSpec((20, 10, 10), lesions=(Lesion((4, 5, 5), 3), Lesion((14, 5, 5), 3)))
    assert connected_components(make_mask(spec)).component_count == 2


def test_empty_lesions():
    g = make_mask(SynthSpec((5, 5, 5)))
    assert g.kind is Kind.LABEL and not g.data.any()


@pytest.mark.parametrize("lesion", [Lesion((0, 5, 5), 1), Lesion((5, 5, 9.5), 0.5, Shape.BOX)])
def test_out_of_bounds(lesion):
    with pytest.raises(LesionOutOfBoundsError):
        make_mask(SynthSpec((10, 10, 10), lesions=(lesion,)))


@settings(max_examples=60, deadline=None)
@given(
    center=st.tuples(*[st.integers(3, 12)] * 3),
    radius=st.floats(0.0, 3.0),
    shape=st.sampled_from(list(Shape)),
)
def test_lesion_matches_brute_force(center, radius, shape):
    dims = (16, 16, 16)
    got = lesion_mask(Lesion(center, radius, shape), dims)
    idx = np.indices(dims).reshape(3, -1).T
    expected = np.zeros(dims, bool)
    for p in idx:
        d = [abs(int(a) - b) for a, b in zip(p, center)]
        inside = sum(x * x for x in d) <= radius**2 if shape is Shape.BALL else max(d) <= radius
        expected[tuple(p)] = inside
    np.testing.assert_array_equal(got, expected)


def test_ball_and_box_metric_oracle():
    # ball inside box: the ball is fully covered, so FNV = 0, FPV = 0 (one component)
    box = make_mask(SynthSpec((12, 12, 12), lesions=(Lesion((6, 6, 6), 3, Shape.BOX),)))
    ball = make_mask(SynthSpec((12, 12, 12), lesions=(Lesion((6, 6, 6), 2),)))
    r = evaluate_sample(box.data.astype(float), ball)
    assert r.dice == pytest.approx(2 * 33 / (343 + 33))
    assert r.fpv_ml == 0 and r.fnv_ml == 0


@pytest.mark.parametrize("rate,n,k", [(0.9, 597, 537), (0.494, 1014, 501), (1.0, 10, 10), (0.0, 5, 0), (0.5, 3, 2)])
def test_count_for_rate(rate, n, k):
    assert count_for_rate(rate, n) == k


def test_all_psma_all_sick(tmp_path):
    m = make_cohort(tmp_path, 0, 10, 1.0, seed=3)
    assert len(m) == 10 and all(r.tracer is Tracer.PSMA and r.is_sick for r in m)
    for r in m:
        assert load_nifti(r.label_path).data.any()


def test_same_seed_identical_bytes(tmp_path):
    make_cohort(tmp_path / "a", 3, 5, 0.6, seed=11)
    make_cohort(tmp_path / "b", 3, 5, 0.6, seed=11, workers=3)
    a = (tmp_path / "a" / MANIFEST_FILE).read_bytes()
    assert a == (tmp_path / "b" / MANIFEST_FILE).read_bytes()
    m = CohortManifest.load(tmp_path / "a" / MANIFEST_FILE)
    for r in m:
        rel = r.pred_path.split("/a/", 1)[1]
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    make_cohort(tmp_path / "c", 3, 5, 0.6, seed=12)
    assert (tmp_path / "c" / MANIFEST_FILE).read_bytes() != a


def test_volumes_roundtrip_and_labels_agree(tmp_path):
    m = make_cohort(tmp_path, 4, 6, 0.5, seed=1, dims=(10, 9, 8))
    for r in m:
        label = load_nifti(r.label_path)
        assert label.kind is Kind.LABEL and label.dims == (10, 9, 8)
        assert bool(label.data.any()) == r.is_sick
        ct = load_nifti(r.ct_path)
        assert ct.kind is Kind.SCALAR
        np.testing.assert_allclose(ct.spacing, (2.036, 2.036, 3.0), atol=1e-6)
        prob = load_nifti(r.pred_path).data
        assert prob.min() >= 0 and prob.max() <= 1


def test_preset_small(tmp_path):
    stats = cohort_stats(make_preset("small", tmp_path))
    assert stats.counts == {"FDG": 12, "PSMA": 20}
    assert stats.sick_rates["PSMA"] == pytest.approx(0.9)
    with pytest.raises(ValueError):
        make_preset("nope", tmp_path)


@pytest.mark.parametrize("dims", [(1, 1, 1), (2, 2, 2), (2, 5, 9)])
def test_tiny_dims_still_mark_sick(tmp_path, dims):
    m = make_cohort(tmp_path, 0, 4, 1.0, seed=2, dims=dims)
    assert all(load_nifti(r.label_path).data.any() for r in m)
