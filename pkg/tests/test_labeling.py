import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from datadiet.labeling import backward_offsets, connected_components
from datadiet.volume import VoxelGrid, binary_mask

from oracles import flood_fill_labels, same_partition


def test_offset_counts():
    assert [len(backward_offsets(c)) for c in (6, 18, 26)] == [3, 9, 13]
    with pytest.raises(ValueError):
        backward_offsets(8)


def test_empty():
    cc = connected_components(np.zeros((4, 4, 4), bool))
    assert cc.component_count == 0
    assert not cc.labels.any()
    assert len(cc.component_sizes) == 0


def test_corner_touch():
    m = np.zeros((2, 2, 2), bool)
    m[0, 0, 0] = m[1, 1, 1] = True
    assert connected_components(m, 26).component_count == 1
    assert connected_components(m, 18).component_count == 2
    assert connected_components(m, 6).component_count == 2
    _, k26 = flood_fill_labels(m, 26)
    _, k6 = flood_fill_labels(m, 6)
    assert (k26, k6) == (1, 2)


def test_edge_touch_is_18_connected():
    m = np.zeros((2, 2, 1), bool)
    m[0, 0, 0] = m[1, 1, 0] = True
    assert connected_components(m, 18).component_count == 1
    assert connected_components(m, 6).component_count == 2


def test_labels_follow_x_fastest_scan_order():
    m = np.zeros((5, 5, 5), bool)
    m[4, 0, 2] = True  # met third: z=2
    m[3, 0, 0] = True  # met first: z=0, y=0
    m[0, 4, 0] = True  # met second: z=0, y=4
    cc = connected_components(m, 6)
    assert cc.labels[3, 0, 0] == 1
    assert cc.labels[0, 4, 0] == 2
    assert cc.labels[4, 0, 2] == 3


def test_u_shape_merges():
    # two arms joined only at the far end force a union of provisional labels
    m = np.zeros((5, 5, 1), bool)
    m[0, :, 0] = True
    m[4, :, 0] = True
    m[:, 4, 0] = True
    cc = connected_components(m, 6)
    assert cc.component_count == 1
    assert cc.component_sizes.tolist() == [13]


def test_accepts_grids_and_exposes_label_grid():
    g = binary_mask(np.eye(3)[:, :, None].repeat(2, axis=2), spacing=(2, 2, 2))
    cc = connected_components(g, 26)
    assert cc.component_count == 1
    lab = cc.as_grid(g)
    assert lab.spacing == (2.0, 2.0, 2.0)


def test_components_touching():
    m = np.zeros((6, 1, 1), bool)
    m[0:2] = m[4:6] = True
    other = np.zeros_like(m)
    other[5] = True
    cc = connected_components(m)
    assert cc.components_touching(other).tolist() == [False, True]


@settings(max_examples=150, deadline=None)
@given(
    mask=arrays(np.bool_, st.tuples(*[st.integers(1, 9)] * 3)),
    connectivity=st.sampled_from([6, 18, 26]),
)
def test_matches_flood_fill_exactly(mask, connectivity):
    cc = connected_components(mask, connectivity)
    ref, count = flood_fill_labels(mask, connectivity)
    # both number components by first voxel in x-fastest order
    np.testing.assert_array_equal(cc.labels, ref)
    assert cc.component_count == count
    assert cc.component_sizes.sum() == mask.sum()


@pytest.mark.parametrize("density", [0.2, 0.45, 0.7])
def test_agrees_with_scipy_partition(density):
    rng = np.random.default_rng(int(density * 100))
    struct26 = np.ones((3, 3, 3), bool)
    for _ in range(20):
        m = rng.random((16, 16, 16)) < density
        ref, _ = ndimage.label(m, structure=struct26)
        assert same_partition(connected_components(m, 26).labels, ref)
        ref6, _ = ndimage.label(m)
        assert same_partition(connected_components(m, 6).labels, ref6)


def test_non_contiguous_input():
    rng = np.random.default_rng(7)
    big = rng.random((20, 20, 20)) < 0.5
    view = big[::2, 1::2, ::-1]
    ref, count = flood_fill_labels(np.ascontiguousarray(view), 26)
    cc = connected_components(view, 26)
    np.testing.assert_array_equal(cc.labels, ref)


def test_input_not_mutated():
    g = VoxelGrid(np.ones((3, 3, 3), np.uint8), kind="label")
    connected_components(g)
    assert g.data.all()
