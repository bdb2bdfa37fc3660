import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from patchcluster.features import (
    LayerFeatureMap,
    align_and_concat,
    bilinear_resize,
    build_patch_feature_map,
    local_average_pool,
)
from patchcluster.oracles import local_mean_oracle

finite32 = st.floats(-1e4, 1e4, width=32)


def test_resize_constant_map_preserved():
    out = bilinear_resize(np.full((4, 5), 5.0), (9, 3))
    assert np.allclose(out, 5.0, rtol=1e-12)


def test_resize_degenerate_1x1_input():
    out = bilinear_resize(np.array([[7.0]]), (4, 6))
    assert out.shape == (4, 6)
    assert np.all(out == 7.0)


def test_resize_2x2_to_3x3_center():
    # direct bilinear evaluation at normalized (0.5, 0.5): mean of corners
    out = bilinear_resize(np.array([[0.0, 1.0], [2.0, 3.0]]), (3, 3))
    assert out[1, 1] == 1.5
    assert out[0, 0] == 0.0 and out[2, 2] == 3.0
    assert out[0, 1] == 0.5 and out[1, 0] == 1.0


def test_resize_same_grid_is_identity():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(6, 4, 3)).astype(np.float32)
    assert np.array_equal(bilinear_resize(v, (6, 4)), v)


def test_resize_rejects_empty_grids():
    with pytest.raises(ValueError):
        bilinear_resize(np.zeros((2, 2)), (0, 3))


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite32),
    st.integers(1, 9),
    st.integers(1, 9),
)
def test_resize_convexity(values, h_out, w_out):
    out = bilinear_resize(values, (h_out, w_out))
    tol = 1e-5 * (1.0 + float(np.abs(values).max()))
    assert out.min() >= values.min() - tol
    assert out.max() <= values.max() + tol


def test_align_single_layer_is_identity():
    v = np.random.default_rng(1).normal(size=(5, 5, 3)).astype(np.float32)
    out = align_and_concat([LayerFeatureMap(2, v)])
    assert np.array_equal(out, v)


def test_align_constant_layers_concatenate():
    a = LayerFeatureMap(2, np.full((4, 4, 2), 1.5, dtype=np.float32))
    b = LayerFeatureMap(3, np.full((2, 2, 3), -2.0, dtype=np.float32))
    out = align_and_concat([a, b])
    assert out.shape == (4, 4, 5)
    assert np.allclose(out[..., :2], 1.5)
    assert np.allclose(out[..., 2:], -2.0)


def test_align_projection_reproduces_first_layer():
    rng = np.random.default_rng(2)
    fine = LayerFeatureMap(2, rng.normal(size=(6, 6, 4)).astype(np.float32))
    coarse = LayerFeatureMap(3, rng.normal(size=(3, 3, 2)).astype(np.float32))
    out = align_and_concat([fine, coarse])
    assert np.array_equal(out[..., :4], fine.values)


def test_align_backbone_stage_dims():
    # stage-2 28x28x512 with stage-3 14x14x1024 fuses to 28x28x1536
    rng = np.random.default_rng(3)
    s2 = LayerFeatureMap(2, rng.normal(size=(28, 28, 512)).astype(np.float32))
    s3 = LayerFeatureMap(3, rng.normal(size=(14, 14, 1024)).astype(np.float32))
    out = align_and_concat([s2, s3])
    assert out.shape == (28, 28, 1536)


def test_align_rejects_empty_and_misordered():
    with pytest.raises(ValueError, match="empty"):
        align_and_concat([])
    a = LayerFeatureMap(3, np.zeros((2, 2, 1), dtype=np.float32))
    b = LayerFeatureMap(2, np.zeros((4, 4, 1), dtype=np.float32))
    with pytest.raises(ValueError, match="sorted"):
        align_and_concat([a, b])


def test_pool_patch_size_1_is_identity():
    v = np.random.default_rng(4).normal(size=(5, 4, 2)).astype(np.float32)
    assert np.array_equal(local_average_pool(v, 1), v)


def test_pool_constant_map_unchanged():
    v = np.full((6, 6, 2), 2.5, dtype=np.float32)
    assert np.array_equal(local_average_pool(v, 3), v)


def test_pool_window_means_hand_checked():
    grid = np.arange(1.0, 10.0).reshape(3, 3)
    out = local_average_pool(grid, 3)
    assert out[1, 1] == 5.0  # full window mean of 1..9
    assert out[0, 0] == 3.0  # in-bounds corner window {1,2,4,5}
    assert np.allclose(out, local_mean_oracle(grid, 3))


def test_pool_matches_window_oracle():
    rng = np.random.default_rng(5)
    for patch in (3, 5):
        v = rng.normal(size=(9, 7))
        assert np.allclose(local_average_pool(v, patch), local_mean_oracle(v, patch), rtol=1e-10)


def test_pool_rejects_even_patch_size():
    with pytest.raises(ValueError, match="odd"):
        local_average_pool(np.zeros((3, 3, 1)), 2)


@settings(max_examples=30, deadline=None)
@given(
    arrays(np.float32, st.tuples(st.integers(2, 6), st.integers(2, 6), st.integers(1, 3)), elements=finite32),
    st.floats(-10, 10),
)
def test_pool_commutes_with_constant_shift(values, c):
    shifted = local_average_pool(values + np.float32(c), 3)
    base = local_average_pool(values, 3) + np.float32(c)
    assert np.allclose(shifted, base, rtol=1e-4, atol=1e-3)


def test_full_pipeline_finite_and_shaped():
    rng = np.random.default_rng(6)
    layers = [
        LayerFeatureMap(2, rng.normal(size=(8, 8, 4)).astype(np.float32)),
        LayerFeatureMap(3, rng.normal(size=(4, 4, 6)).astype(np.float32)),
    ]
    pmap = build_patch_feature_map(layers, "img", patch_size=3)
    assert pmap.values.shape == (8, 8, 10)
    assert pmap.grid == (8, 8)
    assert pmap.dim == 10
    assert np.all(np.isfinite(pmap.values))


def test_pipeline_rejects_non_finite():
    bad = np.zeros((2, 2, 1), dtype=np.float32)
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="finite"):
        build_patch_feature_map([LayerFeatureMap(2, bad)], "img")
