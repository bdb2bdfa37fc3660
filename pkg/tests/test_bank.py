import numpy as np
import pytest

from conftest import make_bank
from patchcluster import (
    InsufficientBankError,
    MemoryBank,
    PatchFeatureMap,
    assemble,
    coreset_subsample,
    load_bank,
    query_knn,
    query_knn_batch,
    save_bank,
)
from patchcluster.bank import _greedy_kcenter
from patchcluster.oracles import greedy_oracle, knn_oracle


def test_assemble_provenance_enumeration():
    values = np.arange(2 * 2 * 3, dtype=np.float32).reshape(2, 2, 3)
    bank = assemble([PatchFeatureMap("id", values)])
    assert bank.size == 4
    assert bank.provenance == [("id", 1, 1), ("id", 2, 1), ("id", 1, 2), ("id", 2, 2)]


def test_assemble_row_count_and_provenance_round_trip():
    rng = np.random.default_rng(0)
    maps = [PatchFeatureMap(f"im{i}", rng.normal(size=(3, 4, 5)).astype(np.float32)) for i in range(6)]
    bank = assemble(maps)
    assert bank.size == 6 * 3 * 4
    by_id = {m.image_id: m for m in maps}
    for row, (image_id, w, h) in zip(bank.features, bank.provenance):
        assert np.array_equal(row, by_id[image_id].values[h - 1, w - 1])


def test_assemble_rejects_empty_and_mismatched():
    with pytest.raises(ValueError, match="zero"):
        assemble([])
    a = PatchFeatureMap("a", np.zeros((2, 2, 3), dtype=np.float32))
    b = PatchFeatureMap("b", np.zeros((2, 2, 4), dtype=np.float32))
    with pytest.raises(ValueError, match="dimension mismatch"):
        assemble([a, b])


def test_bank_rejects_non_finite():
    bad = np.zeros((2, 2), dtype=np.float32)
    bad[0, 0] = np.inf
    with pytest.raises(ValueError, match="finite"):
        MemoryBank(bad, [("a", 1, 1), ("a", 2, 1)])


def test_query_knn_hand_examples():
    bank = make_bank([[0, 0], [1, 0], [3, 0]])
    near = query_knn(bank, np.array([0.0, 0.0], dtype=np.float32), 2, start_index=1)
    assert near.distances.tolist() == [0.0, 1.0]
    assert near.indices.tolist() == [0, 1]
    skipped = query_knn(bank, np.array([0.0, 0.0], dtype=np.float32), 2, start_index=2)
    assert skipped.distances.tolist() == [1.0, 3.0]
    assert skipped.indices.tolist() == [1, 2]


def test_query_matches_exhaustive_oracle():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(4, 800))
        d = int(rng.integers(1, 48))
        start = int(rng.integers(1, 4))
        k = int(rng.integers(1, max(2, min(12, n - start + 1)) + 1))
        pts = rng.normal(size=(n, d)).astype(np.float32)
        q = rng.normal(size=d).astype(np.float32)
        bank = make_bank(pts)
        got = query_knn(bank, q, k, start)
        ref_d, ref_i = knn_oracle(pts, q, k, start)
        assert np.array_equal(got.indices, ref_i)
        assert np.allclose(got.distances, ref_d, rtol=1e-12, atol=0)


def test_batch_equals_per_query_and_empty():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(300, 9)).astype(np.float32)
    qs = rng.normal(size=(25, 9)).astype(np.float32)
    bank = make_bank(pts)
    batch = query_knn_batch(bank, qs, 4, start_index=2)
    assert len(batch) == 25
    for q, got in zip(qs, batch):
        one = query_knn(bank, q, 4, start_index=2)
        assert np.array_equal(got.indices, one.indices)
        assert np.array_equal(got.distances, one.distances)
    assert query_knn_batch(bank, np.empty((0, 9), dtype=np.float32), 4) == []


def test_neighbor_prefix_consistency():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(200, 6)).astype(np.float32)
    q = rng.normal(size=6).astype(np.float32)
    bank = make_bank(pts)
    big = query_knn(bank, q, 20, start_index=2)
    small = query_knn(bank, q, 7, start_index=2)
    assert np.array_equal(big.indices[:7], small.indices)
    assert np.array_equal(big.distances[:7], small.distances)


def test_insufficient_bank_size():
    bank = make_bank(np.zeros((3, 2)))
    with pytest.raises(InsufficientBankError, match="insufficient bank size"):
        query_knn(bank, np.zeros(2, dtype=np.float32), 3, start_index=2)


def test_query_validates_args():
    bank = make_bank(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        query_knn(bank, np.zeros(2, dtype=np.float32), 0)
    with pytest.raises(ValueError):
        query_knn(bank, np.zeros(2, dtype=np.float32), 1, start_index=0)
    with pytest.raises(ValueError, match="dim"):
        query_knn(bank, np.zeros(5, dtype=np.float32), 1)


def test_permutation_invariance_on_tie_free_data():
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(120, 5)).astype(np.float32)
    q = rng.normal(size=5).astype(np.float32)
    perm = rng.permutation(120)
    a = query_knn(make_bank(pts), q, 6, start_index=1)
    b = query_knn(make_bank(pts[perm]), q, 6, start_index=1)
    assert np.array_equal(perm[b.indices], a.indices)
    assert np.allclose(a.distances, b.distances, rtol=1e-12)


def test_distance_scaling_property():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(150, 7)).astype(np.float32)
    q = rng.normal(size=7).astype(np.float32)
    for c in (0.5, 3.0, 117.0):
        base = query_knn(make_bank(pts), q, 8, start_index=1)
        scaled = query_knn(make_bank(pts * c), q * np.float32(c), 8, start_index=1)
        assert np.array_equal(base.indices, scaled.indices)
        assert np.allclose(scaled.distances, base.distances * c, rtol=1e-6)


def test_coreset_ratio_one_keeps_all_rows():
    rng = np.random.default_rng(6)
    bank = make_bank(rng.normal(size=(40, 4)))
    out = coreset_subsample(bank, 1.0, seed=9)
    assert out.size == 40
    assert sorted(map(tuple, out.features.tolist())) == sorted(map(tuple, bank.features.tolist()))
    assert out.subsample_ratio == 1.0 and out.seed == 9


def test_coreset_hand_example():
    # greedy from 0: the farthest point 10 is added before 1
    bank = make_bank(np.array([[0.0], [1.0], [10.0]]))
    out = coreset_subsample(bank, 2 / 3, seed=0)
    assert out.size == 2
    assert sorted(out.features.ravel().tolist()) == [0.0, 10.0]


def test_coreset_matches_quadratic_oracle():
    rng = np.random.default_rng(7)
    for trial in range(25):
        n = int(rng.integers(8, 220))
        d = int(rng.integers(1, 9))
        m = int(rng.integers(2, n + 1))
        seed = int(rng.integers(0, 1000))
        pts = rng.normal(size=(n, d)).astype(np.float32)
        assert _greedy_kcenter(pts, m, start=seed % n).tolist() == greedy_oracle(pts, m, seed)


def test_coreset_selection_order_is_two_hundred_point_reference():
    rng = np.random.default_rng(8)
    pts = rng.normal(size=(200, 8)).astype(np.float32)
    bank = make_bank(pts)
    out = coreset_subsample(bank, 0.1, seed=3)  # m = 20
    ref = greedy_oracle(pts, 20, 3)
    assert [bank.provenance[i] for i in ref] == out.provenance
    assert np.array_equal(out.features, pts[ref])


def test_coreset_coverage_radius_nonincreasing():
    rng = np.random.default_rng(9)
    pts = rng.normal(size=(120, 6)).astype(np.float32)
    bank = make_bank(pts)

    def radius(selected):
        d = np.sqrt(((pts[:, None, :].astype(np.float64) - selected[None].astype(np.float64)) ** 2).sum(2))
        return d.min(axis=1).max()

    radii = [radius(coreset_subsample(bank, m / 120, seed=0).features) for m in (5, 12, 30, 60)]
    assert all(a >= b - 1e-12 for a, b in zip(radii, radii[1:]))


def test_coreset_projection_returns_original_rows():
    rng = np.random.default_rng(10)
    pts = rng.normal(size=(80, 16)).astype(np.float32)
    bank = make_bank(pts)
    out = coreset_subsample(bank, 0.25, seed=1, projection_dim=4)
    assert out.projection_dim == 4
    rows = {tuple(r) for r in pts.tolist()}
    assert all(tuple(r) in rows for r in out.features.tolist())
    # deterministic given the seed
    again = coreset_subsample(bank, 0.25, seed=1, projection_dim=4)
    assert np.array_equal(out.features, again.features)


def test_coreset_rejects_bad_ratio():
    bank = make_bank(np.zeros((4, 2)))
    for ratio in (0.0, -0.5, 1.5):
        with pytest.raises(ValueError):
            coreset_subsample(bank, ratio)


def test_bank_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    maps = [PatchFeatureMap(f"im{i}", rng.normal(size=(2, 3, 4)).astype(np.float32)) for i in range(3)]
    bank = coreset_subsample(assemble(maps), 0.5, seed=5, projection_dim=2)
    save_bank(bank, tmp_path / "bank.pcfb", tmp_path / "bank.json")
    back = load_bank(tmp_path / "bank.pcfb", tmp_path / "bank.json")
    assert np.array_equal(back.features, bank.features)
    assert back.provenance == bank.provenance
    assert back.subsample_ratio == 0.5
    assert back.seed == 5
    assert back.projection_dim == 2
