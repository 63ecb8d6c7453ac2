import numpy as np
import pytest

from spectral_tta import linalg, pca
from spectral_tta.errors import ContractViolationError, EmptyBasisError


def test_flatten_trivial():
    x = np.full((1, 1, 1, 1), 7.0)
    assert np.array_equal(pca.flatten_features(x), [[7.0]])
    x = np.arange(4.0).reshape(2, 1, 1, 2)
    flat = pca.flatten_features(x)
    assert flat.shape == (2, 2)
    assert np.array_equal(flat, [[0.0, 1.0], [2.0, 3.0]])


def test_flatten_round_trip():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 2, 2))
    flat = pca.flatten_features(x)
    assert np.array_equal(pca.unflatten_features(flat, (3, 2, 2)), x)


def test_fit_rank1_line():
    t = np.linspace(-2, 2, 9)
    data = np.stack([1.0 + 2 * t, -1.0 - 4 * t], axis=1)  # points on a line
    basis = pca.fit(data, rank=1)
    direction = np.array([2.0, -4.0]) / np.linalg.norm([2.0, -4.0])
    comp = basis.components[0]
    assert abs(abs(comp @ direction) - 1.0) <= 1e-10
    # the dropped second singular value is zero: rank 2 request still yields 1
    basis2 = pca.fit(data, rank=2)
    assert basis2.rank == 1


def test_fit_three_points_hand_svd():
    data = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    basis = pca.fit(data, rank=1)
    assert np.allclose(basis.components[0], np.array([1.0, 1.0]) / np.sqrt(2), atol=1e-12)
    assert abs(basis.singular_values[0] - 2.0) <= 1e-12


def test_fit_full_rank_noise():
    rng = np.random.default_rng(1)
    data = rng.normal(size=(20, 5))
    basis = pca.fit(data, rank=5)
    assert basis.rank == 5
    assert np.allclose(basis.components @ basis.components.T, np.eye(5), atol=1e-8)
    rec = pca.inverse_transform(basis, pca.transform(basis, data))
    assert np.linalg.norm(rec - data) / np.linalg.norm(data) <= 1e-8


def test_fit_rank_out_of_range():
    data = np.random.default_rng(2).normal(size=(4, 3))
    with pytest.raises(ContractViolationError):
        pca.fit(data, rank=0)
    with pytest.raises(ContractViolationError):
        pca.fit(data, rank=4)
    with pytest.raises(ContractViolationError):
        pca.fit(data[:1], rank=1)


def test_incremental_single_batch_matches_fit():
    rng = np.random.default_rng(3)
    data = rng.normal(size=(12, 4))
    a = pca.fit(data, rank=3)
    b = pca.fit_incremental([data], rank=3)
    assert np.allclose(a.singular_values, b.singular_values, rtol=1e-10)
    assert np.allclose(np.abs(a.components), np.abs(b.components), atol=1e-10)


def test_incremental_matches_batch_split():
    rng = np.random.default_rng(4)
    data = rng.normal(size=(32, 5))
    batch = pca.fit(data, rank=5)
    inc = pca.fit_incremental(np.array_split(data, 4), rank=5)
    assert np.allclose(
        inc.singular_values, batch.singular_values, rtol=1e-6
    )
    assert np.allclose(inc.mean, batch.mean, atol=1e-12)


def test_incremental_subspace_alignment_long_stream():
    rng = np.random.default_rng(5)
    data = rng.normal(size=(512, 6))
    batch = pca.fit(data, rank=6)
    inc = pca.fit_incremental(np.array_split(data, 16), rank=6)
    assert np.allclose(inc.singular_values, batch.singular_values, rtol=1e-6)
    # principal angles between the spans
    overlap = batch.components @ inc.components.T
    angles = np.arccos(np.clip(np.linalg.svd(overlap, compute_uv=False), -1, 1))
    assert angles.max() < 1e-4


def test_incremental_zero_stream_raises():
    with pytest.raises(EmptyBasisError):
        pca.fit_incremental([np.zeros((4, 3)), np.zeros((4, 3))], rank=2)


def test_incremental_inconsistent_width_raises():
    with pytest.raises(ContractViolationError):
        pca.fit_incremental([np.ones((2, 3)), np.ones((2, 4))], rank=2)


def test_incremental_memory_bound_is_rank_by_p():
    # the retained state after any number of batches is rank x p
    rng = np.random.default_rng(6)
    batches = [rng.normal(size=(64, 8)) for _ in range(8)]
    basis = pca.fit_incremental(batches, rank=3)
    assert basis.components.shape == (3, 8)
    assert basis.n_fitted == 512


def test_transform_trivial_cases():
    rng = np.random.default_rng(7)
    data = rng.normal(size=(10, 4))
    basis = pca.fit(data, rank=3)
    scores = pca.transform(basis, np.tile(basis.mean, (3, 1)))
    assert np.abs(scores).max() <= 1e-12
    # component rows offset by the mean project to identity score rows
    scores = pca.transform(basis, basis.components + basis.mean)
    assert np.allclose(scores, np.eye(3), atol=1e-8)


def test_transform_projector_oracle():
    rng = np.random.default_rng(8)
    data = rng.normal(size=(16, 6))
    basis = pca.fit(data, rank=3)
    x = rng.normal(size=(5, 6))
    rec = pca.inverse_transform(basis, pca.transform(basis, x))
    projector = basis.components.T @ basis.components
    expected = (x - basis.mean) @ projector + basis.mean
    assert np.allclose(rec, expected, atol=1e-10)


def test_inverse_transform_trivial_and_residual():
    rng = np.random.default_rng(9)
    data = rng.normal(size=(16, 6))
    basis = pca.fit(data, rank=3)
    rec = pca.inverse_transform(basis, np.zeros((2, 3)))
    assert np.allclose(rec, np.tile(basis.mean, (2, 1)), atol=1e-12)
    x = rng.normal(size=(4, 6))
    residual = x - pca.inverse_transform(basis, pca.transform(basis, x))
    assert np.abs(residual @ basis.components.T).max() <= 1e-8


def test_shape_mismatches_raise():
    data = np.random.default_rng(10).normal(size=(8, 4))
    basis = pca.fit(data, rank=2)
    with pytest.raises(ContractViolationError):
        pca.transform(basis, np.ones((2, 5)))
    with pytest.raises(ContractViolationError):
        pca.inverse_transform(basis, np.ones((2, 3)))


def test_eckart_young_beats_random_bases():
    rng = np.random.default_rng(11)
    data = rng.normal(size=(16, 8)) @ np.diag([8, 5, 4, 3, 2, 1.5, 1.0, 0.5])
    centered, _ = linalg.mean_center(data)
    for rank in range(1, 9):
        basis = pca.fit(data, rank=rank)
        rec = pca.inverse_transform(basis, pca.transform(basis, data))
        pca_err = np.linalg.norm(rec - data)
        for _ in range(100):
            q, _r = np.linalg.qr(rng.normal(size=(8, rank)))
            rand_rec = centered @ q @ q.T
            rand_err = np.linalg.norm(rand_rec - centered)
            assert pca_err <= rand_err + 1e-12


def test_basis_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(12)
    basis = pca.fit(rng.normal(size=(10, 5)), rank=3)
    path = tmp_path / "basis.json"
    basis.save(path)
    loaded = pca.PcaBasis.load(path)
    assert np.array_equal(loaded.mean, basis.mean)
    assert np.array_equal(loaded.components, basis.components)
    assert np.array_equal(loaded.singular_values, basis.singular_values)
    assert loaded.n_fitted == basis.n_fitted
