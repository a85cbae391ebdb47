import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saddle2saddle.core import (DenseNetwork, InitDraw, MaskMatrix, OrthonormalDataset, forward,
                                generate_dataset, loss, mask_matrix, outputs, residual_vector,
                                sample_init)
from saddle2saddle.errors import DimensionMismatch


def test_identity_dataset_explicit_labels():
    data = generate_dataset(3, 3, [1, -2, 3], basis="identity", seed=0)
    assert data.is_identity
    np.testing.assert_array_equal(data.X, np.eye(3))
    np.testing.assert_array_equal(data.labels, [1, -2, 3])
    assert data.gram_defect() == 0.0


def test_abs_gaussian_labels_positive():
    data = generate_dataset(64, 64, "abs-gaussian", seed=0)
    assert data.n == 64 and np.all(data.labels > 0)


def test_random_orthonormal_gram():
    data = generate_dataset(4, 8, "gaussian", basis="random-orthonormal", seed=1)
    assert data.rows.shape == (4, 8)
    np.testing.assert_allclose(data.rows @ data.rows.T, np.eye(4), atol=1e-12)


def test_dataset_rejects_bad_shapes():
    with pytest.raises(DimensionMismatch):
        generate_dataset(4, 3)
    with pytest.raises(DimensionMismatch):
        generate_dataset(4, 8, basis="identity")
    with pytest.raises(ValueError):
        OrthonormalDataset(labels=np.ones(2), d=2, rows=np.array([[1.0, 0.0], [1.0, 0.0]]))


def test_zero_labels_flagged_not_refused():
    data = generate_dataset(3, 3, [1, 0, 2])
    np.testing.assert_array_equal(data.zero_labels, [1])


def test_dataset_json_roundtrip():
    data = generate_dataset(4, 6, "gaussian", basis="random-orthonormal", seed=2)
    back = OrthonormalDataset.from_dict(data.to_dict())
    np.testing.assert_array_equal(back.labels, data.labels)
    np.testing.assert_array_equal(back.rows, data.rows)
    ident = generate_dataset(3, 3, "constant", constant=2.0)
    assert ident.to_dict()["basis"] == "identity"
    assert OrthonormalDataset.from_dict(ident.to_dict()).is_identity


def test_sample_init_unit_directions_and_scale():
    init = sample_init(2, 64, -500.0, seed=7)
    np.testing.assert_allclose(np.linalg.norm(init.u, axis=1), 1.0, atol=1e-12)
    assert init.alpha_log == -500.0
    assert set(np.abs(init.s)) == {1.0}


def test_sample_init_zero_sphere():
    init = sample_init(1, 1, 0.0, seed=3)
    assert init.u[0, 0] in (1.0, -1.0)


def test_sample_init_deterministic():
    a = sample_init(5, 9, -3.0, seed=11)
    b = sample_init(5, 9, -3.0, seed=11)
    assert np.array_equal(a.u, b.u) and np.array_equal(a.s, b.s)


def test_sample_init_positive_signs():
    assert np.all(sample_init(8, 4, -1.0, seed=0, signs="positive").s == 1.0)


def test_mask_sign_exclusion():
    data = generate_dataset(2, 2, [1, -2])
    init = InitDraw(0.0, np.array([1.0]), np.array([[0.6, 0.8]]))
    mask = mask_matrix(data, init)
    np.testing.assert_array_equal(mask.A[:, 0], [True, False])
    assert mask.S == (frozenset({0}),)


def test_mask_strict_inequality():
    data = generate_dataset(2, 2, [1, 2])
    init = InitDraw(0.0, np.array([1.0]), np.array([[1.0, 0.0]]))
    np.testing.assert_array_equal(mask_matrix(data, init).A[:, 0], [True, False])


def test_mask_subset_of_sign_class():
    data = generate_dataset(16, 16, "gaussian", seed=3)
    mask = mask_matrix(data, sample_init(10, 16, -1.0, seed=4))
    for j in range(mask.m):
        cls = mask.I_plus if mask.s[j] > 0 else mask.I_minus
        assert set(np.flatnonzero(mask.A[:, j])) <= set(cls.tolist())
    assert len(mask.J_plus) + len(mask.J_minus) == 10


def test_mask_entry_frequency_quarter():
    # 10^6 independent (i, j) entries: mixed-sign labels, random signs and directions
    rng = np.random.default_rng(0)
    n, m, reps = 100, 100, 100
    hits = 0
    for r in range(reps):
        y = rng.choice([-1.0, 1.0], size=n)
        data = OrthonormalDataset(labels=y, d=n)
        hits += int(mask_matrix(data, sample_init(m, n, -1.0, seed=int(rng.integers(2**31)))).A.sum())
    total = n * m * reps
    sigma = np.sqrt(0.25 * 0.75 / total)
    assert abs(hits / total - 0.25) < 3 * sigma


@given(st.floats(0.01, 100.0))
@settings(max_examples=30, deadline=None)
def test_mask_scale_invariant(c):
    data = generate_dataset(6, 6, "gaussian", seed=5)
    init = sample_init(4, 6, -1.0, seed=6)
    scaled = InitDraw(init.alpha_log, init.s, init.u * c)
    assert np.array_equal(mask_matrix(data, init).A, mask_matrix(data, scaled).A)


def test_mask_from_array_infers_signs():
    mm = MaskMatrix.from_array([[1, 0], [0, 1]], [1.0, -1.0])
    np.testing.assert_array_equal(mm.s, [1.0, -1.0])
    with pytest.raises(ValueError):
        MaskMatrix.from_array([[1], [1]], [1.0, -1.0])


def test_forward_examples():
    x = np.array([0.3, -0.4, 1.2])
    assert forward(DenseNetwork(np.array([1.0]), x[None, :]), x) == pytest.approx(x @ x)
    assert forward(DenseNetwork(np.array([1.0]), -x[None, :]), x) == 0.0
    e1 = np.array([1.0, 0.0])
    net = DenseNetwork(np.array([2.0, -1.0]), np.array([e1, e1]))
    assert forward(net, e1) == 1.0


@given(st.floats(0.1, 10.0), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_forward_homogeneous(c, seed):
    rng = np.random.default_rng(seed)
    net = DenseNetwork(rng.standard_normal(3), rng.standard_normal((3, 4)))
    x = rng.standard_normal(4)
    scaled = DenseNetwork(c * net.a, c * net.W)
    assert forward(scaled, x) == pytest.approx(c * c * forward(net, x), rel=1e-12, abs=1e-300)


def test_balanced_from_init():
    init = sample_init(5, 7, -2.0, seed=1)
    net = DenseNetwork.from_init(init)
    np.testing.assert_allclose(np.abs(net.a), np.linalg.norm(net.W, axis=1), rtol=1e-12)
    with pytest.raises(ValueError):
        DenseNetwork.from_init(sample_init(2, 3, -800.0))


def test_loss_and_residual_zero_network():
    data = generate_dataset(2, 2, [1, 2])
    net = DenseNetwork.zeros(3, 2)
    assert loss(net, data) == 1.25
    np.testing.assert_array_equal(residual_vector(net, data), [-1, -2])


def test_interpolating_network_zero_loss():
    data = generate_dataset(2, 2, [1, 2])
    net = DenseNetwork(np.array([1.0, 1.0]), np.array([[1.0, 0.0], [0.0, 2.0]]))
    np.testing.assert_array_equal(outputs(net, data), [1, 2])
    assert loss(net, data) == 0.0
