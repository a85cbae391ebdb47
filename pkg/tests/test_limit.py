import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import predicted_sq_norm, run_recursion
from saddle2saddle.core import (DenseNetwork, generate_dataset, loss, mask_matrix, outputs,
                                residual_vector, sample_init)
from saddle2saddle.errors import AmbiguousArgmax, ZeroLabel
from saddle2saddle.limit import (LimitProcess, bias_bound, build, check_assumptions, exponent_at,
                                 fast_pred_sq_norm, jump_sequence, limit_process, opt_sq_norm,
                                 pred_sq_norm, telescoped_sq_norm, theta_at)

E1 = (np.array([[1, 1], [0, 1]]), np.array([1.0, 2.0]))
E2 = (np.array([[1, 0], [0, 1]]), np.array([1.0, 2.0]))


def random_instance(rng, n, m, mixed=True):
    y = rng.standard_normal(n) if mixed else np.abs(rng.standard_normal(n))
    data = generate_dataset(n, n, y)
    init = sample_init(m, n, -1.0, seed=int(rng.integers(2**31)))
    return data, init


# ---------------------------------------------------------------- assumptions


def test_assumptions_all_hold():
    rep = check_assumptions(np.array([[1, 1], [0, 1]]), [1, 2])
    assert rep.mask_ok and rep.labels_nonzero and rep.failures() == ["argmax_unique"]


def test_assumptions_zero_row_and_duplicate_columns():
    assert not check_assumptions(np.array([[1, 1], [0, 0]]), [1, 2]).rows_nonzero
    rep = check_assumptions(np.array([[1, 1], [1, 1]]), [1, 2])
    assert not rep.cols_distinct and rep.rows_nonzero


# ---------------------------------------------------------------- worked examples


def test_single_datum():
    lp = build(np.array([[1]]), [1.0])
    assert lp.p == 1 and lp.jump_times[1] == 1.0
    net = theta_at(lp, 2.0)
    assert net.a[0] == 1.0 and net.W[0, 0] == 1.0
    assert pred_sq_norm(lp) == 1.0


def test_e1():
    lp = build(*E1)
    assert lp.p == 1 and lp.j_stars == [1]
    assert lp.stages[0].D_norm[1] == pytest.approx(math.sqrt(1.25))
    assert lp.jump_times[1] == pytest.approx(1 / math.sqrt(1.25))
    assert lp.terminal.S_U == ()
    net = theta_at(lp, 10.0)
    assert net.a[0] == 0 and np.all(net.W[0] == 0)
    assert pred_sq_norm(lp) == pytest.approx(math.sqrt(5), rel=1e-15)
    data = generate_dataset(2, 2, [1, 2])
    assert np.max(np.abs(residual_vector(net, data))) < 1e-12


def test_e1_jump_time_value():
    # |D_2| = sqrt(1 + 4)/2 and ell = -1, so t_1 = 2/sqrt(5)
    assert build(*E1).jump_times[1] == pytest.approx(0.894427190999916, rel=1e-14)


def test_e2():
    lp = build(*E2)
    np.testing.assert_allclose(lp.jump_times[1:3], [1.0, 2.0], rtol=1e-15)
    assert lp.j_stars == [1, 0]
    assert lp.stages[1].ell[0] == pytest.approx(-0.5)
    final = theta_at(lp, 3.0)
    np.testing.assert_allclose(final.a, [1.0, math.sqrt(2)])
    assert pred_sq_norm(lp) == pytest.approx(3.0)
    data = generate_dataset(2, 2, [1, 2])
    assert loss(final, data) < 1e-24


def test_theta_at_e2():
    lp = build(*E2)
    early = theta_at(lp, 0.5)
    assert np.all(early.a == 0) and np.all(early.W == 0)
    mid = theta_at(lp, 1.5)
    assert mid.a[0] == 0
    np.testing.assert_allclose(mid.W[1], [0, math.sqrt(2)])
    assert mid.a[1] == pytest.approx(math.sqrt(2))
    np.testing.assert_allclose(outputs(theta_at(lp, 3.0), generate_dataset(2, 2, [1, 2])), [1, 2])


def test_exponent_at_e2():
    lp = build(*E2)
    assert exponent_at(lp, 0, 0.0) == -1 and exponent_at(lp, 1, 0.0) == -1
    assert exponent_at(lp, 0, 1.0) == pytest.approx(-0.5)
    assert exponent_at(lp, 0, 2.0) == pytest.approx(0.0, abs=1e-15)
    assert exponent_at(lp, 1, 5.0) == 0.0


def test_norm_formulas():
    assert opt_sq_norm(np.ones(64)) == 8.0
    assert opt_sq_norm([1, 2]) == pytest.approx(math.sqrt(5))
    assert opt_sq_norm([1, -1]) == 2.0
    assert bias_bound(np.ones(64)) == 40.0
    assert bias_bound([1, 2]) == pytest.approx(10 * math.sqrt(2))
    assert bias_bound([1, -1]) == 10.0


def test_strict_errors_and_lenient_ties():
    with pytest.raises(ZeroLabel):
        build(np.array([[1, 0], [0, 1]]), [0.0, 1.0])
    tie = np.array([[1, 0], [0, 1]])
    with pytest.raises(AmbiguousArgmax):
        build(tie, [1.0, 1.0])
    lp = build(tie, [1.0, 1.0], strict=False)
    assert lp.j_stars == [0, 1]
    assert lp.assumption_report.argmax_unique is False


def test_identical_columns_lenient():
    lp = build(np.array([[1, 1], [1, 1]]), [1.0, 2.0], strict=False)
    assert lp.p == 1 and lp.terminal.S_U == ()


def test_non_interpolating_stops_when_no_overlap():
    lp = build(np.array([[1, 0], [1, 0], [0, 0]]), [1.0, 2.0, 3.0])
    assert not lp.interpolating and lp.terminal.S_U == (2,)


def test_json_roundtrip():
    data, init = random_instance(np.random.default_rng(3), 6, 4)
    lp = limit_process(data, init, strict=False)
    text = json.dumps(lp.to_dict())
    back = LimitProcess.from_dict(json.loads(text))
    np.testing.assert_array_equal(back.jump_times, lp.jump_times)
    assert back.j_stars == lp.j_stars
    assert pred_sq_norm(back) == pred_sq_norm(lp)


# ---------------------------------------------------------------- invariants


def _check_invariants(lp, y):
    times = lp.jump_times
    assert np.all(np.diff(times[:lp.p + 1]) > 0)
    assert lp.p <= min(lp.m, lp.n)
    for k in range(lp.p):
        a, b = lp.stages[k], lp.stages[k + 1]
        j = a.j_star
        assert set(a.N_U) - set(b.N_U) == {j}
        assert set(b.S_U) == set(a.S_U) - set(lp.S[j])
        assert abs(b.ell[j]) < 1e-12
        assert np.all(b.ell >= a.ell - 1e-15)
    for st_ in lp.stages:
        assert np.all(st_.ell >= -1) and np.all(st_.ell <= 0)
    pred = pred_sq_norm(lp)
    assert pred == pytest.approx(telescoped_sq_norm(lp), rel=1e-12)
    if lp.interpolating:
        assert pred >= opt_sq_norm(y) * (1 - 1e-12)
    net = theta_at(lp, math.inf)
    assert np.allclose(np.abs(net.a), np.linalg.norm(net.W, axis=1), rtol=1e-12)
    norms = [0.5 * (np.sum(theta_at(lp, t).a ** 2) + np.sum(theta_at(lp, t).W ** 2))
             for t in list(times[:lp.p + 1]) + [times[lp.p] + 1]]
    assert all(b >= a - 1e-12 for a, b in zip(norms, norms[1:]))
    assert norms[-1] == pytest.approx(pred, rel=1e-12)


def test_invariants_random_instances():
    rng = np.random.default_rng(0)
    count = 0
    for _ in range(1000):
        n, m = int(rng.integers(1, 10)), int(rng.integers(1, 8))
        data, init = random_instance(rng, n, m)
        lp = limit_process(data, init, strict=False)
        _check_invariants(lp, data.labels)
        if lp.assumption_report.passed:
            count += 1
            assert lp.terminal.S_U == ()
            r = residual_vector(theta_at(lp, math.inf), data)
            assert np.max(np.abs(r)) < 1e-12
    assert count > 20


def test_pred_at_least_opt_many_instances():
    rng = np.random.default_rng(1)
    checked = 0
    for _ in range(2000):
        n, m = int(rng.integers(2, 20)), int(rng.integers(1, 30))
        data, init = random_instance(rng, n, m)
        A = mask_matrix(data, init).A
        pred, interp = fast_pred_sq_norm(A, data.labels)
        if interp:
            checked += 1
            assert pred >= opt_sq_norm(data.labels) * (1 - 1e-12)
    assert checked >= 1000


def test_fast_path_matches_build():
    rng = np.random.default_rng(2)
    for _ in range(300):
        data, init = random_instance(rng, int(rng.integers(1, 12)), int(rng.integers(1, 10)))
        A = mask_matrix(data, init).A
        lp = build(A, data.labels, strict=False)
        order, times, interp = jump_sequence(A, data.labels)
        assert order == lp.j_stars and interp == lp.interpolating
        np.testing.assert_allclose(times, lp.jump_times[1:lp.p + 1], rtol=1e-12)
        assert fast_pred_sq_norm(A, data.labels)[0] == pytest.approx(pred_sq_norm(lp), rel=1e-12)


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    data, init = random_instance(rng, int(rng.integers(2, 9)), int(rng.integers(2, 7)))
    A = np.array(mask_matrix(data, init).A)
    lp = build(A, data.labels, strict=False)
    if lp.assumption_report.argmax_unique is not True:
        return
    perm = rng.permutation(A.shape[1])
    lp2 = build(A[:, perm], data.labels, strict=False)
    np.testing.assert_allclose(lp2.jump_times, lp.jump_times, rtol=1e-12)
    assert [int(perm[j]) for j in lp2.j_stars] == lp.j_stars
    assert pred_sq_norm(lp2) == pytest.approx(pred_sq_norm(lp), rel=1e-12)


def test_matches_oracle_small():
    data = generate_dataset(5, 5, [1.0, -2.0, 0.5, 3.0, -1.5])
    init = sample_init(4, 5, -1.0, seed=9)
    lp = limit_process(data, init, strict=False)
    ref = run_recursion(np.eye(5).tolist(), data.labels.tolist(), init.u.tolist(), init.s.tolist())
    assert ref["j_stars"] == lp.j_stars
    assert predicted_sq_norm(ref) == pytest.approx(pred_sq_norm(lp), rel=1e-12)


def test_rotated_basis_same_process():
    data = generate_dataset(6, 9, "gaussian", basis="random-orthonormal", seed=4)
    ident = generate_dataset(6, 6, data.labels)
    init = sample_init(5, 6, -1.0, seed=5)
    lp_id = limit_process(ident, init, strict=False)
    lp_rot = limit_process(data, init.rotated(data.rows), strict=False)
    np.testing.assert_allclose(lp_rot.jump_times, lp_id.jump_times, rtol=1e-12)
    net = theta_at(lp_rot, math.inf)
    assert isinstance(net, DenseNetwork) and net.W.shape == (5, 9)
    if lp_rot.interpolating:
        assert np.max(np.abs(residual_vector(net, data))) < 1e-12
