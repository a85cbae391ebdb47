import math

import numpy as np
import pytest

from saddle2saddle.analysis import compare_jumps
from saddle2saddle.core import DenseNetwork, InitDraw, generate_dataset, sample_init
from saddle2saddle.errors import BadScale, CollapsedNeuron, DimensionMismatch, NonFinite
from saddle2saddle.limit import limit_process, pred_sq_norm
from saddle2saddle.trainer import (ScaledNeuron, ScaledState, TrainerConfig, accelerated_time,
                                   dense_gd_step, epoch_of, fit_events, gd_step,
                                   gradient_diagnostics, he_uniform_init, renormalize,
                                   scaled_outputs, train, train_dense)


def test_renormalize_examples():
    nr = renormalize(ScaledNeuron(np.array([4.0, 0.0]), 4.0, 0.0, 1.0))
    assert np.linalg.norm(nr.v) == 1.0 and nr.b == 1.0 and nr.c == pytest.approx(math.log(4))
    same = renormalize(ScaledNeuron(np.array([0.6, 0.8]), 1.0, -3.0, -1.0))
    assert same.b == 1.0 and same.c == -3.0
    np.testing.assert_array_equal(same.v, [0.6, 0.8])
    with pytest.raises(CollapsedNeuron):
        renormalize(ScaledNeuron(np.zeros(2), 1.0, 0.0, 1.0))


def test_renormalize_preserves_parameters():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(10_000):
        v = rng.standard_normal(5) * rng.uniform(0.01, 100)
        nr = ScaledNeuron(v, float(rng.uniform(0.01, 100)), float(rng.uniform(-5, 5)),
                          float(rng.choice([-1.0, 1.0])))
        out = renormalize(nr)
        worst = max(worst, np.max(np.abs(out.w - nr.w)) / np.linalg.norm(nr.w),
                    abs(out.a - nr.a) / abs(nr.a))
    assert worst < 1e-12


def test_renormalize_near_balanced_lands_in_band():
    # training keeps |a| close to |w|, so the geometric mean puts both mantissas in band
    rng = np.random.default_rng(1)
    for _ in range(1000):
        v = rng.standard_normal(4)
        v *= rng.uniform(1e-3, 1e3) / np.linalg.norm(v)
        b = float(np.linalg.norm(v) * rng.uniform(0.98, 1.02))
        out = renormalize(ScaledNeuron(v, b, 0.0, 1.0))
        assert 0.5 <= np.linalg.norm(out.v) <= 2 and 0.5 <= out.b <= 2


def test_renormalize_balanced_lands_in_band():
    nr = renormalize(ScaledNeuron(np.array([0.0, 7.0]), 7.0, 1.0, 1.0))
    assert np.linalg.norm(nr.v) == pytest.approx(1.0) and nr.b == pytest.approx(1.0)


def test_gd_step_hand_value():
    data = generate_dataset(1, 1, [1.0])
    state = ScaledState(np.array([[0.5]]), np.array([0.5]), np.array([0.0]), np.array([1.0]))
    new = gd_step(state, data, 0.01)
    w = math.exp(new.c[0]) * new.V[0, 0]
    a = new.s[0] * math.exp(new.c[0]) * new.b[0]
    assert w - 0.5 == pytest.approx(0.00375, rel=1e-12)
    assert a - 0.5 == pytest.approx(0.00375, rel=1e-12)
    diag = gradient_diagnostics(state, data)
    assert diag.fD[0, 0] == pytest.approx(0.75)


def test_dense_step_matches_hand_value():
    data = generate_dataset(1, 1, [1.0])
    net = dense_gd_step(DenseNetwork(np.array([0.5]), np.array([[0.5]])), data, 0.01)
    assert net.a[0] == pytest.approx(0.50375) and net.W[0, 0] == pytest.approx(0.50375)


def test_dead_neuron_not_updated():
    data = generate_dataset(3, 3, [1.0, 2.0, 3.0])
    state = ScaledState(np.array([[-1.0, -0.5, 0.0], [0.5, 0.0, 0.0]]), np.array([1.0, 0.5]),
                        np.zeros(2), np.ones(2))
    new = gd_step(state, data, 0.1)
    np.testing.assert_array_equal(new.V[0], state.V[0])
    assert new.b[0] == state.b[0]
    assert not np.array_equal(new.V[1], state.V[1])


def test_output_sign_preserved():
    data = generate_dataset(4, 4, [1.0, -1.0, 2.0, -0.5])
    state = ScaledState.from_init(sample_init(6, 4, -1.0, seed=2))
    for _ in range(200):
        state = gd_step(state, data, 0.05)
        assert np.all(state.b > 0)


def test_underflowing_terms_are_zero():
    data = generate_dataset(2, 2, [1.0, 1.0])
    state = ScaledState(np.array([[1.0, 1.0]]), np.ones(1), np.array([-400.0]), np.ones(1))
    np.testing.assert_array_equal(scaled_outputs(state, data), [0.0, 0.0])
    state.c[0] = -300.0
    assert np.all(scaled_outputs(state, data) > 0)


def test_gd_step_dimension_check():
    data = generate_dataset(2, 2, [1.0, 1.0])
    with pytest.raises(DimensionMismatch):
        gd_step(ScaledState.from_init(sample_init(1, 3, -1.0)), data, 0.1)


def test_accelerated_time():
    assert accelerated_time(507_000, 0.01, -500.0) == pytest.approx(10.14)
    assert accelerated_time(0, 0.3, -500.0) == 0
    assert accelerated_time(500, 1.0, -500.0) == 1
    assert epoch_of(10.14, 0.01, -500.0) == pytest.approx(507_000)
    with pytest.raises(BadScale):
        accelerated_time(1, 0.1, 0.0)


def test_trainer_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(lr=0)
    with pytest.raises(ValueError):
        TrainerConfig(renorm_band=(1.0, 2.0))
    with pytest.raises(ValueError):
        TrainerConfig(engine="gpu")


def test_zero_epochs_single_sample():
    data = generate_dataset(5, 5, "abs-gaussian", seed=1)
    traj = train(data, sample_init(3, 5, -500.0, seed=0), TrainerConfig(max_epochs=0))
    assert traj.epoch.tolist() == [0]
    assert traj.final_loss == pytest.approx(np.sum(data.labels ** 2) / 10, rel=1e-12)
    assert traj.outcome == "budget"
    assert len(list(traj.csv_rows())) == 1


def _equivalence_setup():
    data = generate_dataset(8, 8, "gaussian", seed=3)
    init = sample_init(5, 8, math.log(1e-6), seed=4)
    return data, init


@pytest.mark.parametrize("engine", ["numba", "numpy"])
def test_log_domain_matches_dense(engine):
    data, init = _equivalence_setup()
    lr, epochs = 0.2, 10_000
    cfg = TrainerConfig(lr=lr, max_epochs=epochs, loss_stop=0.0, record_every=100, engine=engine)
    traj = train(data, init, cfg)
    dense = train_dense(data, DenseNetwork.from_init(init), lr, epochs, record_every=100, engine="numpy")
    assert traj.epoch.tolist() == dense.history_epochs.tolist() or set(dense.history_epochs) <= set(traj.epoch)
    lookup = dict(zip(traj.epoch.tolist(), traj.loss))
    rel = [abs(lookup[e] - v) / v for e, v in zip(dense.history_epochs.tolist(), dense.loss_history)]
    assert max(rel) < 1e-9
    assert dense.loss_history[-1] < 0.9 * dense.loss_history[0]  # the run actually moved


def test_numba_dense_matches_numpy_dense():
    data, init = _equivalence_setup()
    a = train_dense(data, DenseNetwork.from_init(init), 0.2, 10_000, record_every=100, engine="numba")
    b = train_dense(data, DenseNetwork.from_init(init), 0.2, 10_000, record_every=100, engine="numpy")
    np.testing.assert_allclose(a.loss_history, b.loss_history, rtol=1e-9)
    np.testing.assert_allclose(a.net.W, b.net.W, rtol=1e-9, atol=1e-15)


def _rotation_runs(engine):
    ident = generate_dataset(8, 8, "gaussian", seed=5)
    rot = generate_dataset(8, 12, ident.labels, basis="random-orthonormal", seed=6)
    init = sample_init(5, 8, -30.0, seed=7)
    cfg = TrainerConfig(lr=0.2, max_epochs=10_000, loss_stop=0.0, record_every=100, engine=engine)
    return train(ident, init, cfg), train(rot, init.rotated(rot.rows), cfg)


@pytest.mark.parametrize("engine", ["numba", "numpy"])
def test_rotation_invariance(engine):
    a, b = _rotation_runs(engine)
    assert a.epoch.tolist() == b.epoch.tolist()
    assert np.max(np.abs(a.loss - b.loss) / a.loss) < 1e-8


def test_e2_style_norm_and_jumps():
    data = generate_dataset(2, 2, [1.0, 2.0])
    u = np.array([[1.0, -1.0], [-1.0, 1.0]]) / math.sqrt(2)
    init = InitDraw(-200.0, np.ones(2), u)
    lp = limit_process(data, init)
    assert lp.j_stars == [1, 0]
    traj = train(data, init, TrainerConfig(lr=0.05, record_every=50))
    assert traj.outcome == "converged"
    assert abs(traj.final_sq_norm() - pred_sq_norm(lp)) / pred_sq_norm(lp) < 0.01
    assert compare_jumps(traj, lp).max_rel_error < 0.10


def test_fit_events_and_budget():
    data = generate_dataset(3, 3, [1.0, 2.0, 3.0])
    # neuron covers data 0 and 1; datum 2 is never reached
    init = InitDraw(-20.0, np.ones(1), np.array([[1.0, 1.0, -1.0]]) / math.sqrt(3))
    traj = train(data, init, TrainerConfig(lr=0.1, max_epochs=20_000, record_every=100))
    assert traj.outcome == "budget"
    events = fit_events(traj)
    assert set(events) == {0, 1}
    for i, e in events.items():
        assert e in traj.epoch.tolist()
    looser = fit_events(traj, threshold=0.25)
    assert all(looser[i] <= events[i] for i in events)


def test_recorded_diagnostics_small_run():
    data = generate_dataset(10, 10, "abs-gaussian", seed=8)
    init = sample_init(4, 10, -60.0, seed=9, signs="positive")
    traj = train(data, init, TrainerConfig(lr=0.05, record_every=50, record_directions=True))
    assert np.all(traj.fD_norm <= traj.fD_bound[:, None] * (1 + 1e-9) + 1e-300)
    assert traj.balance.max() < 1e-2
    assert np.all(np.diff(traj.loss) <= 1e-9 * traj.loss[0])
    # a neuron inactive on a datum never becomes active again
    inactive = traj.directions <= 0
    assert np.all(inactive[1:] | ~inactive[:-1])


def test_he_uniform_ranges():
    net = he_uniform_init(16, 9, seed=0)
    assert np.all(np.abs(net.W) <= 1 / 3) and np.all(np.abs(net.a) <= 0.25)
    data = generate_dataset(9, 9, "gaussian", seed=1)
    res = train_dense(data, net, 0.01, 50_000, loss_stop=1e-10)
    assert res.loss < res.loss_history[0]


def test_collapsed_or_overflow_raises():
    data = generate_dataset(2, 2, [1e200, 1e200])
    init = sample_init(2, 2, 0.0, seed=1, signs="positive")
    with pytest.raises((NonFinite, CollapsedNeuron)), np.errstate(all="ignore"):
        train(data, init, TrainerConfig(lr=10.0, max_epochs=1000))
