import json
import math

import numpy as np
import pytest

from saddle2saddle.errors import BadDelta
from saddle2saddle.limit import bias_bound, build, opt_sq_norm, pred_sq_norm
from saddle2saddle.stochastic import (McReport, admissible_delta, assumption_grid, half_split_stats,
                                      halving_bound, halving_union_bound, k_star, mc_assumption,
                                      mc_bias_bound, prop42_bound, trial_rng)


def test_prop42_values():
    assert prop42_bound(32, 32, 20) == pytest.approx(0.7970, abs=5e-4)
    assert prop42_bound(64, 64, 30) == pytest.approx(0.9771, abs=5e-4)
    assert prop42_bound(1, 1, 1) == pytest.approx(-1.0)


def test_report_ci_and_vacuous():
    rep = McReport(trials=100, successes=80, theoretical_bound=0.9)
    assert rep.empirical_p == 0.8
    assert rep.ci95_halfwidth == pytest.approx(1.96 * math.sqrt(0.8 * 0.2 / 100), rel=1e-3)
    assert not rep.passed and rep.status == "fail"
    assert McReport(trials=10, successes=0, theoretical_bound=-1.0).status == "vacuous-pass"
    with pytest.raises(ValueError):
        McReport(trials=3, successes=4, theoretical_bound=0.5)
    json.dumps(McReport(5, 5, float("nan")).to_dict(), allow_nan=False)


def test_trial_rng_reproducible_in_isolation():
    a = trial_rng(3, 17).random(5)
    assert np.array_equal(a, trial_rng(3, 17).random(5))
    assert not np.array_equal(a, trial_rng(3, 18).random(5))


def test_assumption_large_width_certain():
    m = 80  # (3/4)^80 < 1e-9
    rep = mc_assumption(64, 64, m, 200, seed=1)
    assert rep.theoretical_bound > 0.999 and rep.empirical_p == 1.0


def test_assumption_tiny_vacuous():
    rep = mc_assumption(1, 1, 1, 50, seed=2)
    assert rep.vacuous and rep.passed


def test_assumption_parallel_equals_serial():
    a = mc_assumption(8, 8, 12, 300, seed=4)
    b = mc_assumption(8, 8, 12, 300, seed=4, workers=4)
    assert a.successes == b.successes


def test_assumption_grid_within_three_ci():
    for rep in assumption_grid(trials=1000, seed=5):
        assert rep.within(3.0), rep.to_dict()


def test_half_split_enumeration_n2():
    trace = half_split_stats(2, 1, 40_000, 0.02, 0.25, seed=6, steps=1)
    freq = np.bincount(trace.counts[:, 1], minlength=3) / trace.trials
    sigma = math.sqrt(0.25 * 0.75 / trace.trials)
    for got, want in zip(freq, [0.25, 0.5, 0.25]):
        assert abs(got - want) < 4 * sigma


def test_half_split_rejects_bad_delta():
    assert admissible_delta(0.25) == pytest.approx(0.25 * math.log(2) / 6)
    with pytest.raises(BadDelta):
        half_split_stats(64, 8, 10, 0.05, 0.25)
    with pytest.raises(BadDelta):
        half_split_stats(64, 8, 10, 0.0, 0.25)


def test_half_split_counts_nonincreasing_and_kstar():
    trace = half_split_stats(1024, 20, 100, 1 / 40, 0.25, seed=7)
    assert trace.k_star == pytest.approx(7.5)
    assert trace.steps == 7
    assert np.all(np.diff(trace.counts, axis=1) <= 0)
    assert trace.G.shape == (100, 7)


def test_half_split_bounds_vacuous_at_desk_scale():
    assert halving_bound(4096, 1 / 40, 0.25) < 0
    assert halving_union_bound(4096, 20, 1 / 40, 0.25) < 0
    assert k_star(4096, 0.25) == pytest.approx(9.0)
    trace = half_split_stats(256, 8, 20, 1 / 40, 0.25, seed=8)
    assert trace.vacuous and trace.passed


def test_half_split_algorithmic_runs():
    trace = half_split_stats(256, 12, 50, 1 / 40, 0.25, seed=9, ordering="algorithmic")
    assert np.all(np.diff(trace.counts, axis=1) <= 0)
    assert trace.to_dict()["params"]["ordering"] == "algorithmic"


def test_bias_bound_unit_labels():
    rep = mc_bias_bound(64, 0, 40, "unit", 1000, seed=10)
    # each trial misses some datum with probability about 64 * (3/4)^40, so a few exclusions are expected
    assert rep.excluded <= 5 and rep.trials + rep.excluded == 1000
    assert rep.empirical_p >= 0.99


def test_bias_bound_excludes_non_interpolating():
    rep = mc_bias_bound(32, 32, 4, "unit", 100, seed=11)
    assert rep.excluded > 0 and rep.trials + rep.excluded == 100


def test_one_jump_forced_mask():
    n = 16
    lp = build(np.ones((n, 1), dtype=int), np.ones(n))
    assert lp.p == 1
    assert pred_sq_norm(lp) == pytest.approx(math.sqrt(n))
    assert opt_sq_norm(np.ones(n)) == pytest.approx(math.sqrt(n))
    assert pred_sq_norm(lp) <= bias_bound(np.ones(n))


def test_bias_frequency_observation_over_widths():
    # reported, not asserted as a law: more neurons usually cover the data sooner
    freqs = [mc_bias_bound(32, 0, m, "unit", 200, seed=12).empirical_p for m in (20, 40)]
    assert all(0 <= f <= 1 for f in freqs)
