"""Monte-Carlo checks of the probabilistic statements about random masks.

Every trial draws from its own counter-based generator keyed by
``(seed, trial)``, so trial ``t`` of a run can be replayed in isolation and
the result does not depend on how trials are split across workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import OrthonormalDataset, mask_matrix, sample_init
from .errors import BadDelta
from .limit import bias_bound, check_assumptions, fast_pred_sq_norm, jump_sequence, opt_sq_norm

Z95 = 1.959963984540054


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Generator for trial ``trial`` of run ``seed`` (Philox keyed by the pair)."""
    return np.random.Generator(np.random.Philox(key=[int(seed), int(trial)]))


def _map_trials(fn, trials: int, workers: int | None):
    if workers is None or workers <= 1:
        return [fn(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(trials)))  # map keeps trial order


@dataclass
class McReport:
    trials: int
    successes: int
    theoretical_bound: float
    excluded: int = 0
    label: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.successes <= self.trials:
            raise ValueError(f"successes={self.successes} outside [0, trials={self.trials}]")

    @property
    def empirical_p(self) -> float:
        return self.successes / self.trials if self.trials else float("nan")

    @property
    def ci95_halfwidth(self) -> float:
        if not self.trials:
            return float("nan")
        p = self.empirical_p
        return Z95 * math.sqrt(p * (1.0 - p) / self.trials)

    @property
    def vacuous(self) -> bool:
        """A bound that is not positive says nothing about a probability."""
        return not (self.theoretical_bound > 0)

    @property
    def passed(self) -> bool:
        if self.vacuous:
            return True
        return self.empirical_p + self.ci95_halfwidth >= self.theoretical_bound

    def within(self, k: float = 3.0) -> bool:
        """``empirical_p >= bound - k * ci``; vacuous bounds pass."""
        return self.vacuous or self.empirical_p >= self.theoretical_bound - k * self.ci95_halfwidth

    @property
    def status(self) -> str:
        if self.vacuous:
            return "vacuous-pass"
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict:
        bound = self.theoretical_bound
        return {
            "label": self.label,
            "params": self.params,
            "trials": self.trials,
            "successes": self.successes,
            "excluded": self.excluded,
            "empirical_p": self.empirical_p,
            "ci95_halfwidth": self.ci95_halfwidth,
            "theoretical_bound": bound if math.isfinite(bound) else None,
            "status": self.status,
            "passed": self.passed,
        }


MC_CSV_HEADER = ("label", "n_plus", "n_minus", "m", "trials", "successes", "excluded",
                 "empirical_p", "ci95_halfwidth", "theoretical_bound", "status")


def report_row(rep: McReport) -> tuple:
    p = rep.params
    return (rep.label, p.get("n_plus", ""), p.get("n_minus", ""), p.get("m", ""),
            rep.trials, rep.successes, rep.excluded, rep.empirical_p,
            rep.ci95_halfwidth, rep.theoretical_bound, rep.status)


# ---------------------------------------------------------------- assumption


def prop42_bound(n_plus: int, n_minus: int, m: int) -> float:
    """Lower bound on the probability that the mask has nonzero, pairwise distinct rows and columns.

    ``1 - n (3/4)^m - m(m+3)/2 (1/2)^(min(n_+, n_-) + 1)``. May be negative.
    """
    if min(n_plus, n_minus, m) < 0:
        raise ValueError("counts must be nonnegative")
    n = n_plus + n_minus
    return 1.0 - n * 0.75 ** m - m * (m + 3) / 2.0 * 0.5 ** (min(n_plus, n_minus) + 1)


def _signed_labels(n_plus: int, n_minus: int, rng: np.random.Generator,
                   magnitudes: str = "unit") -> np.ndarray:
    n = n_plus + n_minus
    signs = np.concatenate([np.ones(n_plus), -np.ones(n_minus)])
    signs = signs[rng.permutation(n)]
    if magnitudes == "unit":
        mag = np.ones(n)
    elif magnitudes == "abs-gaussian":
        mag = np.abs(rng.standard_normal(n))
        mag[mag == 0] = 1.0
    else:
        raise ValueError(f"label magnitudes must be 'unit' or 'abs-gaussian', got {magnitudes!r}")
    return signs * mag


def _random_mask(n_plus, n_minus, m, rng, magnitudes="unit"):
    y = _signed_labels(n_plus, n_minus, rng, magnitudes)
    n = y.shape[0]
    # only the mask matters here, so the scale is irrelevant
    init = sample_init(m, n, alpha_log=-1.0, seed=rng)
    return mask_matrix(OrthonormalDataset(labels=y, d=n), init).A, y


def mc_assumption(n_plus: int, n_minus: int, m: int, trials: int, seed: int = 0,
                  workers: int | None = None) -> McReport:
    """Frequency of a well-formed mask (rows, columns nonzero, columns distinct)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if n_plus + n_minus < 1:
        raise ValueError("need at least one datum")

    def one(t):
        A, y = _random_mask(n_plus, n_minus, m, trial_rng(seed, t))
        return check_assumptions(A, y).mask_ok

    hits = sum(_map_trials(one, trials, workers))
    return McReport(trials=trials, successes=int(hits),
                    theoretical_bound=prop42_bound(n_plus, n_minus, m),
                    label="assumption",
                    params={"n_plus": n_plus, "n_minus": n_minus, "m": m, "seed": seed})


def assumption_grid(sizes=(8, 16, 32, 64), widths=(10, 20, 30), trials: int = 1000,
                    seed: int = 0, workers: int | None = None) -> list[McReport]:
    """``mc_assumption`` over ``n_+ = n_- in sizes`` and ``m in widths``, in grid order."""
    out = []
    for i, k in enumerate(sizes):
        for j, m in enumerate(widths):
            out.append(mc_assumption(k, k, m, trials, seed=seed * 1000 + i * len(widths) + j,
                                     workers=workers))
    return out


# ---------------------------------------------------------------- halving


def admissible_delta(rho: float) -> float:
    """Supremum of admissible band half-widths, ``rho ln2 / (8 (1 - rho))``."""
    return rho * math.log(2.0) / (8.0 * (1.0 - rho))


def k_star(n: int, rho: float) -> float:
    return (1.0 - rho) * math.log(n) / math.log(2.0)


def halving_bound(n: int, delta: float, rho: float) -> float:
    """``1 - 3 ln(n) exp(-(4/3) n^(rho/2) delta^2)`` for one fixed ordering."""
    return 1.0 - 3.0 * math.log(n) * math.exp(-4.0 / 3.0 * n ** (rho / 2.0) * delta ** 2)


def halving_union_bound(n: int, m: int, delta: float, rho: float) -> float:
    """The same bound after the union over all ``m^k*`` orderings (evaluated, never sampled)."""
    log_fail = (math.log(3.0 * math.log(n)) + k_star(n, rho) * math.log(m)
                - 4.0 / 3.0 * n ** (rho / 2.0) * delta ** 2)
    return 1.0 - math.exp(min(log_fail, 700.0))


@dataclass
class HalfSplitTrace:
    """Counts ``|S_U^k|`` per trial and step with derived per-step statistics.

    ``counts[t, k]`` for ``k = 0..steps``; ``G[t, k-1]`` marks the event that
    step ``k`` removed within ``delta`` of half of the previous unfitted set.
    """

    n: int
    m: int
    delta: float
    rho: float
    ordering: str
    seed: int
    counts: np.ndarray
    theoretical_bound: float
    union_bound: float

    @property
    def trials(self) -> int:
        return self.counts.shape[0]

    @property
    def k_star(self) -> float:
        return k_star(self.n, self.rho)

    @property
    def steps(self) -> int:
        return self.counts.shape[1] - 1

    @property
    def G(self) -> np.ndarray:
        prev = self.counts[:, :-1].astype(float)
        cur = self.counts[:, 1:].astype(float)
        return np.abs(cur - prev / 2.0) <= self.delta * prev

    @property
    def all_G_frequency(self) -> float:
        return float(np.mean(np.all(self.G, axis=1))) if self.steps else 1.0

    @property
    def mean_ratio(self) -> np.ndarray:
        """Per step, the mean over trials of ``|S_U^k| / |S_U^(k-1)|`` (trials with an empty previous set skipped)."""
        prev = self.counts[:, :-1].astype(float)
        cur = self.counts[:, 1:].astype(float)
        out = np.full(self.steps, np.nan)
        for k in range(self.steps):
            ok = prev[:, k] > 0
            if ok.any():
                out[k] = float(np.mean(cur[ok, k] / prev[ok, k]))
        return out

    def binomial_z(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-step z-scores of the first two conditional moments against ``Bin(prev, 1/2)``.

        The first is the standardized sum ``sum(cur - prev/2) / sqrt(sum prev/4)``.
        The second compares the sample variance of the standardized residuals
        with 1, in units of its standard error ``sqrt(2 / trials)``.
        """
        prev = self.counts[:, :-1].astype(float)
        cur = self.counts[:, 1:].astype(float)
        z_mean = np.full(self.steps, np.nan)
        z_var = np.full(self.steps, np.nan)
        for k in range(self.steps):
            ok = prev[:, k] > 0
            if ok.sum() < 2:
                continue
            dev = cur[ok, k] - prev[ok, k] / 2.0
            var = prev[ok, k] / 4.0
            z_mean[k] = dev.sum() / math.sqrt(var.sum())
            r = dev / np.sqrt(var)
            z_var[k] = (np.mean(r ** 2) - 1.0) / math.sqrt(2.0 / ok.sum())
        return z_mean, z_var

    @property
    def vacuous(self) -> bool:
        return not (self.theoretical_bound > 0)

    @property
    def passed(self) -> bool:
        return self.vacuous or self.all_G_frequency >= self.theoretical_bound

    def to_dict(self) -> dict:
        z_mean, z_var = self.binomial_z()

        def clean(a):
            return [None if not math.isfinite(v) else float(v) for v in a]

        return {
            "label": "half-split",
            "params": {"n": self.n, "m": self.m, "delta": self.delta, "rho": self.rho,
                       "ordering": self.ordering, "seed": self.seed},
            "trials": self.trials,
            "k_star": self.k_star,
            "steps": self.steps,
            "all_G_frequency": self.all_G_frequency,
            "mean_ratio": clean(self.mean_ratio),
            "mean_count": clean(self.counts.mean(axis=0)),
            "z_mean": clean(z_mean),
            "z_var": clean(z_var),
            "theoretical_bound": self.theoretical_bound,
            "union_bound": self.union_bound,
            "status": "vacuous-pass" if self.vacuous else ("pass" if self.passed else "fail"),
        }


def half_split_stats(n: int, m: int, trials: int, delta: float, rho: float = 0.25,
                     seed: int = 0, ordering: str = "fixed", steps: int | None = None,
                     workers: int | None = None) -> HalfSplitTrace:
    """Simulate the unfitted-set recursion on all-positive data.

    ``fixed`` removes the support of neuron ``k`` at step ``k`` with mask
    entries drawn directly as independent Bernoulli(1/2), which is the law of
    the mask conditionally on every output sign being positive.
    ``algorithmic`` instead follows the activation order chosen by the limit
    process on abs-Gaussian labels and a sampled positive-sign init; there the
    conditional binomial law need not hold.
    Steps run for ``k <= k*`` (capped at ``m``) unless ``steps`` is given.
    """
    if not 0 < rho < 1:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    hi = admissible_delta(rho)
    if not 0 < delta < hi:
        raise BadDelta(f"delta={delta} outside (0, {hi:.6g}) for rho={rho}")
    if trials < 1 or n < 1 or m < 1:
        raise ValueError("need trials >= 1, n >= 1, m >= 1")
    if ordering not in ("fixed", "algorithmic"):
        raise ValueError(f"ordering must be 'fixed' or 'algorithmic', got {ordering!r}")
    if steps is None:
        # k* is often an integer in exact arithmetic (n a power of two); keep it
        steps = min(int(math.floor(k_star(n, rho) + 1e-9)), m)
    elif not 0 <= steps <= m:
        raise ValueError(f"steps must lie in [0, m={m}], got {steps}")

    def one(t):
        rng = trial_rng(seed, t)
        counts = np.empty(steps + 1, dtype=np.int64)
        counts[0] = n
        if ordering == "fixed":
            A = rng.integers(0, 2, size=(n, steps), dtype=np.int8).astype(bool)
            order = range(steps)
        else:
            y = np.abs(rng.standard_normal(n))
            init = sample_init(m, n, alpha_log=-1.0, seed=rng, signs="positive")
            A = mask_matrix(OrthonormalDataset(labels=y, d=n), init).A
            order = jump_sequence(A, y)[0]
        unfit = np.ones(n, dtype=bool)
        k = 0
        for j in order:
            if k == steps:
                break
            unfit &= ~A[:, j]
            k += 1
            counts[k] = unfit.sum()
        counts[k + 1:] = counts[k]  # the recursion stopped early; nothing more is removed
        return counts

    counts = np.stack(_map_trials(one, trials, workers))
    return HalfSplitTrace(n=n, m=m, delta=delta, rho=rho, ordering=ordering, seed=seed,
                          counts=counts, theoretical_bound=halving_bound(n, delta, rho),
                          union_bound=halving_union_bound(n, m, delta, rho))


# ---------------------------------------------------------------- norm bound


def mc_bias_bound(n_plus: int, n_minus: int, m: int, label_spec: str = "unit",
                  trials: int = 1000, seed: int = 0, workers: int | None = None) -> McReport:
    """Frequency of ``pred_sq_norm <= bias_bound`` over random masks.

    Trials whose limit process does not interpolate are excluded from the
    frequency and counted in ``excluded``. The probability in the norm bound
    has an unspecified constant, so ``theoretical_bound`` is NaN and the
    report is a plain frequency.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")

    def one(t):
        A, y = _random_mask(n_plus, n_minus, m, trial_rng(seed, t), label_spec)
        pred, ok = fast_pred_sq_norm(A, y)
        if not ok:
            return None
        return pred <= bias_bound(y), pred / opt_sq_norm(y)

    results = _map_trials(one, trials, workers)
    kept = [r for r in results if r is not None]
    hits = sum(1 for r in kept if r[0])
    ratios = [r[1] for r in kept]
    params = {"n_plus": n_plus, "n_minus": n_minus, "m": m, "label_spec": label_spec,
              "seed": seed,
              "mean_pred_over_opt": float(np.mean(ratios)) if ratios else None,
              "max_pred_over_opt": float(np.max(ratios)) if ratios else None}
    return McReport(trials=len(kept), successes=hits, theoretical_bound=float("nan"),
                    excluded=len(results) - len(kept), label="bias-bound", params=params)


__all__ = [
    "McReport", "HalfSplitTrace", "trial_rng", "prop42_bound", "mc_assumption",
    "assumption_grid", "admissible_delta", "k_star", "halving_bound", "halving_union_bound",
    "half_split_stats", "mc_bias_bound", "MC_CSV_HEADER", "report_row",
]
