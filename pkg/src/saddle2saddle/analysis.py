"""Compare trained trajectories with the limit process.

Times handed to these functions are in epochs unless noted; ``lr`` and
``alpha_log`` convert them to accelerated time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DenseNetwork, generate_dataset, sample_init, mask_matrix
from .errors import ClusterMismatch, DegenerateFit, TooFewSamples
from .limit import LimitProcess, exponent_at, fast_pred_sq_norm, opt_sq_norm, bias_bound
from .trainer import ScaledState, Trajectory, accelerated_time, epoch_of

CLUSTER_RTOL = 0.01
SLOPE_MARGIN = 0.2
MIN_WINDOW_SAMPLES = 10


def cluster_events(epochs, rtol: float = CLUSTER_RTOL) -> list[list[int]]:
    """Group indices of sorted event epochs; a new group starts when the gap exceeds ``rtol`` of the previous epoch."""
    epochs = np.asarray(epochs, dtype=float)
    order = np.argsort(epochs, kind="stable")
    groups: list[list[int]] = []
    prev = None
    for idx in order:
        e = epochs[idx]
        if prev is None or e - prev > rtol * abs(prev):
            groups.append([int(idx)])
        else:
            groups[-1].append(int(idx))
        prev = e
    return groups


def detect_jumps(traj_or_events, expected: int | None = None, rtol: float = CLUSTER_RTOL) -> list[float]:
    """Cluster fit events into jumps and return the first epoch of each cluster, sorted.

    Accepts a :class:`Trajectory` or a plain mapping/sequence of event epochs.
    """
    _, reps = _clusters(traj_or_events, rtol)
    if expected is not None and len(reps) != expected:
        raise ClusterMismatch(f"found {len(reps)} jump clusters, expected {expected}")
    return reps


def _event_map(traj_or_events) -> dict[int, float]:
    if isinstance(traj_or_events, Trajectory):
        return {i: float(e) for i, e in enumerate(traj_or_events.fit_epochs) if e >= 0}
    if isinstance(traj_or_events, dict):
        return {int(i): float(e) for i, e in traj_or_events.items()}
    return {i: float(e) for i, e in enumerate(traj_or_events)}


def _clusters(traj_or_events, rtol):
    events = _event_map(traj_or_events)
    keys = list(events)
    groups = cluster_events([events[k] for k in keys], rtol)
    sets = [frozenset(keys[g] for g in grp) for grp in groups]
    reps = [min(events[keys[g]] for g in grp) for grp in groups]
    return sets, reps


@dataclass
class JumpComparison:
    predicted: list[float]
    observed: list[float]
    observed_epochs: list[float]
    rel_error: list[float]
    predicted_sets: list[tuple[int, ...]]
    observed_sets: list[tuple[int, ...]]

    @property
    def sets_match(self) -> list[bool]:
        return [a == b for a, b in zip(self.predicted_sets, self.observed_sets)]

    @property
    def max_rel_error(self) -> float:
        return max(self.rel_error) if self.rel_error else 0.0

    def to_dict(self) -> dict:
        return {
            "predicted": self.predicted,
            "observed": self.observed,
            "observed_epochs": self.observed_epochs,
            "rel_error": self.rel_error,
            "max_rel_error": self.max_rel_error,
            "predicted_sets": [list(s) for s in self.predicted_sets],
            "observed_sets": [list(s) for s in self.observed_sets],
            "sets_match": self.sets_match,
        }


def compare_jumps(traj, lp: LimitProcess, lr: float | None = None, alpha_log: float | None = None,
                  rtol: float = CLUSTER_RTOL) -> JumpComparison:
    """Match clustered fit events against the predicted jump times ``t_1..t_p``."""
    lr = traj.lr if lr is None else lr
    alpha_log = traj.alpha_log if alpha_log is None else alpha_log
    sets, reps = _clusters(traj, rtol)
    if len(reps) != lp.p:
        raise ClusterMismatch(f"found {len(reps)} jump clusters, expected {lp.p}")
    predicted = [float(t) for t in lp.jump_times[1:lp.p + 1]]
    observed = [float(accelerated_time(e, lr, alpha_log)) for e in reps]
    rel = [abs(o - p) / p for o, p in zip(observed, predicted)]
    return JumpComparison(
        predicted=predicted,
        observed=observed,
        observed_epochs=[float(e) for e in reps],
        rel_error=rel,
        predicted_sets=[tuple(s) for s in lp.fitted_sets],
        observed_sets=[tuple(sorted(s)) for s in sets],
    )


@dataclass
class SlopeEntry:
    neuron: int
    stage: int
    samples: int
    fitted: float
    predicted: float

    @property
    def rel_error(self) -> float:
        if self.predicted == 0:
            return abs(self.fitted)
        return abs(self.fitted - self.predicted) / abs(self.predicted)


@dataclass
class SlopeReport:
    entries: list[SlopeEntry]
    skipped: list[tuple[int, int, int]] = field(default_factory=list)  # (neuron, stage, samples)

    @property
    def max_rel_error(self) -> float:
        unfitted = [e.rel_error for e in self.entries if e.predicted > 0]
        return max(unfitted) if unfitted else 0.0

    def by_neuron(self) -> dict[int, list[SlopeEntry]]:
        out: dict[int, list[SlopeEntry]] = {}
        for e in self.entries:
            out.setdefault(e.neuron, []).append(e)
        for v in out.values():
            v.sort(key=lambda e: e.stage)
        return out

    def slopes_nonincreasing(self, rtol: float = 0.05) -> bool:
        """Fitted slopes of each still-growing neuron never rise from one stage to the next (within ``rtol``)."""
        for entries in self.by_neuron().values():
            grow = [e for e in entries if e.predicted > 0]
            for prev, nxt in zip(grow, grow[1:]):
                if nxt.fitted > prev.fitted * (1 + rtol):
                    return False
        return True

    def to_dict(self) -> dict:
        return {
            "entries": [dict(neuron=e.neuron, stage=e.stage, samples=e.samples, fitted=e.fitted,
                             predicted=e.predicted, rel_error=e.rel_error) for e in self.entries],
            "skipped": [list(s) for s in self.skipped],
            "max_rel_error": self.max_rel_error,
        }


def ols(x, y) -> tuple[float, float, float]:
    """Least-squares line ``y = slope x + intercept`` and its ``r^2``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0:
        raise DegenerateFit("all x values are equal")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    ss_tot = np.sum((y - ym) ** 2)
    ss_res = np.sum((y - (slope * x + intercept)) ** 2)
    r2 = 1.0 if ss_tot == 0 else float(1 - ss_res / ss_tot)
    return slope, intercept, r2


def segment_slopes(traj: Trajectory, lp: LimitProcess, lr: float | None = None,
                   alpha_log: float | None = None, include_fitted: bool = False,
                   margin: float = SLOPE_MARGIN, min_samples: int = MIN_WINDOW_SAMPLES) -> SlopeReport:
    """Per-stage least-squares slope of ``ln |w_j|`` against epoch, next to ``lr |D_j^(k)|``.

    Windows are the predicted inter-jump intervals with ``margin`` trimmed at
    both ends. Windows with fewer than ``min_samples`` samples are listed in
    ``skipped``; if nothing qualifies ``TooFewSamples`` is raised.
    """
    lr = traj.lr if lr is None else lr
    alpha_log = traj.alpha_log if alpha_log is None else alpha_log
    times = lp.jump_times
    entries, skipped = [], []
    for k in range(lp.p):
        e0 = float(epoch_of(times[k], lr, alpha_log))
        e1 = float(epoch_of(times[k + 1], lr, alpha_log))
        width = e1 - e0
        lo, hi = e0 + margin * width, e1 - margin * width
        sel = (traj.epoch >= lo) & (traj.epoch <= hi)
        st = lp.stages[k]
        neurons = list(st.N_U) if not include_fitted else list(range(lp.m))
        for j in neurons:
            count = int(sel.sum())
            if count < min_samples:
                skipped.append((j, k, count))
                continue
            slope, _, _ = ols(traj.epoch[sel], traj.log_norms[sel, j])
            predicted = lr * float(st.D_norm[j]) if j in st.N_U else 0.0
            entries.append(SlopeEntry(j, k, count, slope, predicted))
    if not entries:
        raise TooFewSamples(f"no inter-jump window holds {min_samples} samples")
    return SlopeReport(entries, skipped)


def alignment(directions, lp: LimitProcess, k: int, neurons=None) -> dict[int, float]:
    """Cosine between each neuron's direction and ``s_j D_j^(k)`` (1 means aligned as predicted).

    ``directions`` is an ``m x n`` array in data coordinates, a
    :class:`ScaledState` on the identity basis, or a :class:`DenseNetwork`.
    Neurons with a zero direction or zero ``D_j^(k)`` are skipped.
    """
    if isinstance(directions, ScaledState):
        W = directions.V
    elif isinstance(directions, DenseNetwork):
        W = directions.W
    else:
        W = np.asarray(directions, dtype=float)
    if lp.rows is not None and W.shape[1] != lp.n:
        W = W @ lp.rows.T
    st = lp.stages[k]
    out = {}
    for j in (range(lp.m) if neurons is None else neurons):
        nw = np.linalg.norm(W[j])
        nd = st.D_norm[j]
        if nw == 0 or nd == 0:
            continue
        out[j] = float(lp.s[j] * (W[j] @ st.D[j]) / (nw * nd))
    return out


def network_sq_norm(net) -> float:
    """``(1/2)(sum a_j^2 + sum |w_j|^2)``."""
    if isinstance(net, ScaledState):
        return net.sq_norm()
    return 0.5 * float(np.sum(np.asarray(net.a) ** 2) + np.sum(np.asarray(net.W) ** 2))


def norm_match(traj_or_norm, lp: LimitProcess) -> float:
    """Relative gap between a trained half squared norm and the predicted one."""
    from .limit import pred_sq_norm

    trained = traj_or_norm.final_sq_norm() if isinstance(traj_or_norm, Trajectory) else float(traj_or_norm)
    pred = pred_sq_norm(lp)
    return abs(trained - pred) / pred


def loglog_slope(points) -> tuple[float, float, float]:
    """Least-squares fit of ``ln value`` on ``ln n``; returns ``(slope, intercept, r^2)``."""
    pts = [(float(a), float(b)) for a, b in points]
    if len(pts) < 3:
        raise DegenerateFit(f"need at least 3 points, got {len(pts)}")
    if any(a <= 0 or b <= 0 for a, b in pts):
        raise DegenerateFit("log-log fit needs positive coordinates")
    x = np.log([a for a, _ in pts])
    y = np.log([b for _, b in pts])
    return ols(x, y)


def width_rule(n: int) -> int:
    """Width ``ceil(ln(10000 n) / ln(4/3))`` that makes interpolation typical."""
    return math.ceil(math.log(10000 * n) / math.log(4 / 3))


@dataclass
class SweepPoint:
    n: int
    m: int
    seed: int
    pred: float
    opt: float
    bound: float
    interpolating: bool

    def as_row(self) -> list:
        return [self.n, self.m, self.seed, self.pred, self.opt, self.bound, int(self.interpolating)]


SWEEP_HEADER = ["n", "m", "seed", "pred_sq_norm", "opt_sq_norm", "bias_bound", "interpolating"]


def norm_sweep(ns, seeds, widths=None, label_spec: str = "gaussian", signs: str = "random") -> list[SweepPoint]:
    """Final limit-process norms over a grid of ``n`` (and optionally widths), no training.

    ``widths`` maps ``n`` to ``m``; the default is :func:`width_rule`. The
    labels for seed ``s`` are drawn with seed ``s`` and the init with ``10_000 + s``.
    """
    points = []
    for n in ns:
        ms = [width_rule(n)] if widths is None else list(widths(n) if callable(widths) else widths)
        for m in ms:
            for seed in seeds:
                data = generate_dataset(n, n, label_spec, seed=seed)
                init = sample_init(m, n, -1.0, seed=10_000 + seed, signs=signs)
                A = mask_matrix(data, init).A
                pred, interp = fast_pred_sq_norm(A, data.labels)
                points.append(SweepPoint(n, m, seed, pred, opt_sq_norm(data.labels), bias_bound(data.labels), interp))
    return points


def mean_by(points: list[SweepPoint], key: str = "n", value: str = "pred") -> list[tuple[float, float]]:
    groups: dict[float, list[float]] = {}
    for p in points:
        groups.setdefault(getattr(p, key), []).append(getattr(p, value))
    return [(k, float(np.mean(v))) for k, v in sorted(groups.items())]


def synthesize_trajectory(lp: LimitProcess, lr: float, alpha_log: float, record_every: int = 100,
                          horizon: float | None = None) -> Trajectory:
    """A trajectory read off the limit process itself: fit events at the predicted jump epochs.

    Unfitted neurons follow ``ln |w_j| = -ell_j(t) ln(alpha)``; a neuron that has
    jumped sits at ``ln sqrt(n |D_j|)``. Useful as a closure check for the comparison code.
    """
    from .limit import theta_at

    times = lp.jump_times
    t_end = horizon if horizon is not None else (times[lp.p] * 1.5 if lp.p else 1.0)
    e_end = float(epoch_of(t_end, lr, alpha_log))
    epochs = np.arange(0.0, e_end + record_every, record_every)
    t = accelerated_time(epochs, lr, alpha_log)
    log_norms = np.empty((epochs.size, lp.m))
    for k, tk in enumerate(t):
        st = lp.stages[lp.stage_index(tk)]
        for j in range(lp.m):
            if j in st.N_U:
                log_norms[k, j] = -exponent_at(lp, j, tk) * alpha_log
            else:
                log_norms[k, j] = 0.5 * math.log(lp.n * st.D_norm[j])
    fit = np.full(lp.n, -1.0)
    for k, idx in enumerate(lp.fitted_sets):
        fit[list(idx)] = float(epoch_of(times[k + 1], lr, alpha_log))
    final = theta_at(lp, math.inf)
    state = ScaledState(final.W.copy(), np.abs(final.a), np.zeros(lp.m), lp.s.copy())
    nan = np.full(epochs.size, np.nan)
    return Trajectory(
        epoch=epochs, accelerated_time=t, loss=nan, log_norms=log_norms,
        log_output_weights=log_norms.copy(), balance=np.zeros_like(log_norms),
        fD_norm=np.zeros_like(log_norms), fD_bound=nan, residuals=None, directions=None,
        fit_epochs=fit, labels=np.array(lp.labels), final_state=state, outcome="synthetic",
        lr=lr, alpha_log=alpha_log, fit_threshold=0.5,
    )


def format_table(rows: list[dict], columns: list[str] | None = None) -> str:
    """Aligned plain-text table for humans."""
    if not rows:
        return ""
    columns = columns or list(rows[0])

    def fmt(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    cells = [[fmt(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)
