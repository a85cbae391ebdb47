"""Full-batch gradient descent at vanishing initialization scale.

Each neuron is stored as a mantissa ``(v, b)`` plus a natural-log scale
``c`` and an output sign ``s``; the represented parameters are
``w = e^c v`` and ``a = s e^c b``. Because ``w`` and ``a`` share the factor
``e^c``, a gradient step on ``(w, a)`` is exactly a step on the mantissas:

    v <- v + lr s b fD        b <- b + lr s (fD . v)

with ``fD = -(1/n) sum_{i: v.x_i > 0} (h(x_i) - y_i) x_i``. Mantissas are
pulled back into ``[1/2, 2]`` by moving ``sqrt(|v| b)`` into ``c``, which
keeps ``|w| ~ e^-500`` representable.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import DenseNetwork, InitDraw, OrthonormalDataset
from .errors import BadScale, CollapsedNeuron, DimensionMismatch, NonFinite

log = logging.getLogger(__name__)

LOG_TINY = _kernels.LOG_TINY
TINY = _kernels.TINY


@dataclass(frozen=True)
class ScaledNeuron:
    v: np.ndarray
    b: float
    c: float
    s: float

    @property
    def w(self) -> np.ndarray:
        return math.exp(self.c) * np.asarray(self.v)

    @property
    def a(self) -> float:
        return self.s * math.exp(self.c) * self.b

    @property
    def log_norm(self) -> float:
        """``ln |w|`` without forming ``w``."""
        return self.c + math.log(float(np.linalg.norm(self.v)))


def renormalize(neuron: ScaledNeuron) -> ScaledNeuron:
    """Move ``r = sqrt(|v| b)`` from the mantissas into the log scale."""
    nv = float(np.linalg.norm(neuron.v))
    if nv == 0.0 or neuron.b <= 0.0:
        raise CollapsedNeuron(f"mantissa collapsed (|v|={nv}, b={neuron.b})")
    r = math.sqrt(nv * neuron.b)
    return ScaledNeuron(np.asarray(neuron.v) / r, neuron.b / r, neuron.c + math.log(r), neuron.s)


@dataclass
class ScaledState:
    """All ``m`` neurons in the log-domain representation (mutable working state)."""

    V: np.ndarray
    b: np.ndarray
    c: np.ndarray
    s: np.ndarray

    @classmethod
    def from_init(cls, init: InitDraw) -> "ScaledState":
        m = init.m
        return cls(np.array(init.u, dtype=float), np.ones(m), np.full(m, init.alpha_log), np.array(init.s, dtype=float))

    @classmethod
    def from_neurons(cls, neurons: list[ScaledNeuron]) -> "ScaledState":
        return cls(
            np.array([nr.v for nr in neurons], dtype=float),
            np.array([nr.b for nr in neurons], dtype=float),
            np.array([nr.c for nr in neurons], dtype=float),
            np.array([nr.s for nr in neurons], dtype=float),
        )

    def copy(self) -> "ScaledState":
        return ScaledState(self.V.copy(), self.b.copy(), self.c.copy(), self.s.copy())

    @property
    def m(self) -> int:
        return self.b.shape[0]

    def neurons(self) -> list[ScaledNeuron]:
        return [ScaledNeuron(self.V[j].copy(), float(self.b[j]), float(self.c[j]), float(self.s[j])) for j in range(self.m)]

    def log_norms(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return self.c + np.log(np.linalg.norm(self.V, axis=1))

    def log_output_weights(self) -> np.ndarray:
        return self.c + np.log(self.b)

    def balance_defect(self) -> np.ndarray:
        """``|a^2 - |w|^2| / (a^2 + |w|^2)`` per neuron; scale free."""
        nv2 = np.sum(self.V**2, axis=1)
        b2 = self.b**2
        return np.abs(b2 - nv2) / (b2 + nv2)

    def to_dense(self) -> DenseNetwork:
        """Plain-float parameters; raises if any scale underflows."""
        scale = np.exp(self.c)
        if np.any(scale == 0.0):
            raise ValueError("some neurons are below float range; use log_norms() instead")
        return DenseNetwork(self.s * scale * self.b, scale[:, None] * self.V)

    def sq_norm(self) -> float:
        """``(1/2)(sum a_j^2 + sum |w_j|^2)``; underflowing neurons contribute 0."""
        scale2 = np.exp(2 * self.c)
        return float(0.5 * np.sum(scale2 * (self.b**2 + np.sum(self.V**2, axis=1))))


def scaled_outputs(state: ScaledState, data: OrthonormalDataset) -> np.ndarray:
    """Network outputs on the data; terms below the smallest normal float count as exactly 0."""
    Z = data.project(state.V)
    with np.errstate(divide="ignore", under="ignore"):
        amp = np.exp(2 * state.c + np.log(state.b))
        terms = amp[:, None] * np.maximum(Z, 0.0)
    terms[terms < TINY] = 0.0
    return state.s @ terms


def dynamical_vectors(Z: np.ndarray, residuals: np.ndarray) -> np.ndarray:
    """``fD_j`` in data coordinates from preactivations ``Z`` (``m x n``) and residuals."""
    n = residuals.shape[0]
    return np.where(Z > 0, -residuals[None, :] / n, 0.0)


def fitted_error_vector(residuals: np.ndarray, fitted) -> np.ndarray:
    """``E = -(1/n) sum_{i in fitted} r_i x_i`` in data coordinates."""
    n = residuals.shape[0]
    E = np.zeros(n)
    idx = np.asarray(sorted(fitted), dtype=int)
    E[idx] = -residuals[idx] / n
    return E


@dataclass(frozen=True)
class GradientDiagnostics:
    fD: np.ndarray
    fD_norm: np.ndarray
    bound: float

    @property
    def within_bound(self) -> bool:
        return bool(np.all(self.fD_norm <= self.bound * (1 + 1e-12) + 1e-300))


def gradient_diagnostics(state: ScaledState, data: OrthonormalDataset) -> GradientDiagnostics:
    """Per-neuron ``fD_j`` and the Cauchy-Schwarz bound ``sqrt(2 L / n)`` it must respect."""
    Z = data.project(state.V)
    r = scaled_outputs(state, data) - data.labels
    fD = dynamical_vectors(Z, r)
    lossv = float(r @ r) / (2 * data.n)
    return GradientDiagnostics(fD, np.linalg.norm(fD, axis=1), math.sqrt(2 * lossv / data.n))


def gd_step(state: ScaledState, data: OrthonormalDataset, lr: float,
            band: tuple[float, float] = (0.5, 2.0)) -> ScaledState:
    """One full-batch gradient step in the log-domain representation (returns a new state)."""
    if state.V.shape[1] != data.d:
        raise DimensionMismatch(f"state d={state.V.shape[1]} but dataset d={data.d}")
    Z = data.project(state.V)
    r = scaled_outputs(state, data) - data.labels
    G = dynamical_vectors(Z, r)
    dots = np.sum(G * Z, axis=1)
    step_dir = G if data.rows is None else G @ data.rows
    V = state.V + (lr * state.s * state.b)[:, None] * step_dir
    b = state.b + lr * state.s * dots
    c = state.c.copy()
    if not (np.all(np.isfinite(V)) and np.all(np.isfinite(b))):
        raise NonFinite("gradient step produced a non-finite value")
    nv = np.linalg.norm(V, axis=1)
    if np.any(nv == 0.0) or np.any(b <= 0.0):
        raise CollapsedNeuron("a mantissa collapsed to zero")
    lo, hi = band
    out = (nv < lo) | (nv > hi) | (b < lo) | (b > hi)
    if np.any(out):
        rr = np.sqrt(nv[out] * b[out])
        V[out] /= rr[:, None]
        b[out] /= rr
        c[out] += np.log(rr)
    return ScaledState(V, b, c, state.s.copy())


def accelerated_time(epoch, lr: float, alpha_log: float):
    """Convert epochs to accelerated time ``epoch * lr / ln(1/alpha)``."""
    if alpha_log >= 0:
        raise BadScale(f"alpha_log must be negative, got {alpha_log}")
    return np.asarray(epoch) * lr / (-alpha_log) if np.ndim(epoch) else epoch * lr / (-alpha_log)


def epoch_of(t, lr: float, alpha_log: float):
    if alpha_log >= 0:
        raise BadScale(f"alpha_log must be negative, got {alpha_log}")
    return np.asarray(t) * (-alpha_log) / lr


@dataclass
class TrainerConfig:
    lr: float = 0.01
    max_epochs: int = 10_000_000
    loss_stop: float = 1e-20
    record_every: int = 1000
    fit_threshold: float = 0.5
    renorm_band: tuple[float, float] = (0.5, 2.0)
    record_residuals: bool = True
    record_directions: bool = False
    engine: str = "numba"

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.loss_stop < 0:
            raise ValueError("loss_stop must be >= 0")
        if not 0 < self.fit_threshold < 1:
            raise ValueError("fit_threshold must lie in (0, 1)")
        if self.max_epochs < 0 or self.record_every < 1:
            raise ValueError("max_epochs must be >= 0 and record_every >= 1")
        lo, hi = self.renorm_band
        if not 0 < lo < 1 < hi:
            raise ValueError(f"renorm_band must bracket 1, got {self.renorm_band}")
        self.renorm_band = (float(lo), float(hi))
        if self.engine not in ("numba", "numpy"):
            raise ValueError(f"engine must be 'numba' or 'numpy', got {self.engine!r}")


@dataclass
class Trajectory:
    """Samples recorded during a training run.

    Row ``k`` of every array refers to ``epoch[k]``. ``fit_epochs[i]`` is the
    first epoch at which ``h(x_i)/y_i`` reached the configured threshold
    (``-1`` if never).
    """

    epoch: np.ndarray
    accelerated_time: np.ndarray
    loss: np.ndarray
    log_norms: np.ndarray
    log_output_weights: np.ndarray
    balance: np.ndarray
    fD_norm: np.ndarray
    fD_bound: np.ndarray
    residuals: np.ndarray | None
    directions: np.ndarray | None
    fit_epochs: np.ndarray
    labels: np.ndarray
    final_state: ScaledState
    outcome: str
    lr: float
    alpha_log: float
    fit_threshold: float
    max_loss_increase: float = 0.0
    renormalizations: int = 0

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def m(self) -> int:
        return self.log_norms.shape[1]

    @property
    def final_loss(self) -> float:
        return float(self.loss[-1])

    @property
    def final_epoch(self) -> int:
        return int(self.epoch[-1])

    def final_sq_norm(self) -> float:
        return self.final_state.sq_norm()

    def csv_header(self, residuals: bool = True) -> list[str]:
        cols = ["epoch", "t", "loss"] + [f"log_norm_{j}" for j in range(self.m)]
        if residuals and self.residuals is not None:
            cols += [f"r_{i}" for i in range(self.n)]
        return cols

    def csv_rows(self, residuals: bool = True):
        with_r = residuals and self.residuals is not None
        for k in range(self.epoch.shape[0]):
            row = [int(self.epoch[k]), float(self.accelerated_time[k]), float(self.loss[k])]
            row += [float(v) for v in self.log_norms[k]]
            if with_r:
                row += [float(v) for v in self.residuals[k]]
            yield row


def fit_events(traj: Trajectory, threshold: float | None = None) -> dict[int, int]:
    """First epoch at which ``h(x_i)/y_i >= threshold`` for each datum that gets there.

    At the run's own threshold this is exact to the epoch; other thresholds are
    resolved on the recorded samples and need recorded residuals.
    """
    if threshold is None or threshold == traj.fit_threshold:
        return {i: int(e) for i, e in enumerate(traj.fit_epochs) if e >= 0}
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    if traj.residuals is None:
        raise ValueError("trajectory has no recorded residuals")
    y = traj.labels
    events = {}
    ratio = (traj.residuals + y[None, :]) / np.where(y == 0, np.nan, y)[None, :]
    for i in range(traj.n):
        hit = np.flatnonzero(ratio[:, i] >= threshold)
        if hit.size:
            events[i] = int(traj.epoch[hit[0]])
    return events


class _Recorder:
    def __init__(self, data: OrthonormalDataset, cfg: TrainerConfig, alpha_log: float):
        self.data = data
        self.cfg = cfg
        self.alpha_log = alpha_log
        self.rows: dict[str, list] = {k: [] for k in (
            "epoch", "loss", "log_norms", "log_output_weights", "balance", "fD_norm", "fD_bound",
            "residuals", "directions")}

    def add(self, epoch: int, state: ScaledState, h: np.ndarray, lossv: float, coords: np.ndarray):
        n = self.data.n
        r = h - self.data.labels
        R = self.rows
        R["epoch"].append(epoch)
        R["loss"].append(lossv)
        R["log_norms"].append(state.log_norms())
        R["log_output_weights"].append(state.log_output_weights())
        R["balance"].append(state.balance_defect())
        fD = dynamical_vectors(coords, r)
        R["fD_norm"].append(np.linalg.norm(fD, axis=1))
        R["fD_bound"].append(math.sqrt(2 * lossv / n))
        if self.cfg.record_residuals:
            R["residuals"].append(r)
        if self.cfg.record_directions:
            nrm = np.linalg.norm(state.V, axis=1, keepdims=True)
            R["directions"].append(coords / nrm)

    def finish(self, fit_epochs, state, outcome, stats) -> Trajectory:
        R = self.rows
        epoch = np.asarray(R["epoch"], dtype=np.int64)
        t = (epoch * self.cfg.lr / (-self.alpha_log)) if self.alpha_log < 0 else np.full(epoch.shape, np.nan)
        return Trajectory(
            epoch=epoch,
            accelerated_time=t,
            loss=np.asarray(R["loss"]),
            log_norms=np.asarray(R["log_norms"]),
            log_output_weights=np.asarray(R["log_output_weights"]),
            balance=np.asarray(R["balance"]),
            fD_norm=np.asarray(R["fD_norm"]),
            fD_bound=np.asarray(R["fD_bound"]),
            residuals=np.asarray(R["residuals"]) if self.cfg.record_residuals else None,
            directions=np.asarray(R["directions"]) if self.cfg.record_directions else None,
            fit_epochs=np.asarray(fit_epochs, dtype=np.int64),
            labels=np.array(self.data.labels),
            final_state=state,
            outcome=outcome,
            lr=self.cfg.lr,
            alpha_log=self.alpha_log,
            fit_threshold=self.cfg.fit_threshold,
            max_loss_increase=float(stats[0]),
            renormalizations=int(stats[1]),
        )


def _next_stop(epoch: int, cfg: TrainerConfig) -> int:
    return min(cfg.max_epochs, (epoch // cfg.record_every + 1) * cfg.record_every)


def train(data: OrthonormalDataset, init: InitDraw | ScaledState, config: TrainerConfig | None = None) -> Trajectory:
    """Run gradient descent until ``loss < loss_stop`` or ``max_epochs``.

    Samples are recorded every ``record_every`` epochs, at every epoch where a
    datum first crosses the fit threshold, and at the final epoch. The outcome
    is ``"converged"`` or ``"budget"``.
    """
    cfg = config or TrainerConfig()
    state = ScaledState.from_init(init) if isinstance(init, InitDraw) else init.copy()
    alpha_log = init.alpha_log if isinstance(init, InitDraw) else float(np.min(state.c))
    if state.V.shape[1] != data.d:
        raise DimensionMismatch(f"init d={state.V.shape[1]} but dataset d={data.d}")
    if cfg.engine == "numba":
        return _train_numba(data, state, cfg, alpha_log)
    return _train_numpy(data, state, cfg, alpha_log)


def _train_numpy(data, state, cfg, alpha_log) -> Trajectory:
    y = data.labels
    n = data.n
    rec = _Recorder(data, cfg, alpha_log)
    fit_epochs = np.full(n, -1, dtype=np.int64)
    stats = np.zeros(2)
    h = scaled_outputs(state, data)
    lossv = float(np.sum((h - y) ** 2)) / (2 * n)
    loss0 = lossv
    rec.add(0, state, h, lossv, data.project(state.V))
    epoch = 0
    outcome = "converged" if lossv < cfg.loss_stop else "budget"
    while epoch < cfg.max_epochs and lossv >= cfg.loss_stop:
        state = gd_step(state, data, cfg.lr, cfg.renorm_band)
        epoch += 1
        h = scaled_outputs(state, data)
        new = float(np.sum((h - y) ** 2)) / (2 * n)
        if loss0 > 0:
            stats[0] = max(stats[0], (new - lossv) / loss0)
        lossv = new
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(y != 0, h / np.where(y == 0, 1.0, y), -np.inf)
        newly = (fit_epochs < 0) & (ratio >= cfg.fit_threshold)
        fit_epochs[newly] = epoch
        if newly.any() or epoch % cfg.record_every == 0 or lossv < cfg.loss_stop or epoch == cfg.max_epochs:
            rec.add(epoch, state, h, lossv, data.project(state.V))
        if lossv < cfg.loss_stop:
            outcome = "converged"
    return rec.finish(fit_epochs, state, outcome, stats)


def _train_numba(data, state, cfg, alpha_log) -> Trajectory:
    y = np.ascontiguousarray(data.labels, dtype=float)
    n = data.n
    X = data.rows
    P = np.ascontiguousarray(data.project(state.V))
    if X is None:
        perp = np.zeros_like(state.V)
    else:
        perp = state.V - P @ X
    perp2 = np.sum(perp**2, axis=1)
    kappa = np.ones(state.m)
    b = state.b.copy()
    c = state.c.copy()
    s = state.s.copy()
    lo, hi = cfg.renorm_band

    def current() -> ScaledState:
        V = P.copy() if X is None else P @ X + kappa[:, None] * perp
        return ScaledState(V, b.copy(), c.copy(), s.copy())

    rec = _Recorder(data, cfg, alpha_log)
    fit_epochs = np.full(n, -1, dtype=np.int64)
    stats = np.array([0.0, 0.0, -1.0])
    h = np.zeros(n)
    st0 = current()
    h[:] = scaled_outputs(st0, data)
    lossv = float(np.sum((h - y) ** 2)) / (2 * n)
    loss0 = lossv
    rec.add(0, st0, h, lossv, P.copy())
    epoch = 0
    while epoch < cfg.max_epochs and lossv >= cfg.loss_stop:
        stop = _next_stop(epoch, cfg)
        epoch, lossv, status, _ = _kernels.run_scaled(
            P, b, c, s, kappa, perp2, y, cfg.lr, epoch, stop, cfg.fit_threshold, fit_epochs,
            cfg.loss_stop, lo, hi, loss0, h, stats)
        epoch = int(epoch)
        if status == 1:
            raise NonFinite(f"non-finite value at epoch {epoch}")
        if status == 2:
            raise CollapsedNeuron(f"mantissa collapsed at epoch {epoch}")
        rec.add(epoch, current(), h.copy(), float(lossv), P.copy())
    outcome = "converged" if lossv < cfg.loss_stop else "budget"
    log.debug("training finished at epoch %d with loss %.3e (%s)", epoch, lossv, outcome)
    return rec.finish(fit_epochs, current(), outcome, stats)


@dataclass
class DenseResult:
    net: DenseNetwork
    epochs: int
    loss: float
    outcome: str
    loss_history: np.ndarray
    history_epochs: np.ndarray
    max_loss_increase: float


def dense_gd_step(net: DenseNetwork, data: OrthonormalDataset, lr: float) -> DenseNetwork:
    """Plain gradient step on ``(a, W)`` with ReLU derivative ``1{z > 0}``."""
    Z = data.project(net.W)
    r = np.maximum(Z, 0.0).T @ net.a - data.labels
    act = (Z > 0).astype(float)
    grad_a = np.maximum(Z, 0.0) @ r / data.n
    coef = (net.a[:, None] * act) * r[None, :] / data.n
    grad_W = coef if data.rows is None else coef @ data.rows
    return DenseNetwork(net.a - lr * grad_a, net.W - lr * grad_W)


def train_dense(data: OrthonormalDataset, net: DenseNetwork, lr: float, max_epochs: int,
                loss_stop: float = 0.0, record_every: int = 1000, engine: str = "numba") -> DenseResult:
    """Gradient descent on plain-float parameters (moderate scales and unbalanced inits)."""
    if net.d != data.d:
        raise DimensionMismatch(f"network d={net.d} but dataset d={data.d}")
    y = np.ascontiguousarray(data.labels, dtype=float)
    n = data.n
    hist_e, hist_l = [], []

    def loss_of(nt):
        r = np.maximum(data.project(nt.W), 0.0).T @ nt.a - y
        return float(r @ r) / (2 * n)

    lossv = loss_of(net)
    loss0 = lossv
    hist_e.append(0)
    hist_l.append(lossv)
    epoch = 0
    max_inc = 0.0
    if engine == "numpy":
        while epoch < max_epochs and lossv >= loss_stop:
            net = dense_gd_step(net, data, lr)
            epoch += 1
            new = loss_of(net)
            if not math.isfinite(new):
                raise NonFinite(f"non-finite loss at epoch {epoch}")
            if loss0 > 0:
                max_inc = max(max_inc, (new - lossv) / loss0)
            lossv = new
            if epoch % record_every == 0 or lossv < loss_stop or epoch == max_epochs:
                hist_e.append(epoch)
                hist_l.append(lossv)
        final = net
    else:
        X = data.rows
        P = np.ascontiguousarray(data.project(net.W))
        perp = np.zeros_like(net.W) if X is None else net.W - P @ X
        a = net.a.copy()
        h = np.zeros(n)
        stats = np.array([0.0, 0.0, -1.0])
        while epoch < max_epochs and lossv >= loss_stop:
            stop = min(max_epochs, (epoch // record_every + 1) * record_every)
            epoch, lossv, status = _kernels.run_dense(P, a, y, lr, epoch, stop, loss_stop, loss0, h, stats)
            epoch = int(epoch)
            if status == 1:
                raise NonFinite(f"non-finite loss at epoch {epoch}")
            hist_e.append(epoch)
            hist_l.append(float(lossv))
        max_inc = float(stats[0])
        final = DenseNetwork(a, P.copy() if X is None else P @ X + perp)
    return DenseResult(
        net=final, epochs=epoch, loss=float(lossv),
        outcome="converged" if lossv < loss_stop else "budget",
        loss_history=np.asarray(hist_l), history_epochs=np.asarray(hist_e, dtype=np.int64),
        max_loss_increase=max_inc,
    )


def he_uniform_init(m: int, d: int, seed: int = 0) -> DenseNetwork:
    """Hidden weights uniform on ``[-1/sqrt(d), 1/sqrt(d)]``, output weights on ``[-1/sqrt(m), 1/sqrt(m)]``."""
    rng = np.random.default_rng(seed)
    W = rng.uniform(-1 / math.sqrt(d), 1 / math.sqrt(d), size=(m, d))
    a = rng.uniform(-1 / math.sqrt(m), 1 / math.sqrt(m), size=m)
    return DenseNetwork(a, W)
