"""Construction of the saddle-to-saddle limit process from the activation mask.

Everything here is closed form: jump times, per-neuron norm exponents, the
final interpolator and its squared norm are computed from the mask ``A`` and
the labels ``y`` without any training. Data and neuron indices are 0-based.

Vectors ``D_j`` live in data coordinates: ``D[j, i]`` is the coefficient of
``x_i``. Orthonormality of the inputs makes every norm and inner product
basis-free, and ``rows`` maps the result back to the ambient space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ._validation import check_labels
from .core import DenseNetwork, MaskMatrix, OrthonormalDataset, InitDraw, mask_matrix
from .errors import AmbiguousArgmax, DimensionMismatch, ZeroLabel

TIE_RTOL = 1e-12


@dataclass(frozen=True)
class AssumptionReport:
    rows_nonzero: bool
    cols_nonzero: bool
    cols_distinct: bool
    labels_nonzero: bool
    argmax_unique: bool | None = None  # None until a build has run

    @property
    def mask_ok(self) -> bool:
        return self.rows_nonzero and self.cols_nonzero and self.cols_distinct

    @property
    def passed(self) -> bool:
        return bool(self.mask_ok and self.labels_nonzero and self.argmax_unique is True)

    def failures(self) -> list[str]:
        names = ("rows_nonzero", "cols_nonzero", "cols_distinct", "labels_nonzero", "argmax_unique")
        return [name for name in names if getattr(self, name) is not True]

    def to_dict(self) -> dict:
        return {
            "rows_nonzero": self.rows_nonzero,
            "cols_nonzero": self.cols_nonzero,
            "cols_distinct": self.cols_distinct,
            "labels_nonzero": self.labels_nonzero,
            "argmax_unique": self.argmax_unique,
            "passed": self.passed,
        }


def _as_bool_mask(A) -> np.ndarray:
    return np.asarray(A.A if isinstance(A, MaskMatrix) else A).astype(bool)


def check_assumptions(A, y) -> AssumptionReport:
    """Evaluate the mask and label conditions. Nothing is raised; the report says what fails."""
    A = _as_bool_mask(A)
    y = check_labels(y)
    if A.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"mask has {A.shape[0]} rows for {y.shape[0]} labels")
    cols = {A[:, j].tobytes() for j in range(A.shape[1])}
    return AssumptionReport(
        rows_nonzero=bool(A.any(axis=1).all()),
        cols_nonzero=bool(A.any(axis=0).all()),
        cols_distinct=len(cols) == A.shape[1],
        labels_nonzero=bool(np.all(y != 0)),
    )


@dataclass(frozen=True, eq=False)
class StageRecord:
    """State of the limit process on ``[t, t_next)``.

    ``D`` holds the per-neuron vectors at this stage (frozen for neurons that
    already jumped) and ``ell`` the norm exponents at time ``t``.
    """

    k: int
    t: float
    S_U: tuple[int, ...]
    N_U: tuple[int, ...]
    D: np.ndarray
    D_norm: np.ndarray
    ell: np.ndarray
    j_star: int | None = None

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "t": self.t,
            "S_U": list(self.S_U),
            "N_U": list(self.N_U),
            "j_star": self.j_star,
            "D_norm": self.D_norm.tolist(),
            "ell": self.ell.tolist(),
            "D": self.D.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "StageRecord":
        return cls(
            k=int(obj["k"]),
            t=float(obj["t"]),
            S_U=tuple(int(i) for i in obj["S_U"]),
            N_U=tuple(int(j) for j in obj["N_U"]),
            D=np.asarray(obj["D"], dtype=float),
            D_norm=np.asarray(obj["D_norm"], dtype=float),
            ell=np.asarray(obj["ell"], dtype=float),
            j_star=None if obj.get("j_star") is None else int(obj["j_star"]),
        )


@dataclass(frozen=True, eq=False)
class LimitProcess:
    stages: tuple[StageRecord, ...]
    labels: np.ndarray
    s: np.ndarray
    S: tuple[tuple[int, ...], ...]
    assumption_report: AssumptionReport
    rows: np.ndarray | None = None
    interpolating: bool = True

    @property
    def p(self) -> int:
        """Number of jumps."""
        return len(self.stages) - 1

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def m(self) -> int:
        return self.s.shape[0]

    @property
    def jump_times(self) -> np.ndarray:
        """``(t_0, ..., t_p, +inf)``."""
        return np.array([st.t for st in self.stages] + [math.inf])

    @property
    def j_stars(self) -> list[int]:
        return [st.j_star for st in self.stages[:-1]]

    @property
    def fitted_sets(self) -> list[tuple[int, ...]]:
        """Data fitted at each jump, ``S_U^(k) & S_{j*(k)}``, in jump order."""
        return [tuple(sorted(set(a.S_U) - set(b.S_U))) for a, b in zip(self.stages, self.stages[1:])]

    @property
    def terminal(self) -> StageRecord:
        return self.stages[-1]

    @property
    def final_params(self) -> DenseNetwork:
        return theta_at(self, math.inf)

    def stage_index(self, t: float) -> int:
        """Index ``k`` with ``t`` in ``[t_k, t_{k+1})``."""
        times = [st.t for st in self.stages]
        return int(np.searchsorted(times, t, side="right")) - 1

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "labels": self.labels.tolist(),
            "s": self.s.tolist(),
            "S": [list(sj) for sj in self.S],
            # +inf closes the list; JSON has no infinity so it is written as null
            "jump_times": [st.t for st in self.stages] + [None],
            "j_stars": self.j_stars,
            "interpolating": self.interpolating,
            "pred_sq_norm": pred_sq_norm(self),
            "opt_sq_norm": opt_sq_norm(self.labels),
            "bias_bound": bias_bound(self.labels),
            "assumption_report": self.assumption_report.to_dict(),
            "stages": [st.to_dict() for st in self.stages],
            "rows": None if self.rows is None else self.rows.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "LimitProcess":
        rep = dict(obj["assumption_report"])
        rep.pop("passed", None)
        return cls(
            stages=tuple(StageRecord.from_dict(st) for st in obj["stages"]),
            labels=np.asarray(obj["labels"], dtype=float),
            s=np.asarray(obj["s"], dtype=float),
            S=tuple(tuple(int(i) for i in sj) for sj in obj["S"]),
            assumption_report=AssumptionReport(**rep),
            rows=None if obj.get("rows") is None else np.asarray(obj["rows"], dtype=float),
            interpolating=bool(obj["interpolating"]),
        )


def _neuron_signs(A: np.ndarray, y: np.ndarray, s) -> np.ndarray:
    if s is not None:
        return np.asarray(s, dtype=float)
    ysgn = np.sign(y)
    signs = np.ones(A.shape[1])
    for j in range(A.shape[1]):
        covered = ysgn[A[:, j]]
        if covered.size and covered[0] < 0:
            signs[j] = -1.0
    return signs


def build(A, y, strict: bool = True, rows=None, s=None) -> LimitProcess:
    """Run the jump recursion on mask ``A`` and labels ``y``.

    At each stage the unfitted neuron maximizing ``ell_j / |D_j|`` jumps
    (neurons with ``D_j = 0`` are never selected), the jump time advances by
    ``-ell_j* / |D_j*|`` and every exponent moves linearly with slope ``|D_j|``,
    capped at 0. The loop stops once no unfitted neuron is active on an
    unfitted datum.

    In strict mode zero labels raise ``ZeroLabel`` and near-ties in the argmax
    (relative ``1e-12``) raise ``AmbiguousArgmax``; otherwise ties go to the
    lowest neuron index and are recorded in the assumption report.
    """
    if isinstance(A, MaskMatrix):
        s = A.s if s is None else s
    A = _as_bool_mask(A)
    y = check_labels(y)
    n, m = A.shape
    if n != y.shape[0]:
        raise DimensionMismatch(f"mask has {n} rows for {y.shape[0]} labels")
    if rows is not None:
        rows = np.asarray(rows, dtype=float)
        if rows.shape[0] != n:
            raise DimensionMismatch(f"rows has {rows.shape[0]} inputs for n={n}")
    report = check_assumptions(A, y)
    if strict and not report.labels_nonzero:
        raise ZeroLabel(f"labels at indices {np.flatnonzero(y == 0).tolist()} are zero")
    s = _neuron_signs(A, y, s)

    unfit_data = np.ones(n, dtype=bool)
    unfit_neurons = np.ones(m, dtype=bool)
    ell = -np.ones(m)
    D = np.zeros((m, n))
    D_norm = np.zeros(m)
    t = 0.0
    unique = True
    stages: list[StageRecord] = []
    k = 0
    while True:
        active = A & unfit_data[:, None]
        # D only moves for unfitted neurons; fitted ones keep their last value
        D[unfit_neurons] = (active[:, unfit_neurons] * y[:, None]).T / n
        D_norm[unfit_neurons] = np.sqrt(np.sum(D[unfit_neurons] ** 2, axis=1))
        candidates = np.flatnonzero(unfit_neurons & (D_norm > 0))
        snapshot = dict(
            k=k, t=t,
            S_U=tuple(np.flatnonzero(unfit_data).tolist()),
            N_U=tuple(np.flatnonzero(unfit_neurons).tolist()),
            D=D.copy(), D_norm=D_norm.copy(), ell=ell.copy(),
        )
        if candidates.size == 0:
            stages.append(StageRecord(**snapshot))
            break
        ratio = ell[candidates] / D_norm[candidates]
        best = ratio.max()
        tied = candidates[np.abs(ratio - best) <= TIE_RTOL * abs(best)]
        if tied.size > 1:
            if strict:
                raise AmbiguousArgmax(f"stage {k}: neurons {tied.tolist()} tie for the next jump")
            unique = False
        j_star = int(tied.min())
        dt = -ell[j_star] / D_norm[j_star]
        stages.append(StageRecord(**snapshot, j_star=j_star))
        t = t + dt
        ell = np.minimum(0.0, ell + dt * D_norm)
        ell[j_star] = 0.0
        unfit_neurons[j_star] = False
        unfit_data &= ~A[:, j_star]
        k += 1

    report = replace(report, argmax_unique=unique)
    S = tuple(tuple(np.flatnonzero(A[:, j]).tolist()) for j in range(m))
    y_ro = y.copy()
    y_ro.setflags(write=False)
    return LimitProcess(
        stages=tuple(stages), labels=y_ro, s=s, S=S, assumption_report=report,
        rows=rows, interpolating=not unfit_data.any(),
    )


def limit_process(dataset: OrthonormalDataset, init: InitDraw, strict: bool = True) -> LimitProcess:
    """Mask the dataset with the initialization and build the limit process."""
    return build(mask_matrix(dataset, init), dataset.labels, strict=strict, rows=dataset.rows)


def _coefficients_at(lp: LimitProcess, k: int) -> tuple[np.ndarray, np.ndarray]:
    st = lp.stages[k]
    a = np.zeros(lp.m)
    C = np.zeros((lp.m, lp.n))
    fitted = np.setdiff1d(np.arange(lp.m), np.asarray(st.N_U, dtype=int))
    for j in fitted:
        scale = math.sqrt(lp.n * st.D_norm[j])
        if scale == 0.0:
            continue
        a[j] = lp.s[j] * scale
        C[j] = lp.s[j] * lp.n * st.D[j] / scale
    return a, C


def theta_at(lp: LimitProcess, t: float, rows=None) -> DenseNetwork:
    """Piecewise-constant limit parameters at accelerated time ``t``.

    Unfitted neurons are zero; a neuron that has jumped sits at
    ``w_j = s_j n D_j / sqrt(n |D_j|)``, ``a_j = s_j sqrt(n |D_j|)``.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    a, C = _coefficients_at(lp, lp.stage_index(t))
    rows = lp.rows if rows is None else np.asarray(rows, dtype=float)
    W = C if rows is None else C @ rows
    return DenseNetwork(a, W)


def exponent_at(lp: LimitProcess, j: int, t: float) -> float:
    """Norm exponent of neuron ``j``: piecewise affine from -1 with slope ``|D_j^(k)|``, capped at 0."""
    if t < 0:
        raise ValueError("t must be non-negative")
    st = lp.stages[lp.stage_index(t)]
    return float(min(0.0, st.ell[j] + (t - st.t) * st.D_norm[j]))


def pred_sq_norm(lp: LimitProcess) -> float:
    """Half squared norm of the final interpolator, ``sum_j n |D_j^(p)|`` over neurons that jumped."""
    st = lp.terminal
    fitted = np.ones(lp.m, dtype=bool)
    fitted[list(st.N_U)] = False
    return float(lp.n * np.sum(st.D_norm[fitted]))


def telescoped_sq_norm(lp: LimitProcess) -> float:
    """The same norm summed per jump: ``sum_k sqrt(sum of y_i^2 over the data fitted at jump k)``."""
    y2 = lp.labels**2
    return float(sum(math.sqrt(y2[list(idx)].sum()) for idx in lp.fitted_sets))


def opt_sq_norm(y) -> float:
    """Half squared norm of a minimum-norm interpolator on orthonormal data."""
    y = check_labels(y)
    return float(np.sqrt(np.sum(y[y > 0] ** 2)) + np.sqrt(np.sum(y[y < 0] ** 2)))


def bias_bound(y) -> float:
    """``5 (sqrt(n_+) + sqrt(n_-)) max_i |y_i|``."""
    y = check_labels(y)
    if y.size == 0:
        return 0.0
    n_plus = int(np.sum(y > 0))
    n_minus = int(np.sum(y < 0))
    return float(5.0 * (math.sqrt(n_plus) + math.sqrt(n_minus)) * np.max(np.abs(y)))


def jump_sequence(A: np.ndarray, y: np.ndarray) -> tuple[list[int], list[float], bool]:
    """Lean version of :func:`build` returning only the jump order, times and interpolation flag.

    Used by the Monte-Carlo sweeps where thousands of builds are needed and
    per-stage records would only cost memory. Ties go to the lowest index.
    """
    A = np.asarray(A, dtype=bool)
    n, m = A.shape
    y2 = np.asarray(y, dtype=float) ** 2
    unfit = np.ones(n, dtype=bool)
    free = np.ones(m, dtype=bool)
    ell = -np.ones(m)
    t = 0.0
    order, times = [], []
    while True:
        active = A & unfit[:, None]
        norms = np.sqrt(y2 @ active) / n
        cand = free & (norms > 0)
        if not cand.any():
            break
        ratio = np.full(m, -np.inf)
        ratio[cand] = ell[cand] / norms[cand]
        best = ratio.max()
        j = int(np.flatnonzero(np.abs(ratio - best) <= TIE_RTOL * abs(best))[0])
        dt = -ell[j] / norms[j]
        t += dt
        ell = np.where(free, np.minimum(0.0, ell + dt * norms), ell)
        ell[j] = 0.0
        free[j] = False
        unfit &= ~A[:, j]
        order.append(j)
        times.append(t)
    return order, times, not unfit.any()


def fast_pred_sq_norm(A, y) -> tuple[float, bool]:
    """``pred_sq_norm`` and the interpolation flag without building stage records."""
    A = np.asarray(A, dtype=bool)
    y2 = np.asarray(y, dtype=float) ** 2
    order, _, interpolating = jump_sequence(A, y)
    unfit = np.ones(A.shape[0], dtype=bool)
    total = 0.0
    for j in order:
        hit = A[:, j] & unfit
        total += math.sqrt(float(y2[hit].sum()))
        unfit &= ~A[:, j]
    return total, interpolating
