"""Datasets, initialization draws, the activation mask and dense network primitives.

Inputs are orthonormal rows ``x_i`` (the identity basis by default) and the
network is ``h(x) = sum_j a_j relu(w_j . x)`` trained on the half mean squared
error ``(1/2n) sum_i (h(x_i) - y_i)^2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_labels, check_orthonormal_rows, gram_defect
from .errors import DimensionMismatch

LABEL_SPECS = ("explicit", "abs-gaussian", "gaussian", "constant")
BASES = ("identity", "random-orthonormal")


@dataclass(frozen=True, eq=False)
class OrthonormalDataset:
    """``n`` labelled points whose inputs are pairwise orthonormal.

    ``rows`` is ``None`` for the identity basis (``x_i = e_i``, ``d = n``) so
    that large identity datasets never materialize an ``n x n`` matrix.
    """

    labels: np.ndarray
    d: int
    rows: np.ndarray | None = None

    def __post_init__(self):
        y = check_labels(self.labels)
        y.setflags(write=False)
        object.__setattr__(self, "labels", y)
        n = y.shape[0]
        if self.rows is None:
            if self.d != n:
                raise DimensionMismatch(f"identity basis requires d == n (n={n}, d={self.d})")
        else:
            X = check_orthonormal_rows(self.rows)
            if X.shape != (n, self.d):
                raise DimensionMismatch(f"inputs have shape {X.shape}, expected {(n, self.d)}")
            X = X.copy()
            X.setflags(write=False)
            object.__setattr__(self, "rows", X)

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def y(self) -> np.ndarray:
        return self.labels

    @property
    def is_identity(self) -> bool:
        return self.rows is None

    @property
    def X(self) -> np.ndarray:
        return np.eye(self.n) if self.rows is None else self.rows

    @property
    def zero_labels(self) -> np.ndarray:
        """Indices of labels that are exactly zero (excluded by the non-zero label assumption)."""
        return np.flatnonzero(self.labels == 0)

    def gram_defect(self) -> float:
        return 0.0 if self.rows is None else gram_defect(self.rows)

    def project(self, V: np.ndarray) -> np.ndarray:
        """Preactivation matrix ``V X^T`` for neuron rows ``V`` (``m x d`` -> ``m x n``)."""
        return V.copy() if self.rows is None else V @ self.rows.T

    def to_dict(self) -> dict:
        basis = "identity" if self.rows is None else self.rows.tolist()
        return {"n": self.n, "d": self.d, "basis": basis, "labels": self.labels.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "OrthonormalDataset":
        labels = np.asarray(obj["labels"], dtype=float)
        n = int(obj.get("n", labels.shape[0]))
        if n != labels.shape[0]:
            raise DimensionMismatch(f"n={n} but {labels.shape[0]} labels given")
        basis = obj.get("basis", "identity")
        d = int(obj.get("d", n))
        rows = None if isinstance(basis, str) and basis == "identity" else np.asarray(basis, float)
        return cls(labels=labels, d=d, rows=rows)

    @classmethod
    def from_arrays(cls, X, y) -> "OrthonormalDataset":
        X = np.asarray(X, dtype=float)
        y = check_labels(y)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"X has shape {X.shape} but there are {y.shape[0]} labels")
        if X.shape[0] == X.shape[1] and np.array_equal(X, np.eye(X.shape[0])):
            return cls(labels=y, d=X.shape[1])
        return cls(labels=y, d=X.shape[1], rows=X)


def draw_labels(label_spec, n: int, rng: np.random.Generator, value: float = 1.0) -> np.ndarray:
    if not isinstance(label_spec, str):
        y = check_labels(label_spec)
        if y.shape[0] != n:
            raise DimensionMismatch(f"{y.shape[0]} explicit labels for n={n}")
        return y.copy()
    if label_spec == "abs-gaussian":
        return np.abs(rng.standard_normal(n))
    if label_spec == "gaussian":
        return rng.standard_normal(n)
    if label_spec == "constant":
        return np.full(n, float(value))
    if label_spec == "explicit":
        raise ValueError("label_spec 'explicit' requires the labels themselves")
    raise ValueError(f"unknown label_spec {label_spec!r}; expected one of {LABEL_SPECS}")


def random_orthonormal_rows(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """``n x d`` matrix with orthonormal rows from the QR factor of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((d, n)))
    # sign fix makes the draw a deterministic function of the Gaussian sample
    q = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
    return q.T


def generate_dataset(n: int, d: int | None = None, label_spec="abs-gaussian",
                     basis: str = "identity", seed: int = 0,
                     constant: float = 1.0) -> OrthonormalDataset:
    """Build an orthonormal dataset.

    ``label_spec`` is one of ``"abs-gaussian"``, ``"gaussian"``, ``"constant"``
    or an explicit sequence of labels. Labels are drawn before the basis from
    a single generator seeded with ``seed``.
    """
    d = n if d is None else d
    if d < n:
        raise DimensionMismatch(f"d={d} is smaller than n={n}")
    if basis not in BASES:
        raise ValueError(f"unknown basis {basis!r}; expected one of {BASES}")
    if basis == "identity" and d != n:
        raise DimensionMismatch(f"identity basis requires d == n (n={n}, d={d})")
    rng = np.random.default_rng(seed)
    y = draw_labels(label_spec, n, rng, constant)
    rows = None if basis == "identity" else random_orthonormal_rows(n, d, rng)
    return OrthonormalDataset(labels=y, d=d, rows=rows)


@dataclass(frozen=True, eq=False)
class InitDraw:
    """Balanced initialization ``a_j(0) = alpha s_j``, ``w_j(0) = alpha u_j`` with ``alpha = exp(alpha_log)``."""

    alpha_log: float
    s: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float).ravel()
        u = np.atleast_2d(np.asarray(self.u, dtype=float))
        if u.shape[0] != s.shape[0]:
            raise DimensionMismatch(f"{s.shape[0]} signs but {u.shape[0]} directions")
        if not np.all(np.abs(s) == 1):
            raise ValueError("signs must be +1 or -1")
        for arr in (s, u):
            arr.setflags(write=False)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "alpha_log", float(self.alpha_log))

    @property
    def m(self) -> int:
        return self.s.shape[0]

    @property
    def d(self) -> int:
        return self.u.shape[1]

    def rotated(self, rows: np.ndarray) -> "InitDraw":
        """The same draw expressed in the coordinates of orthonormal ``rows`` (``u_j -> rows^T u_j``)."""
        return InitDraw(self.alpha_log, self.s, self.u @ np.asarray(rows))


def sample_init(m: int, d: int, alpha_log: float, seed=0, signs: str = "random") -> InitDraw:
    """Draw ``m`` uniform unit directions in ``R^d`` and output signs.

    ``signs="positive"`` gives every neuron a positive output weight, as in the
    all-positive-label experiments. ``seed`` may also be a ready ``Generator``.
    """
    if m < 1 or d < 1:
        raise ValueError(f"need m >= 1 and d >= 1, got m={m}, d={d}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if signs == "random":
        s = rng.choice(np.array([-1.0, 1.0]), size=m)
    elif signs == "positive":
        s = np.ones(m)
    else:
        raise ValueError(f"signs must be 'random' or 'positive', got {signs!r}")
    g = rng.standard_normal((m, d))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    while np.any(norms == 0):  # probability zero, kept for total correctness
        bad = norms[:, 0] == 0
        g[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
    return InitDraw(alpha_log=alpha_log, s=s, u=g / norms)


@dataclass(frozen=True, eq=False)
class MaskMatrix:
    A: np.ndarray
    labels_sign: np.ndarray
    s: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @property
    def I_plus(self) -> np.ndarray:
        return np.flatnonzero(self.labels_sign > 0)

    @property
    def I_minus(self) -> np.ndarray:
        return np.flatnonzero(self.labels_sign < 0)

    @property
    def J_plus(self) -> np.ndarray:
        return np.flatnonzero(self.s > 0)

    @property
    def J_minus(self) -> np.ndarray:
        return np.flatnonzero(self.s < 0)

    @property
    def S(self) -> tuple[frozenset, ...]:
        """Per-neuron sets of data indices the neuron is initially active on with matching sign."""
        return tuple(frozenset(np.flatnonzero(col).tolist()) for col in self.A.T)

    @classmethod
    def from_array(cls, A, y, s=None) -> "MaskMatrix":
        """Wrap an explicit 0/1 matrix. Neuron signs default to the sign of the labels each column covers."""
        A = np.asarray(A).astype(bool)
        y = check_labels(y)
        if A.ndim != 2 or A.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"mask of shape {A.shape} for {y.shape[0]} labels")
        ysgn = np.sign(y)
        if s is None:
            s = np.ones(A.shape[1])
            for j in range(A.shape[1]):
                signs = set(ysgn[A[:, j]].tolist())
                if len(signs) > 1:
                    raise ValueError(f"column {j} covers labels of both signs")
                if signs == {-1.0}:
                    s[j] = -1.0
        s = np.asarray(s, dtype=float)
        if np.any(A & (ysgn[:, None] != s[None, :])):
            raise ValueError("mask entries must only cover labels matching the neuron sign")
        A.setflags(write=False)
        return cls(A=A, labels_sign=ysgn, s=s)


def mask_matrix(dataset: OrthonormalDataset, init: InitDraw) -> MaskMatrix:
    """``A[i, j] = 1`` iff ``u_j . x_i > 0`` (strictly) and ``sign(y_i) == s_j``."""
    if dataset.d != init.d:
        raise DimensionMismatch(f"dataset d={dataset.d} but init d={init.d}")
    pre = dataset.project(init.u).T
    ysgn = np.sign(dataset.labels)
    A = (pre > 0) & (ysgn[:, None] == init.s[None, :])
    A.setflags(write=False)
    return MaskMatrix(A=A, labels_sign=ysgn, s=init.s)


@dataclass(frozen=True, eq=False)
class DenseNetwork:
    """Plain-float parameters ``a`` (``m``) and ``W`` (``m x d``)."""

    a: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).ravel()
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        if W.shape[0] != a.shape[0]:
            raise DimensionMismatch(f"{a.shape[0]} output weights but {W.shape[0]} neurons")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "W", W)

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @classmethod
    def zeros(cls, m: int, d: int) -> "DenseNetwork":
        return cls(np.zeros(m), np.zeros((m, d)))

    @classmethod
    def from_init(cls, init: InitDraw) -> "DenseNetwork":
        alpha = np.exp(init.alpha_log)
        if alpha == 0.0:
            raise ValueError(f"alpha = exp({init.alpha_log}) underflows; use the log-domain trainer")
        return cls(alpha * init.s, alpha * init.u)

    def sq_norm(self) -> float:
        return 0.5 * float(np.sum(self.a**2) + np.sum(self.W**2))


def forward(net: DenseNetwork, x) -> float | np.ndarray:
    """``sum_j a_j relu(w_j . x)`` for one input vector or each row of a matrix."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.d:
        raise DimensionMismatch(f"input dimension {x.shape[-1]} but network has d={net.d}")
    out = np.maximum(x @ net.W.T, 0.0) @ net.a
    return float(out) if x.ndim == 1 else out


def outputs(net: DenseNetwork, data: OrthonormalDataset) -> np.ndarray:
    if net.d != data.d:
        raise DimensionMismatch(f"network d={net.d} but dataset d={data.d}")
    return np.maximum(data.project(net.W), 0.0).T @ net.a


def residual_vector(net: DenseNetwork, data: OrthonormalDataset) -> np.ndarray:
    return outputs(net, data) - data.labels


def loss(net: DenseNetwork, data: OrthonormalDataset) -> float:
    r = residual_vector(net, data)
    return float(r @ r) / (2 * data.n)
