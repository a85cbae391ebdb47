"""scikit-learn style wrappers around the limit process and the trainer.

Both estimators expect ``X`` with orthonormal rows (one datum per row) and
store the fitted network in ambient coordinates, so ``predict`` works on any
input of matching dimension.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .core import DenseNetwork, OrthonormalDataset, forward, sample_init
from .limit import limit_process, opt_sq_norm, pred_sq_norm, theta_at
from .trainer import TrainerConfig, he_uniform_init, train, train_dense


def _dataset(X, y) -> OrthonormalDataset:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {X.shape}")
    return OrthonormalDataset.from_arrays(X, y)


def _predict(net: DenseNetwork, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != net.d:
        raise ValueError(f"X must have shape (k, {net.d}), got {X.shape}")
    return np.asarray(forward(net, X), dtype=float).reshape(-1)


class LimitProcessRegressor(RegressorMixin, BaseEstimator):
    """Interpolator reached by the vanishing-initialization limit of gradient flow.

    No gradient step is taken: a random init fixes the activation mask and the
    limit process is built from it.

    Parameters
    ----------
    n_neurons : int
        Width ``m`` of the hidden layer.
    signs : {"random", "positive"}
        Output weight signs of the init.
    random_state : int
        Seed for the init directions and signs.
    strict : bool
        Raise on zero labels or tied activations instead of breaking ties by index.
    """

    def __init__(self, n_neurons: int = 6, signs: str = "random", random_state: int = 0,
                 strict: bool = False):
        self.n_neurons = n_neurons
        self.signs = signs
        self.random_state = random_state
        self.strict = strict

    def fit(self, X, y):
        data = _dataset(X, y)
        init = sample_init(self.n_neurons, data.d, alpha_log=-1.0, seed=self.random_state,
                           signs=self.signs)
        self.limit_process_ = limit_process(data, init, strict=self.strict)
        self.network_ = theta_at(self.limit_process_, math.inf, rows=data.rows)
        self.jump_times_ = self.limit_process_.jump_times[1:-1].copy()
        self.sq_norm_ = pred_sq_norm(self.limit_process_)
        self.opt_sq_norm_ = opt_sq_norm(data.labels)
        self.n_features_in_ = data.d
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        return _predict(self.network_, X)


class SmallInitReLURegressor(RegressorMixin, BaseEstimator):
    """Two-layer ReLU network trained by full-batch gradient descent.

    ``init="small"`` uses a balanced init of scale ``exp(alpha_log)`` and the
    log-domain trainer, which survives scales far below float range.
    ``init="small-dense"`` uses the same init in plain floats and
    ``init="he-uniform"`` the usual uniform He init, both on the dense path.
    """

    def __init__(self, n_neurons: int = 6, init: str = "small", alpha_log: float = -500.0,
                 signs: str = "random", lr: float = 0.01, max_epochs: int = 10_000_000,
                 loss_stop: float = 1e-20, record_every: int = 1000, random_state: int = 0,
                 engine: str = "numba"):
        self.n_neurons = n_neurons
        self.init = init
        self.alpha_log = alpha_log
        self.signs = signs
        self.lr = lr
        self.max_epochs = max_epochs
        self.loss_stop = loss_stop
        self.record_every = record_every
        self.random_state = random_state
        self.engine = engine

    def fit(self, X, y):
        data = _dataset(X, y)
        self.trajectory_ = None
        if self.init == "small":
            draw = sample_init(self.n_neurons, data.d, self.alpha_log, seed=self.random_state,
                               signs=self.signs)
            cfg = TrainerConfig(lr=self.lr, max_epochs=self.max_epochs, loss_stop=self.loss_stop,
                                record_every=self.record_every, engine=self.engine)
            traj = train(data, draw, cfg)
            self.trajectory_ = traj
            st = traj.final_state
            scale = np.exp(st.c)  # neurons below float range become exact zeros
            self.network_ = DenseNetwork(st.s * scale * st.b, scale[:, None] * st.V)
            self.sq_norm_ = traj.final_sq_norm()
            self.loss_ = traj.final_loss
            self.n_epochs_ = traj.final_epoch
            self.outcome_ = traj.outcome
        elif self.init in ("small-dense", "he-uniform"):
            if self.init == "he-uniform":
                net = he_uniform_init(self.n_neurons, data.d, seed=self.random_state)
            else:
                draw = sample_init(self.n_neurons, data.d, self.alpha_log, seed=self.random_state,
                                   signs=self.signs)
                net = DenseNetwork.from_init(draw)
            res = train_dense(data, net, self.lr, self.max_epochs, loss_stop=self.loss_stop,
                              record_every=self.record_every, engine=self.engine)
            self.network_ = res.net
            self.sq_norm_ = res.net.sq_norm()
            self.loss_ = res.loss
            self.n_epochs_ = res.epochs
            self.outcome_ = res.outcome
        else:
            raise ValueError(f"init must be 'small', 'small-dense' or 'he-uniform', got {self.init!r}")
        self.n_features_in_ = data.d
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        return _predict(self.network_, X)
