"""Multi-task semantic attribute classifiers with a shared latent layer.

Every task ``m`` scores an input with ``x . (L s_m)``. ``L`` (d x K) is
shared across tasks and ``S`` (K x M) holds the per-task combinations.
Training minimizes the summed squared hinge loss plus a group penalty on
rows of ``S`` within each task group, an L1 penalty on ``L`` and a ridge
penalty on ``L``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._random import substream
from ._validation import check_features
from .spn import DimensionError

logger = logging.getLogger(__name__)


class MtlTrainingError(ArithmeticError):
    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


# --------------------------------------------------------------------------
# data


def check_groups(groups, M: int) -> list[list[int]]:
    """Validate that ``groups`` partitions ``range(M)``."""
    groups = [sorted(int(m) for m in g) for g in groups]
    if not groups or any(len(g) == 0 for g in groups):
        raise ValueError("need at least one non-empty group")
    flat = sorted(m for g in groups for m in g)
    if flat != list(range(M)):
        raise ValueError("groups must partition the task indices 0..%d" % (M - 1))
    return groups


@dataclass
class MtlTrainSet:
    """Examples of all tasks stacked row-wise.

    ``task[i]`` is the task of row ``i`` and ``y[i]`` its label in {-1, +1}.
    """

    X: np.ndarray
    y: np.ndarray
    task: np.ndarray
    M: int

    def __post_init__(self):
        self.X = check_features(self.X)
        self.y = np.asarray(self.y)
        self.task = np.asarray(self.task, dtype=np.int64)
        if len(self.y) != len(self.X) or len(self.task) != len(self.X):
            raise DimensionError("X, y and task must have the same number of rows")
        if not np.isin(self.y, (-1, 1)).all():
            raise ValueError("labels must be -1 or +1")
        self.y = self.y.astype(np.float64)
        if len(self.task) and (self.task.min() < 0 or self.task.max() >= self.M):
            raise ValueError("task index out of range")
        counts = np.bincount(self.task, minlength=self.M)
        if np.any(counts == 0):
            raise ValueError("every task needs at least one example; task %d has none" % int(np.argmin(counts)))
        self._onehot = sparse.csr_matrix(
            (np.ones(len(self.task)), (np.arange(len(self.task)), self.task)), shape=(len(self.task), self.M)
        )

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_tasks(cls, tasks) -> "MtlTrainSet":
        """Build from a list of per-task ``(X_m, Y_m)`` pairs."""
        Xs, ys, ts = [], [], []
        for m, (Xm, Ym) in enumerate(tasks):
            Xm = check_features(Xm)
            Ym = np.asarray(Ym).ravel()
            Xs.append(Xm)
            ys.append(Ym)
            ts.append(np.full(len(Xm), m))
        widths = {x.shape[1] for x in Xs}
        if len(widths) > 1:
            raise DimensionError("tasks have different feature dimensions: %s" % sorted(widths))
        return cls(np.vstack(Xs), np.concatenate(ys), np.concatenate(ts), len(Xs))

    @classmethod
    def from_shared(cls, X, Y) -> "MtlTrainSet":
        """All tasks labelled on the same inputs; ``Y`` is ``(n, M)``."""
        X = check_features(X)
        Y = np.asarray(Y)
        if Y.ndim == 1:
            Y = Y[:, None]
        if len(Y) != len(X):
            raise DimensionError("X and Y must have the same number of rows")
        n, M = Y.shape
        return cls(np.tile(X, (M, 1)), Y.T.ravel(), np.repeat(np.arange(M), n), M)

    def task_rows(self, m: int) -> np.ndarray:
        return np.flatnonzero(self.task == m)


# --------------------------------------------------------------------------
# model and objective


@dataclass
class MtlModel:
    L: np.ndarray
    S: np.ndarray
    mu: float
    gamma: float
    lam: float
    groups: list

    def __post_init__(self):
        self.L = np.asarray(self.L, dtype=np.float64)
        self.S = np.asarray(self.S, dtype=np.float64)
        if self.L.ndim != 2 or self.S.ndim != 2 or self.L.shape[1] != self.S.shape[0]:
            raise DimensionError("L is %s and S is %s; inner dimensions must agree" % (self.L.shape, self.S.shape))
        if not (np.all(np.isfinite(self.L)) and np.all(np.isfinite(self.S))):
            raise ValueError("model parameters must be finite")
        self.groups = check_groups(self.groups, self.S.shape[1])

    @property
    def W(self) -> np.ndarray:
        return self.L @ self.S

    @property
    def d(self) -> int:
        return self.L.shape[0]

    @property
    def K(self) -> int:
        return self.L.shape[1]

    @property
    def M(self) -> int:
        return self.S.shape[1]


def hinge_term(L: np.ndarray, S: np.ndarray, data: MtlTrainSet) -> float:
    margins = data.y * np.einsum("ik,ki->i", data.X @ L, S[:, data.task])
    r = np.maximum(0.0, 1.0 - margins)
    return 0.5 * float(r @ r)


def group_penalty(S: np.ndarray, groups) -> float:
    return float(sum(np.linalg.norm(S[:, g], axis=1).sum() for g in groups))


def mtl_objective(model: MtlModel, data: MtlTrainSet) -> float:
    if data.d != model.d:
        raise DimensionError("data has %d features, model expects %d" % (data.d, model.d))
    if data.M != model.M:
        raise DimensionError("data has %d tasks, model has %d" % (data.M, model.M))
    return (
        hinge_term(model.L, model.S, data)
        + model.mu * group_penalty(model.S, model.groups)
        + model.gamma * float(np.abs(model.L).sum())
        + model.lam * float((model.L * model.L).sum())
    )


# --------------------------------------------------------------------------
# proximal operators


def group_soft_threshold(S: np.ndarray, groups, threshold: float) -> np.ndarray:
    """Shrink every row-within-group block of ``S`` toward zero by ``threshold`` in l2 norm."""
    out = np.array(S, dtype=np.float64, copy=True)
    for g in groups:
        block = out[:, g]
        norms = np.linalg.norm(block, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(norms > threshold, 1.0 - threshold / norms, 0.0)
        out[:, g] = block * scale
    return out


def soft_threshold(A: np.ndarray, threshold: float) -> np.ndarray:
    return np.sign(A) * np.maximum(np.abs(A) - threshold, 0.0)


# --------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class MtlSolverConfig:
    tol: float = 1e-6
    max_outer: int = 200
    inner_steps: int = 5
    initial_step: float = 1.0
    backtrack: float = 0.5
    max_backtracks: int = 60
    seed: int = 0
    # slack for the per-iteration monotonicity check, relative to the objective
    monotone_slack: float = 1e-12


@dataclass
class MtlTrainResult:
    model: MtlModel
    history: list = field(default_factory=list)
    converged: bool = False


def _residual(data: MtlTrainSet, Z: np.ndarray, S: np.ndarray) -> np.ndarray:
    """``-r * y`` per row, the derivative of the squared hinge w.r.t. the raw score."""
    scores = np.einsum("ik,ki->i", Z, S[:, data.task])
    r = np.maximum(0.0, 1.0 - data.y * scores)
    return -r * data.y


def _prox_step(f, grad, prox, x, t, cfg: MtlSolverConfig):
    """One backtracking proximal-gradient step; returns ``(x_new, f_new, t)``."""
    fx = f(x)
    g = grad(x)
    for _ in range(cfg.max_backtracks):
        z = prox(x - t * g, t)
        diff = z - x
        fz = f(z)
        if fz <= fx + float((g * diff).sum()) + float((diff * diff).sum()) / (2 * t) + 1e-12 * abs(fx):
            return z, fz, t
        t *= cfg.backtrack
    return x, fx, t


def _single_task_weights(data: MtlTrainSet, ridge: float) -> np.ndarray:
    """Squared-hinge ridge solution of every task on its own, as columns."""
    W = np.zeros((data.d, data.M))
    for m in range(data.M):
        rows = data.task_rows(m)
        X, y = data.X[rows], data.y[rows]

        def fun(w):
            r = np.maximum(0.0, 1.0 - y * (X @ w))
            return 0.5 * r @ r + ridge * w @ w, -(X.T @ (r * y)) + 2 * ridge * w

        W[:, m] = optimize.minimize(fun, np.zeros(data.d), jac=True, method="L-BFGS-B").x
    return W


def svd_init(data: MtlTrainSet, K: int, ridge: float = 1e-3, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """``L`` and ``S`` from the leading singular vectors of the single-task weights.

    Latent dimensions beyond the rank of the stacked weights start at small
    random values so their gradients are not identically zero.
    """
    W0 = _single_task_weights(data, ridge)
    U, sv, Vt = np.linalg.svd(W0, full_matrices=False)
    r = min(K, len(sv))
    root = np.sqrt(sv[:r])
    L = np.zeros((data.d, K))
    S = np.zeros((K, data.M))
    L[:, :r] = U[:, :r] * root
    S[:r] = root[:, None] * Vt[:r]
    if r < K:
        rng = substream(seed, "mtl-init")
        scale = 1e-3 * (root.mean() if r else 1.0)
        L[:, r:] = scale * rng.normal(size=(data.d, K - r))
        S[r:] = scale * rng.normal(size=(K - r, data.M))
    return L, S


def default_K(d: int, M: int) -> int:
    return min(d, 2 * M)


def mtl_train(
    data: MtlTrainSet,
    groups=None,
    K: int | None = None,
    mu: float = 0.1,
    gamma: float = 0.01,
    lam: float = 0.01,
    config: MtlSolverConfig = MtlSolverConfig(),
    *,
    init: tuple[np.ndarray, np.ndarray] | None = None,
    callback=None,
) -> MtlTrainResult:
    """Alternating proximal-gradient minimization of the multi-task objective.

    Each outer iteration runs ``config.inner_steps`` backtracking proximal
    steps on ``S`` with ``L`` fixed, then on ``L`` with ``S`` fixed. The
    objective after each outer iteration is recorded in ``history`` (entry 0
    is the initial value); ``callback(iteration, model)`` is called after
    each one. Training stops once the relative decrease drops below
    ``config.tol``.
    """
    if min(mu, gamma, lam) < 0:
        raise ValueError("regularization weights must be nonnegative")
    groups = check_groups(groups if groups is not None else [list(range(data.M))], data.M)
    K = default_K(data.d, data.M) if K is None else int(K)
    if K < 1:
        raise ValueError("K must be positive")
    if init is None:
        L, S = svd_init(data, K, seed=config.seed)
    else:
        L, S = (np.array(a, dtype=np.float64) for a in init)
        if L.shape != (data.d, K) or S.shape != (K, data.M):
            raise DimensionError("init shapes %s, %s do not match (d, K, M) = (%d, %d, %d)" % (L.shape, S.shape, data.d, K, data.M))

    X = data.X

    def total(L_, S_):
        return (hinge_term(L_, S_, data) + mu * group_penalty(S_, groups)
                + gamma * float(np.abs(L_).sum()) + lam * float((L_ * L_).sum()))

    obj = total(L, S)
    if not np.isfinite(obj):
        raise MtlTrainingError("objective is not finite at initialization", 0)
    history = [obj]
    tS = tL = config.initial_step
    converged = False
    for it in range(1, config.max_outer + 1):
        Z = X @ L
        f_S = lambda S_: hinge_term(L, S_, data)
        g_S = lambda S_: Z.T @ (data._onehot.multiply(_residual(data, Z, S_)[:, None])).toarray()
        prox_S = lambda A, t: group_soft_threshold(A, groups, t * mu)
        for _ in range(config.inner_steps):
            S, _, tS = _prox_step(f_S, g_S, prox_S, S, tS, config)
            tS /= config.backtrack

        f_L = lambda L_: hinge_term(L_, S, data) + lam * float((L_ * L_).sum())
        g_L = lambda L_: X.T @ (_residual(data, X @ L_, S)[:, None] * S[:, data.task].T) + 2 * lam * L_
        prox_L = lambda A, t: soft_threshold(A, t * gamma)
        for _ in range(config.inner_steps):
            L, _, tL = _prox_step(f_L, g_L, prox_L, L, tL, config)
            tL /= config.backtrack

        new = total(L, S)
        if not np.isfinite(new):
            raise MtlTrainingError("objective became non-finite at outer iteration %d" % it, it)
        if new > obj + config.monotone_slack * max(1.0, abs(obj)):
            raise MtlTrainingError("objective increased at outer iteration %d: %.17g -> %.17g" % (it, obj, new), it)
        history.append(new)
        if callback is not None:
            callback(it, MtlModel(L, S, mu, gamma, lam, groups))
        rel = (obj - new) / max(abs(obj), np.finfo(float).tiny)
        obj = new
        if rel < config.tol:
            converged = True
            break
    logger.info("mtl_train: %d outer iterations, objective %.6g", len(history) - 1, obj)
    return MtlTrainResult(MtlModel(L, S, mu, gamma, lam, groups), history, converged)


# --------------------------------------------------------------------------
# prediction


@dataclass(frozen=True)
class MtlPrediction:
    label: int
    margin: float
    tie: bool


def mtl_margins(model: MtlModel, X) -> np.ndarray:
    """Raw scores of every input for every task, shape ``(n, M)``."""
    X = check_features(np.atleast_2d(X))
    if X.shape[1] != model.d:
        raise DimensionError("inputs have %d features, model expects %d" % (X.shape[1], model.d))
    return X @ model.W


def mtl_predict(model: MtlModel, x, m: int) -> MtlPrediction:
    if not 0 <= m < model.M:
        raise IndexError("task %d out of range for %d tasks" % (m, model.M))
    x = np.asarray(x, dtype=np.float64).ravel()
    margin = float(mtl_margins(model, x[None, :])[0, m])
    return MtlPrediction(1 if margin >= 0 else -1, margin, margin == 0.0)


def labels_from_margins(margins: np.ndarray) -> np.ndarray:
    """Sign with exact zeros mapped to +1."""
    return np.where(margins >= 0, 1, -1)


class MultiTaskAttributeClassifier(ClassifierMixin, BaseEstimator):
    """Joint attribute classifiers sharing a latent layer.

    ``fit(X, Y)`` takes inputs ``(n, d)`` and labels ``(n, M)`` in {-1, +1};
    ``predict`` returns ``(n, M)`` labels.
    """

    def __init__(self, K=None, mu=0.1, gamma=0.01, lam=0.01, groups=None, tol=1e-6, max_iter=200, inner_steps=5, random_state=0):
        self.K = K
        self.mu = mu
        self.gamma = gamma
        self.lam = lam
        self.groups = groups
        self.tol = tol
        self.max_iter = max_iter
        self.inner_steps = inner_steps
        self.random_state = random_state

    def fit(self, X, Y):
        data = MtlTrainSet.from_shared(X, Y)
        cfg = MtlSolverConfig(tol=self.tol, max_outer=self.max_iter, inner_steps=self.inner_steps, seed=self.random_state)
        result = mtl_train(data, self.groups, self.K, self.mu, self.gamma, self.lam, cfg)
        self.model_ = result.model
        self.history_ = result.history
        self.converged_ = result.converged
        self.n_features_in_ = data.d
        self.n_tasks_ = data.M
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return mtl_margins(self.model_, X)

    def predict(self, X):
        return labels_from_margins(self.decision_function(X))

    def score(self, X, Y, sample_weight=None):
        Y = np.asarray(Y)
        if Y.ndim == 1:
            Y = Y[:, None]
        return float(np.mean(self.predict(X) == Y))
