"""Pairwise ranking with sum-product networks.

Items are binary attribute vectors with like counts. A ranking network
scores an item by the log root value of its max-product version with the
item as complete evidence; training pushes scores of ordered pairs apart and
scores of near-tied pairs together, then cuts low-weight edges.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from ._random import substream_seed
from ._validation import check_binary_matrix, check_like_counts
from .spn import (
    DimensionError,
    _forward_log,
    SpnGraph,
    max_log_values,
    remove_edges,
    to_mpn,
    traversal_counts,
)
from .structure import StructureConfig, hard_em_refine, init_structure, select_top_fraction

logger = logging.getLogger(__name__)

# Stand-in for log(0) when summing scores; keeps the objective finite.
LOG_FLOOR = float(np.log(np.finfo(float).tiny))


class NoPairsError(ValueError):
    pass


class RankTrainingError(ArithmeticError):
    def __init__(self, message: str, edge: int | None = None):
        super().__init__(message)
        self.edge = edge


@dataclass
class PairSets:
    """Training pairs as indices into an item array.

    ``p1`` rows are ordered ``(high, low)`` with ``n[high] - n[low] > C1``;
    ``p2`` rows are unordered with ``|n[a] - n[b]| <= C2``.
    """

    p1: np.ndarray
    p2: np.ndarray
    C1: int
    C2: int

    def __post_init__(self):
        self.p1 = np.asarray(self.p1, dtype=np.int64).reshape(-1, 2)
        self.p2 = np.asarray(self.p2, dtype=np.int64).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.p1) + len(self.p2)

    def check(self, like_counts) -> None:
        """Raise ``ValueError`` if a pair breaks its threshold rule."""
        n = np.asarray(like_counts)
        if len(self.p1) and not np.all(n[self.p1[:, 0]] - n[self.p1[:, 1]] > self.C1):
            raise ValueError("P1 contains a pair whose like gap is not above C1")
        if len(self.p2) and not np.all(np.abs(n[self.p2[:, 0]] - n[self.p2[:, 1]]) <= self.C2):
            raise ValueError("P2 contains a pair whose like gap exceeds C2")


def make_pairs(like_counts, C1: int, C2: int, max_pairs: int | None = None, seed: int = 0) -> PairSets:
    """All qualifying pairs, each set subsampled uniformly to ``max_pairs``.

    The returned order is a seeded random permutation, which is also the
    order in which :func:`train` visits the pairs.
    """
    n = check_like_counts(like_counts)
    if len(n) == 0:
        raise ValueError("empty dataset")
    if C1 < 1 or C2 < 0:
        raise ValueError("need C1 >= 1 and C2 >= 0")
    i, j = np.triu_indices(len(n), k=1)
    gap = n[i] - n[j]
    up = gap > C1
    down = -gap > C1
    p1 = np.concatenate([np.column_stack([i[up], j[up]]), np.column_stack([j[down], i[down]])])
    near = np.abs(gap) <= C2
    p2 = np.column_stack([i[near], j[near]])
    if not len(p1) and not len(p2):
        raise NoPairsError("no qualifying pairs")
    rng = np.random.default_rng(seed)

    def pick(pairs):
        if max_pairs is not None and len(pairs) > max_pairs:
            return pairs[rng.choice(len(pairs), size=max_pairs, replace=False)]
        return pairs[rng.permutation(len(pairs))]

    return PairSets(pick(p1), pick(p2), int(C1), int(C2))


@dataclass(frozen=True)
class RankTrainConfig:
    alpha1: float = 0.01
    alpha2: float = 0.001
    lambda1: float = 1.0
    lambda2: float = 1.0
    E0: int | None = None
    prune_weight_threshold: float = 0.01
    iterations: int = 10
    min_weight_floor: float = 1e-8
    delta_n_cap_percentile: float | None = None
    eval_pairs: int = 1000
    batch_size: int = 1
    prune: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "lambda1", "lambda2", "prune_weight_threshold", "min_weight_floor"):
            if not getattr(self, name) > 0:
                raise ValueError("%s must be positive" % name)
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.E0 is not None and self.E0 < 1:
            raise ValueError("E0 must be a positive integer")
        if self.batch_size < 1 or self.eval_pairs < 1:
            raise ValueError("batch_size and eval_pairs must be >= 1")
        if self.delta_n_cap_percentile is not None and not 0 < self.delta_n_cap_percentile <= 100:
            raise ValueError("delta_n_cap_percentile must be in (0, 100]")


@dataclass
class RankObjective:
    value: float
    p1_term: float
    p2_term: float
    edge_count: int


@dataclass
class TrainRecord:
    iteration: int
    objective: float
    p1_term: float
    p2_term: float
    edge_count: int
    train_pair_accuracy: float


# --------------------------------------------------------------------------
# scoring


def _states(X) -> np.ndarray:
    return np.ascontiguousarray(X, dtype=np.int8)


def scores(graph: SpnGraph, X) -> np.ndarray:
    """Log MPN root value of every row of ``X`` (bits as complete evidence)."""
    X = check_binary_matrix(X, graph.num_variables)
    mpn = to_mpn(graph)
    return max_log_values(mpn, _states(X))


def score(graph: SpnGraph, item) -> float:
    item = np.asarray(item)
    if item.ndim != 1:
        raise DimensionError("score expects a single attribute vector")
    return float(scores(graph, item[None, :])[0])


class Order(enum.Enum):
    FIRST = "first"
    SECOND = "second"
    TIE = "tie"

    def reversed(self) -> "Order":
        return {Order.FIRST: Order.SECOND, Order.SECOND: Order.FIRST, Order.TIE: Order.TIE}[self]


def rank_pair(graph: SpnGraph, a, b) -> Order:
    """Which of two items the network ranks higher; exact score ties are ``TIE``."""
    sa, sb = scores(graph, np.vstack([np.asarray(a), np.asarray(b)]))
    if sa > sb:
        return Order.FIRST
    if sb > sa:
        return Order.SECOND
    return Order.TIE


def pair_gradient(mpn: SpnGraph, first, second) -> np.ndarray:
    """``t1 - t2``: per-sum-edge difference in MPE traversal counts.

    Divided by the edge weights this is the gradient of
    ``log M(first) - log M(second)`` with respect to the weights.
    """
    X = check_binary_matrix(np.vstack([np.asarray(first), np.asarray(second)]), mpn.num_variables)
    _, counts = traversal_counts(mpn, _states(X))
    return counts[0] - counts[1]


def _objective_terms(roots: np.ndarray, p1: np.ndarray, p2: np.ndarray, lambda1: float, lambda2: float):
    # p1 / p2 index into roots
    v = np.maximum(roots, LOG_FLOOR)
    p1_term = float(np.sum(v[p1[:, 0]] - v[p1[:, 1]])) if len(p1) else 0.0
    p2_term = float(np.sum(np.abs(v[p2[:, 0]] - v[p2[:, 1]]))) if len(p2) else 0.0
    return lambda1 * p1_term - lambda2 * p2_term, p1_term, p2_term


def rank_objective(graph: SpnGraph, X, pairs: PairSets, lambda1: float = 1.0, lambda2: float = 1.0) -> RankObjective:
    """``lambda1 * sum_P1 (V_h - V_l) - lambda2 * sum_P2 |V_a - V_b|`` on log root values."""
    X = check_binary_matrix(X, graph.num_variables)
    roots = max_log_values(to_mpn(graph), _states(X))
    value, t1, t2 = _objective_terms(roots, pairs.p1, pairs.p2, lambda1, lambda2)
    return RankObjective(value, t1, t2, graph.edge_count)


def _pair_accuracy(roots: np.ndarray, p1: np.ndarray) -> float:
    if not len(p1):
        return float("nan")
    hi, lo = roots[p1[:, 0]], roots[p1[:, 1]]
    decided = hi != lo
    if not decided.any():
        return float("nan")
    return float(np.mean(hi[decided] > lo[decided]))


# --------------------------------------------------------------------------
# training


def _live_edge_count(plan, root: int, dead: np.ndarray) -> int:
    reach = np.zeros(plan.n_nodes, dtype=bool)
    reach[root] = True
    count = 0
    kind = plan.kind
    for i in reversed(plan.order):
        if not reach[i] or kind[i] == 0:
            continue
        if kind[i] == 1:
            s = plan.edge_start[i]
            for e in range(s, s + len(plan.children[i])):
                if not dead[e]:
                    reach[plan.edge_child[e]] = True
                    count += 1
        else:
            for c in plan.children[i]:
                reach[c] = True
            count += len(plan.children[i])
    return count


def prune(graph: SpnGraph, X, like_counts, pairs: PairSets, config: RankTrainConfig = RankTrainConfig(), *, log: list | None = None) -> SpnGraph:
    """Cut sum edges whose weight is below ``config.prune_weight_threshold``.

    Candidates are tried in ascending weight order, in repeated sweeps
    until one commits nothing. A candidate is cut when
    zeroing its weight does not lower the ranking objective on a fixed seeded
    subsample of the pairs; the last child of a sum node is never cut. Nodes
    left without a parent are deleted. Stops once the edge count drops
    below ``config.E0``.

    ``log``, when given, receives one dict per committed cut with the
    objective before and after.
    """
    X = check_binary_matrix(X, graph.num_variables)
    check_like_counts(like_counts, len(X))
    mpn = to_mpn(graph)
    plan = mpn.plan
    w = graph.weights
    candidates = np.flatnonzero(w < config.prune_weight_threshold)
    if not len(candidates):
        return graph
    candidates = candidates[np.argsort(w[candidates], kind="stable")]

    kinds = np.concatenate([np.zeros(len(pairs.p1), int), np.ones(len(pairs.p2), int)])
    allpairs = np.concatenate([pairs.p1, pairs.p2])
    if len(allpairs) > config.eval_pairs:
        rng = np.random.default_rng(substream_seed(config.seed, "prune"))
        pick = np.sort(rng.choice(len(allpairs), size=config.eval_pairs, replace=False))
        allpairs, kinds = allpairs[pick], kinds[pick]
    sub_p1, sub_p2 = allpairs[kinds == 0], allpairs[kinds == 1]
    items = np.unique(allpairs)
    sub_p1, sub_p2 = np.searchsorted(items, sub_p1), np.searchsorted(items, sub_p2)
    states = _states(X[items])

    def objective(lw):
        return _objective_terms(max_log_values(mpn, states, lw), sub_p1, sub_p2, config.lambda1, config.lambda2)

    with np.errstate(divide="ignore"):
        lw = np.log(w)
    dead = np.zeros(len(w), dtype=bool)
    live_children = {int(p): len(plan.children[p]) for p in np.unique(plan.edge_parent)}
    current = objective(lw)
    edges = graph.edge_count

    def chosen_edges(lw):
        _, choice = _forward_log(plan, lw, states, True, want_choice=True)
        return choice

    choice = chosen_edges(lw)
    # later cuts can make an earlier rejection acceptable, so sweep until a pass commits nothing
    progress = True
    while progress and not (config.E0 is not None and edges < config.E0):
        progress = False
        for e in candidates:
            if dead[e]:
                continue
            if config.E0 is not None and edges < config.E0:
                break
            parent = int(plan.edge_parent[e])
            if live_children[parent] <= 1:
                continue
            used = bool(np.any(choice[parent] == e))
            if used:
                trial = lw.copy()
                trial[e] = -np.inf
                new = objective(trial)
                if new[0] < current[0]:
                    continue
            else:
                # an edge no subsample item routes through cannot change any max value
                trial = lw
                trial[e] = -np.inf
                new = current
            lw = trial
            progress = True
            dead[e] = True
            live_children[parent] -= 1
            if log is not None:
                log.append({"edge": int(e), "weight": float(w[e]), "before": current[0], "after": new[0]})
            current = new
            edges = _live_edge_count(plan, mpn.root, dead)
            if used:
                choice = chosen_edges(lw)
    if not dead.any():
        return graph
    return remove_edges(graph, dead)


def train(
    graph: SpnGraph,
    X,
    like_counts,
    pairs: PairSets,
    config: RankTrainConfig = RankTrainConfig(),
) -> tuple[SpnGraph, list[TrainRecord]]:
    """Learn ranking weights from pairs by MPE-path gradient steps.

    For a P1 pair (high, low) every edge weight moves by
    ``alpha1 * dn * dt / w`` with ``dn`` the like gap and ``dt`` the
    difference in how often the two items' MPE paths use the edge. For a P2
    pair the item with the larger root value plays the first role and the
    step is ``-alpha2 * dt / w``. Weights are clamped at
    ``min_weight_floor``. Each iteration ends with :func:`prune` (when
    enabled) and a history record.
    """
    X = check_binary_matrix(X, graph.num_variables)
    n = check_like_counts(like_counts, len(X))
    graph.check()
    history: list[TrainRecord] = []
    if not len(pairs) or config.iterations == 0:
        return graph, history
    pairs.check(n)

    kinds = np.concatenate([np.zeros(len(pairs.p1), dtype=np.int8), np.ones(len(pairs.p2), dtype=np.int8)])
    jobs = np.concatenate([pairs.p1, pairs.p2]).astype(np.int64)
    order = np.random.default_rng(substream_seed(config.seed, "train-order")).permutation(len(jobs))
    kinds, jobs = kinds[order], jobs[order]
    dn_cap = None
    if config.delta_n_cap_percentile is not None and len(pairs.p1):
        dn_cap = float(np.percentile(n[pairs.p1[:, 0]] - n[pairs.p1[:, 1]], config.delta_n_cap_percentile))
    dn = (n[jobs[:, 0]] - n[jobs[:, 1]]).astype(np.float64)
    if dn_cap is not None:
        dn = np.minimum(dn, dn_cap)
    states = _states(X)

    for it in range(config.iterations):
        mpn = to_mpn(graph)
        w = np.array(graph.weights)
        with np.errstate(divide="ignore"):
            lw = np.log(w)
        for start in range(0, len(jobs), config.batch_size):
            batch = slice(start, start + config.batch_size)
            items, inv = np.unique(jobs[batch], return_inverse=True)
            inv = inv.reshape(-1, 2)
            roots, counts = traversal_counts(mpn, states[items], lw)
            # log M is undefined at M = 0: an unreachable item contributes no path
            counts[~np.isfinite(roots)] = 0
            # per pair, the step is eta * (t_first - t_second) / w
            first, second = inv[:, 0].copy(), inv[:, 1].copy()
            eta = np.where(kinds[batch] == 0, config.alpha1 * dn[batch], -config.alpha2)
            p2 = kinds[batch] == 1
            flip = p2 & (roots[second] > roots[first])
            first[flip], second[flip] = inv[flip, 1], inv[flip, 0]
            eta[p2 & (roots[first] == roots[second])] = 0.0
            coef = np.zeros(len(items))
            np.add.at(coef, first, eta)
            np.add.at(coef, second, -eta)
            delta = coef @ counts
            hit = np.flatnonzero(delta)
            if not len(hit):
                continue
            with np.errstate(over="ignore"):
                updated = w[hit] + delta[hit] / w[hit]
            bad = ~np.isfinite(updated)
            if bad.any():
                e = int(hit[np.argmax(bad)])
                raise RankTrainingError("non-finite weight update on edge %d in iteration %d" % (e, it), edge=e)
            updated = np.maximum(updated, config.min_weight_floor)
            w[hit] = updated
            lw[hit] = np.log(updated)
        graph = graph.with_weights(w)
        if config.prune:
            graph = prune(graph, X, n, pairs, config)
        roots = max_log_values(to_mpn(graph), states)
        value, t1, t2 = _objective_terms(roots, pairs.p1, pairs.p2, config.lambda1, config.lambda2)
        record = TrainRecord(it, value, t1, t2, graph.edge_count, _pair_accuracy(roots, pairs.p1))
        logger.info("iteration %d: objective %.6g, edges %d, train accuracy %.4f", it, value, record.edge_count, record.train_pair_accuracy)
        history.append(record)
    return graph, history


# --------------------------------------------------------------------------
# evaluation


@dataclass
class BucketAccuracy:
    low: float
    high: float
    pair_count: int
    correct: int
    ties: int
    accuracy: float


@dataclass
class EvalReport:
    theta: int
    pair_count: int
    correct: int
    ties: int
    accuracy: float
    buckets: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "theta": self.theta,
            "pair_count": self.pair_count,
            "correct": self.correct,
            "ties": self.ties,
            "accuracy": self.accuracy,
            "buckets": [b.__dict__ for b in self.buckets],
        }


def _ratio(correct: int, decided: int) -> float:
    return correct / decided if decided else float("nan")


def evaluation_pairs(like_counts, theta: int) -> np.ndarray:
    """Ordered ``(high, low)`` pairs with like gap strictly above ``theta``."""
    n = check_like_counts(like_counts)
    i, j = np.triu_indices(len(n), k=1)
    gap = n[i] - n[j]
    pairs = np.concatenate([np.column_stack([i[gap > theta], j[gap > theta]]), np.column_stack([j[gap < -theta], i[gap < -theta]])])
    if not len(pairs):
        raise NoPairsError("no qualifying pairs")
    return pairs


def evaluate_ranking(item_scores, like_counts, theta: int, n_buckets: int = 10) -> EvalReport:
    """Pairwise ranking accuracy over all pairs whose like gap exceeds ``theta``.

    A pair counts as correct when the item with more likes has the strictly
    larger score; exact ties are excluded from the accuracy denominator.
    Buckets split the pairs by like-gap decile.
    """
    s = np.asarray(item_scores, dtype=float)
    n = check_like_counts(like_counts, len(s))
    pairs = evaluation_pairs(n, theta)
    hi, lo = s[pairs[:, 0]], s[pairs[:, 1]]
    gap = n[pairs[:, 0]] - n[pairs[:, 1]]
    correct = hi > lo
    tie = hi == lo
    edges = np.unique(np.quantile(gap, np.linspace(0, 1, n_buckets + 1)))
    buckets = []
    which = np.clip(np.searchsorted(edges, gap, side="right") - 1, 0, max(len(edges) - 2, 0))
    for k in range(max(len(edges) - 1, 1)):
        m = which == k
        c, t, total = int(correct[m].sum()), int(tie[m].sum()), int(m.sum())
        upper = edges[k + 1] if len(edges) > 1 else edges[0]
        buckets.append(BucketAccuracy(float(edges[k]), float(upper), total, c, t, _ratio(c, total - t)))
    c, t = int(correct.sum()), int(tie.sum())
    return EvalReport(int(theta), len(pairs), c, t, _ratio(c, len(pairs) - t), buckets)


def pairwise_accuracy(item_scores, like_counts, theta: int, ties: str = "exclude") -> float:
    """Accuracy over evaluation pairs; ``ties`` is ``"exclude"`` or ``"half"``."""
    report = evaluate_ranking(item_scores, like_counts, theta, n_buckets=1)
    if ties == "half":
        return (report.correct + 0.5 * report.ties) / report.pair_count
    if ties != "exclude":
        raise ValueError("ties must be 'exclude' or 'half'")
    return report.accuracy


# --------------------------------------------------------------------------
# estimators


class LinearPairwiseRanker(BaseEstimator):
    """Linear scorer trained with a pairwise hinge loss.

    Minimizes ``reg/2 ||w||^2 + mean max(0, 1 - w.(x_high - x_low))`` over
    P1 pairs by stochastic subgradient steps with a ``1/(reg t)`` step size,
    returning the averaged iterate.
    """

    def __init__(self, reg=1e-3, n_epochs=20, C1=10, max_pairs=20000, random_state=0):
        self.reg = reg
        self.n_epochs = n_epochs
        self.C1 = C1
        self.max_pairs = max_pairs
        self.random_state = random_state

    def fit(self, X, y, pairs: PairSets | None = None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise DimensionError("X must be 2-D")
        n = check_like_counts(y, len(X))
        rng = check_random_state(self.random_state)
        if pairs is None:
            pairs = make_pairs(n, self.C1, 0, self.max_pairs, seed=rng.randint(2**31))
        p1 = pairs.p1
        if not len(p1):
            raise NoPairsError("no ordered pairs to train on")
        Z = X[p1[:, 0]] - X[p1[:, 1]]
        w = np.zeros(X.shape[1])
        avg = np.zeros_like(w)
        t = 0
        for _ in range(self.n_epochs):
            for idx in rng.permutation(len(Z)):
                t += 1
                eta = 1.0 / (self.reg * t)
                z = Z[idx]
                margin = z @ w
                w *= 1.0 - eta * self.reg
                if margin < 1.0:
                    w += eta * z
                avg += (w - avg) / t
        self.coef_ = avg
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise DimensionError("expected %d features" % self.n_features_in_)
        return X @ self.coef_

    def rank_pair(self, a, b) -> Order:
        sa, sb = self.decision_function(np.vstack([a, b]))
        return Order.FIRST if sa > sb else Order.SECOND if sb > sa else Order.TIE

    def score(self, X, y, theta=10, ties="half"):
        return pairwise_accuracy(self.decision_function(X), y, theta, ties=ties)


class RankingSPN(BaseEstimator):
    """End-to-end ranking network: structure, hard EM, pairwise training.

    ``fit`` initializes a region-decomposition structure, refines it by hard
    EM on the items whose like counts are in the top ``em_fraction``, builds
    P1/P2 pairs and runs :func:`train`. The fitted network is ``graph_``.
    """

    def __init__(
        self,
        k=10,
        num_decompositions=1,
        max_region_size_for_leaf=2,
        max_nodes=1_000_000,
        em_fraction=0.1,
        em_iterations=10,
        em_smoothing=0.1,
        C1=10,
        C2=0,
        max_pairs=5000,
        alpha1=0.01,
        alpha2=0.001,
        lambda1=1.0,
        lambda2=1.0,
        E0=None,
        prune_weight_threshold=0.01,
        iterations=10,
        min_weight_floor=1e-8,
        delta_n_cap_percentile=None,
        eval_pairs=1000,
        batch_size=1,
        prune=True,
        random_state=0,
    ):
        self.k = k
        self.num_decompositions = num_decompositions
        self.max_region_size_for_leaf = max_region_size_for_leaf
        self.max_nodes = max_nodes
        self.em_fraction = em_fraction
        self.em_iterations = em_iterations
        self.em_smoothing = em_smoothing
        self.C1 = C1
        self.C2 = C2
        self.max_pairs = max_pairs
        self.alpha1 = alpha1
        self.alpha2 = alpha2
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.E0 = E0
        self.prune_weight_threshold = prune_weight_threshold
        self.iterations = iterations
        self.min_weight_floor = min_weight_floor
        self.delta_n_cap_percentile = delta_n_cap_percentile
        self.eval_pairs = eval_pairs
        self.batch_size = batch_size
        self.prune = prune
        self.random_state = random_state

    def structure_config(self) -> StructureConfig:
        return StructureConfig(
            k=self.k,
            num_decompositions_per_region=self.num_decompositions,
            max_region_size_for_leaf=self.max_region_size_for_leaf,
            rng_seed=substream_seed(self.random_state, "structure"),
            max_nodes=self.max_nodes,
        )

    def train_config(self) -> RankTrainConfig:
        return RankTrainConfig(
            alpha1=self.alpha1,
            alpha2=self.alpha2,
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            E0=self.E0,
            prune_weight_threshold=self.prune_weight_threshold,
            iterations=self.iterations,
            min_weight_floor=self.min_weight_floor,
            delta_n_cap_percentile=self.delta_n_cap_percentile,
            eval_pairs=self.eval_pairs,
            batch_size=self.batch_size,
            prune=self.prune,
            seed=substream_seed(self.random_state, "train"),
        )

    def fit(self, X, y):
        X = check_binary_matrix(X)
        n = check_like_counts(y, len(X))
        graph = init_structure(X.shape[1], self.structure_config())
        top = select_top_fraction(n, self.em_fraction)
        graph = hard_em_refine(graph, X[top], self.em_iterations, self.em_smoothing)
        self.pairs_ = make_pairs(n, self.C1, self.C2, self.max_pairs, seed=substream_seed(self.random_state, "pairs"))
        self.graph_, self.history_ = train(graph, X, n, self.pairs_, self.train_config())
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "graph_")
        return scores(self.graph_, X)

    def rank_pair(self, a, b) -> Order:
        check_is_fitted(self, "graph_")
        return rank_pair(self.graph_, a, b)

    def score(self, X, y, theta=10, ties="exclude"):
        return pairwise_accuracy(self.decision_function(X), y, theta, ties=ties)
