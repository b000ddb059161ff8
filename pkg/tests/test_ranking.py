import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

import oracles
from spnrank.ranking import (
    LinearPairwiseRanker,
    NoPairsError,
    Order,
    PairSets,
    RankingSPN,
    RankTrainConfig,
    RankTrainingError,
    evaluate_ranking,
    make_pairs,
    pair_gradient,
    pairwise_accuracy,
    prune,
    rank_objective,
    rank_pair,
    score,
    scores,
    train,
)
from spnrank.spn import (
    DimensionError,
    Leaf,
    Product,
    SpnGraph,
    Sum,
    deserialize,
    max_log_values,
    serialize,
    to_mpn,
    traversal_counts,
    two_variable_example,
    validate,
)
from spnrank.structure import StructureConfig, hard_em_refine, init_structure
from spnrank.synth import make_separable_likes, make_xor_likes


@pytest.fixture
def fig():
    return two_variable_example()


@pytest.fixture(scope="module")
def small_xor():
    data = make_xor_likes(n_items=300, n_attributes=8, seed=2)
    g = init_structure(8, StructureConfig(k=3, num_decompositions_per_region=2, rng_seed=5))
    g = hard_em_refine(g, data.X[np.argsort(-data.like_counts)[:30]], 5)
    return g, data


# --------------------------------------------------------------------------
# pairs


def test_pairs_single_ordering():
    p = make_pairs([100, 2], C1=10, C2=0)
    assert p.p1.tolist() == [[0, 1]]
    assert len(p.p2) == 0


def test_pairs_equal_counts_go_to_p2():
    for C1 in (1, 5, 50):
        p = make_pairs([5, 5], C1=C1, C2=0)
        assert len(p.p1) == 0
        assert p.p2.tolist() == [[0, 1]]


def test_pairs_match_double_loop():
    rng = np.random.default_rng(1)
    counts = rng.integers(0, 60, 50)
    for C1, C2 in [(10, 0), (3, 2), (25, 5)]:
        p = make_pairs(counts, C1, C2, max_pairs=None, seed=4)
        want1, want2 = oracles.pair_oracle(counts, C1, C2)
        assert set(map(tuple, p.p1.tolist())) == want1
        assert len(p.p1) == len(want1)
        assert {tuple(sorted(x)) for x in p.p2.tolist()} == want2
        assert len(p.p2) == len(want2)
        p.check(counts)


def test_pairs_subsample_is_seeded_subset():
    counts = np.arange(80)
    full1, _ = oracles.pair_oracle(counts, 5, 0)
    a = make_pairs(counts, 5, 0, max_pairs=100, seed=9)
    b = make_pairs(counts, 5, 0, max_pairs=100, seed=9)
    assert len(a.p1) == 100
    assert set(map(tuple, a.p1.tolist())) <= full1
    assert np.array_equal(a.p1, b.p1)


def test_no_qualifying_pairs():
    with pytest.raises(NoPairsError, match="no qualifying pairs"):
        make_pairs([1, 2, 3], C1=10, C2=0)


def test_pairs_reject_empty_and_bad_thresholds():
    with pytest.raises(ValueError):
        make_pairs([], 10, 0)
    with pytest.raises(ValueError):
        make_pairs([1, 50], 0, 0)


# --------------------------------------------------------------------------
# scoring


def test_score_hand_value(fig):
    # best path for (1, 0) goes through the second product: 0.2 * 0.7 * 0.9
    assert score(fig, [1, 0]) == pytest.approx(math.log(0.126), rel=1e-12)


def test_score_unreachable_item(fig):
    w = fig.weights.copy()
    w[[8, 9]] = 0.0
    assert score(fig.with_weights(w), [1, 1]) == -np.inf


def test_score_survives_round_trip(small_xor):
    g, data = small_xor
    back = deserialize(serialize(g))
    assert np.array_equal(scores(g, data.X[:50]), scores(back, data.X[:50]))


def test_score_dimension_mismatch(fig):
    with pytest.raises((DimensionError, ValueError)):
        score(fig, [1, 0, 1])


# --------------------------------------------------------------------------
# gradient


def test_gradient_identical_items(fig):
    assert not pair_gradient(to_mpn(fig), [1, 0], [1, 0]).any()


def test_gradient_hand_trace(fig):
    dt = pair_gradient(to_mpn(fig), [1, 0], [0, 1])
    want = np.zeros(10, dtype=int)
    want[[4, 7, 9]] = 1
    want[[1, 2, 8]] = -1
    assert dt.tolist() == want.tolist()


def _stable(mpn, states, lw, h):
    _, c0 = traversal_counts(mpn, states, lw)
    for sign in (-1, 1):
        _, c = traversal_counts(mpn, states, lw + sign * h)
        if not np.array_equal(c, c0):
            return False
    return True


def fd_cases(n_cases, seed):
    """Random MPNs with item pairs whose MPE paths survive a small nudge."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n_cases:
        d = int(rng.integers(2, 9))
        m = to_mpn(oracles.random_spn(rng, d, max_nodes=120))
        states = rng.integers(0, 2, (2, d)).astype(np.int8)
        lw = m.log_weights
        if np.all(np.isfinite(max_log_values(m, states, lw))) and _stable(m, states, lw, 1e-5):
            out.append((m, states))
    return out


def test_gradient_matches_finite_differences():
    for m, states in fd_cases(50, seed=0):
        dt = pair_gradient(m, states[0], states[1])
        w = m.weights
        grad = dt / w
        fd = np.empty_like(w)
        for e in range(len(w)):
            h = 1e-6 * w[e]
            up, down = w.copy(), w.copy()
            up[e] += h
            down[e] -= h
            fu = max_log_values(m, states, np.log(up))
            fl = max_log_values(m, states, np.log(down))
            fd[e] = ((fu[0] - fu[1]) - (fl[0] - fl[1])) / (2 * h)
        np.testing.assert_allclose(fd, grad, rtol=1e-4, atol=1e-6)


# --------------------------------------------------------------------------
# training


def test_train_empty_pairs_identity(small_xor):
    g, data = small_xor
    empty = PairSets(np.zeros((0, 2)), np.zeros((0, 2)), 10, 0)
    out, hist = train(g, data.X, data.like_counts, empty, RankTrainConfig(iterations=3))
    assert out is g
    assert hist == []


def test_single_pair_gap_increases(small_xor):
    g, data = small_xor
    n = data.like_counts
    s = scores(g, data.X)
    # pick a pair the network currently gets wrong, with a decent like gap
    hi = int(np.argmax(n))
    lo = int(np.flatnonzero((n < n[hi] - 10) & np.isfinite(s))[0])
    pairs = PairSets([[hi, lo]], np.zeros((0, 2)), 10, 0)
    before = s[hi] - s[lo]
    cfg = RankTrainConfig(alpha1=1e-5, iterations=1, prune=False)
    out, _ = train(g, data.X, n, pairs, cfg)
    after = score(out, data.X[hi]) - score(out, data.X[lo])
    assert after > before


def test_train_keeps_floor_and_is_deterministic(small_xor):
    g, data = small_xor
    pairs = make_pairs(data.like_counts, 10, 0, max_pairs=400, seed=1)
    cfg = RankTrainConfig(alpha1=1e-4, alpha2=1e-4, iterations=2, prune=False, batch_size=50, min_weight_floor=1e-6)
    a, ha = train(g, data.X, data.like_counts, pairs, cfg)
    b, hb = train(g, data.X, data.like_counts, pairs, cfg)
    assert np.all(a.weights >= 1e-6)
    assert serialize(a) == serialize(b)
    assert [r.__dict__ for r in ha] == [r.__dict__ for r in hb]
    last = rank_objective(a, data.X, pairs)
    assert ha[-1].objective == pytest.approx(last.value, rel=1e-12)
    assert last.value == pytest.approx(last.p1_term - last.p2_term)


def test_train_reports_non_finite_update(small_xor):
    g, data = small_xor
    pairs = make_pairs(data.like_counts, 10, 0, max_pairs=50, seed=1)
    cfg = RankTrainConfig(alpha1=1e300, iterations=1, prune=False, batch_size=50)
    with pytest.raises(RankTrainingError) as err:
        train(g, data.X, data.like_counts, pairs, cfg)
    assert err.value.edge is not None


def test_config_validation():
    with pytest.raises(ValueError):
        RankTrainConfig(alpha1=0)
    with pytest.raises(ValueError):
        RankTrainConfig(E0=0)
    with pytest.raises(ValueError):
        RankTrainConfig(delta_n_cap_percentile=150)


# --------------------------------------------------------------------------
# pruning


def redundant_spn():
    nodes = [Leaf(0, True), Leaf(0, False), Leaf(1, True), Leaf(1, False)]
    nodes += [Sum([0, 1], [0.6, 0.4]), Sum([2, 3], [0.3, 0.7]), Product([4, 5])]
    nodes += [Sum([0, 1], [0.6, 0.4]), Sum([2, 3], [0.3, 0.7]), Product([7, 8])]
    nodes += [Sum([6, 9], [0.995, 0.005])]
    return SpnGraph(nodes, 10, 2)


def test_prune_redundant_copy():
    g = redundant_spn()
    X = np.array([[1, 1], [1, 0], [0, 1], [0, 0]])
    n = np.array([40, 25, 10, 0])
    pairs = make_pairs(n, 5, 0)
    log = []
    out = prune(g, X, n, pairs, RankTrainConfig(prune_weight_threshold=0.01), log=log)
    assert len(log) >= 1
    assert out.edge_count < g.edge_count
    assert out.node_count == 8
    assert validate(out).ok
    for cut in log:
        assert cut["after"] == pytest.approx(cut["before"], abs=1e-9)
    assert rank_objective(out, X, pairs).value == pytest.approx(rank_objective(g, X, pairs).value, abs=1e-9)


def test_prune_nothing_below_threshold(fig):
    X = np.array([[1, 1], [0, 0]])
    pairs = make_pairs([30, 0], 10, 0)
    assert prune(fig, X, [30, 0], pairs, RankTrainConfig(prune_weight_threshold=0.05)) is fig


def test_prune_contract_on_trained_network(small_xor):
    g, data = small_xor
    pairs = make_pairs(data.like_counts, 10, 0, max_pairs=500, seed=3)
    cfg = RankTrainConfig(prune_weight_threshold=0.5, eval_pairs=300)
    log = []
    out = prune(g, data.X, data.like_counts, pairs, cfg, log=log)
    assert validate(out).ok
    assert log, "fixture should offer cuttable edges"
    assert out.edge_count < g.edge_count
    for cut in log:
        assert cut["after"] >= cut["before"] - 1e-9


def copies_spn(n_copies=5):
    nodes = [Leaf(0, True), Leaf(0, False), Leaf(1, True), Leaf(1, False)]
    prods = []
    for _ in range(n_copies):
        base = len(nodes)
        nodes += [Sum([0, 1], [0.6, 0.4]), Sum([2, 3], [0.3, 0.7]), Product([base, base + 1])]
        prods.append(base + 2)
    w = [0.01] * n_copies
    w[0] = 1 - 0.01 * (n_copies - 1)
    nodes.append(Sum(prods, w))
    return SpnGraph(nodes, len(nodes) - 1, 2)


def test_prune_stops_at_budget():
    g = copies_spn()
    assert g.edge_count == 35
    X = np.array([[1, 1], [1, 0], [0, 1], [0, 0]])
    n = np.array([40, 25, 10, 0])
    pairs = make_pairs(n, 5, 0)
    cfg = dict(prune_weight_threshold=0.05)
    assert prune(g, X, n, pairs, RankTrainConfig(**cfg)).edge_count == 7
    # each cut drops a copy of 7 edges; the budget is met after the first
    assert prune(g, X, n, pairs, RankTrainConfig(E0=30, **cfg)).edge_count == 28
    assert prune(g, X, n, pairs, RankTrainConfig(E0=36, **cfg)) is g


# --------------------------------------------------------------------------
# ranking and evaluation


def test_rank_pair_tie_and_order(fig):
    assert rank_pair(fig, [1, 0], [1, 0]) is Order.TIE
    assert rank_pair(fig, [0, 1], [1, 0]) is Order.FIRST
    assert rank_pair(fig, [1, 0], [0, 1]) is Order.SECOND


@settings(max_examples=50, deadline=None)
@given(a=st.lists(st.integers(0, 1), min_size=8, max_size=8), b=st.lists(st.integers(0, 1), min_size=8, max_size=8))
def test_rank_pair_antisymmetric(small_xor, a, b):
    g, _ = small_xor
    assert rank_pair(g, a, b).reversed() is rank_pair(g, b, a)


def test_accuracy_matches_recount():
    rng = np.random.default_rng(7)
    n = rng.integers(0, 80, 120)
    s = rng.integers(0, 15, 120).astype(float)  # coarse scores force ties
    for theta in (0, 10, 20):
        report = evaluate_ranking(s, n, theta)
        c, t, total = oracles.recount_accuracy(s, n, theta)
        assert (report.correct, report.ties, report.pair_count) == (c, t, total)
        assert report.accuracy == c / (total - t)
        assert pairwise_accuracy(s, n, theta, ties="half") == (c + 0.5 * t) / total
        assert sum(b.pair_count for b in report.buckets) == total


def test_evaluation_needs_pairs():
    with pytest.raises(NoPairsError):
        evaluate_ranking([1.0, 2.0], [3, 4], theta=10)


# --------------------------------------------------------------------------
# baselines and estimators


def test_linear_separable():
    data = make_separable_likes(n_items=300, n_attributes=10, seed=0)
    model = LinearPairwiseRanker(random_state=0).fit(data.X, data.like_counts)
    assert model.score(data.X, data.like_counts, theta=10, ties="exclude") >= 0.99


def test_linear_zero_features_is_chance():
    rng = np.random.default_rng(0)
    n = rng.integers(0, 100, 200)
    model = LinearPairwiseRanker(random_state=0).fit(np.zeros((200, 6)), n)
    assert model.score(np.zeros((200, 6)), n, theta=10, ties="half") == pytest.approx(0.5)


def test_linear_rank_pair_and_dims():
    data = make_separable_likes(n_items=100, n_attributes=5, seed=1)
    model = LinearPairwiseRanker().fit(data.X, data.like_counts)
    a, b = data.X[0], data.X[1]
    assert model.rank_pair(a, b).reversed() is model.rank_pair(b, a)
    with pytest.raises(DimensionError):
        model.decision_function(np.zeros((2, 3)))


def test_ranking_spn_estimator(small_xor):
    _, data = small_xor
    est = RankingSPN(k=2, num_decompositions=1, iterations=1, max_pairs=200, batch_size=200, alpha1=1e-5, random_state=3)
    with pytest.raises(NotFittedError):
        est.decision_function(data.X)
    est.fit(data.X, data.like_counts)
    assert est.decision_function(data.X).shape == (len(data.X),)
    assert validate(est.graph_).ok
    twin = clone(est).fit(data.X, data.like_counts)
    assert serialize(twin.graph_) == serialize(est.graph_)
    assert clone(est).get_params() == est.get_params()
    assert 0.0 <= est.score(data.X, data.like_counts) <= 1.0


def test_prune_reaches_fixpoint(small_xor):
    g, data = small_xor
    pairs = make_pairs(data.like_counts, 10, 0, max_pairs=500, seed=3)
    cfg = RankTrainConfig(prune_weight_threshold=1.0, eval_pairs=300)
    once = prune(g, data.X, data.like_counts, pairs, cfg)
    log = []
    twice = prune(once, data.X, data.like_counts, pairs, cfg, log=log)
    assert log == [] and twice is once
