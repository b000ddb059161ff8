"""Initial SPN structure by region decomposition, and hard-EM refinement."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .spn import Leaf, Product, SpnGraph, Sum, remove_edges, traversal_counts, to_mpn
from ._validation import check_binary_matrix, check_like_counts


class StructureBudgetError(ValueError):
    pass


@dataclass(frozen=True)
class StructureConfig:
    """Parameters of the region-decomposition initializer.

    Attributes
    ----------
    k : int
        Sum nodes per non-root region.
    num_decompositions_per_region : int
        Independent random binary partitions tried for each region.
    max_region_size_for_leaf : int
        Regions this small are split straight into single variables.
    rng_seed : int
    max_nodes : int
        Node budget; exceeding it raises :class:`StructureBudgetError`.
    """

    k: int = 10
    num_decompositions_per_region: int = 1
    max_region_size_for_leaf: int = 2
    rng_seed: int = 0
    max_nodes: int = 1_000_000

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.num_decompositions_per_region < 1:
            raise ValueError("num_decompositions_per_region must be >= 1")
        if self.max_region_size_for_leaf < 1:
            raise ValueError("max_region_size_for_leaf must be >= 1")
        if self.max_nodes < 1:
            raise ValueError("max_nodes must be >= 1")


def init_structure(num_variables: int, config: StructureConfig = StructureConfig()) -> SpnGraph:
    """Build a valid SPN over ``num_variables`` binary variables.

    Every region gets ``k`` sum nodes (the root region gets one). Each region
    is split into two halves by ``num_decompositions_per_region`` random
    partitions; regions are shared by scope. For every decomposition and
    every choice of one sum node per part there is a product node, and each
    of the region's sum nodes mixes all of the region's products. A
    single-variable region's sum nodes mix the variable's two indicators.
    Weights are drawn uniformly from ``[0.1, 1)`` and normalized per node.
    """
    if num_variables < 2:
        raise ValueError("num_variables must be >= 2")
    rng = np.random.default_rng(config.rng_seed)
    nodes: list = []
    children_of_sum: list[list[int]] = []  # deferred: sum node index -> children
    memo: dict[tuple[int, ...], list[int]] = {}

    def add(node) -> int:
        if len(nodes) >= config.max_nodes:
            raise StructureBudgetError("structure exceeds the node budget of %d" % config.max_nodes)
        nodes.append(node)
        return len(nodes) - 1

    leaves = {}
    for v in range(num_variables):
        leaves[v] = (add(Leaf(v, True)), add(Leaf(v, False)))

    def partitions(scope: tuple[int, ...]) -> list[list[tuple[int, ...]]]:
        if len(scope) <= config.max_region_size_for_leaf:
            return [[(v,) for v in scope]]
        seen = set()
        out = []
        for _ in range(config.num_decompositions_per_region):
            perm = rng.permutation(scope)
            half = len(scope) // 2
            a, b = tuple(sorted(perm[:half].tolist())), tuple(sorted(perm[half:].tolist()))
            key = frozenset((a, b))
            if key in seen:
                continue
            seen.add(key)
            out.append([a, b])
        return out

    def region(scope: tuple[int, ...], n_sums: int) -> list[int]:
        if scope in memo:
            return memo[scope]
        if len(scope) == 1:
            pos, neg = leaves[scope[0]]
            prods = [pos, neg]
        else:
            prods = []
            for parts in partitions(scope):
                part_sums = [region(p, config.k) for p in parts]
                for combo in itertools.product(*part_sums):
                    prods.append(add(Product(combo)))
        sums = []
        for _ in range(n_sums):
            sums.append(add(None))
            children_of_sum.append([sums[-1], prods])
        memo[scope] = sums
        return sums

    (root,) = region(tuple(range(num_variables)), 1)
    for idx, children in children_of_sum:
        w = rng.uniform(0.1, 1.0, size=len(children))
        nodes[idx] = Sum(children, w / w.sum())
    return SpnGraph(nodes, root, num_variables)


def select_top_fraction(like_counts, fraction: float) -> np.ndarray:
    """Indices of items whose like counts are in the top ``fraction``.

    The cut keeps ``ceil(fraction * n)`` items plus anything tied with the
    last one kept. Indices are returned in ascending order.
    """
    counts = check_like_counts(like_counts)
    if len(counts) == 0:
        raise ValueError("empty dataset")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    n_keep = max(1, math.ceil(round(fraction * len(counts), 9)))
    threshold = np.sort(counts)[::-1][n_keep - 1]
    return np.flatnonzero(counts >= threshold)


def hard_em_refine(
    graph: SpnGraph,
    examples,
    iterations: int,
    smoothing: float = 0.1,
    *,
    history: list | None = None,
    keep_zero_edges: bool = False,
) -> SpnGraph:
    """Hard-EM weight refinement followed by removal of zero-weight children.

    Each iteration traces the MPE path of every example through the max
    version of the network, counts how often each sum edge is used and
    sets ``w_ij`` proportional to ``count_ij + smoothing``. The last
    iteration uses no smoothing so unused children drop to exactly zero;
    those children and any node left without a parent are then removed.
    Sum nodes that no example reaches keep their weights.

    ``history``, when given, receives the summed log MPN root value of the
    examples before the first and after every iteration.
    ``keep_zero_edges`` skips the final removal step.
    """
    X = check_binary_matrix(examples, graph.num_variables)
    if X.shape[0] == 0:
        raise ValueError("hard EM needs at least one example")
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if iterations == 0:
        return graph
    mpn = to_mpn(graph)
    plan = mpn.plan
    states = X.astype(np.int8)
    weights = np.array(graph.weights)
    sum_nodes = [i for i in range(graph.node_count) if plan.edge_start[i] >= 0]
    lengths = np.array([len(plan.children[i]) for i in sum_nodes])
    starts = plan.edge_start[sum_nodes]
    for it in range(iterations):
        with np.errstate(divide="ignore"):
            lw = np.log(weights)
        roots, counts = traversal_counts(mpn, states, lw)
        if history is not None and it == 0:
            history.append(float(np.sum(roots)))
        total = counts.sum(axis=0).astype(float)
        node_total = np.add.reduceat(total, starts)
        smooth = 0.0 if it == iterations - 1 else smoothing
        numer = total + smooth
        denom = np.add.reduceat(numer, starts)
        visited = np.repeat(node_total > 0, lengths)
        with np.errstate(invalid="ignore", divide="ignore"):
            new = numer / np.repeat(denom, lengths)
        weights = np.where(visited, new, weights)
        if history is not None:
            with np.errstate(divide="ignore"):
                roots, _ = traversal_counts(mpn, states, np.log(weights))
            history.append(float(np.sum(roots)))
    refined = graph.with_weights(weights)
    if keep_zero_edges:
        return refined
    return remove_edges(refined, weights == 0.0)
