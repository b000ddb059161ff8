"""Sum-product networks over binary variables.

A network is stored as a flat list of nodes addressed by integer ids. Leaves
are indicators ``x_v`` (positive) or ``not x_v`` (negative); internal nodes are
weighted sums and products. Evaluation runs bottom-up over depth layers so a
whole batch of evidence rows is handled by a few numpy reductions per layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

TRUE = 1
FALSE = 0
MARGINALIZED = -1

FORMAT_VERSION = 1

_LEAF, _SUM, _PRODUCT = 0, 1, 2


class SpnError(Exception):
    """Base class for errors raised by this module."""


class SpnStructureError(SpnError, ValueError):
    """A node list that is not even structurally well formed."""


class InvalidSpnError(SpnError):
    """Raised when an operation needs a valid SPN and gets an invalid one."""

    def __init__(self, report: "ValidationReport"):
        self.report = report
        super().__init__(str(report))


class SpnFormatError(SpnError, ValueError):
    pass


class DimensionError(SpnError, ValueError):
    pass


@dataclass(frozen=True)
class Leaf:
    var: int
    positive: bool = True


@dataclass(frozen=True)
class Sum:
    children: tuple[int, ...]
    weights: tuple[float, ...]

    def __init__(self, children: Sequence[int], weights: Sequence[float]):
        object.__setattr__(self, "children", tuple(int(c) for c in children))
        object.__setattr__(self, "weights", tuple(float(w) for w in weights))


@dataclass(frozen=True)
class Product:
    children: tuple[int, ...]

    def __init__(self, children: Sequence[int]):
        object.__setattr__(self, "children", tuple(int(c) for c in children))


Node = Leaf | Sum | Product


# --------------------------------------------------------------------------
# evidence


class Evidence:
    """Per-variable states: ``TRUE``, ``FALSE`` or ``MARGINALIZED``.

    Internally every variable maps to a pair of indicator activations
    ``(x, not x)`` in ``{(1, 0), (0, 1), (1, 1)}``; ``(0, 0)`` cannot be
    expressed.
    """

    __slots__ = ("states",)

    def __init__(self, states: Sequence[int]):
        arr = np.asarray(states, dtype=np.int8).ravel()
        if not np.isin(arr, (TRUE, FALSE, MARGINALIZED)).all():
            raise ValueError("evidence states must be TRUE (1), FALSE (0) or MARGINALIZED (-1)")
        arr.setflags(write=False)
        self.states = arr

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "Evidence":
        return cls(np.asarray(bits).astype(bool).astype(np.int8))

    @classmethod
    def from_indicators(cls, positive: Sequence[int], negative: Sequence[int]) -> "Evidence":
        pos = np.asarray(positive).astype(bool)
        neg = np.asarray(negative).astype(bool)
        if pos.shape != neg.shape:
            raise ValueError("indicator vectors differ in length")
        if np.any(~pos & ~neg):
            raise ValueError("indicator pair (0, 0) is not a valid evidence state")
        states = np.where(pos & neg, MARGINALIZED, np.where(pos, TRUE, FALSE))
        return cls(states)

    @classmethod
    def marginal(cls, num_variables: int) -> "Evidence":
        return cls(np.full(num_variables, MARGINALIZED))

    @property
    def indicators(self) -> tuple[np.ndarray, np.ndarray]:
        return (self.states != FALSE).astype(np.int8), (self.states != TRUE).astype(np.int8)

    def __len__(self) -> int:
        return len(self.states)

    def __eq__(self, other) -> bool:
        return isinstance(other, Evidence) and np.array_equal(self.states, other.states)

    def __repr__(self) -> str:
        sym = {TRUE: "T", FALSE: "F", MARGINALIZED: "*"}
        return "Evidence(%s)" % "".join(sym[int(s)] for s in self.states)


def _evidence_matrix(evidence, num_variables: int) -> tuple[np.ndarray, bool]:
    """Normalize evidence input to an int8 ``(batch, d)`` matrix.

    Returns the matrix and whether the input was a single row.
    """
    if isinstance(evidence, Evidence):
        states = evidence.states[None, :]
        single = True
    elif isinstance(evidence, (list, tuple)) and evidence and isinstance(evidence[0], Evidence):
        states = np.stack([e.states for e in evidence])
        single = False
    else:
        arr = np.asarray(evidence)
        single = arr.ndim == 1
        states = np.atleast_2d(arr)
        if states.dtype == bool:
            states = states.astype(np.int8)
        elif not np.isin(states, (TRUE, FALSE, MARGINALIZED)).all():
            raise ValueError("evidence states must be TRUE (1), FALSE (0) or MARGINALIZED (-1)")
        states = states.astype(np.int8, copy=False)
    if states.ndim != 2 or states.shape[1] != num_variables:
        raise DimensionError(
            "evidence has %d variables, network has %d" % (states.shape[-1], num_variables)
        )
    return states, single


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    node: int
    kind: str  # "cycle" | "unreachable" | "completeness" | "decomposability"
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return bool(self.violations)

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self) -> Iterator[Violation]:
        return iter(self.violations)

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def __str__(self) -> str:
        if not self.violations:
            return "valid SPN"
        return "; ".join("node %d: %s" % (v.node, v.message) for v in self.violations)


def _find_cycle_nodes(nodes: Sequence[Node]) -> list[int]:
    color = [0] * len(nodes)  # 0 new, 1 on stack, 2 done
    on_cycle: set[int] = set()
    for start in range(len(nodes)):
        if color[start]:
            continue
        stack = [(start, 0)]
        color[start] = 1
        path = [start]
        while stack:
            node, i = stack[-1]
            children = () if isinstance(nodes[node], Leaf) else nodes[node].children
            if i < len(children):
                stack[-1] = (node, i + 1)
                child = children[i]
                if color[child] == 0:
                    color[child] = 1
                    stack.append((child, 0))
                    path.append(child)
                elif color[child] == 1:
                    on_cycle.update(path[path.index(child):])
            else:
                color[node] = 2
                stack.pop()
                path.pop()
    return sorted(on_cycle)


def validate(graph: "SpnGraph") -> ValidationReport:
    """Check acyclicity, reachability, completeness and decomposability.

    Violations are returned as data; an empty report means the graph is a
    valid SPN.
    """
    nodes = graph.nodes
    report = ValidationReport()
    cyclic = _find_cycle_nodes(nodes)
    for n in cyclic:
        report.violations.append(Violation(n, "cycle", "node lies on a directed cycle"))
    reachable = _reachable(nodes, graph.root)
    for n in range(len(nodes)):
        if not reachable[n]:
            report.violations.append(Violation(n, "unreachable", "node is not reachable from the root"))
    if cyclic:
        return report

    scopes = _scope_masks(nodes, _topological_order(nodes))
    for n, node in enumerate(nodes):
        if isinstance(node, Sum):
            first = scopes[node.children[0]]
            if any(scopes[c] != first for c in node.children[1:]):
                report.violations.append(
                    Violation(n, "completeness", "sum node children have different scopes")
                )
        elif isinstance(node, Product):
            seen = 0
            for c in node.children:
                if seen & scopes[c]:
                    report.violations.append(
                        Violation(n, "decomposability", "product node children have overlapping scopes")
                    )
                    break
                seen |= scopes[c]
    return report


def _reachable(nodes: Sequence[Node], root: int) -> list[bool]:
    seen = [False] * len(nodes)
    seen[root] = True
    stack = [root]
    while stack:
        node = nodes[stack.pop()]
        if isinstance(node, Leaf):
            continue
        for c in node.children:
            if not seen[c]:
                seen[c] = True
                stack.append(c)
    return seen


def _topological_order(nodes: Sequence[Node]) -> list[int]:
    """Children-before-parents order of all nodes (graph must be acyclic)."""
    n = len(nodes)
    n_parents_left = [0] * n
    for node in nodes:
        if not isinstance(node, Leaf):
            for c in node.children:
                n_parents_left[c] += 1
    # Kahn's algorithm from the parents' side, then reverse.
    ready = [i for i in range(n) if n_parents_left[i] == 0]
    order = []
    while ready:
        i = ready.pop()
        order.append(i)
        node = nodes[i]
        if isinstance(node, Leaf):
            continue
        for c in node.children:
            n_parents_left[c] -= 1
            if n_parents_left[c] == 0:
                ready.append(c)
    if len(order) != n:
        raise InvalidSpnError(
            ValidationReport([Violation(i, "cycle", "node lies on a directed cycle") for i in _find_cycle_nodes(nodes)])
        )
    order.reverse()
    return order


def _scope_masks(nodes: Sequence[Node], order: Sequence[int]) -> list[int]:
    scopes = [0] * len(nodes)
    for i in order:
        node = nodes[i]
        if isinstance(node, Leaf):
            scopes[i] = 1 << node.var
        else:
            mask = 0
            for c in node.children:
                mask |= scopes[c]
            scopes[i] = mask
    return scopes


# --------------------------------------------------------------------------
# compiled evaluation plan


@dataclass
class _Layer:
    kind: int
    nodes: np.ndarray
    index: np.ndarray  # sum: edge ids; product: child node ids
    starts: np.ndarray


@dataclass
class _Plan:
    n_nodes: int
    kind: np.ndarray
    children: list  # per node tuple of child ids (empty for leaves)
    leaf_ids: np.ndarray
    leaf_var: np.ndarray
    leaf_positive: np.ndarray
    edge_parent: np.ndarray
    edge_child: np.ndarray
    edge_start: np.ndarray  # first edge id of each sum node, -1 otherwise
    layers: list
    order: list


def _compile(nodes: Sequence[Node]) -> _Plan:
    n = len(nodes)
    order = _topological_order(nodes)
    kind = np.empty(n, dtype=np.int8)
    children = []
    edge_parent, edge_child = [], []
    edge_start = np.full(n, -1, dtype=np.int64)
    for i, node in enumerate(nodes):
        if isinstance(node, Leaf):
            kind[i] = _LEAF
            children.append(())
        elif isinstance(node, Sum):
            kind[i] = _SUM
            children.append(node.children)
            edge_start[i] = len(edge_parent)
            edge_parent.extend([i] * len(node.children))
            edge_child.extend(node.children)
        else:
            kind[i] = _PRODUCT
            children.append(node.children)

    depth = np.zeros(n, dtype=np.int64)
    for i in order:
        if children[i]:
            depth[i] = 1 + max(depth[c] for c in children[i])

    leaf_ids = np.flatnonzero(kind == _LEAF)
    leaf_var = np.array([nodes[i].var for i in leaf_ids], dtype=np.int64)
    leaf_positive = np.array([nodes[i].positive for i in leaf_ids], dtype=bool)

    layers = []
    for level in range(1, int(depth.max(initial=0)) + 1):
        at_level = np.flatnonzero(depth == level)
        for k in (_SUM, _PRODUCT):
            ids = at_level[kind[at_level] == k]
            if not len(ids):
                continue
            lengths = np.array([len(children[i]) for i in ids], dtype=np.int64)
            starts = np.concatenate(([0], np.cumsum(lengths)[:-1]))
            if k == _SUM:
                index = np.concatenate([np.arange(edge_start[i], edge_start[i] + len(children[i])) for i in ids])
            else:
                index = np.concatenate([np.asarray(children[i], dtype=np.int64) for i in ids])
            layers.append(_Layer(k, ids, index.astype(np.int64), starts))

    return _Plan(
        n_nodes=n,
        kind=kind,
        children=children,
        leaf_ids=leaf_ids,
        leaf_var=leaf_var,
        leaf_positive=leaf_positive,
        edge_parent=np.asarray(edge_parent, dtype=np.int64),
        edge_child=np.asarray(edge_child, dtype=np.int64),
        edge_start=edge_start,
        layers=layers,
        order=order,
    )


def _leaf_log_values(plan: _Plan, states: np.ndarray) -> np.ndarray:
    s = states[:, plan.leaf_var].T  # (n_leaves, batch)
    active = np.where(plan.leaf_positive[:, None], s != FALSE, s != TRUE)
    return np.where(active, 0.0, -np.inf)


def _segment_sum(x: np.ndarray, starts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    # strictly left-to-right, so dropping exact-zero terms never changes a bit
    # (add.reduceat may block-sum and regroup when the segment shrinks)
    out = x[starts].copy()
    for j in range(1, int(lengths.max(initial=1))):
        sel = lengths > j
        out[sel] += x[starts[sel] + j]
    return out


def _segment_logsumexp(terms: np.ndarray, starts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    peak = np.maximum.reduceat(terms, starts, axis=0)
    shift = np.where(np.isfinite(peak), peak, 0.0)
    total = _segment_sum(np.exp(terms - np.repeat(shift, lengths, axis=0)), starts, lengths)
    return shift + np.log(total)


def _forward_log(plan: _Plan, log_weights: np.ndarray, states: np.ndarray, use_max: bool, want_choice: bool = False):
    """Bottom-up pass in log space.

    Returns node values ``(n_nodes, batch)`` and, when ``want_choice``, the
    chosen edge id per sum node (argmax child, lowest child id on ties).
    """
    batch = states.shape[0]
    values = np.empty((plan.n_nodes, batch))
    values[plan.leaf_ids] = _leaf_log_values(plan, states)
    n_edges = len(plan.edge_child)
    choice = np.full((plan.n_nodes, batch), -1, dtype=np.int64) if want_choice else None
    with np.errstate(divide="ignore", invalid="ignore"):
        for layer in plan.layers:
            if layer.kind == _PRODUCT:
                values[layer.nodes] = np.add.reduceat(values[layer.index], layer.starts, axis=0)
                continue
            terms = log_weights[layer.index][:, None] + values[plan.edge_child[layer.index]]
            if use_max or want_choice:
                peak = np.maximum.reduceat(terms, layer.starts, axis=0)
            if use_max:
                values[layer.nodes] = peak
            else:
                lengths = np.diff(np.append(layer.starts, len(layer.index)))
                values[layer.nodes] = _segment_logsumexp(terms, layer.starts, lengths)
            if want_choice:
                lengths = np.diff(np.append(layer.starts, len(layer.index)))
                hit = terms == np.repeat(peak, lengths, axis=0)
                key = plan.edge_child[layer.index] * n_edges + layer.index
                big = np.iinfo(np.int64).max
                keyed = np.where(hit, key[:, None], big)
                choice[layer.nodes] = np.minimum.reduceat(keyed, layer.starts, axis=0) % n_edges
    return values, choice


def _forward_linear(plan: _Plan, weights: np.ndarray, states: np.ndarray, use_max: bool) -> np.ndarray:
    batch = states.shape[0]
    values = np.empty((plan.n_nodes, batch))
    values[plan.leaf_ids] = np.exp(_leaf_log_values(plan, states))
    for layer in plan.layers:
        if layer.kind == _PRODUCT:
            values[layer.nodes] = np.multiply.reduceat(values[layer.index], layer.starts, axis=0)
            continue
        terms = weights[layer.index][:, None] * values[plan.edge_child[layer.index]]
        if use_max:
            values[layer.nodes] = np.maximum.reduceat(terms, layer.starts, axis=0)
        else:
            lengths = np.diff(np.append(layer.starts, len(layer.index)))
            values[layer.nodes] = _segment_sum(terms, layer.starts, lengths)
    return values


# --------------------------------------------------------------------------
# the graph


class SpnGraph:
    """A rooted DAG of indicator leaves, weighted sums and products.

    Parameters
    ----------
    nodes : sequence of Leaf, Sum, Product
        Node ``i`` has id ``i``; children are referenced by id.
    root : int
        Id of the root node.
    num_variables : int
        Number of binary variables ``d``; leaf variables lie in ``[0, d)``.

    Instances are immutable. Weight updates go through :meth:`with_weights`,
    which shares the compiled evaluation plan with the original.
    """

    def __init__(self, nodes: Sequence[Node], root: int, num_variables: int, *, semantics: str = "sum"):
        nodes = tuple(nodes)
        if num_variables < 1:
            raise SpnStructureError("num_variables must be positive")
        if not nodes:
            raise SpnStructureError("graph has no nodes")
        if not 0 <= root < len(nodes):
            raise SpnStructureError("root %d out of range" % root)
        if semantics not in ("sum", "max"):
            raise ValueError("semantics must be 'sum' or 'max'")
        for i, node in enumerate(nodes):
            _check_node(i, node, len(nodes), num_variables)
        self._nodes = nodes
        self._root = int(root)
        self._num_variables = int(num_variables)
        self._semantics = semantics
        self._plan: _Plan | None = None
        self._report: ValidationReport | None = None
        self._scopes: list[int] | None = None
        w = [w for node in nodes if isinstance(node, Sum) for w in node.weights]
        self._weights = np.asarray(w, dtype=np.float64)
        self._weights.setflags(write=False)
        self._log_weights = None

    # -- basic accessors
    @property
    def nodes(self) -> tuple:
        return self._nodes

    @property
    def root(self) -> int:
        return self._root

    @property
    def num_variables(self) -> int:
        return self._num_variables

    @property
    def semantics(self) -> str:
        return self._semantics

    @property
    def node_count(self) -> int:
        return len(self._nodes)

    @property
    def sum_edge_count(self) -> int:
        return len(self._weights)

    @property
    def edge_count(self) -> int:
        """All edges, sum and product."""
        return sum(len(n.children) for n in self._nodes if not isinstance(n, Leaf))

    @property
    def weights(self) -> np.ndarray:
        """Sum-edge weights in edge-id order (sum nodes by id, children in order)."""
        return self._weights

    @property
    def log_weights(self) -> np.ndarray:
        if self._log_weights is None:
            with np.errstate(divide="ignore"):
                self._log_weights = np.log(self._weights)
        return self._log_weights

    @property
    def edges(self) -> np.ndarray:
        """``(sum_edge_count, 2)`` array of (parent, child) ids, indexed by edge id."""
        plan = self.plan
        return np.column_stack([plan.edge_parent, plan.edge_child])

    def edge_ids(self, node: int) -> range:
        """Edge ids of a sum node's outgoing edges, in child order."""
        start = int(self.plan.edge_start[node])
        if start < 0:
            raise ValueError("node %d is not a sum node" % node)
        return range(start, start + len(self._nodes[node].children))

    @property
    def plan(self) -> _Plan:
        if self._plan is None:
            self._plan = _compile(self._nodes)
        return self._plan

    def scope(self, node: int) -> frozenset[int]:
        if self._scopes is None:
            self._scopes = _scope_masks(self._nodes, self.plan.order)
        mask = self._scopes[node]
        return frozenset(i for i in range(mask.bit_length()) if mask >> i & 1)

    def report(self) -> ValidationReport:
        if self._report is None:
            self._report = validate(self)
        return self._report

    @property
    def is_valid(self) -> bool:
        return self.report().ok

    def check(self) -> "SpnGraph":
        """Raise :class:`InvalidSpnError` unless the graph is a valid SPN."""
        report = self.report()
        if not report.ok:
            raise InvalidSpnError(report)
        return self

    # -- derived graphs
    def with_weights(self, weights: np.ndarray) -> "SpnGraph":
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != self._weights.shape:
            raise ValueError("expected %d weights, got %s" % (len(self._weights), weights.shape))
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise SpnStructureError("weights must be finite and nonnegative")
        nodes = list(self._nodes)
        plan = self.plan
        wl = weights.tolist()
        for i, node in enumerate(nodes):
            if isinstance(node, Sum):
                s = int(plan.edge_start[i])
                nodes[i] = Sum(node.children, wl[s:s + len(node.children)])
        return self._derived(nodes, self._semantics, weights)

    def with_semantics(self, semantics: str) -> "SpnGraph":
        return self._derived(self._nodes, semantics, self._weights)

    def _derived(self, nodes, semantics, weights) -> "SpnGraph":
        new = object.__new__(SpnGraph)
        new._nodes = tuple(nodes)
        new._root = self._root
        new._num_variables = self._num_variables
        new._semantics = semantics
        new._plan = self._plan
        new._report = self._report
        new._scopes = self._scopes
        w = np.array(weights, dtype=np.float64)
        w.setflags(write=False)
        new._weights = w
        new._log_weights = None
        return new

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpnGraph):
            return NotImplemented
        return (
            self._nodes == other._nodes
            and self._root == other._root
            and self._num_variables == other._num_variables
            and self._semantics == other._semantics
        )

    def __hash__(self):
        return hash((self._nodes, self._root, self._num_variables, self._semantics))

    def __repr__(self) -> str:
        return "SpnGraph(nodes=%d, edges=%d, num_variables=%d%s)" % (
            self.node_count,
            self.edge_count,
            self._num_variables,
            ", max" if self._semantics == "max" else "",
        )


def _check_node(i: int, node, n: int, d: int) -> None:
    if isinstance(node, Leaf):
        if not 0 <= node.var < d:
            raise SpnStructureError("node %d: variable %d out of range [0, %d)" % (i, node.var, d))
        return
    if isinstance(node, (Sum, Product)):
        if not node.children:
            raise SpnStructureError("node %d: %s node has no children" % (i, type(node).__name__.lower()))
        for c in node.children:
            if not 0 <= c < n:
                raise SpnStructureError("node %d: child %d out of range" % (i, c))
        if isinstance(node, Sum):
            if len(node.weights) != len(node.children):
                raise SpnStructureError("node %d: %d weights for %d children" % (i, len(node.weights), len(node.children)))
            w = np.asarray(node.weights, dtype=float)
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise SpnStructureError("node %d: weights must be finite and nonnegative" % i)
        return
    raise SpnStructureError("node %d: unknown node type %r" % (i, type(node).__name__))


# --------------------------------------------------------------------------
# inference


def log_evaluate(graph: SpnGraph, evidence) -> float | np.ndarray:
    """Log root value for one evidence row or a batch of rows.

    Sum nodes use log-sum-exp (or max for an MPN), products add logs; an
    inactive indicator contributes ``-inf``.
    """
    graph.check()
    states, single = _evidence_matrix(evidence, graph.num_variables)
    values, _ = _forward_log(graph.plan, graph.log_weights, states, graph.semantics == "max")
    out = values[graph.root]
    return float(out[0]) if single else out


def evaluate(graph: SpnGraph, evidence, *, space: str = "log") -> float | np.ndarray:
    """Root value (unnormalized probability) of the network under evidence.

    ``space="log"`` (default) exponentiates the log-space pass;
    ``space="linear"`` multiplies and adds probabilities directly and can
    underflow on deep networks.
    """
    if space == "log":
        with np.errstate(under="ignore"):
            return np.exp(log_evaluate(graph, evidence))
    if space != "linear":
        raise ValueError("space must be 'log' or 'linear'")
    graph.check()
    states, single = _evidence_matrix(evidence, graph.num_variables)
    values = _forward_linear(graph.plan, graph.weights, states, graph.semantics == "max")
    out = values[graph.root]
    return float(out[0]) if single else out


def to_mpn(graph: SpnGraph) -> SpnGraph:
    """Same topology and weights, with sum nodes evaluated as weighted max."""
    graph.check()
    return graph.with_semantics("max")


@dataclass
class MpeResult:
    log_root_value: float
    assignment: np.ndarray
    traversal_counts: np.ndarray  # per sum-edge id

    @property
    def root_value(self) -> float:
        return float(np.exp(self.log_root_value))


def _trace(plan: _Plan, root: int, choice_col: np.ndarray, counts: np.ndarray, assignment: np.ndarray | None) -> None:
    kind = plan.kind
    children = plan.children
    edge_child = plan.edge_child
    stack = [root]
    while stack:
        i = stack.pop()
        k = kind[i]
        if k == _SUM:
            e = choice_col[i]
            counts[e] += 1
            stack.append(edge_child[e])
        elif k == _PRODUCT:
            stack.extend(children[i])
        elif assignment is not None and assignment[0][i] >= 0:
            var, positive = assignment[0][i], assignment[1][i]
            assignment[2][var] = positive


def mpe_infer(mpn: SpnGraph, evidence) -> MpeResult | list[MpeResult]:
    """Most probable explanation by max-product upward pass and argmax trace.

    At each max node the trace follows the child with the largest weighted
    value; ties go to the lowest child id. Variables already fixed by the
    evidence keep their state. Marginalized variables not reached by the
    trace are set to ``False``.
    """
    mpn.check()
    plan = mpn.plan
    states, single = _evidence_matrix(evidence, mpn.num_variables)
    values, choice = _forward_log(plan, mpn.log_weights, states, True, want_choice=True)
    leaf_var = np.full(plan.n_nodes, -1, dtype=np.int64)
    leaf_pos = np.zeros(plan.n_nodes, dtype=bool)
    leaf_var[plan.leaf_ids] = plan.leaf_var
    leaf_pos[plan.leaf_ids] = plan.leaf_positive
    leaf_var_l, leaf_pos_l = leaf_var.tolist(), leaf_pos.tolist()
    results = []
    for b in range(states.shape[0]):
        counts = np.zeros(len(plan.edge_child), dtype=np.int64)
        assigned = {}
        _trace(plan, mpn.root, choice[:, b].tolist(), counts, (leaf_var_l, leaf_pos_l, assigned))
        row = states[b]
        assignment = row == TRUE
        for var, positive in assigned.items():
            if row[var] == MARGINALIZED:
                assignment[var] = positive
        results.append(MpeResult(float(values[mpn.root, b]), assignment, counts))
    return results[0] if single else results


def traversal_counts(mpn: SpnGraph, states: np.ndarray, log_weights: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-row MPE traversal counts for a batch of evidence rows.

    Returns ``(log_root_values, counts)`` with ``counts`` of shape
    ``(batch, sum_edge_count)``. ``log_weights`` overrides the graph's weights
    without building a new graph (used by the training loops).
    """
    plan = mpn.plan
    lw = mpn.log_weights if log_weights is None else log_weights
    values, choice = _forward_log(plan, lw, states, True, want_choice=True)
    counts = np.zeros((states.shape[0], len(plan.edge_child)), dtype=np.int64)
    for b in range(states.shape[0]):
        _trace(plan, mpn.root, choice[:, b].tolist(), counts[b], None)
    return values[mpn.root], counts


def max_log_values(mpn: SpnGraph, states: np.ndarray, log_weights: np.ndarray | None = None) -> np.ndarray:
    """Log MPN root values for a batch, optionally with overriding weights."""
    lw = mpn.log_weights if log_weights is None else log_weights
    values, _ = _forward_log(mpn.plan, lw, states, True)
    return values[mpn.root]


# --------------------------------------------------------------------------
# structural edits


def remove_edges(graph: SpnGraph, dead: np.ndarray) -> SpnGraph:
    """Drop the sum edges flagged in ``dead`` and every node left without a parent.

    Node ids are compacted preserving relative order. A sum node must keep at
    least one child.
    """
    dead = np.asarray(dead, dtype=bool)
    plan = graph.plan
    nodes = list(graph.nodes)
    for i, node in enumerate(nodes):
        if isinstance(node, Sum):
            ids = graph.edge_ids(i)
            keep = [j for j, e in enumerate(ids) if not dead[e]]
            if not keep:
                raise SpnStructureError("removing edges would leave sum node %d without children" % i)
            if len(keep) != len(node.children):
                nodes[i] = Sum([node.children[j] for j in keep], [node.weights[j] for j in keep])
    del plan
    return _compact(nodes, graph.root, graph.num_variables, graph.semantics)


def _compact(nodes: list, root: int, num_variables: int, semantics: str) -> SpnGraph:
    alive = _reachable(nodes, root)
    new_id = {}
    for i, ok in enumerate(alive):
        if ok:
            new_id[i] = len(new_id)
    out = []
    for i, node in enumerate(nodes):
        if not alive[i]:
            continue
        if isinstance(node, Sum):
            out.append(Sum([new_id[c] for c in node.children], node.weights))
        elif isinstance(node, Product):
            out.append(Product([new_id[c] for c in node.children]))
        else:
            out.append(node)
    return SpnGraph(out, new_id[root], num_variables, semantics=semantics)


# --------------------------------------------------------------------------
# serialization


def serialize(graph: SpnGraph) -> bytes:
    """Versioned JSON document; weights written with 17 significant digits."""
    lines = []
    for i, node in enumerate(graph.nodes):
        if isinstance(node, Leaf):
            body = '"kind":"leaf","var":%d,"polarity":"%s"' % (node.var, "positive" if node.positive else "negative")
        elif isinstance(node, Sum):
            body = '"kind":"sum","children":[%s],"weights":[%s]' % (
                ",".join(map(str, node.children)),
                ",".join(format(w, ".17g") for w in node.weights),
            )
        else:
            body = '"kind":"product","children":[%s]' % ",".join(map(str, node.children))
        lines.append('{"id":%d,%s}' % (i, body))
    text = '{"version":%d,"num_variables":%d,"root":%d,"nodes":[\n%s\n]}\n' % (
        FORMAT_VERSION,
        graph.num_variables,
        graph.root,
        ",\n".join(lines),
    )
    return text.encode("ascii")


def deserialize(data: bytes | str) -> SpnGraph:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SpnFormatError("malformed SPN document: %s" % exc) from exc
    if not isinstance(doc, dict):
        raise SpnFormatError("SPN document must be a JSON object")
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise SpnFormatError("unsupported SPN format version %r (expected %d)" % (version, FORMAT_VERSION))
    try:
        entries = doc["nodes"]
        num_variables = int(doc["num_variables"])
        root = int(doc["root"])
        nodes: list = [None] * len(entries)
        for entry in entries:
            i = int(entry["id"])
            if not 0 <= i < len(entries) or nodes[i] is not None:
                raise SpnFormatError("node ids must be unique and dense in [0, %d)" % len(entries))
            kind = entry["kind"]
            if kind == "leaf":
                polarity = entry["polarity"]
                if polarity not in ("positive", "negative"):
                    raise SpnFormatError("node %d: bad polarity %r" % (i, polarity))
                nodes[i] = Leaf(int(entry["var"]), polarity == "positive")
            elif kind == "sum":
                nodes[i] = Sum(entry["children"], entry["weights"])
            elif kind == "product":
                nodes[i] = Product(entry["children"])
            else:
                raise SpnFormatError("node %d: unknown kind %r" % (i, kind))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SpnFormatError):
            raise
        raise SpnFormatError("malformed SPN document: %s" % exc) from exc
    try:
        return SpnGraph(nodes, root, num_variables)
    except SpnStructureError as exc:
        raise SpnFormatError(str(exc)) from exc


def save(graph: SpnGraph, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(graph))


def load(path) -> SpnGraph:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def two_variable_example() -> SpnGraph:
    """The two-variable network used throughout as a worked example.

    ``0.8 (0.2 x1 + 0.8 ~x1)(0.4 x2 + 0.6 ~x2) + 0.2 (0.7 x1 + 0.3 ~x1)(0.1 x2 + 0.9 ~x2)``
    with variables ``x1, x2`` at indices 0 and 1.
    """
    nodes = [
        Leaf(0, True),  # 0  x1
        Leaf(0, False),  # 1  ~x1
        Leaf(1, True),  # 2  x2
        Leaf(1, False),  # 3  ~x2
        Sum([0, 1], [0.2, 0.8]),  # 4
        Sum([2, 3], [0.4, 0.6]),  # 5
        Sum([0, 1], [0.7, 0.3]),  # 6
        Sum([2, 3], [0.1, 0.9]),  # 7
        Product([4, 5]),  # 8
        Product([6, 7]),  # 9
        Sum([8, 9], [0.8, 0.2]),  # 10
    ]
    return SpnGraph(nodes, root=10, num_variables=2)
