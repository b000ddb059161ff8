"""Data-driven attribute discovery from patch features.

Patch features are over-segmented by K-means, the segments are merged by
average link, clusters that few images contribute to are filtered out, and
the survivors become binary attributes: one bit per (patch position,
cluster).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.discriminant_analysis import LinearDiscriminantAnalysis
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features
from .spn import DimensionError

logger = logging.getLogger(__name__)

# clusters with fewer members than this get exact average links
EXACT_LINK_MIN_MEMBERS = 64
_CHUNK = 2048


class ClusteringError(ValueError):
    pass


# --------------------------------------------------------------------------
# patch geometry


@dataclass(frozen=True)
class PatchGrid:
    p: int = 12
    rows: int = 3
    cols: int = 4
    overlap_fraction: float = 0.25

    def __post_init__(self):
        if self.rows * self.cols != self.p:
            raise ValueError("rows * cols must equal p")
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be positive")
        if not 0 <= self.overlap_fraction < 1:
            raise ValueError("overlap_fraction must be in [0, 1)")


def patch_grid(image_width: float, image_height: float, grid: PatchGrid = PatchGrid()) -> list[tuple[float, float, float, float]]:
    """Overlapping patch rectangles ``(x0, y0, x1, y1)`` in row-major order.

    The image is cut into a ``rows x cols`` lattice of equal cells. Every
    interior cell side is pushed outward by half of ``overlap_fraction`` of
    the cell size, so two neighbouring patches share ``overlap_fraction`` of
    a cell. Image borders are not extended.
    """
    if image_width <= 0 or image_height <= 0:
        raise ValueError("image dimensions must be positive")
    if grid.cols > image_width or grid.rows > image_height:
        raise ValueError("grid has more cells than the image has pixels")
    cw, ch = image_width / grid.cols, image_height / grid.rows
    ox, oy = grid.overlap_fraction * cw / 2, grid.overlap_fraction * ch / 2
    rects = []
    for r in range(grid.rows):
        for c in range(grid.cols):
            x0 = c * cw - (ox if c > 0 else 0.0)
            x1 = (c + 1) * cw + (ox if c < grid.cols - 1 else 0.0)
            y0 = r * ch - (oy if r > 0 else 0.0)
            y1 = (r + 1) * ch + (oy if r < grid.rows - 1 else 0.0)
            rects.append((max(0.0, x0), max(0.0, y0), min(float(image_width), x1), min(float(image_height), y1)))
    return rects


# --------------------------------------------------------------------------
# cluster model


@dataclass
class ClusterModel:
    """Clusters over a fixed set of patches.

    ``labels[i]`` is the cluster of patch ``i`` or ``-1`` if the patch was
    dropped. Centroids live in the (possibly transformed) feature space the
    clustering ran in; ``transform`` maps raw features into it.
    """

    centroids: np.ndarray
    labels: np.ndarray
    support: np.ndarray | None = None
    radii: np.ndarray | None = None
    transform: object | None = None
    inertia_history: list = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return len(self.centroids)

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster)

    def sizes(self) -> np.ndarray:
        kept = self.labels[self.labels >= 0]
        return np.bincount(kept, minlength=self.n_clusters)

    def member_lists(self) -> list[np.ndarray]:
        order = np.argsort(self.labels, kind="stable")
        lab = self.labels[order]
        start = np.searchsorted(lab, np.arange(self.n_clusters))
        stop = np.searchsorted(lab, np.arange(self.n_clusters), side="right")
        return [order[a:b] for a, b in zip(start, stop)]


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _nearest(X: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    labels = np.empty(len(X), dtype=np.int64)
    best = np.empty(len(X))
    for s in range(0, len(X), _CHUNK):
        d = _sq_dists(X[s:s + _CHUNK], C)
        labels[s:s + _CHUNK] = d.argmin(1)
        best[s:s + _CHUNK] = d[np.arange(len(d)), labels[s:s + _CHUNK]]
    return labels, best


def _plusplus(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((K, X.shape[1]))
    centers[0] = X[rng.integers(len(X))]
    closest = _sq_dists(X, centers[:1]).ravel()
    for k in range(1, K):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(len(X), p=closest / total)
        else:
            idx = rng.integers(len(X))
        centers[k] = X[idx]
        closest = np.minimum(closest, _sq_dists(X, centers[k:k + 1]).ravel())
    return centers


def kmeans(features, K: int, seed: int = 0, max_iter: int = 100) -> ClusterModel:
    """Lloyd's algorithm with k-means++ seeding.

    Stops when no assignment changes or after ``max_iter`` rounds. A cluster
    that ends up empty is re-seeded at the point farthest from its current
    centroid. ``inertia_history`` holds the inertia after every assignment.
    """
    X = check_features(features)
    if K < 1:
        raise ValueError("K must be positive")
    if len(X) < K:
        raise ClusteringError("need at least K=%d points, got %d" % (K, len(X)))
    rng = np.random.default_rng(seed)
    C = _plusplus(X, K, rng)
    labels, best = _nearest(X, C)
    history = [float(best.sum())]
    for _ in range(max_iter):
        counts = np.bincount(labels, minlength=K)
        sums = np.zeros_like(C)
        np.add.at(sums, labels, X)
        nonempty = counts > 0
        C[nonempty] = sums[nonempty] / counts[nonempty, None]
        for k in np.flatnonzero(~nonempty):
            far = int(np.argmax(best))
            C[k] = X[far]
            best[far] = 0.0
        new_labels, best = _nearest(X, C)
        history.append(float(best.sum()))
        changed = int(np.sum(new_labels != labels))
        labels = new_labels
        if changed == 0:
            break
    return ClusterModel(C, labels, inertia_history=history)


# --------------------------------------------------------------------------
# average-link agglomeration


def average_link(a, b) -> float:
    """Mean Euclidean distance over all cross pairs of two point sets."""
    A, B = np.atleast_2d(np.asarray(a, float)), np.atleast_2d(np.asarray(b, float))
    if A.size == 0 or B.size == 0 or len(A) == 0 or len(B) == 0:
        raise ClusteringError("average link of an empty cluster")
    return float(cdist(A, B).sum() / (len(A) * len(B)))


def _link_matrix(X: np.ndarray, labels: np.ndarray, n: int) -> np.ndarray:
    """Average-link distances between the ``n`` clusters of ``labels``.

    Rows for clusters with fewer than ``EXACT_LINK_MIN_MEMBERS`` points are
    exact mean distances; pairs of two larger clusters use the root mean
    squared distance from the centroid decomposition.
    """
    sizes = np.bincount(labels, minlength=n).astype(float)
    present = np.flatnonzero(sizes > 0)
    if len(present) < n:
        # empty clusters are infinitely far from everything
        D = np.full((n, n), np.inf)
        relabel = np.full(n, -1)
        relabel[present] = np.arange(len(present))
        D[np.ix_(present, present)] = _link_matrix(X, relabel[labels], len(present))
        return D
    order = np.argsort(labels, kind="stable")
    Xs, ls = X[order], labels[order]
    starts = np.searchsorted(ls, np.arange(n))
    D = np.empty((n, n))

    mu = np.add.reduceat(Xs, starts, axis=0) / sizes[:, None]
    spread = np.add.reduceat(((Xs - mu[ls]) ** 2).sum(1), starts) / sizes
    rms = np.sqrt(np.maximum(_sq_dists(mu, mu) + spread[:, None] + spread[None, :], 0.0))
    D[:] = rms

    small = np.flatnonzero(sizes < EXACT_LINK_MIN_MEMBERS)
    if len(small):
        rows = np.concatenate([np.arange(starts[c], starts[c] + int(sizes[c])) for c in small])
        exact = np.zeros((n, n))
        for s in range(0, len(rows), _CHUNK):
            block = rows[s:s + _CHUNK]
            per_target = np.add.reduceat(cdist(Xs[block], Xs), starts, axis=1)
            np.add.at(exact, ls[block], per_target)
        exact /= sizes[:, None] * sizes[None, :]
        D[small, :] = exact[small, :]
        D[:, small] = exact[small, :].T
    np.fill_diagonal(D, 0.0)
    return D


def agglomerate(
    model: ClusterModel,
    features,
    N_c: int,
    drop_min_size: int = 5,
    drop_distance_factor: float = 3.0,
    *,
    merge_log: list | None = None,
) -> ClusterModel:
    """Merge clusters by average link until ``N_c`` remain.

    Before merging, clusters smaller than ``drop_min_size`` whose nearest
    neighbour is farther than ``drop_distance_factor`` times the median
    inter-cluster link are dropped (their patches get label ``-1``). Then
    the closest pair is merged repeatedly; ties go to the lowest index pair.
    ``merge_log`` receives ``(i, j, distance)`` for every merge, with
    ``i < j`` cluster indices into the input model.
    """
    X = check_features(features)
    n = model.n_clusters
    if N_c < 1:
        raise ValueError("N_c must be positive")
    if n == N_c:
        return model
    if n < N_c:
        raise ClusteringError("model has %d clusters, fewer than N_c=%d" % (n, N_c))
    labels = model.labels
    keep_pts = labels >= 0
    D = _link_matrix(X[keep_pts], labels[keep_pts], n)
    sizes = np.bincount(labels[keep_pts], minlength=n).astype(float)

    active = sizes > 0
    if n > 1:
        off = D[np.triu_indices(n, 1)]
        median = float(np.median(off))
        masked = D + np.diag(np.full(n, np.inf))
        nearest = masked.min(1)
        drop = (sizes < drop_min_size) & (nearest > drop_distance_factor * median)
        active &= ~drop
    if not active.any():
        raise ClusteringError("every cluster was dropped")

    slot = np.arange(n)  # final slot of every input cluster
    W = D.copy()
    W[~active, :] = np.inf
    W[:, ~active] = np.inf
    W[np.tril_indices(n)] = np.inf
    n_active = int(active.sum())
    while n_active > N_c:
        flat = int(np.argmin(W))
        i, j = divmod(flat, n)
        if not np.isfinite(W[i, j]):
            break
        if merge_log is not None:
            merge_log.append((i, j, float(W[i, j])))
        si, sj = sizes[i], sizes[j]
        row = (si * D[i] + sj * D[j]) / (si + sj)
        D[i, :] = row
        D[:, i] = row
        sizes[i] += sj
        sizes[j] = 0
        active[j] = False
        slot[slot == j] = i
        W[j, :] = np.inf
        W[:, j] = np.inf
        upper = np.arange(n) > i
        W[i, :] = np.where(active & upper, row, np.inf)
        W[:i, i] = np.where(active[:i], row[:i], np.inf)
        n_active -= 1

    survivors = np.flatnonzero(active)
    renumber = np.full(n, -1)
    renumber[survivors] = np.arange(len(survivors))
    new_labels = np.where(keep_pts, renumber[slot[np.maximum(labels, 0)]], -1)
    centroids = np.vstack([X[new_labels == c].mean(0) for c in range(len(survivors))])
    return ClusterModel(centroids, new_labels, transform=model.transform)


# --------------------------------------------------------------------------
# representativeness


def support_counts(model: ClusterModel, image_ids) -> np.ndarray:
    """Number of distinct images with at least one patch in each cluster."""
    image_ids = np.asarray(image_ids)
    if len(image_ids) != len(model.labels):
        raise DimensionError("need one image id per patch")
    kept = model.labels >= 0
    _, img = np.unique(image_ids, return_inverse=True)
    pairs = np.unique(np.column_stack([model.labels[kept], img[kept]]), axis=0)
    return np.bincount(pairs[:, 0], minlength=model.n_clusters) if len(pairs) else np.zeros(model.n_clusters, int)


def representativeness_filter(model: ClusterModel, image_ids, coverage: float = 0.90) -> ClusterModel:
    """Keep the most representative clusters covering ``coverage`` of the support.

    Clusters are sorted by support (distinct contributing images), largest
    first, and the shortest prefix whose support sum reaches ``coverage``
    times the total is kept. If that prefix overshoots the target, clusters
    tied with the last one kept are kept too. Kept clusters are renumbered
    in that order.
    """
    if model.n_clusters == 0:
        raise ClusteringError("empty cluster model")
    if not 0 < coverage <= 1:
        raise ValueError("coverage must be in (0, 1]")
    support = support_counts(model, image_ids)
    order = np.argsort(-support, kind="stable")
    cum = np.cumsum(support[order])
    target = coverage * cum[-1]
    n_keep = int(np.searchsorted(cum, target * (1 - 1e-12), side="left")) + 1
    n_keep = min(n_keep, len(order))
    # an exact hit needs no tie-breaking; an overshoot keeps everything tied with the last cluster
    if cum[n_keep - 1] > target * (1 + 1e-12):
        last = support[order[n_keep - 1]]
        while n_keep < len(order) and support[order[n_keep]] == last:
            n_keep += 1
    kept = order[:n_keep]
    renumber = np.full(model.n_clusters, -1)
    renumber[kept] = np.arange(n_keep)
    labels = np.where(model.labels >= 0, renumber[np.maximum(model.labels, 0)], -1)
    radii = model.radii[kept] if model.radii is not None else None
    return replace(model, centroids=model.centroids[kept], labels=labels, support=support[kept], radii=radii)


# --------------------------------------------------------------------------
# the discovery loop


@dataclass(frozen=True)
class DiscoveryConfig:
    K_over: int = 2000
    N_c: int = 1000
    coverage: float = 0.90
    drop_min_size: int = 5
    drop_distance_factor: float = 3.0
    outer_iterations: int = 1
    rng_seed: int = 0
    radius_percentile: float = 95.0
    kmeans_max_iter: int = 100

    def __post_init__(self):
        if self.N_c > self.K_over:
            raise ValueError("N_c must not exceed K_over")
        if self.K_over < 1 or self.N_c < 1 or self.outer_iterations < 1:
            raise ValueError("K_over, N_c and outer_iterations must be positive")
        if not 0 < self.coverage <= 1:
            raise ValueError("coverage must be in (0, 1]")


class AffineTransform:
    """``x -> x @ matrix + bias``, a frozen stand-in for any fitted linear projection."""

    def __init__(self, matrix, bias):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)

    @classmethod
    def from_fitted(cls, transform, dim: int) -> "AffineTransform":
        # probing with the origin and the unit basis recovers any affine map
        bias = np.asarray(transform.transform(np.zeros((1, dim))), dtype=np.float64)[0]
        return cls(np.asarray(transform.transform(np.eye(dim)), dtype=np.float64) - bias, bias)

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return np.asarray(X, dtype=np.float64) @ self.matrix + self.bias


def lda_transform(n_components: int | None = None) -> LinearDiscriminantAnalysis:
    """Linear projection fit to the current cluster labels, for the refine loop."""
    return LinearDiscriminantAnalysis(n_components=n_components)


def _radii(Z: np.ndarray, model: ClusterModel, percentile: float) -> np.ndarray:
    radii = np.zeros(model.n_clusters)
    for c, members in enumerate(model.member_lists()):
        if len(members):
            d = np.sqrt(_sq_dists(Z[members], model.centroids[c:c + 1]).ravel())
            radii[c] = np.percentile(d, percentile)
    return radii


def discover(features, image_ids, config: DiscoveryConfig = DiscoveryConfig(), transform=None) -> tuple[ClusterModel, list[dict]]:
    """Iterate transform, K-means, agglomeration and the coverage filter.

    ``transform`` is any object with scikit-learn ``fit(X, y)`` and
    ``transform(X)``. The first round clusters the raw features; every later
    round fits the transform on the kept patches with their current cluster
    labels and re-clusters the transformed features. Without a transform
    the later rounds repeat the first on the same features.

    Returns the final model and one log entry per round.
    """
    X = check_features(features)
    image_ids = np.asarray(image_ids)
    if len(image_ids) != len(X):
        raise DimensionError("need one image id per patch")
    log = []
    model = None
    fitted = None
    for it in range(config.outer_iterations):
        Z = X
        fitted = None
        if it > 0 and transform is not None:
            kept = model.labels >= 0
            fitted = AffineTransform.from_fitted(transform.fit(X[kept], model.labels[kept]), X.shape[1])
            Z = fitted.transform(X)
        seg = kmeans(Z, config.K_over, seed=config.rng_seed + it, max_iter=config.kmeans_max_iter)
        merged = agglomerate(seg, Z, config.N_c, config.drop_min_size, config.drop_distance_factor)
        model = representativeness_filter(merged, image_ids, config.coverage)
        model.transform = fitted
        model.radii = _radii(Z, model, config.radius_percentile)
        model.inertia_history = seg.inertia_history
        log.append({
            "iteration": it,
            "over_segments": seg.n_clusters,
            "after_agglomeration": merged.n_clusters,
            "kept": model.n_clusters,
            "dropped_patches": int(np.sum(model.labels < 0)),
        })
        logger.info("discovery round %d: %s", it, log[-1])
    return model, log


def assign_attributes(model: ClusterModel, patch_features) -> np.ndarray:
    """Binary attribute vector of one image from its per-patch features.

    Patch ``j`` sets bit ``j * n_clusters + c`` when its nearest centroid is
    ``c`` and lies within that cluster's activation radius.
    """
    P = check_features(patch_features)
    Z = model.transform.transform(P) if model.transform is not None else P
    if Z.shape[1] != model.centroids.shape[1]:
        raise DimensionError("patch features have dimension %d, model expects %d" % (Z.shape[1], model.centroids.shape[1]))
    if model.radii is None:
        raise ValueError("model has no activation radii; fit it with discover()")
    nearest, sq = _nearest(Z, model.centroids)
    bits = np.zeros((len(Z), model.n_clusters), dtype=np.uint8)
    inside = np.sqrt(sq) <= model.radii[nearest]
    bits[np.flatnonzero(inside), nearest[inside]] = 1
    return bits.ravel()


class DataDrivenAttributes(BaseEstimator, TransformerMixin):
    """Discover patch clusters and turn images into per-patch cluster bits.

    ``fit`` takes the stacked patch features of all images and the image id
    of every row. ``transform`` takes an ``(n_images, p, D)`` array and
    returns ``(n_images, p * n_clusters_)`` bits.
    """

    def __init__(
        self,
        K_over=2000,
        N_c=1000,
        coverage=0.90,
        drop_min_size=5,
        drop_distance_factor=3.0,
        outer_iterations=1,
        radius_percentile=95.0,
        feature_transform=None,
        random_state=0,
    ):
        self.K_over = K_over
        self.N_c = N_c
        self.coverage = coverage
        self.drop_min_size = drop_min_size
        self.drop_distance_factor = drop_distance_factor
        self.outer_iterations = outer_iterations
        self.radius_percentile = radius_percentile
        self.feature_transform = feature_transform
        self.random_state = random_state

    def fit(self, X, image_ids):
        config = DiscoveryConfig(
            K_over=self.K_over,
            N_c=self.N_c,
            coverage=self.coverage,
            drop_min_size=self.drop_min_size,
            drop_distance_factor=self.drop_distance_factor,
            outer_iterations=self.outer_iterations,
            rng_seed=self.random_state,
            radius_percentile=self.radius_percentile,
        )
        self.model_, self.log_ = discover(X, image_ids, config, self.feature_transform)
        self.n_clusters_ = self.model_.n_clusters
        self.n_features_in_ = np.asarray(X).shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = np.asarray(X, dtype=float)
        if X.ndim != 3:
            raise DimensionError("expected an (n_images, p, D) array")
        return np.vstack([assign_attributes(self.model_, img) for img in X])
