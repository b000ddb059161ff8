"""Seeded synthetic datasets for tests, demos and the CLI ``data-synth`` command."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RankingData:
    X: np.ndarray  # (n, d) uint8 bits
    like_counts: np.ndarray
    ids: list
    truth: dict = field(default_factory=dict)


def _ids(n: int, prefix: str = "item") -> list:
    width = len(str(n - 1))
    return ["%s%0*d" % (prefix, width, i) for i in range(n)]


def make_xor_likes(
    n_items: int = 2000,
    n_attributes: int = 16,
    xor_pairs=((0, 1), (2, 3)),
    gain: int = 20,
    noise: int = 9,
    base: int = 0,
    seed: int = 0,
) -> RankingData:
    """Items whose likes depend only on the parity of designated attribute pairs.

    ``likes = base + gain * #{(a, b): x_a != x_b} + U{0..noise}``. Every
    single attribute is independent of the likes, so no linear scorer beats
    chance; with ``noise < gain - theta`` every pair whose like gap exceeds
    ``theta`` differs in its parity count.
    """
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 2, size=(n_items, n_attributes), dtype=np.uint8)
    level = np.zeros(n_items, dtype=np.int64)
    for a, b in xor_pairs:
        level += X[:, a] != X[:, b]
    likes = base + gain * level + rng.integers(0, noise + 1, size=n_items)
    truth = {"kind": "xor", "xor_pairs": [list(p) for p in xor_pairs], "gain": gain, "noise": noise, "level": level.tolist()}
    return RankingData(X, likes.astype(np.int64), _ids(n_items), truth)


def make_separable_likes(
    n_items: int = 500,
    n_attributes: int = 16,
    margin: float = 1.0,
    scale: float = 10.0,
    seed: int = 0,
) -> RankingData:
    """Likes given by a planted linear function of the bits.

    ``likes = round(scale * (w . x) + offset)`` with integer ``w`` so that
    the like order is exactly the order of ``w . x``; ``margin`` is the
    smallest nonzero gap in ``w . x`` between distinct items.
    """
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 2, size=(n_items, n_attributes), dtype=np.uint8)
    w = rng.integers(1, 6, size=n_attributes) * rng.choice([-1, 1], size=n_attributes)
    raw = X @ w * margin
    likes = np.round(scale * (raw - raw.min())).astype(np.int64)
    return RankingData(X, likes, _ids(n_items), {"kind": "separable", "w": w.tolist(), "margin": margin})


def make_two_cluster_bits(n_items: int = 200, n_attributes: int = 12, flip: float = 0.05, seed: int = 0) -> np.ndarray:
    """Binary rows drawn around two complementary prototypes with bit-flip noise."""
    rng = np.random.default_rng(seed)
    proto = rng.integers(0, 2, size=n_attributes, dtype=np.uint8)
    which = rng.integers(0, 2, size=n_items)
    X = np.where(which[:, None] == 0, proto, 1 - proto).astype(np.uint8)
    flips = rng.random(X.shape) < flip
    return np.where(flips, 1 - X, X).astype(np.uint8)


@dataclass
class PlantedMtl:
    X: np.ndarray  # (n, d) shared inputs
    Y: np.ndarray  # (n, M) labels in {-1, +1}
    L: np.ndarray
    S: np.ndarray
    groups: list


def make_planted_mtl(
    n_samples: int = 400,
    d: int = 20,
    K: int = 3,
    M: int = 6,
    groups=None,
    label_noise: float = 0.0,
    seed: int = 0,
) -> PlantedMtl:
    """Labels ``sign(x . L* s*_m)`` from a planted low-rank weight matrix.

    Tasks in the same group share latent components: each group draws its
    support of latent rows and tasks inside it only use those rows.
    """
    rng = np.random.default_rng(seed)
    if groups is None:
        half = M // 2
        groups = [list(range(half)), list(range(half, M))]
    L = rng.normal(size=(d, K))
    S = np.zeros((K, M))
    for g in groups:
        support = rng.choice(K, size=max(1, K - 1), replace=False)
        for m in g:
            S[support, m] = rng.normal(size=len(support))
    X = rng.normal(size=(n_samples, d))
    margins = X @ L @ S
    Y = np.where(margins >= 0, 1, -1)
    if label_noise:
        flip = rng.random(Y.shape) < label_noise
        Y = np.where(flip, -Y, Y)
    return PlantedMtl(X, Y.astype(np.int64), L, S, [list(map(int, g)) for g in groups])


def make_blobs(n_per_blob: int = 50, centers=3, dim: int = 2, spread: float = 0.3, separation: float = 10.0, seed: int = 0):
    """Isotropic Gaussian blobs; returns ``(X, labels)``."""
    rng = np.random.default_rng(seed)
    if np.isscalar(centers):
        centers = rng.uniform(-separation, separation, size=(int(centers), dim))
    centers = np.asarray(centers, dtype=float)
    X = np.concatenate([c + spread * rng.normal(size=(n_per_blob, centers.shape[1])) for c in centers])
    labels = np.repeat(np.arange(len(centers)), n_per_blob)
    perm = rng.permutation(len(X))
    return X[perm], labels[perm]


@dataclass
class PatchSet:
    features: np.ndarray  # (n_images * p, D)
    image_ids: np.ndarray  # per row
    patch_index: np.ndarray  # per row
    pattern: np.ndarray  # true pattern of each row


def make_patch_patterns(
    n_images: int = 200,
    patches_per_image: int = 12,
    n_patterns: int = 8,
    dim: int = 16,
    spread: float = 0.5,
    separation: float = 8.0,
    seed: int = 0,
) -> PatchSet:
    """Patch features drawn from a fixed set of visual patterns.

    Each patch of each image picks one pattern uniformly at random and adds
    Gaussian noise around that pattern's prototype.
    """
    rng = np.random.default_rng(seed)
    protos = rng.normal(size=(n_patterns, dim))
    protos *= separation / np.linalg.norm(protos, axis=1, keepdims=True)
    n = n_images * patches_per_image
    pattern = rng.integers(0, n_patterns, size=n)
    feats = protos[pattern] + spread * rng.normal(size=(n, dim))
    image_ids = np.repeat(np.arange(n_images), patches_per_image)
    patch_index = np.tile(np.arange(patches_per_image), n_images)
    return PatchSet(feats, image_ids, patch_index, pattern)
