import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import adjusted_rand_score

import oracles
from spnrank.clustering import (
    AffineTransform,
    ClusterModel,
    ClusteringError,
    DataDrivenAttributes,
    DiscoveryConfig,
    PatchGrid,
    agglomerate,
    assign_attributes,
    average_link,
    discover,
    kmeans,
    lda_transform,
    patch_grid,
    representativeness_filter,
    support_counts,
)
from spnrank.spn import DimensionError
from spnrank.synth import make_blobs, make_patch_patterns


def model_from_groups(groups):
    X = np.vstack(groups)
    labels = np.repeat(np.arange(len(groups)), [len(g) for g in groups])
    centroids = np.vstack([np.mean(g, 0) for g in groups])
    return ClusterModel(centroids, labels), X


# --------------------------------------------------------------------------
# patch geometry


def test_zero_overlap_tiles():
    rects = patch_grid(400, 300, PatchGrid(overlap_fraction=0.0))
    assert len(rects) == 12
    for r in rects:
        assert (r[2] - r[0], r[3] - r[1]) == (100, 100)
    area = sum((r[2] - r[0]) * (r[3] - r[1]) for r in rects)
    assert area == 400 * 300


def test_overlap_shares_quarter_cell():
    rects = patch_grid(400, 300, PatchGrid(overlap_fraction=0.25))
    grid = np.array(rects).reshape(3, 4, 4)
    for r in range(3):
        for c in range(3):
            shared = grid[r, c, 2] - grid[r, c + 1, 0]
            assert shared == pytest.approx(0.25 * 100)
    for r in range(2):
        assert grid[r, 0, 3] - grid[r + 1, 0, 1] == pytest.approx(0.25 * 100)
    # the union still covers the image: corners and every shared border are inside
    xs, ys = np.meshgrid(np.linspace(0, 400, 41), np.linspace(0, 300, 31))
    pts = np.column_stack([xs.ravel(), ys.ravel()])
    inside = np.zeros(len(pts), bool)
    for x0, y0, x1, y1 in rects:
        inside |= (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
    assert inside.all()
    assert all(0 <= x0 < x1 <= 400 and 0 <= y0 < y1 <= 300 for x0, y0, x1, y1 in rects)


def test_patches_scale_with_image():
    small = np.array(patch_grid(400, 300))
    big = np.array(patch_grid(800, 600))
    np.testing.assert_allclose(big, 2 * small)


def test_grid_errors():
    with pytest.raises(ValueError):
        PatchGrid(p=12, rows=3, cols=3)
    with pytest.raises(ValueError):
        patch_grid(3, 2)
    with pytest.raises(ValueError):
        patch_grid(0, 10)


# --------------------------------------------------------------------------
# kmeans


def test_kmeans_blobs():
    X, truth = make_blobs(n_per_blob=60, centers=3, dim=2, seed=0)
    m = kmeans(X, 3, seed=0)
    assert adjusted_rand_score(truth, m.labels) == 1.0


def test_kmeans_one_cluster_per_point():
    X = np.random.default_rng(0).normal(size=(15, 3))
    m = kmeans(X, 15, seed=1)
    assert sorted(m.labels.tolist()) == list(range(15))
    assert m.inertia_history[-1] == pytest.approx(0.0, abs=1e-12)


def test_kmeans_identical_points():
    X = np.tile([[1.5, -2.0]], (6, 1))
    m = kmeans(X, 2, seed=0)
    np.testing.assert_allclose(m.centroids, np.tile([[1.5, -2.0]], (2, 1)))


def test_kmeans_too_few_points():
    with pytest.raises(ClusteringError):
        kmeans(np.zeros((3, 2)), 4)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), K=st.integers(2, 12))
def test_kmeans_inertia_non_increasing(seed, K):
    X = np.random.default_rng(seed).normal(size=(80, 3))
    h = np.array(kmeans(X, K, seed=seed).inertia_history)
    assert np.all(np.diff(h) <= 1e-9 * max(1.0, h[0]))


# --------------------------------------------------------------------------
# average link


def test_average_link_singletons():
    assert average_link([[0, 0]], [[3, 4]]) == 5.0


def test_average_link_matches_double_loop():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        assert abs(average_link(a, b) - oracles.average_link_loop(a, b)) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), na=st.integers(1, 6), nb=st.integers(1, 6))
def test_average_link_symmetric_nonnegative(seed, na, nb):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(na, 3)), rng.normal(size=(nb, 3))
    assert average_link(a, b) == pytest.approx(average_link(b, a), rel=1e-14)
    assert average_link(a, b) >= 0
    assert average_link(-a, a) == pytest.approx(average_link(a, -a), rel=1e-14)


def test_average_link_self():
    assert average_link([[1.0, 2.0]], [[1.0, 2.0]]) == 0.0
    assert average_link([[0.0], [1.0]], [[0.0], [1.0]]) > 0


def test_average_link_empty():
    with pytest.raises(ClusteringError):
        average_link(np.zeros((0, 2)), [[1, 1]])


# --------------------------------------------------------------------------
# agglomeration


def test_line_of_four():
    model, X = model_from_groups([[[0.0]], [[1.0]], [[10.0]], [[11.0]]])
    out = agglomerate(model, X, 2, drop_min_size=0)
    assert out.labels.tolist() == [0, 0, 1, 1]


def test_agglomerate_identity():
    model, X = model_from_groups([[[0.0]], [[1.0]], [[5.0]]])
    assert agglomerate(model, X, 3) is model


@pytest.mark.parametrize("seed", range(8))
def test_merge_sequence_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(6, 21))
    groups = [rng.normal(scale=3.0, size=(int(rng.integers(1, 5)), 2)) for _ in range(n)]
    N_c = int(rng.integers(1, 4))
    model, X = model_from_groups(groups)
    log = []
    out = agglomerate(model, X, N_c, drop_min_size=0, merge_log=log)
    assert [(i, j) for i, j, _ in log] == oracles.brute_agglomerate(groups, N_c)
    assert out.n_clusters == N_c
    # every output cluster is a union of input clusters
    for c in range(model.n_clusters):
        assert len(set(out.labels[model.labels == c].tolist())) == 1


def test_small_far_cluster_dropped():
    rng = np.random.default_rng(1)
    groups = [rng.normal(loc=(x, 0), scale=0.3, size=(10, 2)) for x in (0, 2, 4, 6)]
    groups.append(np.array([[200.0, 200.0]]))
    model, X = model_from_groups(groups)
    out = agglomerate(model, X, 2)
    assert out.labels[-1] == -1
    assert np.all(out.labels[:-1] >= 0)


def test_all_dropped_is_an_error():
    model, X = model_from_groups([[[0.0]], [[100.0]], [[1000.0]]])
    with pytest.raises(ClusteringError):
        agglomerate(model, X, 1, drop_min_size=5, drop_distance_factor=0.0)


def test_large_clusters_use_rms_link():
    rng = np.random.default_rng(2)
    groups = [rng.normal(loc=(10 * k, 0), size=(70, 2)) for k in range(4)]
    model, X = model_from_groups(groups)
    out = agglomerate(model, X, 2, drop_min_size=0)
    assert out.labels.tolist() == [0] * 140 + [1] * 140


# --------------------------------------------------------------------------
# representativeness


def model_with_support(support):
    labels, images = [], []
    for c, s in enumerate(support):
        labels += [c] * s
        images += list(range(s))
    return ClusterModel(np.zeros((len(support), 1)), np.array(labels, dtype=np.int64)), np.array(images)


def test_support_counts_distinct_images():
    model = ClusterModel(np.zeros((2, 1)), np.array([0, 0, 0, 1, -1]))
    assert support_counts(model, ["a", "a", "b", "a", "c"]).tolist() == [2, 1]


def test_one_cluster_covers_everything():
    model, imgs = model_with_support([50, 0, 0, 0])
    assert representativeness_filter(model, imgs).n_clusters == 1


def test_uniform_support_keeps_nine_of_ten():
    model, imgs = model_with_support([7] * 10)
    assert representativeness_filter(model, imgs, 0.9).n_clusters == 9


def test_overshoot_keeps_ties():
    model, imgs = model_with_support([5, 3, 3, 1])
    out = representativeness_filter(model, imgs, 0.6)
    assert out.support.tolist() == [5, 3, 3]


@settings(max_examples=100, deadline=None)
@given(support=st.lists(st.integers(0, 30), min_size=1, max_size=25).filter(lambda s: sum(s) > 0), coverage=st.floats(0.05, 1.0))
def test_filter_matches_prefix_oracle(support, coverage):
    model, imgs = model_with_support(support)
    out = representativeness_filter(model, imgs, coverage)
    want = oracles.coverage_prefix_oracle(support, coverage)
    assert out.support.tolist() == [support[c] for c in want]
    assert out.support.sum() >= coverage * sum(support) * (1 - 1e-12)
    # relabelled members follow their cluster into the kept order
    for new, old in enumerate(want):
        assert np.array_equal(out.labels == new, model.labels == old)


# --------------------------------------------------------------------------
# discovery and attribute bits


@pytest.fixture(scope="module")
def patches():
    return make_patch_patterns(n_images=150, patches_per_image=12, n_patterns=8, dim=16, seed=0)


@pytest.fixture(scope="module")
def discovered(patches):
    cfg = DiscoveryConfig(K_over=40, N_c=8, coverage=0.9, rng_seed=0)
    return discover(patches.features, patches.image_ids, cfg)


def test_discover_recovers_patterns(patches, discovered):
    model, log = discovered
    assert model.n_clusters == 8
    kept = model.labels >= 0
    purity = sum(np.bincount(patches.pattern[kept & (model.labels == c)]).max() for c in range(8)) / kept.sum()
    assert purity >= 0.95
    assert log[0]["kept"] == 8


def test_discover_is_composition_and_deterministic(patches, discovered):
    cfg = DiscoveryConfig(K_over=40, N_c=8, coverage=0.9, rng_seed=0)
    seg = kmeans(patches.features, 40, seed=0)
    direct = representativeness_filter(agglomerate(seg, patches.features, 8), patches.image_ids, 0.9)
    model, _ = discovered
    assert np.array_equal(direct.labels, model.labels)
    again, _ = discover(patches.features, patches.image_ids, cfg)
    assert np.array_equal(again.centroids, model.centroids)


def test_discover_with_lda_rounds(patches):
    cfg = DiscoveryConfig(K_over=30, N_c=8, outer_iterations=2, rng_seed=1)
    model, log = discover(patches.features, patches.image_ids, cfg, transform=lda_transform())
    assert len(log) == 2
    assert isinstance(model.transform, AffineTransform)
    bits = assign_attributes(model, patches.features[:12])
    assert bits.shape == (12 * model.n_clusters,)


def test_assign_bits_match_nearest_centroid_oracle(patches, discovered):
    model, _ = discovered
    for img in range(5):
        P = patches.features[patches.image_ids == img]
        bits = assign_attributes(model, P).reshape(12, -1)
        for j, x in enumerate(P):
            d = [float(np.linalg.norm(x - c)) for c in model.centroids]
            c = int(np.argmin(d))
            want = np.zeros(model.n_clusters, dtype=np.uint8)
            if d[c] <= model.radii[c]:
                want[c] = 1
            assert bits[j].tolist() == want.tolist()


def test_member_sets_own_bit_and_outlier_is_blank(patches, discovered):
    model, _ = discovered
    c = 3
    member = patches.features[model.members(c)]
    near = member[np.argmin(np.linalg.norm(member - model.centroids[c], axis=1))]
    far = np.full(16, 1e6)
    bits = assign_attributes(model, np.vstack([near, far])).reshape(2, -1)
    assert bits[0, c] == 1 and bits[0].sum() == 1
    assert bits[1].sum() == 0


def test_assign_dimension_mismatch(discovered):
    model, _ = discovered
    with pytest.raises(DimensionError):
        assign_attributes(model, np.zeros((12, 5)))


def test_data_driven_attributes_estimator(patches):
    est = DataDrivenAttributes(K_over=40, N_c=8, random_state=0).fit(patches.features, patches.image_ids)
    imgs = patches.features.reshape(150, 12, 16)
    out = est.transform(imgs[:4])
    assert out.shape == (4, 12 * est.n_clusters_)
    assert set(np.unique(out)) <= {0, 1}
