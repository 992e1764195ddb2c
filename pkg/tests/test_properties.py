"""Randomized invariants of the CEC building blocks.

Every property runs at least ``EXAMPLES`` generated cases. ``CALLS`` counts the
cases actually executed so the acceptance run can report them.
"""

from collections import Counter

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from cecnet.element_connection import cec, connection_weights, element_connect, relation_map
from cecnet.losses import class_probabilities, metric_predict
from cecnet.patch_cluster import ClusterParams, cluster_affinity, patch_cluster
from cecnet.tensor import Tensor, l2_normalize_rows, softmax

EXAMPLES = 120
CALLS: Counter = Counter()

property_settings = settings(max_examples=EXAMPLES, deadline=None, derandomize=True,
                             database=None)

modes = st.sampled_from(["M", "C", "G", "T"])
metric_modes = st.sampled_from([None, "M", "C", "G", "T"])
dims = st.integers(1, 8)
channels = st.integers(1, 16)
seeds = st.integers(0, 2**32 - 1)


def T(x):
    return Tensor(np.asarray(x, dtype=np.float64))


def _setup(seed, m, n, c, mode):
    rng = np.random.default_rng(seed)
    Q, P = rng.normal(size=(m, c)), rng.normal(size=(n, c))
    params = ClusterParams.create(mode, c, rng, temperature=float(rng.uniform(0.3, 3.0)),
                                  activation=str(rng.choice(["relu", "sigmoid"])))
    return rng, Q, P, params


@property_settings
@given(seeds, dims, dims, channels, modes)
def test_affinity_rows_sum_to_one(seed, m, n, c, mode):
    CALLS["affinity_rows"] += 1
    _, Q, P, params = _setup(seed, m, n, c, mode)
    A = cluster_affinity(T(Q), T(P), params).data
    assert A.shape == (m, n)
    assert np.all(A >= 0)
    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-12)


@property_settings
@given(seeds, dims, dims, channels, modes)
def test_relation_map_within_unit_interval(seed, m, n, c, mode):
    CALLS["relation_bounds"] += 1
    _, Q, P, params = _setup(seed, m, n, c, mode)
    R = relation_map(T(Q), patch_cluster(T(Q), T(P), params)).data
    assert R.shape == (m,)
    assert np.all(np.abs(R) <= 1.0 + 1e-12)


@property_settings
@given(seeds, dims, dims, channels, modes)
def test_connection_scale_between_one_and_two(seed, m, n, c, mode):
    CALLS["connection_scale"] += 1
    _, Q, P, params = _setup(seed, m, n, c, mode)
    R = relation_map(T(Q), patch_cluster(T(Q), T(P), params))
    k = connection_weights(R).data
    assert np.all(k > 1.0) and np.all(k <= 2.0)
    if m > 1:
        assert np.all(k < 2.0)
    np.testing.assert_allclose((k - 1.0).sum(), 1.0, atol=1e-12)
    out = element_connect(T(Q), patch_cluster(T(Q), T(P), params)).data
    np.testing.assert_allclose(out, k[:, None] * Q, atol=1e-12)


@property_settings
@given(seeds, dims, dims, channels, modes)
def test_source_permutation_invariance(seed, m, n, c, mode):
    CALLS["source_permutation"] += 1
    rng, Q, P, params = _setup(seed, m, n, c, mode)
    perm = rng.permutation(n)
    base = cec(T(Q), T(P), params).data
    shuffled = cec(T(Q), T(P[perm]), params).data
    np.testing.assert_allclose(shuffled, base, atol=1e-10)


@property_settings
@given(seeds, dims, dims, channels, modes)
def test_reference_equivariance(seed, m, n, c, mode):
    CALLS["reference_equivariance"] += 1
    rng, Q, P, params = _setup(seed, m, n, c, mode)
    perm = rng.permutation(m)
    clustered = patch_cluster(T(Q), T(P), params).data
    np.testing.assert_allclose(patch_cluster(T(Q[perm]), T(P), params).data, clustered[perm],
                               atol=1e-10)
    connected = cec(T(Q), T(P), params).data
    np.testing.assert_allclose(cec(T(Q[perm]), T(P), params).data, connected[perm], atol=1e-10)


@property_settings
@given(seeds, dims, dims, channels, st.floats(0.01, 100.0), st.floats(0.01, 100.0))
def test_cosine_mode_scale_invariance(seed, m, n, c, a, b):
    CALLS["cosine_scale"] += 1
    _, Q, P, params = _setup(seed, m, n, c, "C")
    A = cluster_affinity(T(Q), T(P), params).data
    np.testing.assert_allclose(cluster_affinity(T(a * Q), T(b * P), params).data, A, atol=1e-10)
    R = relation_map(T(Q), patch_cluster(T(Q), T(P), params)).data
    scaled = relation_map(T(a * Q), patch_cluster(T(a * Q), T(b * P), params)).data
    np.testing.assert_allclose(scaled, R, atol=1e-10)


@property_settings
@given(seeds, st.integers(2, 6), dims, channels, metric_modes)
def test_metric_probabilities_normalized(seed, classes, m, c, mode):
    CALLS["metric_normalization"] += 1
    rng = np.random.default_rng(seed)
    Qbars = rng.normal(size=(classes, m, c))
    Pbars = rng.normal(size=(classes, m, c))
    params = None if mode is None else ClusterParams.create(mode, c, rng)
    probs = metric_predict(T(Qbars), T(Pbars), params).data
    assert probs.shape == (m, classes)
    assert np.all(probs > 0)
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)


@property_settings
@given(seeds, st.integers(2, 6), dims, st.floats(-50.0, 50.0))
def test_argmax_shift_invariance(seed, classes, m, shift):
    CALLS["argmax_shift"] += 1
    rng = np.random.default_rng(seed)
    R = rng.uniform(-1, 1, size=(classes, m))
    base = class_probabilities(T(R)).data
    moved = class_probabilities(T(R + shift)).data
    np.testing.assert_allclose(moved, base, atol=1e-12)
    np.testing.assert_array_equal(moved.mean(axis=0).argmax(), base.mean(axis=0).argmax())


@property_settings
@given(seeds, dims, channels, st.floats(-20.0, 20.0))
def test_softmax_shift_and_l2_idempotence(seed, m, c, shift):
    CALLS["softmax_l2"] += 1
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(m, c))
    np.testing.assert_allclose(softmax(T(x + shift), axis=-1).data, softmax(T(x), axis=-1).data,
                               atol=1e-12)
    once = l2_normalize_rows(T(x)).data
    np.testing.assert_allclose(l2_normalize_rows(T(once)).data, once, atol=1e-12)


@property_settings
@given(seeds, dims, dims, channels, st.sampled_from(["M", "C"]))
def test_fixed_modes_stay_in_convex_hull(seed, m, n, c, mode):
    CALLS["convex_hull"] += 1
    _, Q, P, params = _setup(seed, m, n, c, mode)
    clustered = patch_cluster(T(Q), T(P), params).data
    assert np.all(clustered <= P.max(axis=0) + 1e-12)
    assert np.all(clustered >= P.min(axis=0) - 1e-12)


@property_settings
@given(seeds, dims, dims, channels, modes)
def test_connection_preserves_direction(seed, m, n, c, mode):
    CALLS["direction"] += 1
    _, Q, P, params = _setup(seed, m, n, c, mode)
    out = cec(T(Q), T(P), params).data
    norms = np.linalg.norm(Q, axis=1)
    keep = norms > 1e-9
    cos = (out * Q).sum(axis=1)[keep] / (np.linalg.norm(out, axis=1)[keep] * norms[keep])
    np.testing.assert_allclose(cos, 1.0, atol=1e-12)


INVARIANTS = {
    "affinity_rows": test_affinity_rows_sum_to_one,
    "relation_bounds": test_relation_map_within_unit_interval,
    "connection_scale": test_connection_scale_between_one_and_two,
    "source_permutation": test_source_permutation_invariance,
    "reference_equivariance": test_reference_equivariance,
    "cosine_scale": test_cosine_mode_scale_invariance,
    "metric_normalization": test_metric_probabilities_normalized,
    "argmax_shift": test_argmax_shift_invariance,
}
