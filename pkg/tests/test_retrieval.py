import numpy as np
import pytest
from hypothesis import given, strategies as st

from lfd.descriptor import DescriptorNet, LossConfig, NetConfig, describe, forward
from lfd.errors import ArgumentError, ShapeError
from lfd.render import Camera, PoseConfig, empty_field, render_location_field, sample_pose
from lfd.retrieval import (AVERAGED, TRAINED, CenterBank, build_center_bank, centers_for_unseen,
                           mean_descriptor, retrieve, retrieve_descriptor, retrieve_multiview,
                           retrieve_multiview_descriptor, view_descriptors)

CAM = Camera.default(12)


@pytest.fixture(scope="module")
def net():
    cfg = NetConfig(n_models=4, input_size=12, pooled=6, hidden=(16,), dim=8, dtype="float64")
    return DescriptorNet.init(cfg, LossConfig(), 0)


def brute_rank(f, ids, C):
    d = [float(np.sqrt(((np.asarray(c, float) - f) ** 2).sum())) for c in C]
    return sorted(zip(d, ids))


def test_bank_copies_centers(net):
    b = build_center_bank(net, list("abcd"))
    assert np.array_equal(b.centers, net.params["centers"]) and b.provenance == TRAINED
    b.centers[0] += 1
    assert not np.array_equal(b.centers, net.params["centers"])
    with pytest.raises(ArgumentError):
        build_center_bank(net, list("aacd"))
    with pytest.raises(ArgumentError):
        build_center_bank(net, list("abc"))


def test_single_model_bank():
    b = CenterBank(["only"], np.ones((1, 3)))
    r = retrieve_descriptor(np.zeros(3), b, 1)
    assert r.model_ids == ["only"] and r.comparison_count == 1


def test_query_equal_to_center_ranks_first():
    C = np.random.default_rng(0).normal(size=(6, 5))
    r = retrieve_descriptor(C[3], CenterBank(list("abcdef"), C))
    assert r.model_ids[0] == "d" and r.distances[0] == 0.0


def test_k_and_shape_errors(net):
    b = build_center_bank(net, list("abcd"))
    with pytest.raises(ArgumentError):
        retrieve_descriptor(np.zeros(8), b, 5)
    with pytest.raises(ShapeError):
        retrieve(net, empty_field(Camera.default(16)), b)


@given(st.integers(1, 50), st.integers(1, 6), st.integers(0, 10**6))
def test_retrieve_matches_brute_sort(K, D, seed):
    rng = np.random.default_rng(seed)
    C = np.round(rng.normal(size=(K, D)), 1)  # rounding creates ties
    ids = [f"m{i:02d}" for i in rng.permutation(K)]
    f = np.round(rng.normal(size=D), 1)
    r = retrieve_descriptor(f, CenterBank(ids, C))
    want = brute_rank(f, ids, C)
    assert r.model_ids == [m for _, m in want]
    assert r.distances == [d for d, _ in want]
    assert all(a <= b for a, b in zip(r.distances, r.distances[1:]))
    assert r.comparison_count == K


@given(st.integers(2, 30), st.integers(0, 10**6))
def test_rank_invariant_to_row_permutation_and_append(K, seed):
    rng = np.random.default_rng(seed)
    C = np.round(rng.normal(size=(K, 3)), 1)
    ids = [f"m{i:02d}" for i in range(K)]
    f = rng.normal(size=3)
    base = retrieve_descriptor(f, CenterBank(ids, C)).model_ids
    p = rng.permutation(K)
    assert retrieve_descriptor(f, CenterBank([ids[i] for i in p], C[p])).model_ids == base
    grown = retrieve_descriptor(f, CenterBank(ids, C).append("zz", rng.normal(size=3))).model_ids
    assert [m for m in grown if m != "zz"] == base


def test_multiview_single_view_reduces_to_bank():
    rng = np.random.default_rng(1)
    C = rng.normal(size=(7, 4))
    ids = [f"m{i}" for i in range(7)]
    f = rng.normal(size=4)
    mv = retrieve_multiview_descriptor(f, {m: C[i:i + 1] for i, m in enumerate(ids)})
    one = retrieve_descriptor(f, CenterBank(ids, C))
    assert mv.model_ids == one.model_ids and mv.distances == one.distances


@given(st.integers(1, 10), st.integers(1, 12), st.integers(0, 10**6))
def test_multiview_matches_min_oracle_and_counts(K, V, seed):
    rng = np.random.default_rng(seed)
    bank = {f"m{i}": rng.normal(size=(V, 3)) for i in range(K)}
    f = rng.normal(size=3)
    r = retrieve_multiview_descriptor(f, bank)
    want = sorted((min(float(np.sqrt(((v - f) ** 2).sum())) for v in views), m)
                  for m, views in bank.items())
    assert r.model_ids == [m for _, m in want] and r.distances == [d for d, _ in want]
    assert r.comparison_count == K * V


def test_multiview_errors(net):
    with pytest.raises(ArgumentError):
        retrieve_multiview_descriptor(np.zeros(3), {})
    with pytest.raises(ArgumentError):
        retrieve_multiview_descriptor(np.zeros(3), {"a": np.zeros((0, 3))})
    with pytest.raises(ArgumentError):
        retrieve_multiview(net, empty_field(CAM), {"a": np.zeros((1, 8))}, aggregate="median")


def test_multiview_mean_rule():
    f = np.zeros(1)
    r = retrieve_multiview_descriptor(f, {"a": np.array([[0.0], [10.0]]), "b": np.array([[2.0]])},
                                      "mean")
    assert r.model_ids == ["b", "a"] and r.distances == [2.0, 5.0]


def test_unseen_centers(net, desk6):
    one = centers_for_unseen(net, desk6[:2], views=1, seed=4, cam=CAM)
    assert one.provenance == AVERAGED and one.views == 1
    for k in range(2):
        v = view_descriptors(net, desk6[k], 1, int(np.random.SeedSequence([4, k]).generate_state(1)[0]),
                             CAM)
        np.testing.assert_array_equal(one.centers[k], v[0])
    with pytest.raises(ArgumentError):
        centers_for_unseen(net, [], 3)


def test_repeated_view_center_equals_descriptor(net, desk6):
    lf = render_location_field(desk6[0], sample_pose(PoseConfig(), 2, CAM), CAM)
    f = describe(net, lf)
    np.testing.assert_allclose(mean_descriptor(np.tile(f, (100, 1))), f, rtol=0, atol=1e-15)


@given(st.integers(0, 10**6))
def test_mean_is_order_independent(seed):
    rows = np.random.default_rng(seed).normal(0, 100, (100, 5))
    a = mean_descriptor(rows)
    b = mean_descriptor(rows[::-1])
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)
    np.testing.assert_allclose(a, rows.mean(axis=0), rtol=0, atol=1e-9)


def test_retrieve_maps_predicted_queries(net, desk6):
    from lfd.degrade import DegradeConfig, degrade
    n = net.copy()
    n.params["map_W2"] = np.random.default_rng(0).normal(size=(8, 8))
    lf = render_location_field(desk6[0], sample_pose(PoseConfig(), 2, CAM), CAM)
    p = degrade(lf, DegradeConfig.identity(), 0)
    b = build_center_bank(n, list("abcd"))
    raw = retrieve_descriptor(forward(n, p)[0], b)
    assert retrieve(n, lf, b).distances == raw.distances
    assert retrieve(n, p, b).distances != raw.distances
