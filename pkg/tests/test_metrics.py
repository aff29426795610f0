import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lfd.errors import ArgumentError, EvaluationError
from lfd.mesh import Mesh
from lfd.metrics import (ShapeCache, VoxelGrid, hausdorff_mod, iou3d, random_baseline,
                         top_k_accuracy, voxelize)
from lfd.procedural import box, prism
from lfd.retrieval import RetrievalResult

from oracles import brute_hausdorff


def test_hausdorff_examples():
    X = np.zeros((1, 3))
    assert hausdorff_mod(X, X) == 0.0
    assert hausdorff_mod(X, np.array([[1.0, 0, 0]])) == 1.0
    with pytest.raises(ArgumentError):
        hausdorff_mod(np.zeros((0, 3)), X)


def test_hausdorff_matches_brute_force_exactly():
    rng = np.random.default_rng(7)
    for _ in range(100):
        x = rng.uniform(-0.5, 0.5, (int(rng.integers(1, 201)), 3))
        y = rng.uniform(-0.5, 0.5, (int(rng.integers(1, 201)), 3))
        assert hausdorff_mod(x, y) == brute_hausdorff(x, y)


def test_hausdorff_exact_with_ties():
    # lattice points have many equidistant neighbours
    g = np.stack(np.meshgrid(*[np.linspace(-0.5, 0.5, 5)] * 3), -1).reshape(-1, 3)
    y = g + np.array([0.125, 0.0, 0.0])
    assert hausdorff_mod(g, y) == brute_hausdorff(g, y)


@given(st.integers(0, 10**6), st.integers(1, 60), st.integers(1, 60))
def test_hausdorff_symmetric_and_bounded(seed, n, m):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-0.5, 0.5, (n, 3)), rng.uniform(-0.5, 0.5, (m, 3))
    d = hausdorff_mod(x, y)
    assert d == hausdorff_mod(y, x)
    assert 0.0 <= d <= math.sqrt(3)


def test_antipodal_corners_reach_sqrt3():
    d = hausdorff_mod(np.full((1, 3), -0.5), np.full((1, 3), 0.5))
    assert math.isclose(d, math.sqrt(3))


# --- voxels -------------------------------------------------------------------

def test_cube_cell_count():
    n = voxelize(box((-0.25,) * 3, (0.25,) * 3), 32).count
    assert abs(n - 16 ** 3) <= 18 ** 3 - 14 ** 3


def test_empty_mesh_grid():
    g = voxelize(Mesh(np.zeros((0, 3)), np.zeros((0, 3), int)), 16)
    assert g.count == 0 and g.watertight


def test_open_mesh_is_flagged_surface_only():
    b = box((-0.25,) * 3, (0.25,) * 3)
    open_box = Mesh(b.vertices, b.triangles[:-2])
    g = voxelize(open_box, 32)
    assert not g.watertight
    assert g.count < voxelize(b, 32).count


def test_half_overlap_boxes_iou():
    a = voxelize(box((-0.25, -0.25, -0.25), (0.25, 0.25, 0.25)), 64)
    b = voxelize(box((0.0, -0.25, -0.25), (0.5, 0.25, 0.25)), 64)
    assert abs(iou3d(a, b) - 1 / 3) <= 0.02


def test_iou_examples():
    a = voxelize(box((-0.4,) * 3, (-0.1,) * 3), 32)
    b = voxelize(box((0.1,) * 3, (0.4,) * 3), 32)
    assert iou3d(a, a) == 1.0
    assert iou3d(a, b) == 0.0
    e = VoxelGrid(32, np.zeros((32,) * 3, bool))
    assert iou3d(e, e) == 1.0
    with pytest.raises(ArgumentError):
        iou3d(a, voxelize(box((-0.4,) * 3, (-0.1,) * 3), 16))


def test_doubling_resolution_scales_count():
    p = prism((0, 0, 0), 0.3, 0.8, sides=16)
    n32, n64 = voxelize(p, 32).count, voxelize(p, 64).count
    assert 4 * n32 <= n64 <= 8 * n32


def test_voxelize_deterministic(desk6):
    a, b = voxelize(desk6[0], 32), voxelize(desk6[0], 32)
    assert a.bits() == b.bits()


@given(st.integers(0, 10**6))
def test_iou_bounds(seed):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(-0.5, 0.1, (2, 3))
    hi = lo + rng.uniform(0.05, 0.4, (2, 3))
    a, b = voxelize(box(lo[0], hi[0]), 16), voxelize(box(lo[1], hi[1]), 16)
    v = iou3d(a, b)
    assert 0.0 <= v <= 1.0 and iou3d(a, a) == 1.0 and v == iou3d(b, a)


# --- top-k and baseline -------------------------------------------------------

def _result(ids):
    return RetrievalResult(list(ids), list(range(len(ids))), len(ids))


def test_top_k_examples():
    r = [(_result("abc"), "c"), (_result("cab"), "c")]
    assert top_k_accuracy(r, 3) == 1.0
    assert top_k_accuracy(r[1:], 1) == 1.0
    assert top_k_accuracy(r, 1) == 0.5
    with pytest.raises(EvaluationError):
        top_k_accuracy([(_result("ab"), "z")], 1)


def test_top_k_matches_recount_over_json():
    rng = np.random.default_rng(0)
    ids = [f"m{i:02d}" for i in range(20)]
    lines = []
    for q in range(200):
        order = list(rng.permutation(ids))
        res = RetrievalResult(order, sorted(rng.uniform(0, 1, 20)), 20)
        lines.append(json.dumps(res.to_json(f"q{q}", str(rng.choice(ids)))))
    rows = [json.loads(s) for s in lines]
    for k in (1, 5, 10):
        recount = sum(any(r["model_id"] == d["gt_model_id"] for r in d["ranked"][:k])
                      for d in rows) / len(rows)
        got = top_k_accuracy([(RetrievalResult.from_json(d), d["gt_model_id"]) for d in rows], k)
        assert got == recount


def test_baseline_identical_meshes():
    a = box((-0.3,) * 3, (0.3,) * 3)
    b = Mesh(a.vertices.copy(), a.triangles.copy(), "b")
    a.model_id = "a"
    d, iou = random_baseline([a, b], 500, 32)
    assert d == 0.0 and iou == 1.0


def test_baseline_matches_naive_all_pairs(desk6, caplog):
    from lfd.mesh import sample_surface
    caplog.set_level("INFO")
    got = random_baseline(desk6, 300, 32, seed=5)
    pts = [sample_surface(m, 300, 5).points for m in desk6]
    vox = [voxelize(m, 32) for m in desk6]
    d, iou = [], []
    for i in range(len(desk6)):
        for j in range(i + 1, len(desk6)):
            d.append(brute_hausdorff(pts[i], pts[j]))
            iou.append(iou3d(vox[i], vox[j]))
    assert got.d_hau == math.fsum(d) / len(d)
    assert got.d_iou == math.fsum(iou) / len(iou)
    assert "evaluated 15 pairs" in caplog.text


def test_baseline_needs_two():
    with pytest.raises(ArgumentError):
        random_baseline([box((-0.1,) * 3, (0.1,) * 3)], 10, 8)


def test_cache_pair_is_symmetric(desk6):
    c = ShapeCache(desk6[:2], 200, 16)
    a, b = desk6[0].model_id, desk6[1].model_id
    assert c.d_hau(a, b) == c.d_hau(b, a) == hausdorff_mod(c.points(b), c.points(a))
