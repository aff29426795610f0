"""Center banks and ranked retrieval by Euclidean descriptor distance."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .descriptor import DescriptorNet, describe, describe_many
from .errors import ArgumentError
from .mesh import Mesh
from .render import Camera, PoseConfig, render_location_field, sample_pose

TRAINED = "trained"
AVERAGED = "averaged_views"


@dataclass
class CenterBank:
    model_ids: list
    centers: np.ndarray
    provenance: str = TRAINED
    views: int = 0  # views averaged per center when provenance is averaged_views

    def __post_init__(self):
        self.model_ids = [str(m) for m in self.model_ids]
        self.centers = np.asarray(self.centers)
        if self.centers.ndim != 2 or len(self.centers) != len(self.model_ids):
            raise ArgumentError("center matrix rows must match the id list")
        if len(set(self.model_ids)) != len(self.model_ids):
            raise ArgumentError("model ids in a bank must be unique")
        if not np.all(np.isfinite(self.centers)):
            raise ArgumentError("bank centers must be finite")

    @property
    def K(self) -> int:
        return len(self.model_ids)

    @property
    def D(self) -> int:
        return self.centers.shape[1]

    def append(self, model_id, center) -> "CenterBank":
        return CenterBank(self.model_ids + [model_id],
                          np.vstack([self.centers, np.asarray(center, self.centers.dtype)]),
                          self.provenance, self.views)


@dataclass
class RetrievalResult:
    model_ids: list
    distances: list
    comparison_count: int

    def to_json(self, query_id, gt_model_id=None) -> dict:
        d = {"query_id": query_id,
             "ranked": [{"model_id": m, "distance": float(x)}
                        for m, x in zip(self.model_ids, self.distances)]}
        if gt_model_id is not None:
            d["gt_model_id"] = gt_model_id
        return d

    @classmethod
    def from_json(cls, d) -> "RetrievalResult":
        ranked = d["ranked"]
        return cls([r["model_id"] for r in ranked], [float(r["distance"]) for r in ranked],
                   len(ranked))


def build_center_bank(net: DescriptorNet, ids) -> CenterBank:
    ids = list(ids)
    if len(ids) != net.K:
        raise ArgumentError(f"{len(ids)} ids for {net.K} trained centers")
    return CenterBank(ids, net.params["centers"].copy(), TRAINED)


def mean_descriptor(rows: np.ndarray) -> np.ndarray:
    """Column means with compensated (exactly rounded) summation."""
    rows = np.asarray(rows, dtype=np.float64)
    n = len(rows)
    return np.array([math.fsum(rows[:, j].tolist()) / n for j in range(rows.shape[1])])


def view_descriptors(net: DescriptorNet, mesh: Mesh, views: int, seed: int,
                     cam: Camera | None = None, pose_cfg: PoseConfig | None = None) -> np.ndarray:
    """Descriptors of ``views`` rendered fields of one mesh under seeded random poses.

    Poses frame the mesh's own bounding box, as training views do.
    """
    cam = cam or Camera.default(net.cfg.input_size)
    pose_cfg = pose_cfg or PoseConfig()
    seeds = np.random.SeedSequence(seed).generate_state(views)
    box = mesh.bounds()
    lfs = [render_location_field(mesh, sample_pose(pose_cfg, int(s), cam, box), cam)
           for s in seeds]
    return describe_many(net, lfs)


def centers_for_unseen(net: DescriptorNet, meshes, views: int = 100, seed: int = 0,
                       cam: Camera | None = None, pose_cfg: PoseConfig | None = None,
                       pool=None) -> CenterBank:
    """Bank of per-mesh centers, each the mean of ``views`` rendered-view descriptors."""
    meshes = list(meshes)
    if not meshes:
        raise ArgumentError("no meshes to build centers from")
    if views < 1:
        raise ArgumentError("need at least one view per mesh")

    def one(i):
        sub = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        return mean_descriptor(view_descriptors(net, meshes[i], views, sub, cam, pose_cfg))

    idx = range(len(meshes))
    rows = list(pool.map(one, idx)) if pool is not None else [one(i) for i in idx]
    return CenterBank([m.model_id for m in meshes], np.array(rows).astype(net.dtype),
                      AVERAGED, views)


def _euclid(f, M):
    diff = M.astype(np.float64) - np.asarray(f, dtype=np.float64)[None, :]
    return np.sqrt((diff * diff).sum(axis=1))


def rank(ids, dist, k=None, comparisons=None) -> RetrievalResult:
    """Ascending distance; ties broken by model id."""
    order = sorted(range(len(ids)), key=lambda i: (dist[i], ids[i]))
    if k is not None:
        order = order[:k]
    return RetrievalResult([ids[i] for i in order], [float(dist[i]) for i in order],
                           len(ids) if comparisons is None else comparisons)


def retrieve_descriptor(f, bank: CenterBank, k=None) -> RetrievalResult:
    if k is not None and k > bank.K:
        raise ArgumentError(f"k={k} exceeds bank size {bank.K}")
    if np.shape(f)[-1] != bank.D:
        raise ArgumentError(f"descriptor dimension {np.shape(f)[-1]} != bank dimension {bank.D}")
    return rank(bank.model_ids, _euclid(f, bank.centers), k)


def retrieve(net: DescriptorNet, lf, bank: CenterBank, k=None) -> RetrievalResult:
    """Rank every bank model for one field; predicted fields are domain-mapped first."""
    return retrieve_descriptor(describe(net, lf), bank, k)


def retrieve_multiview_descriptor(f, view_bank: dict, aggregate="min") -> RetrievalResult:
    if not view_bank:
        raise ArgumentError("empty view bank")
    ids, scores, total = [], [], 0
    for mid, views in view_bank.items():
        views = np.asarray(views)
        if views.ndim != 2 or len(views) == 0:
            raise ArgumentError(f"model {mid!r} has no view descriptors")
        d = _euclid(f, views)
        total += len(views)
        ids.append(mid)
        scores.append(d.min() if aggregate == "min" else math.fsum(d.tolist()) / len(d))
    return rank(ids, scores, comparisons=total)


def retrieve_multiview(net: DescriptorNet, lf, view_bank: dict, aggregate="min") -> RetrievalResult:
    """Score each model by its closest (or mean) view descriptor.

    ``view_bank`` maps model id to an (n_views, D) array.
    """
    if aggregate not in ("min", "mean"):
        raise ArgumentError(f"unknown aggregation {aggregate!r}")
    return retrieve_multiview_descriptor(describe(net, lf), view_bank, aggregate)
