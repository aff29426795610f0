"""Desk-scale retrieval pipeline shared by the CLI, scripts and acceptance tests.

Seeds are derived per item with ``SeedSequence([seed, stream, model, view])``
so results do not depend on processing order or thread count.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .degrade import degrade
from .descriptor import DescriptorNet, TrainSample, describe_many
from .errors import EvaluationError
from .metrics import ShapeCache, random_baseline, top_k_accuracy
from .procedural import desk_spec, gen_procedural_dataset
from .render import Camera, render_location_field, sample_pose
from .retrieval import (CenterBank, build_center_bank, centers_for_unseen,
                        retrieve_descriptor, retrieve_multiview_descriptor, view_descriptors)
from .training import train

log = logging.getLogger(__name__)

# seed streams
TRAIN_VIEWS, QUERY_VIEWS, TRAIN_DEGRADE, QUERY_DEGRADE, MULTIVIEW, UNSEEN_QUERY = range(6)
UNSEEN_DATA = 1000


def item_seed(*key) -> int:
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1)[0])


def _map(fn, items, threads=1):
    items = list(items)
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as ex:
        return list(ex.map(fn, items))


def render_views(meshes, n_views, cam: Camera, cfg: RunConfig, seed, stream, threads=1):
    """``n_views`` fields per mesh, model-major order, camera framing each mesh's box."""
    jobs = [(k, v) for k in range(len(meshes)) for v in range(n_views)]

    def one(job):
        k, v = job
        m = meshes[k]
        pose = sample_pose(cfg.pose, item_seed(seed, stream, k, v), cam, m.bounds())
        return render_location_field(m, pose, cam)

    return _map(one, jobs, threads)


def degrade_views(lfs, cfg: RunConfig, seed, stream, views_per_model, threads=1):
    def one(i):
        return degrade(lfs[i], cfg.degrade,
                       item_seed(seed, stream, i // views_per_model, i % views_per_model))
    return _map(one, range(len(lfs)), threads)


def training_set(rendered, degraded, labels):
    samples = [TrainSample(lf, y) for lf, y in zip(rendered, labels)]
    samples += [TrainSample(p, y, lf) for p, lf, y in zip(degraded, rendered, labels)]
    return samples


def evaluation_report(rows, cache: ShapeCache, baseline=None) -> dict:
    """Report over (query_id, RetrievalResult, gt) rows; the bank ids must be in ``cache``."""
    if not rows:
        raise EvaluationError("no queries to evaluate")
    pairs = [(res, gt) for _, res, gt in rows]
    for res, gt in pairs:
        if gt is None:
            raise EvaluationError("query without a ground-truth model id")
        for mid in (gt, res.model_ids[0]):
            if mid not in cache.meshes:
                raise EvaluationError(f"model {mid!r} not found among the evaluation meshes")
    k10 = min(10, min(len(r.model_ids) for r, _ in pairs))
    d_h = [cache.d_hau(gt, res.model_ids[0]) for res, gt in pairs]
    d_i = [cache.d_iou(gt, res.model_ids[0]) for res, gt in pairs]
    if baseline is None:
        baseline = random_baseline([cache.meshes[m] for m in cache.order],
                                   cache.samples_per_mesh, cache.R, cache.seed, cache)
    return {
        "acc_top1": top_k_accuracy(pairs, 1),
        "acc_top10": top_k_accuracy(pairs, k10),
        "d_hau_mean": math.fsum(d_h) / len(d_h),
        "d_iou_mean": math.fsum(d_i) / len(d_i),
        "baseline": {"d_hau": baseline.d_hau, "d_iou": baseline.d_iou},
        "n_queries": len(pairs),
    }


def _query_id(lf, i):
    return f"{lf.model_id}/{lf.domain}/{i:05d}"


def retrieve_all(net, lfs, bank: CenterBank):
    """Ranked results for every field (descriptors computed in batches)."""
    F = describe_many(net, lfs)
    return [(_query_id(lf, i), retrieve_descriptor(f, bank), lf.model_id)
            for i, (lf, f) in enumerate(zip(lfs, F))]


def nearest_center_accuracy(net, lfs, bank: CenterBank) -> float:
    """Fraction of fields whose own model's center is the closest bank entry."""
    rows = retrieve_all(net, lfs, bank)
    return sum(res.model_ids[0] == gt for _, res, gt in rows) / len(rows)


@dataclass
class SeenRun:
    net: DescriptorNet
    bank: CenterBank
    meshes: list
    cache: ShapeCache
    pred_rows: list = field(default_factory=list)
    clean_queries: list = field(default_factory=list)
    pred_queries: list = field(default_factory=list)
    report: dict = field(default_factory=dict)
    clean_own_center: float = 0.0
    train_seconds: float = 0.0


def run_seen(cfg: RunConfig, seed=0, image_size=None, threads=1, evaluate=True) -> SeenRun:
    """Train on rendered+degraded views of a procedural database and query held-out views."""
    ex = cfg.experiment
    size = image_size or ex.image_size
    meshes = gen_procedural_dataset(desk_spec(ex.n_models, ex.separation), seed)
    ids = [m.model_id for m in meshes]
    cam = Camera.default(size)
    labels = np.repeat(np.arange(len(meshes)), ex.views)
    rendered = render_views(meshes, ex.views, cam, cfg, seed, TRAIN_VIEWS, threads)
    degraded = degrade_views(rendered, cfg, seed, TRAIN_DEGRADE, ex.views, threads)
    t0 = time.perf_counter()
    net = train(training_set(rendered, degraded, labels), cfg.train, seed=seed,
                net_cfg=cfg.net.net_config(len(meshes), size), loss_cfg=cfg.loss)
    secs = time.perf_counter() - t0
    bank = build_center_bank(net, ids)
    clean = render_views(meshes, ex.queries, cam, cfg, seed, QUERY_VIEWS, threads)
    pred = degrade_views(clean, cfg, seed, QUERY_DEGRADE, ex.queries, threads)
    cache = ShapeCache(meshes, ex.eval_samples, ex.eval_resolution)
    run = SeenRun(net, bank, meshes, cache, retrieve_all(net, pred, bank), clean, pred,
                  train_seconds=secs)
    run.clean_own_center = nearest_center_accuracy(net, clean, bank)
    if evaluate:
        run.report = evaluation_report(run.pred_rows, cache)
    log.info("seen run: %s", run.report)
    return run


def multiview_bank(net, meshes, n_views, cam, cfg: RunConfig, seed) -> dict:
    """Per-model (n_views, D) rendered-view descriptors for the multi-view baseline."""
    return {m.model_id: view_descriptors(net, m, n_views, item_seed(seed, MULTIVIEW, k),
                                         cam, cfg.pose)
            for k, m in enumerate(meshes)}


def multiview_rows(net, lfs, view_bank: dict):
    F = describe_many(net, lfs)
    return [(_query_id(lf, i), retrieve_multiview_descriptor(f, view_bank, "min"), lf.model_id)
            for i, (lf, f) in enumerate(zip(lfs, F))]


@dataclass
class UnseenRun:
    bank: CenterBank
    meshes: list
    rows: list
    report: dict


def run_unseen(net: DescriptorNet, cfg: RunConfig, seed=0, threads=1) -> UnseenRun:
    """Embed held-out models by view averaging and retrieve their degraded views."""
    ex = cfg.experiment
    meshes = gen_procedural_dataset(desk_spec(ex.unseen_models, ex.separation), seed + UNSEEN_DATA)
    for m in meshes:
        m.model_id = f"unseen_{m.model_id}"
    cam = Camera.default(net.cfg.input_size)
    bank = centers_for_unseen(net, meshes, ex.unseen_views, item_seed(seed, UNSEEN_DATA),
                              cam, cfg.pose)
    clean = render_views(meshes, ex.queries, cam, cfg, seed, UNSEEN_QUERY, threads)
    pred = degrade_views(clean, cfg, seed, QUERY_DEGRADE, ex.queries, threads)
    rows = retrieve_all(net, pred, bank)
    cache = ShapeCache(meshes, ex.eval_samples, ex.eval_resolution)
    return UnseenRun(bank, meshes, rows, evaluation_report(rows, cache))


__all__ = ["item_seed", "render_views", "degrade_views", "training_set", "evaluation_report",
           "retrieve_all", "nearest_center_accuracy", "run_seen", "run_unseen", "multiview_bank",
           "multiview_rows", "SeenRun", "UnseenRun"]
