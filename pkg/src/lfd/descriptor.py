"""Location field descriptors: embedding network, metric-learning losses, gradients.

The embedding is a ReLU multilayer perceptron over the average-pooled,
mask-multiplied coordinate grid. On top of it sit a linear classifier (for the
softmax loss), a table of trainable center descriptors (one row per model) and
a residual domain mapper ``f + W2 relu(W1 f)`` that moves descriptors of
predicted fields toward the rendered domain.

All gradients are written out by hand; ``loss_and_grad`` is the single place
that defines the training objective.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError, ShapeError
from .render import PREDICTED, RENDERED, LocationField

LOSS_TERMS = ("softmax", "center", "tcl", "fm")


@dataclass
class NetConfig:
    n_models: int
    input_size: int = 56
    pooled: int = 14
    hidden: tuple = (512, 256)
    dim: int = 270
    dtype: str = "float32"
    # "mlp": fully connected on the flattened grid; "conv": 3x3 convolutions,
    # global average pooling, then the fully connected ``hidden`` layers
    arch: str = "mlp"
    conv: tuple = ((32, 1), (64, 2), (64, 1))  # (channels, stride) per conv layer

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.conv = tuple((int(c), int(s)) for c, s in self.conv)
        if self.arch not in ("mlp", "conv"):
            raise ConfigurationError(f"unknown architecture {self.arch!r}")
        if self.input_size % self.pooled:
            raise ConfigurationError(
                f"input size {self.input_size} is not a multiple of pooled size {self.pooled}")
        if self.n_models < 1 or self.dim < 1:
            raise ConfigurationError("need at least one model and one descriptor dimension")

    @property
    def pool(self) -> int:
        return self.input_size // self.pooled

    @property
    def input_dim(self) -> int:
        return 3 * self.pooled * self.pooled


@dataclass
class LossConfig:
    alpha: float = 0.01
    beta: float = 0.1
    delta: float = 0.01
    margin: float = 1.0
    huber_t: float = 1.0
    # divide every batch-summed term by its row count
    mean_normalize: bool = False

    def __post_init__(self):
        if not self.huber_t > 0:
            raise ConfigurationError("Huber threshold must be positive")

    def weights(self) -> dict:
        return {"softmax": 1.0, "center": self.alpha, "tcl": self.beta, "fm": self.delta}


class DescriptorNet:
    """Parameter container; every trainable array lives in ``self.params``."""

    def __init__(self, cfg: NetConfig, loss: LossConfig | None = None, params=None):
        self.cfg = cfg
        self.loss = loss or LossConfig()
        self.params = params if params is not None else {}

    @property
    def dtype(self):
        return np.dtype(self.cfg.dtype)

    @property
    def n_layers(self) -> int:
        return len(self.cfg.hidden) + 1

    @property
    def K(self) -> int:
        return self.cfg.n_models

    @property
    def D(self) -> int:
        return self.cfg.dim

    @classmethod
    def init(cls, cfg: NetConfig, loss: LossConfig | None = None, seed: int = 0) -> "DescriptorNet":
        rng = np.random.default_rng([seed, 0x1f])
        dt = np.dtype(cfg.dtype)
        p = {}
        if cfg.arch == "conv":
            c_in = 3
            for i, (c_out, _) in enumerate(cfg.conv):
                p[f"K{i}"] = rng.normal(0.0, np.sqrt(2.0 / (9 * c_in)), (c_out, 9 * c_in))
                p[f"kb{i}"] = np.zeros(c_out)
                c_in = c_out
            sizes = [c_in, *cfg.hidden, cfg.dim]
        else:
            sizes = [cfg.input_dim, *cfg.hidden, cfg.dim]
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            p[f"W{i}"] = rng.normal(0.0, np.sqrt(2.0 / n_in), (n_out, n_in))
            p[f"b{i}"] = np.zeros(n_out)
        D, K = cfg.dim, cfg.n_models
        p["cls_W"] = rng.normal(0.0, np.sqrt(1.0 / D), (K, D))
        p["cls_b"] = np.zeros(K)
        p["centers"] = rng.normal(0.0, 0.1, (K, D))
        p["map_W1"] = rng.normal(0.0, np.sqrt(2.0 / D), (D, D))
        p["map_W2"] = np.zeros((D, D))
        return cls(cfg, loss, {k: v.astype(dt) for k, v in p.items()})

    def copy(self) -> "DescriptorNet":
        return DescriptorNet(self.cfg, self.loss, {k: v.copy() for k, v in self.params.items()})

    def param_names(self) -> list:
        return list(self.params)

    def hyperparams(self) -> dict:
        return {"net": asdict(self.cfg), "loss": asdict(self.loss)}


# --- encoding ---------------------------------------------------------------

def encode(lf: LocationField, cfg: NetConfig) -> np.ndarray:
    """Average-pooled ``coords * mask`` grid, flattened channel-last."""
    if lf.width != cfg.input_size or lf.height != cfg.input_size:
        raise ShapeError(
            f"location field is {lf.width}x{lf.height}, network expects "
            f"{cfg.input_size}x{cfg.input_size}")
    x = lf.coords.astype(np.float64) * lf.mask[..., None]
    p, n = cfg.pool, cfg.pooled
    x = x.reshape(n, p, n, p, 3).mean(axis=(1, 3))
    return x.reshape(-1)


def encode_many(lfs, cfg: NetConfig) -> np.ndarray:
    return np.stack([encode(lf, cfg) for lf in lfs]).astype(np.dtype(cfg.dtype)) if lfs else \
        np.zeros((0, cfg.input_dim), np.dtype(cfg.dtype))


# --- forward pieces -----------------------------------------------------------

def _relu(x):
    return np.maximum(x, 0)


def _im2col(x, stride):
    """3x3 patches of a zero-padded NHWC tensor -> (B, Ho, Wo, 9*C)."""
    B, H, W, C = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    Ho, Wo = (H - 1) // stride + 1, (W - 1) // stride + 1
    cols = np.empty((B, Ho, Wo, 3, 3, C), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :]
    return cols.reshape(B, Ho, Wo, 9 * C)


def _col2im(dcols, shape, stride):
    B, H, W, C = shape
    Ho, Wo = dcols.shape[1:3]
    d = dcols.reshape(B, Ho, Wo, 3, 3, C)
    dxp = np.zeros((B, H + 2, W + 2, C), dtype=dcols.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += d[:, :, :, i, j, :]
    return dxp[:, 1:-1, 1:-1, :]


def embed(net: DescriptorNet, X: np.ndarray, keep=False):
    """Backbone on encoded rows; returns descriptors (and a backward cache if ``keep``)."""
    p = net.params
    a = X.astype(net.dtype, copy=False)
    cache = {"conv": [], "fc": []}
    if net.cfg.arch == "conv":
        n = net.cfg.pooled
        a = a.reshape(len(a), n, n, 3)
        for i, (_, stride) in enumerate(net.cfg.conv):
            cols = _im2col(a, stride)
            # 2-D matmuls stay on the BLAS fast path
            z = (cols.reshape(-1, cols.shape[-1]) @ p[f"K{i}"].T + p[f"kb{i}"]).reshape(
                cols.shape[:-1] + (-1,))
            cache["conv"].append((a.shape, cols, z > 0))
            a = _relu(z)
        cache["gap"] = a.shape
        a = a.mean(axis=(1, 2))
    L = net.n_layers
    for i in range(L):
        cache["fc"].append(a)
        z = a @ p[f"W{i}"].T + p[f"b{i}"]
        a = _relu(z) if i < L - 1 else z
    cache["fc"].append(a)
    return (a, cache) if keep else a


def _embed_backward(net: DescriptorNet, cache, dF, g):
    p = net.params
    acts = cache["fc"]
    da = dF
    for i in reversed(range(net.n_layers)):
        if i < net.n_layers - 1:
            da = da * (acts[i + 1] > 0)
        g[f"W{i}"] += da.T @ acts[i]
        g[f"b{i}"] += da.sum(axis=0)
        if i or net.cfg.arch == "conv":
            da = da @ p[f"W{i}"]
    if net.cfg.arch != "conv":
        return
    B, Ho, Wo, C = cache["gap"]
    da = np.broadcast_to(da[:, None, None, :] / (Ho * Wo), (B, Ho, Wo, C))
    for i in reversed(range(len(net.cfg.conv))):
        in_shape, cols, active = cache["conv"][i]
        dz = da * active
        dz2 = dz.reshape(-1, dz.shape[-1])
        g[f"K{i}"] += dz2.T @ cols.reshape(-1, cols.shape[-1])
        g[f"kb{i}"] += dz2.sum(axis=0)
        if i:
            dcols = (dz2 @ p[f"K{i}"]).reshape(cols.shape)
            da = _col2im(dcols, in_shape, net.cfg.conv[i][1])


def map_features(net: DescriptorNet, f: np.ndarray, keep=False):
    p = net.params
    h = f @ p["map_W1"].T
    r = _relu(h)
    g = f + r @ p["map_W2"].T
    return (g, h, r) if keep else g


def logits_of(net: DescriptorNet, e: np.ndarray) -> np.ndarray:
    return e @ net.params["cls_W"].T + net.params["cls_b"]


def forward(net: DescriptorNet, lf: LocationField):
    """Raw descriptor and classifier logits for a single field (no domain mapping)."""
    x = encode(lf, net.cfg)[None].astype(net.dtype)
    f = embed(net, x)
    return f[0], logits_of(net, f)[0]


def map_domain(net: DescriptorNet, f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=net.dtype)
    if f.shape[-1] != net.D:
        raise ShapeError(f"descriptor has dimension {f.shape[-1]}, expected {net.D}")
    return map_features(net, f)


def describe(net: DescriptorNet, lf: LocationField) -> np.ndarray:
    """Retrieval-time descriptor: mapped for predicted fields, raw otherwise."""
    f, _ = forward(net, lf)
    return map_domain(net, f) if lf.domain == PREDICTED else f


def describe_many(net: DescriptorNet, lfs, batch=256) -> np.ndarray:
    out = []
    for s in range(0, len(lfs), batch):
        chunk = lfs[s:s + batch]
        f = embed(net, encode_many(chunk, net.cfg))
        pred = np.array([lf.domain == PREDICTED for lf in chunk])
        if pred.any():
            f[pred] = map_features(net, f[pred])
        out.append(f)
    return np.concatenate(out) if out else np.zeros((0, net.D), net.dtype)


# --- losses -------------------------------------------------------------------

def huber(r, t=1.0):
    """Elementwise Huber penalty: 0.5 r^2 inside [-t, t], t(|r| - t/2) outside."""
    r = np.asarray(r)
    a = np.abs(r)
    out = np.where(a <= t, 0.5 * r * r, t * (a - 0.5 * t))
    return out if out.ndim else float(out)


def huber_grad(r, t=1.0):
    # at |r| = t both branches give t * sign(r)
    return np.clip(r, -t, t)


def huber_distance(a, b, t=1.0):
    """Sum of per-component Huber penalties of ``a - b`` over the last axis."""
    return huber(np.asarray(a) - np.asarray(b), t).sum(axis=-1)


def _pairwise_huber(E, C, t):
    return huber(E[:, None, :] - C[None, :, :], t).sum(axis=-1)


def _closest_negative(dist, y):
    d = dist.copy()
    d[np.arange(len(y)), y] = np.inf
    jn = np.argmin(d, axis=1)  # first index wins ties
    return jn, d[np.arange(len(y)), jn]


def center_loss(batch, centers, t=1.0, mean=False) -> float:
    """Sum over (descriptor, y) of the Huber distance to the own center."""
    F = np.array([f for f, _ in batch], dtype=np.float64)
    y = np.array([yy for _, yy in batch], dtype=int)
    C = np.asarray(centers, dtype=np.float64)
    v = huber_distance(F, C[y], t)
    return float(v.mean() if mean else v.sum())


def triplet_center_loss(batch, centers, m=1.0, t=1.0, mean=False) -> float:
    """Hinge on own-center distance + margin - closest other-center distance."""
    C = np.asarray(centers, dtype=np.float64)
    if len(C) < 2:
        raise ConfigurationError("triplet-center loss needs at least two centers")
    F = np.array([f for f, _ in batch], dtype=np.float64)
    y = np.array([yy for _, yy in batch], dtype=int)
    dist = _pairwise_huber(F, C, t)
    pos = dist[np.arange(len(y)), y]
    _, neg = _closest_negative(dist, y)
    v = np.maximum(0.0, pos + m - neg)
    return float(v.mean() if mean else v.sum())


def log_softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_loss(logits, y) -> float:
    """Cross-entropy of one logit vector (or a batch, summed) against index ``y``."""
    lp = log_softmax(logits)
    if lp.ndim == 1:
        return float(-lp[int(y)])
    y = np.asarray(y, dtype=int)
    return float(-lp[np.arange(len(y)), y].sum())


def feature_mapping_loss(pairs, t=1.0) -> float:
    if not len(pairs):
        return 0.0
    a = np.array([p for p, _ in pairs], dtype=np.float64)
    b = np.array([r for _, r in pairs], dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("feature-mapping pairs must have equal lengths")
    return float(huber_distance(a, b, t).sum())


def weighted_total(parts: dict, alpha: float, beta: float, delta: float = 0.0) -> float:
    return (parts["softmax"] + alpha * parts["center"] + beta * parts["tcl"]
            + delta * parts.get("fm", 0.0))


# --- batches and the training objective --------------------------------------

@dataclass
class TrainSample:
    lf: LocationField
    y: int
    paired: LocationField | None = None

    def __post_init__(self):
        if (self.lf.domain == PREDICTED) != (self.paired is not None):
            raise ConfigurationError("a paired rendered field is required iff the sample is predicted")
        if self.paired is not None and self.paired.domain != RENDERED:
            raise ConfigurationError("paired field must be rendered")


@dataclass
class Batch:
    """Encoded mini-batch; ``Xp`` holds the paired rendered inputs of predicted rows."""

    X: np.ndarray
    y: np.ndarray
    pred: np.ndarray
    Xp: np.ndarray = field(default=None)

    @property
    def pred_rows(self) -> np.ndarray:
        return np.flatnonzero(self.pred)


def make_batch(samples, cfg: NetConfig) -> Batch:
    X = encode_many([s.lf for s in samples], cfg)
    y = np.array([s.y for s in samples], dtype=int)
    pred = np.array([s.lf.domain == PREDICTED for s in samples], dtype=bool)
    Xp = encode_many([s.paired for s in samples if s.paired is not None], cfg)
    return Batch(X, y, pred, Xp)


def _as_batch(net, batch):
    return batch if isinstance(batch, Batch) else make_batch(list(batch), net.cfg)


def descriptor_loss(batch, net: DescriptorNet):
    """(L_softmax + alpha L_C + beta L_TC, parts) for a batch of samples.

    Predicted samples are domain-mapped before the three terms, as in training.
    """
    total, parts, _ = loss_and_grad(net, batch, weights={"fm": 0.0}, need_grad=False)
    return total, {k: parts[k] for k in ("softmax", "center", "tcl")}


def loss_and_grad(net: DescriptorNet, batch, weights: dict | None = None, need_grad=True):
    """Training loss L = L_softmax + a L_C + b L_TC + d L_FM and its gradient.

    ``weights`` overrides individual term weights (keys in ``LOSS_TERMS``),
    which is how single terms are isolated for gradient checks. Returns
    ``(total, parts, grads)``; ``parts`` are the unweighted terms.
    """
    b = _as_batch(net, batch)
    p = net.params
    lc = net.loss
    w = lc.weights()
    if weights:
        w.update(weights)
    t, m = lc.huber_t, lc.margin
    B = len(b.y)
    if B == 0:
        raise ConfigurationError("empty batch")
    Pi = b.pred_rows
    P = len(Pi)
    if w["tcl"] and net.K < 2:
        raise ConfigurationError("triplet-center loss needs K >= 2")

    X_all = b.X if not P else np.concatenate([b.X, b.Xp])
    F_all, acts = embed(net, X_all, keep=True)
    F = F_all[:B]
    E = F.copy()
    if P:
        G, Hm, Rm = map_features(net, F[Pi], keep=True)
        E[Pi] = G
    rows = np.arange(B)
    y = b.y
    C = p["centers"]

    logits = logits_of(net, E)
    lsm = log_softmax(logits).astype(net.dtype)
    sm_rows = -lsm[rows, y]

    R = E - C[y]
    c_rows = huber(R, t).sum(axis=1)

    if net.K >= 2:
        dist = _pairwise_huber(E, C, t)
        jn, neg = _closest_negative(dist, y)
        hinge = c_rows + m - neg
        tc_rows = np.maximum(0.0, hinge)
    else:
        jn = np.zeros(B, dtype=int)
        hinge = np.full(B, -1.0)
        tc_rows = np.zeros(B)

    if P:
        S = E[Pi] - F_all[B:]
        fm_rows = huber(S, t).sum(axis=1)
    else:
        fm_rows = np.zeros(0)

    sc = 1.0 / B if lc.mean_normalize else 1.0
    sf = (1.0 / P if P else 0.0) if lc.mean_normalize else 1.0
    parts = {"softmax": float(sm_rows.sum()) * sc, "center": float(c_rows.sum()) * sc,
             "tcl": float(tc_rows.sum()) * sc, "fm": float(fm_rows.sum()) * sf}
    total = sum(w[k] * parts[k] for k in LOSS_TERMS)
    if not need_grad:
        return total, parts, None

    g = {k: np.zeros_like(v) for k, v in p.items()}
    dt = net.dtype
    # softmax
    prob = np.exp(lsm)
    prob[rows, y] -= 1
    dlog = (w["softmax"] * sc) * prob
    g["cls_W"] += dlog.T @ E
    g["cls_b"] += dlog.sum(axis=0)
    dE = dlog @ p["cls_W"]
    # center loss
    hp = huber_grad(R, t)
    dE += (w["center"] * sc) * hp
    np.add.at(g["centers"], y, -(w["center"] * sc) * hp)
    # triplet-center loss; zero subgradient at the hinge point
    act = hinge > 0
    if w["tcl"] and act.any():
        hn = huber_grad(E[act] - C[jn[act]], t)
        k = w["tcl"] * sc
        dE[act] += k * (hp[act] - hn)
        np.add.at(g["centers"], y[act], -k * hp[act])
        np.add.at(g["centers"], jn[act], k * hn)
    dF_all = np.zeros_like(F_all)
    dF_all[:B] = dE
    if P:
        hs = huber_grad(S, t)
        dG = dE[Pi] + (w["fm"] * sf) * hs
        dF_all[B:] = -(w["fm"] * sf) * hs
        # g = f + W2 relu(W1 f)
        g["map_W2"] += dG.T @ Rm
        dH = (dG @ p["map_W2"]) * (Hm > 0)
        g["map_W1"] += dH.T @ F[Pi]
        dF_all[Pi] = dG + dH @ p["map_W1"]
    _embed_backward(net, acts, dF_all, g)
    g = {k: v.astype(dt, copy=False) for k, v in g.items()}
    return total, parts, g


def grad(net: DescriptorNet, batch, weights=None) -> dict:
    return loss_and_grad(net, batch, weights)[2]
