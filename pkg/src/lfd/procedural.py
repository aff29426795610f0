"""Procedural desk-scale model database.

Each family composes closed axis-aligned primitives (boxes, wedges, n-gon
prisms standing in for cylinders). The canonical frame is +y up, +z front,
+x starboard. Every primitive is watertight on its own, so the union is a
valid input for solid voxelization.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, GenerationError
from .mesh import Mesh, merge_meshes, normalize_mesh, sample_surface
from .metrics import hausdorff_mod

log = logging.getLogger(__name__)

# --- primitives -------------------------------------------------------------

_BOX_TRIS = np.array([
    [0, 2, 1], [0, 3, 2],  # -z
    [4, 5, 6], [4, 6, 7],  # +z
    [0, 1, 5], [0, 5, 4],  # -y
    [3, 7, 6], [3, 6, 2],  # +y
    [0, 4, 7], [0, 7, 3],  # -x
    [1, 2, 6], [1, 6, 5],  # +x
])


def box(lo, hi) -> Mesh:
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    v = np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
    ], dtype=np.float64)
    return Mesh(v, _BOX_TRIS.copy())


def prism(center, radius, length, axis=1, sides=8) -> Mesh:
    """Regular n-gon prism along a coordinate axis (a faceted cylinder)."""
    ang = 2 * np.pi * np.arange(sides) / sides
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    a, b = [k for k in range(3) if k != axis]
    verts = np.zeros((2 * sides, 3))
    for s, off in enumerate((-0.5 * length, 0.5 * length)):
        verts[s * sides:(s + 1) * sides, a] = ring[:, 0]
        verts[s * sides:(s + 1) * sides, b] = ring[:, 1]
        verts[s * sides:(s + 1) * sides, axis] = off
    verts += np.asarray(center, dtype=np.float64)
    tris = []
    for i in range(sides):
        j = (i + 1) % sides
        tris += [[i, j, sides + j], [i, sides + j, sides + i]]
    for i in range(1, sides - 1):
        tris += [[0, i + 1, i], [sides, sides + i, sides + i + 1]]
    return Mesh(verts, np.array(tris))


def wedge(lo, hi, low_side="front") -> Mesh:
    """Triangular prism along x: full height at the back, zero height at ``low_side``."""
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    if low_side == "front":
        prof = [(y0, z0), (y0, z1), (y1, z0)]
    else:
        prof = [(y0, z0), (y0, z1), (y1, z1)]
    v = np.array([[x, y, z] for x in (x0, x1) for (y, z) in prof], dtype=np.float64)
    tris = [[0, 2, 1], [3, 4, 5],
            [0, 1, 4], [0, 4, 3],
            [1, 2, 5], [1, 5, 4],
            [2, 0, 3], [2, 3, 5]]
    return Mesh(v, np.array(tris))


# --- families ---------------------------------------------------------------

def _u(rng, lo, hi):
    return float(rng.uniform(lo, hi))


def _p(params, name, default):
    lo, hi = params.get(name, default)
    if lo > hi:
        raise ConfigurationError(f"parameter range {name} has min > max")
    return lo, hi


def _legs(rng, params, w, d, h, y0=0.0):
    t = _u(rng, *_p(params, "leg_thickness", (0.03, 0.12)))
    round_legs = rng.random() < 0.5
    inset = _u(rng, 0.0, 0.15) * min(w, d)
    parts = []
    for sx in (-1, 1):
        for sz in (-1, 1):
            cx = sx * (0.5 * w - inset - 0.5 * t)
            cz = sz * (0.5 * d - inset - 0.5 * t)
            if round_legs:
                parts.append(prism((cx, y0 + 0.5 * h, cz), 0.5 * t, h))
            else:
                parts.append(box((cx - 0.5 * t, y0, cz - 0.5 * t), (cx + 0.5 * t, y0 + h, cz + 0.5 * t)))
    return parts


def _pedestal(rng, h, spread):
    r = _u(rng, 0.02, 0.06)
    parts = [prism((0, 0.5 * h, 0), r, h, sides=8)]
    if rng.random() < 0.5:
        parts.append(box((-spread, 0, -0.03), (spread, 0.04, 0.03)))
        parts.append(box((-0.03, 0, -spread), (0.03, 0.04, spread)))
    else:
        parts.append(prism((0, 0.02, 0), spread, 0.04, sides=10))
    return parts


def chair(rng, params):
    w = _u(rng, *_p(params, "seat_width", (0.35, 0.8)))
    d = _u(rng, *_p(params, "seat_depth", (0.35, 0.8)))
    h = _u(rng, *_p(params, "seat_height", (0.25, 0.6)))
    st = _u(rng, *_p(params, "seat_thickness", (0.03, 0.15)))
    bh = _u(rng, *_p(params, "back_height", (0.2, 0.8)))
    bt = _u(rng, 0.03, 0.12)
    base = rng.integers(3)
    if base == 0:
        parts = _legs(rng, params, w, d, h)
    elif base == 1:
        parts = _pedestal(rng, h, 0.45 * max(w, d))
    else:  # sled runners
        parts = [box((sx * 0.45 * w - 0.02, 0, -0.5 * d), (sx * 0.45 * w + 0.02, 0.04, 0.5 * d))
                 for sx in (-1, 1)]
        parts += [box((sx * 0.45 * w - 0.02, 0, sz * 0.45 * d - 0.02),
                      (sx * 0.45 * w + 0.02, h, sz * 0.45 * d + 0.02))
                  for sx in (-1, 1) for sz in (-1, 1)]
    parts.append(box((-0.5 * w, h, -0.5 * d), (0.5 * w, h + st, 0.5 * d)))
    y0, z0 = h + st, -0.5 * d
    if rng.random() < 0.5:
        parts.append(box((-0.5 * w, y0, z0), (0.5 * w, y0 + bh, z0 + bt)))
    else:
        n = int(rng.integers(2, 5))
        rail = _u(rng, 0.05, 0.15) * bh
        parts.append(box((-0.5 * w, y0 + bh - rail, z0), (0.5 * w, y0 + bh, z0 + bt)))
        for i in range(n):
            x = -0.45 * w + 0.9 * w * i / (n - 1)
            parts.append(box((x - 0.02, y0, z0), (x + 0.02, y0 + bh, z0 + bt)))
    if rng.random() < 0.4:
        ah = _u(rng, 0.1, 0.3)
        for sx in (-1, 1):
            x = sx * (0.5 * w - 0.03)
            parts.append(box((x - 0.03, y0 + ah - 0.04, z0), (x + 0.03, y0 + ah, 0.5 * d)))
            parts.append(box((x - 0.02, y0, 0.4 * d), (x + 0.02, y0 + ah, 0.45 * d)))
    return parts


def table(rng, params):
    w = _u(rng, *_p(params, "top_width", (0.5, 1.5)))
    d = _u(rng, *_p(params, "top_depth", (0.4, 1.2)))
    h = _u(rng, *_p(params, "height", (0.3, 0.9)))
    tt = _u(rng, *_p(params, "top_thickness", (0.02, 0.12)))
    base = rng.integers(3)
    if base == 0:
        parts = _legs(rng, params, w, d, h)
    elif base == 1:
        parts = _pedestal(rng, h, 0.3 * min(w, d))
    else:  # slab sides
        t = _u(rng, 0.03, 0.08)
        parts = [box((sx * 0.45 * w - t, 0, -0.4 * d), (sx * 0.45 * w, h, 0.4 * d)) if sx > 0 else
                 box((-0.45 * w, 0, -0.4 * d), (-0.45 * w + t, h, 0.4 * d)) for sx in (-1, 1)]
    if rng.random() < 0.35:
        parts.append(prism((0, h + 0.5 * tt, 0), 0.5 * min(w, d), tt, sides=12))
    else:
        parts.append(box((-0.5 * w, h, -0.5 * d), (0.5 * w, h + tt, 0.5 * d)))
    if base == 0 and rng.random() < 0.4:
        ys = _u(rng, 0.1, 0.5) * h
        parts.append(box((-0.4 * w, ys, -0.4 * d), (0.4 * w, ys + 0.03, 0.4 * d)))
    return parts


def bed(rng, params):
    w = _u(rng, *_p(params, "width", (0.5, 1.2)))
    l = _u(rng, *_p(params, "length", (1.1, 1.7)))
    base = _u(rng, *_p(params, "base_height", (0.05, 0.35)))
    mt = _u(rng, *_p(params, "mattress_thickness", (0.08, 0.3)))
    hb = _u(rng, *_p(params, "headboard_height", (0.1, 0.8)))
    parts = [box((-0.5 * w, 0, -0.5 * l), (0.5 * w, base, 0.5 * l)),
             box((-0.48 * w, base, -0.48 * l), (0.48 * w, base + mt, 0.48 * l)),
             box((-0.5 * w, 0, -0.5 * l - 0.05), (0.5 * w, base + mt + hb, -0.5 * l))]
    if rng.random() < 0.5:
        fb = _u(rng, 0.05, 0.8) * hb
        parts.append(box((-0.5 * w, 0, 0.5 * l), (0.5 * w, base + mt + fb, 0.5 * l + 0.04)))
    if rng.random() < 0.4:
        ph = base + mt + hb + _u(rng, 0.0, 0.6)
        for sx in (-1, 1):
            for sz in (-1, 1):
                parts.append(prism((sx * 0.5 * w, 0.5 * ph, sz * 0.5 * l), 0.03, ph, sides=6))
    if rng.random() < 0.3:
        parts.append(box((-0.4 * w, base + mt, -0.47 * l), (0.4 * w, base + mt + 0.08, -0.3 * l)))
    return parts


def car(rng, params):
    w = _u(rng, *_p(params, "width", (0.45, 0.8)))
    l = _u(rng, *_p(params, "length", (1.0, 1.7)))
    bh = _u(rng, *_p(params, "body_height", (0.12, 0.4)))
    ch = _u(rng, *_p(params, "cabin_height", (0.08, 0.35)))
    wr = _u(rng, *_p(params, "wheel_radius", (0.07, 0.18)))
    clear = 0.6 * wr
    parts = [box((-0.5 * w, clear, -0.5 * l), (0.5 * w, clear + bh, 0.5 * l))]
    y0 = clear + bh
    style = rng.integers(3)
    if style == 0:  # sedan: centered cabin with sloped windshield
        c0 = _u(rng, -0.35, -0.05) * l
        c1 = c0 + _u(rng, 0.3, 0.5) * l
        parts.append(box((-0.45 * w, y0, c0), (0.45 * w, y0 + ch, c1)))
        parts.append(wedge((-0.45 * w, y0, c1), (0.45 * w, y0 + ch, min(c1 + 0.2 * l, 0.5 * l)), "front"))
    elif style == 1:  # van: long cabin to the rear
        c1 = _u(rng, 0.0, 0.3) * l
        parts.append(box((-0.47 * w, y0, -0.5 * l), (0.47 * w, y0 + ch, c1)))
    else:  # pickup: short cabin at the front, open bed walls behind
        c0 = _u(rng, -0.1, 0.1) * l
        c1 = c0 + _u(rng, 0.15, 0.3) * l
        parts.append(box((-0.45 * w, y0, c0), (0.45 * w, y0 + ch, c1)))
        for sx in (-1, 1):
            parts.append(box((sx * 0.5 * w - (0.04 if sx > 0 else 0), y0, -0.5 * l),
                             (sx * 0.5 * w + (0.04 if sx < 0 else 0), y0 + 0.1, c0)))
    for sz in (-1, 1):
        for sx in (-1, 1):
            parts.append(prism((sx * 0.5 * w, wr, sz * 0.32 * l), wr, 0.1, axis=0, sides=10))
    if rng.random() < 0.3:
        parts.append(box((-0.4 * w, y0 + (ch if style != 2 else ch), 0.9 * (-0.5 * l)),
                         (0.4 * w, y0 + ch + 0.03, 0.9 * (-0.5 * l) + 0.05)))
    return parts


def shelf(rng, params):
    w = _u(rng, *_p(params, "width", (0.3, 1.4)))
    h = _u(rng, *_p(params, "height", (0.4, 1.8)))
    d = _u(rng, *_p(params, "depth", (0.15, 0.5)))
    n = int(rng.integers(2, 7))
    t = _u(rng, 0.02, 0.07)
    parts = [box((-0.5 * w, 0, -0.5 * d), (-0.5 * w + t, h, 0.5 * d)),
             box((0.5 * w - t, 0, -0.5 * d), (0.5 * w, h, 0.5 * d))]
    for i in range(n):
        y = i * (h - t) / (n - 1)
        parts.append(box((-0.5 * w + t, y, -0.5 * d), (0.5 * w - t, y + t, 0.5 * d)))
    if rng.random() < 0.5:
        parts.append(box((-0.5 * w + t, 0, -0.5 * d), (0.5 * w - t, h, -0.5 * d + t)))
    if rng.random() < 0.3:
        parts.append(box((-0.5 * w + t, 0, -0.02), (-0.5 * w + t + 0.03, h, 0.02)))
    return parts


def lamp(rng, params):
    br = _u(rng, *_p(params, "base_radius", (0.08, 0.3)))
    ph = _u(rng, *_p(params, "pole_height", (0.3, 1.3)))
    sr = _u(rng, *_p(params, "shade_radius", (0.1, 0.4)))
    sh = _u(rng, 0.08, 0.4)
    bt = _u(rng, 0.02, 0.08)
    parts = [prism((0, 0.5 * bt, 0), br, bt, sides=10) if rng.random() < 0.6
             else box((-br, 0, -br), (br, bt, br)),
             prism((0, bt + 0.5 * ph, 0), 0.02, ph, sides=6)]
    if rng.random() < 0.5:
        parts.append(prism((0, bt + ph + 0.5 * sh, 0), sr, sh, sides=10))
    else:  # arm reaching forward with a hanging shade
        reach = _u(rng, 0.2, 0.6)
        parts.append(box((-0.02, bt + ph - 0.04, 0), (0.02, bt + ph, reach)))
        parts.append(prism((0, bt + ph - 0.5 * sh, reach), sr, sh, sides=10))
    return parts


def sofa(rng, params):
    w = _u(rng, *_p(params, "width", (0.9, 2.0)))
    d = _u(rng, 0.5, 0.9)
    sh = _u(rng, 0.2, 0.45)
    bh = _u(rng, 0.2, 0.5)
    bt = _u(rng, 0.1, 0.25)
    at = _u(rng, 0.05, 0.2)
    ah = _u(rng, 0.0, 0.3)
    lh = _u(rng, 0.0, 0.12)
    parts = [box((-0.5 * w, lh, -0.5 * d), (0.5 * w, lh + sh, 0.5 * d)),
             box((-0.5 * w, lh + sh, -0.5 * d), (0.5 * w, lh + sh + bh, -0.5 * d + bt))]
    if rng.random() < 0.75:
        for sx in (-1, 1):
            x0 = sx * 0.5 * w
            parts.append(box((min(x0, x0 - sx * at), lh, -0.5 * d),
                             (max(x0, x0 - sx * at), lh + sh + ah, 0.5 * d)))
    if lh > 0.02:
        parts += [box((sx * 0.45 * w - 0.02, 0, sz * 0.4 * d - 0.02),
                      (sx * 0.45 * w + 0.02, lh, sz * 0.4 * d + 0.02))
                  for sx in (-1, 1) for sz in (-1, 1)]
    return parts


def stool(rng, params):
    r = _u(rng, 0.15, 0.35)
    h = _u(rng, 0.3, 1.0)
    st = _u(rng, 0.03, 0.1)
    n = int(rng.integers(3, 5))
    spread = _u(rng, 0.6, 1.0) * r
    parts = [prism((0, h + 0.5 * st, 0), r, st, sides=12) if rng.random() < 0.6
             else box((-r, h, -r), (r, h + st, r))]
    for i in range(n):
        a = 2 * np.pi * i / n
        parts.append(prism((spread * np.cos(a), 0.5 * h, spread * np.sin(a)), 0.02, h, sides=6))
    if rng.random() < 0.5:
        y = _u(rng, 0.2, 0.5) * h
        parts.append(box((-spread, y, -0.015), (spread, y + 0.03, 0.015)))
        parts.append(box((-0.015, y, -spread), (0.015, y + 0.03, spread)))
    return parts


def cabinet(rng, params):
    w = _u(rng, 0.4, 1.4)
    h = _u(rng, 0.4, 1.6)
    d = _u(rng, 0.3, 0.6)
    lh = _u(rng, 0.0, 0.2) if rng.random() < 0.5 else 0.0
    parts = [box((-0.5 * w, lh, -0.5 * d), (0.5 * w, lh + h, 0.5 * d))]
    if lh > 0:
        parts += _legs(rng, params, w, d, lh)
    if rng.random() < 0.5:
        parts.append(box((-0.55 * w, lh + h, -0.55 * d), (0.55 * w, lh + h + 0.04, 0.55 * d)))
    n = int(rng.integers(1, 5))
    for i in range(n):
        y0 = lh + h * (i + 0.1) / n
        y1 = lh + h * (i + 0.9) / n
        parts.append(box((-0.45 * w, y0, 0.5 * d), (0.45 * w, y1, 0.5 * d + 0.03)))
    return parts


def airplane(rng, params):
    l = _u(rng, 1.0, 1.6)
    fr = _u(rng, 0.05, 0.12)
    span = _u(rng, 0.8, 1.8)
    chord = _u(rng, 0.12, 0.35)
    wz = _u(rng, -0.15, 0.15) * l
    wy = _u(rng, -0.6, 0.6) * fr
    parts = [prism((0, 0, 0), fr, l, axis=2, sides=8),
             box((-0.5 * span, wy - 0.015, wz - 0.5 * chord), (0.5 * span, wy + 0.015, wz + 0.5 * chord))]
    th = _u(rng, 0.1, 0.35)
    tz = -0.5 * l
    parts.append(box((-0.01, 0, tz), (0.01, fr + th, tz + 0.15)))
    ts = _u(rng, 0.2, 0.5)
    parts.append(box((-0.5 * ts, -0.01, tz), (0.5 * ts, 0.01, tz + 0.1)))
    if rng.random() < 0.6:
        ne = int(rng.integers(1, 3))
        for k in range(ne):
            x = (0.25 + 0.2 * k) * span
            for sx in (-1, 1):
                parts.append(prism((sx * x, wy - 0.06, wz), 0.04, 0.2, axis=2, sides=8))
    return parts


def bench(rng, params):
    w = _u(rng, 0.9, 2.0)
    d = _u(rng, 0.25, 0.6)
    h = _u(rng, 0.25, 0.5)
    st = _u(rng, 0.03, 0.08)
    if rng.random() < 0.5:
        parts = _legs(rng, params, w, d, h)
    else:
        t = _u(rng, 0.03, 0.08)
        parts = [box((-0.45 * w, 0, -0.45 * d), (-0.45 * w + t, h, 0.45 * d)),
                 box((0.45 * w - t, 0, -0.45 * d), (0.45 * w, h, 0.45 * d))]
    parts.append(box((-0.5 * w, h, -0.5 * d), (0.5 * w, h + st, 0.5 * d)))
    if rng.random() < 0.5:
        bh = _u(rng, 0.15, 0.45)
        parts.append(box((-0.5 * w, h + st + 0.05, -0.5 * d), (0.5 * w, h + st + 0.05 + bh, -0.5 * d + 0.04)))
        parts += [box((sx * 0.45 * w - 0.02, h + st, -0.5 * d), (sx * 0.45 * w + 0.02, h + st + 0.05, -0.5 * d + 0.04))
                  for sx in (-1, 1)]
    return parts


FAMILIES = {"chair": chair, "table": table, "bed": bed, "car": car, "shelf": shelf,
            "lamp": lamp, "sofa": sofa, "stool": stool, "cabinet": cabinet,
            "airplane": airplane, "bench": bench}


# --- dataset ----------------------------------------------------------------

@dataclass
class FamilySpec:
    kind: str
    count: int
    params: dict = field(default_factory=dict)


@dataclass
class DatasetSpec:
    families: list
    separation: float = 0.02
    # surface samples per mesh used for the separation check
    samples: int = 1000
    max_retries: int = 200

    @classmethod
    def from_dict(cls, d) -> "DatasetSpec":
        fams = [FamilySpec(f["kind"], int(f["count"]), dict(f.get("params", {})))
                for f in d["families"]]
        kw = {k: d[k] for k in ("separation", "samples", "max_retries") if k in d}
        return cls(fams, **kw)

    @classmethod
    def load(cls, path) -> "DatasetSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {"families": [{"kind": f.kind, "count": f.count, "params": f.params}
                             for f in self.families],
                "separation": self.separation, "samples": self.samples,
                "max_retries": self.max_retries}

    @property
    def total(self) -> int:
        return sum(f.count for f in self.families)


def desk_spec(k: int, separation=0.02) -> DatasetSpec:
    """Round-robin family mix with ``k`` models in total."""
    kinds = list(FAMILIES)
    counts = [k // len(kinds) + (i < k % len(kinds)) for i in range(len(kinds))]
    return DatasetSpec([FamilySpec(kd, c) for kd, c in zip(kinds, counts) if c],
                       separation=separation)


def separation_points(m: Mesh, spec: DatasetSpec, seed: int) -> np.ndarray:
    """Surface samples the generator uses for its pairwise separation check."""
    return sample_surface(m, spec.samples, seed).points


def gen_procedural_dataset(spec: DatasetSpec, seed: int) -> list:
    """Generate ``spec.total`` normalized meshes, pairwise d_H >= ``spec.separation``.

    Candidates too close to an already accepted mesh are redrawn up to
    ``spec.max_retries`` times each.
    """
    for f in spec.families:
        if f.kind not in FAMILIES:
            raise ConfigurationError(f"unknown family {f.kind!r}")
        if f.count < 0:
            raise ConfigurationError(f"negative count for family {f.kind!r}")
    accepted, points = [], []
    for fi, fam in enumerate(spec.families):
        builder = FAMILIES[fam.kind]
        for i in range(fam.count):
            for attempt in range(spec.max_retries):
                rng = np.random.default_rng([seed, fi, i, attempt])
                mesh = normalize_mesh(merge_meshes(builder(rng, fam.params)))
                mesh.model_id = f"{fam.kind}_{i:03d}"
                pts = separation_points(mesh, spec, seed)
                if all(hausdorff_mod(pts, q) >= spec.separation for q in points):
                    break
                log.debug("rejected %s attempt %d", mesh.model_id, attempt)
            else:
                raise GenerationError(
                    f"could not place {fam.kind} #{i} at separation {spec.separation} "
                    f"after {spec.max_retries} attempts")
            accepted.append(mesh)
            points.append(pts)
    return accepted
