"""Location-field rendering.

A CPU rasterizer with a depth buffer that writes, for every covered pixel, the
perspective-correct interpolation of the covering triangle's canonical vertex
coordinates.

Conventions: camera looks down +z, image u grows right (+x), v grows down
(+y). Pixel (col i, row j) has its center at (i + 0.5, j + 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .errors import ArgumentError, BehindCameraError, ConfigurationError
from .mesh import Mesh

RENDERED = "rendered"
PREDICTED = "predicted_sim"
DOMAINS = (RENDERED, PREDICTED)

# sub-pixel precision of the rasterizer's fixed-point vertex snapping
SUBPIXEL_BITS = 16
_MIN_DISTANCE = 0.5 * math.sqrt(3.0)


@dataclass(frozen=True)
class Camera:
    focal: float
    px: float
    py: float
    width: int
    height: int

    def __post_init__(self):
        if not self.focal > 0:
            raise ArgumentError("focal length must be positive")
        if not (0 <= self.px <= self.width and 0 <= self.py <= self.height):
            raise ArgumentError("principal point must lie inside the image")

    @classmethod
    def default(cls, width=56, height=None, focal_factor=1.2) -> "Camera":
        height = width if height is None else height
        return cls(float(focal_factor * min(width, height)), width / 2.0, height / 2.0,
                   int(width), int(height))

    def matrix(self) -> np.ndarray:
        return np.array([[self.focal, 0, self.px], [0, self.focal, self.py], [0, 0, 1.0]])


def _rot_x(deg):
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_y(deg):
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rot_z(deg):
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


# object +y up / +z front  ->  camera -y / -z at azimuth = elevation = 0
_BASE = np.diag([1.0, -1.0, -1.0])


def view_rotation(azimuth, elevation, inplane) -> np.ndarray:
    return _rot_z(inplane) @ _rot_x(-elevation) @ _BASE @ _rot_y(-azimuth)


@dataclass
class Pose:
    """Rigid object-to-camera transform, x_cam = R @ x_obj + t."""

    rotation: np.ndarray
    translation: np.ndarray
    params: dict | None = None

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    def check(self, tol=1e-9):
        R = self.rotation
        if np.abs(R.T @ R - np.eye(3)).max() > tol or abs(np.linalg.det(R) - 1.0) > tol:
            raise ArgumentError("rotation is not a proper orthonormal matrix")
        return self

    @classmethod
    def from_params(cls, azimuth, elevation, inplane, distance) -> "Pose":
        if not distance > _MIN_DISTANCE:
            raise ArgumentError(f"distance {distance} puts the unit cube behind the camera")
        R = view_rotation(azimuth, elevation, inplane)
        return cls(R, np.array([0.0, 0.0, distance]),
                   dict(azimuth=azimuth, elevation=elevation, inplane=inplane, distance=distance))

    def transform(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) @ self.rotation.T + self.translation


@dataclass
class PoseConfig:
    azimuth: tuple = (0.0, 360.0)
    elevation: tuple = (-10.0, 40.0)
    inplane: tuple = (-10.0, 10.0)
    # projected unit-cube extent as a fraction of min(width, height)
    extent: tuple = (0.70, 0.95)

    def __post_init__(self):
        for name in ("azimuth", "elevation", "inplane", "extent"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"pose range {name}: min {lo} > max {hi}")
            setattr(self, name, (float(lo), float(hi)))
        if self.extent[0] <= 0:
            raise ConfigurationError("extent fraction must be positive")


_CUBE = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])


def bbox_corners(lo, hi) -> np.ndarray:
    return np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1])
                     for z in (lo[2], hi[2])], dtype=np.float64)


def _extent_fraction(R, d, cam, corners=_CUBE):
    p = corners @ R.T
    z = p[:, 2] + d
    du = np.abs(cam.focal * p[:, 0] / z).max()
    dv = np.abs(cam.focal * p[:, 1] / z).max()
    return 2.0 * max(du, dv) / min(cam.width, cam.height)


def distance_for_extent(R, frac, cam, corners=_CUBE) -> float:
    """Distance at which the box's symmetric projected extent equals ``frac``."""
    lo = _MIN_DISTANCE + 1e-6
    hi = 1e4
    if _extent_fraction(R, lo, cam, corners) < frac:
        return lo
    return brentq(lambda d: _extent_fraction(R, d, cam, corners) - frac, lo, hi, xtol=1e-12)


def sample_pose(cfg: PoseConfig, seed: int, cam: Camera | None = None, bbox=None) -> Pose:
    """Random viewpoint; the distance frames ``bbox`` (default: the unit cube).

    ``bbox = (lo, hi)`` of the object lets the object fill the requested
    fraction of the image, like a tight detection crop.
    """
    cam = cam or Camera.default()
    corners = _CUBE if bbox is None else bbox_corners(*bbox)
    rng = np.random.default_rng(seed)
    az = rng.uniform(*cfg.azimuth) if cfg.azimuth[1] > cfg.azimuth[0] else cfg.azimuth[0]
    el = rng.uniform(*cfg.elevation) if cfg.elevation[1] > cfg.elevation[0] else cfg.elevation[0]
    ip = rng.uniform(*cfg.inplane) if cfg.inplane[1] > cfg.inplane[0] else cfg.inplane[0]
    frac = rng.uniform(*cfg.extent) if cfg.extent[1] > cfg.extent[0] else cfg.extent[0]
    R = view_rotation(az, el, ip)
    d = distance_for_extent(R, frac, cam, corners)
    return Pose.from_params(float(az), float(el), float(ip), float(d))


def project(cam: Camera, pose: Pose, p) -> tuple:
    """Pinhole projection of object-frame points; returns (u, v, depth)."""
    pc = pose.transform(np.asarray(p, dtype=np.float64).reshape(-1, 3))
    z = pc[:, 2]
    if np.any(z <= 0):
        raise BehindCameraError("point at or behind the camera plane")
    u = cam.focal * pc[:, 0] / z + cam.px
    v = cam.focal * pc[:, 1] / z + cam.py
    if np.ndim(p) == 1:
        return float(u[0]), float(v[0]), float(z[0])
    return u, v, z


def back_project(cam: Camera, pose: Pose, u, v, depth) -> np.ndarray:
    """Object-frame point seen at pixel (u, v) at camera-frame depth ``depth``."""
    pc = np.array([(u - cam.px) / cam.focal * depth, (v - cam.py) / cam.focal * depth, depth])
    return pose.rotation.T @ (pc - pose.translation)


@dataclass
class LocationField:
    width: int
    height: int
    coords: np.ndarray  # float32 (h, w, 3)
    mask: np.ndarray  # bool (h, w)
    camera: Camera
    pose: Pose | None = None
    model_id: str | None = None
    domain: str = RENDERED
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float32).reshape(self.height, self.width, 3)
        self.mask = np.asarray(self.mask, dtype=bool).reshape(self.height, self.width)
        if self.domain not in DOMAINS:
            raise ArgumentError(f"unknown domain {self.domain!r}")

    @property
    def n_masked(self) -> int:
        return int(self.mask.sum())

    def masked_coords(self) -> np.ndarray:
        return self.coords[self.mask]

    def copy(self, **changes) -> "LocationField":
        lf = replace(self, coords=self.coords.copy(), mask=self.mask.copy(),
                     meta=dict(self.meta))
        for k, v in changes.items():
            setattr(lf, k, v)
        return lf


def empty_field(cam: Camera, **kw) -> LocationField:
    h, w = cam.height, cam.width
    return LocationField(w, h, np.zeros((h, w, 3), np.float32), np.zeros((h, w), bool), cam, **kw)


def _snap(x):
    return np.round(x * (1 << SUBPIXEL_BITS)).astype(np.int64)


def render_location_field(m: Mesh, pose: Pose, cam: Camera, w: int | None = None,
                          h: int | None = None) -> LocationField:
    """Rasterize ``m`` seen from ``pose`` into a location field.

    Vertices are snapped to a 1/2^16 px fixed-point grid so edge functions are
    exact integers; ties on shared edges follow the top-left rule. Back faces
    are not culled. Depth ties go to the lower triangle index.
    """
    w = cam.width if w is None else int(w)
    h = cam.height if h is None else int(h)
    if w <= 0 or h <= 0:
        raise ArgumentError("image must have positive width and height")
    if (w, h) != (cam.width, cam.height):
        cam = replace(cam, width=w, height=h)
    lf = empty_field(cam, pose=pose, model_id=m.model_id or None)
    if m.n_triangles == 0:
        return lf

    pc = pose.transform(m.vertices)
    z = pc[:, 2]
    front = z > 1e-9
    safe_z = np.where(front, z, 1.0)
    su = _snap(cam.focal * pc[:, 0] / safe_z + cam.px)
    sv = _snap(cam.focal * pc[:, 1] / safe_z + cam.py)

    tri = m.triangles
    tri = tri[front[tri].all(axis=1)]  # no near-plane clipping
    if not len(tri):
        return lf
    x0, x1, x2 = su[tri[:, 0]], su[tri[:, 1]], su[tri[:, 2]]
    y0, y1, y2 = sv[tri[:, 0]], sv[tri[:, 1]], sv[tri[:, 2]]
    area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
    # orient every triangle positively; swap vertices 1 and 2 where needed
    flip = area < 0
    tri = tri.copy()
    tri[flip, 1], tri[flip, 2] = tri[flip, 2], tri[flip, 1].copy()
    area = np.abs(area)
    keep = area > 0
    tri, area = tri[keep], area[keep]
    if not len(tri):
        return lf
    tid = np.flatnonzero(keep)  # ordering key for depth ties
    X = su[tri]
    Y = sv[tri]

    one = 1 << SUBPIXEL_BITS
    half = one >> 1
    # pixel-center bounding boxes
    ilo = np.maximum(-(-(X.min(axis=1) - half) // one), 0)
    ihi = np.minimum((X.max(axis=1) - half) // one, w - 1)
    jlo = np.maximum(-(-(Y.min(axis=1) - half) // one), 0)
    jhi = np.minimum((Y.max(axis=1) - half) // one, h - 1)
    nx = np.maximum(ihi - ilo + 1, 0)
    ny = np.maximum(jhi - jlo + 1, 0)
    counts = nx * ny
    if counts.sum() == 0:
        return lf
    t_of = np.repeat(np.arange(len(tri)), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(counts.sum()) - start
    nxt = nx[t_of]
    pi = ilo[t_of] + local % nxt
    pj = jlo[t_of] + local // nxt
    qx = pi * one + half
    qy = pj * one + half

    Xt, Yt = X[t_of], Y[t_of]
    lam = np.empty((len(t_of), 3), dtype=np.int64)
    inside = np.ones(len(t_of), dtype=bool)
    for k in range(3):
        a, b = (k + 1) % 3, (k + 2) % 3
        ax, ay, bx, by = Xt[:, a], Yt[:, a], Xt[:, b], Yt[:, b]
        e = (bx - ax) * (qy - ay) - (by - ay) * (qx - ax)
        dx, dy = bx - ax, by - ay
        top_left = (dy < 0) | ((dy == 0) & (dx > 0))
        inside &= (e > 0) | ((e == 0) & top_left)
        lam[:, k] = e
    if not inside.any():
        return lf
    t_of, pi, pj, lam = t_of[inside], pi[inside], pj[inside], lam[inside]
    tv = tri[t_of]
    bary = lam / area[t_of][:, None].astype(np.float64)
    inv_z = bary / z[tv]
    inv_z_sum = inv_z.sum(axis=1)

    pix = pj * w + pi
    order = np.lexsort((tid[t_of], -inv_z_sum, pix))
    pix_sorted = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = order[first]

    wts = inv_z[win] / inv_z_sum[win][:, None]
    V = m.vertices[tv[win]]  # (n, 3 verts, 3)
    vals = np.einsum("nk,nkc->nc", wts, V)
    coords = lf.coords.reshape(-1, 3)
    coords[pix[win]] = vals.astype(np.float32)
    lf.mask.reshape(-1)[pix[win]] = True
    return lf


def upscale_pad(lf: LocationField, target_w: int, target_h: int, roi) -> LocationField:
    """Nearest-neighbour upscale of ``lf`` into ``roi = (x0, y0, w, h)`` of a larger canvas.

    The camera is rescaled so pixel centers keep projecting to the same
    canonical points; this needs an isotropic scale (roi aspect = field aspect).
    """
    x0, y0, rw, rh = (int(v) for v in roi)
    if rw <= 0 or rh <= 0 or x0 < 0 or y0 < 0 or x0 + rw > target_w or y0 + rh > target_h:
        raise ArgumentError(f"roi {roi} does not fit in a {target_w}x{target_h} canvas")
    sx, sy = rw / lf.width, rh / lf.height
    if not math.isclose(sx, sy, rel_tol=1e-12):
        raise ArgumentError("upscale must be isotropic (roi aspect must match the field)")
    src_i = np.minimum(((np.arange(rw) + 0.5) * lf.width / rw).astype(int), lf.width - 1)
    src_j = np.minimum(((np.arange(rh) + 0.5) * lf.height / rh).astype(int), lf.height - 1)
    coords = np.zeros((target_h, target_w, 3), np.float32)
    mask = np.zeros((target_h, target_w), bool)
    coords[y0:y0 + rh, x0:x0 + rw] = lf.coords[np.ix_(src_j, src_i)]
    mask[y0:y0 + rh, x0:x0 + rw] = lf.mask[np.ix_(src_j, src_i)]
    c = lf.camera
    cam = Camera(c.focal * sx, x0 + c.px * sx, y0 + c.py * sy, int(target_w), int(target_h))
    out = LocationField(int(target_w), int(target_h), coords, mask, cam, lf.pose,
                        lf.model_id, lf.domain, dict(lf.meta))
    return out
