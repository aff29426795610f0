"""Object pose from location-field correspondences.

Every masked pixel of a location field pairs an image position with a point
in the canonical frame, so pose recovery is a calibrated PnP problem. The
solver is a normalized DLT, projected onto SO(3) by orthogonal Procrustes and
refined with Levenberg-Marquardt on the reprojection error. Thin point sets
(a view that mostly sees one planar face) also try a plane homography, since
the DLT is singular or badly conditioned there. A RANSAC layer over 6-point
hypotheses handles degraded fields.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import (ArgumentError, BehindCameraError, DegenerateConfigurationError,
                     InsufficientDataError, NoConsensusError)
from .render import Camera, LocationField, Pose

MIN_POINTS = 6
LM_ITERS = 50
LM_LAMBDA0 = 1e-3
LM_RTOL = 1e-10
# smallest/largest singular value of the centered points below which the set counts as thin
PLANAR_RATIO = 0.1


class Correspondences(NamedTuple):
    uv: np.ndarray  # (n, 2) pixel coordinates
    xyz: np.ndarray  # (n, 3) canonical-frame points

    def __len__(self):
        return len(self.uv)

    def subset(self, idx) -> "Correspondences":
        return Correspondences(self.uv[idx], self.xyz[idx])


def as_correspondences(corrs) -> Correspondences:
    """Accept a Correspondences value or a sequence of ((u, v), (x, y, z)) pairs."""
    if isinstance(corrs, Correspondences):
        return Correspondences(np.asarray(corrs.uv, np.float64).reshape(-1, 2),
                               np.asarray(corrs.xyz, np.float64).reshape(-1, 3))
    corrs = list(corrs)
    uv = np.array([c[0] for c in corrs], dtype=np.float64).reshape(-1, 2)
    xyz = np.array([c[1] for c in corrs], dtype=np.float64).reshape(-1, 3)
    return Correspondences(uv, xyz)


def sample_correspondences(lf: LocationField, n: int, seed: int) -> Correspondences:
    """``n`` distinct masked pixels drawn uniformly without replacement.

    The 2D point is the pixel center in the coordinates of ``lf.camera``,
    which already accounts for any crop/upscale placement.
    """
    if n < 4:
        raise ArgumentError("need at least 4 correspondences")
    rows, cols = np.nonzero(lf.mask)
    if len(rows) < n:
        raise InsufficientDataError(f"{len(rows)} masked pixels, {n} requested")
    pick = np.sort(np.random.default_rng(seed).choice(len(rows), size=n, replace=False))
    r, c = rows[pick], cols[pick]
    uv = np.stack([c + 0.5, r + 0.5], axis=1).astype(np.float64)
    return Correspondences(uv, lf.coords[r, c].astype(np.float64))


def _normalized_rays(cam: Camera, uv):
    return np.stack([(uv[:, 0] - cam.px) / cam.focal, (uv[:, 1] - cam.py) / cam.focal], axis=1)


def _similarity(pts):
    """Hartley conditioning: centroid to origin, mean distance sqrt(dim)."""
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(pts.shape[1]) / d if d > 0 else 1.0
    T = np.eye(pts.shape[1] + 1)
    T[:-1, :-1] *= s
    T[:-1, -1] = -s * c
    return T


def _spread(xyz):
    return np.linalg.svd(xyz - xyz.mean(axis=0), compute_uv=False)


def _check_spread(xyz):
    sv = _spread(xyz)
    if sv[0] == 0 or sv[2] / sv[0] < 1e-6:
        raise DegenerateConfigurationError("3D points are (nearly) coplanar or collinear")


def _nearest_rotation(M):
    U, sv, Vt = np.linalg.svd(M)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        R = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    return R, sv


def dlt(corrs: Correspondences, cam: Camera) -> Pose:
    """Linear pose estimate; rotation is the nearest proper rotation to the DLT block."""
    n = len(corrs)
    if n < MIN_POINTS:
        raise InsufficientDataError(f"PnP needs {MIN_POINTS} correspondences, got {n}")
    _check_spread(corrs.xyz)
    x = _normalized_rays(cam, corrs.uv)
    T2, T3 = _similarity(x), _similarity(corrs.xyz)
    xh = np.c_[x, np.ones(n)] @ T2.T
    Xh = np.c_[corrs.xyz, np.ones(n)] @ T3.T
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -xh[:, 0:1] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -xh[:, 1:2] * Xh
    _, s, vt = np.linalg.svd(A)
    if s[-2] <= 1e-10 * s[0]:
        raise DegenerateConfigurationError("DLT system is rank deficient")
    P = np.linalg.inv(T2) @ vt[-1].reshape(3, 4) @ T3
    # scale sign from cheirality: the points lie in front of the camera
    if np.sum(np.c_[corrs.xyz, np.ones(n)] @ P[2]) < 0:
        P = -P
    M = P[:, :3]
    R, sv = _nearest_rotation(M)
    t = P[:, 3] / sv.mean()
    return Pose(R, t)


def planar_pose(corrs: Correspondences, cam: Camera) -> Pose:
    """Pose from the homography between the points' best-fit plane and the image."""
    n = len(corrs)
    if n < 4:
        raise InsufficientDataError(f"plane pose needs 4 correspondences, got {n}")
    c = corrs.xyz.mean(axis=0)
    _, sv, Vt = np.linalg.svd(corrs.xyz - c)
    if sv[0] == 0 or sv[1] / sv[0] < 1e-6:
        raise DegenerateConfigurationError("3D points are (nearly) collinear")
    Q = np.stack([Vt[0], Vt[1], np.cross(Vt[0], Vt[1])], axis=1)  # plane frame, det +1
    q = (corrs.xyz - c) @ Q[:, :2]
    x = _normalized_rays(cam, corrs.uv)
    Tx, Tq = _similarity(x), _similarity(q)
    xh = np.c_[x, np.ones(n)] @ Tx.T
    qh = np.c_[q, np.ones(n)] @ Tq.T
    A = np.zeros((2 * n, 9))
    A[0::2, 0:3] = qh
    A[0::2, 6:9] = -xh[:, 0:1] * qh
    A[1::2, 3:6] = qh
    A[1::2, 6:9] = -xh[:, 1:2] * qh
    _, s, vt = np.linalg.svd(A)
    if s[-2] <= 1e-10 * s[0]:
        raise DegenerateConfigurationError("homography system is rank deficient")
    H = np.linalg.inv(Tx) @ vt[-1].reshape(3, 3) @ Tq
    H /= 0.5 * (np.linalg.norm(H[:, 0]) + np.linalg.norm(H[:, 1]))
    if H[2, 2] < 0:  # the plane's origin (the centroid) must be in front of the camera
        H = -H
    Rp, _ = _nearest_rotation(np.c_[H[:, 0], H[:, 1], np.cross(H[:, 0], H[:, 1])])
    R = Rp @ Q.T
    return Pose(R, H[:, 2] - R @ c)


def _candidates(corrs: Correspondences, cam: Camera) -> list:
    n = len(corrs)
    if n < MIN_POINTS:
        raise InsufficientDataError(f"PnP needs {MIN_POINTS} correspondences, got {n}")
    sv = _spread(corrs.xyz)
    if sv[0] == 0 or sv[2] / sv[0] >= PLANAR_RATIO:
        return [dlt(corrs, cam)]
    # thin sets: the DLT is poorly conditioned, so let the plane fit compete
    out = [planar_pose(corrs, cam)]
    try:
        out.append(dlt(corrs, cam))
    except DegenerateConfigurationError:
        pass
    return out


def _rms(pose: Pose, cam: Camera, corrs: Correspondences) -> float:
    e = _errors(pose, cam, corrs)
    return float(np.sqrt(np.mean(e * e)))


def initial_pose(corrs: Correspondences, cam: Camera) -> Pose:
    """Closed-form estimate: DLT, or for thin point sets the better of DLT and plane fit."""
    cands = _candidates(corrs, cam)
    return min(cands, key=lambda p: _rms(p, cam, corrs))


def _residuals(pose: Pose, cam: Camera, corrs: Correspondences):
    pc = corrs.xyz @ pose.rotation.T + pose.translation
    z = pc[:, 2]
    if np.any(z <= 0):
        return None, pc
    proj = cam.focal * pc[:, :2] / z[:, None] + np.array([cam.px, cam.py])
    return (proj - corrs.uv).ravel(), pc


def _jacobian(pose: Pose, cam: Camera, pc):
    """d(residual)/d(omega, t) for the update R <- exp([omega]x) R, t <- t + dt."""
    n = len(pc)
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    f = cam.focal
    # d(u,v)/d(pc)
    dproj = np.zeros((n, 2, 3))
    dproj[:, 0, 0] = f / z
    dproj[:, 0, 2] = -f * x / z ** 2
    dproj[:, 1, 1] = f / z
    dproj[:, 1, 2] = -f * y / z ** 2
    # d(pc)/d(omega) = -[R X]x ; R X = pc - t
    q = pc - pose.translation
    skew = np.zeros((n, 3, 3))
    skew[:, 0, 1], skew[:, 0, 2] = q[:, 2], -q[:, 1]
    skew[:, 1, 0], skew[:, 1, 2] = -q[:, 2], q[:, 0]
    skew[:, 2, 0], skew[:, 2, 1] = q[:, 1], -q[:, 0]
    J = np.concatenate([dproj @ skew, dproj], axis=2)
    return J.reshape(2 * n, 6)


def _apply(pose: Pose, delta) -> Pose:
    R = Rotation.from_rotvec(delta[:3]).as_matrix() @ pose.rotation
    # keep the iterate on SO(3) to machine precision
    U, _, Vt = np.linalg.svd(R)
    return Pose(U @ Vt, pose.translation + delta[3:])


def refine(pose: Pose, corrs: Correspondences, cam: Camera) -> Pose:
    """Levenberg-Marquardt on the mean squared reprojection error."""
    r, pc = _residuals(pose, cam, corrs)
    if r is None:
        raise BehindCameraError("initial pose puts correspondences behind the camera")
    cost = float(r @ r) / len(corrs)
    lam = LM_LAMBDA0
    for _ in range(LM_ITERS):
        if cost == 0.0:
            break
        J = _jacobian(pose, cam, pc)
        H = J.T @ J
        g = J.T @ r
        try:
            delta = np.linalg.solve(H + lam * np.diag(np.diag(H)), -g)
        except np.linalg.LinAlgError:
            lam *= 10
            continue
        cand = _apply(pose, delta)
        r_new, pc_new = _residuals(cand, cam, corrs)
        new_cost = np.inf if r_new is None else float(r_new @ r_new) / len(corrs)
        if new_cost < cost:
            change = (cost - new_cost) / cost
            pose, r, pc, cost = cand, r_new, pc_new, new_cost
            lam /= 10
            if change < LM_RTOL:
                break
        else:
            lam *= 10
    return pose


def solve_pnp(corrs, cam: Camera) -> Pose:
    corrs = as_correspondences(corrs)
    best, best_cost = None, np.inf
    for init in _candidates(corrs, cam):
        try:
            pose = refine(init, corrs, cam)
        except BehindCameraError:
            continue
        cost = _rms(pose, cam, corrs)
        if cost < best_cost:
            best, best_cost = pose, cost
    if best is None:
        raise BehindCameraError("every initial pose puts correspondences behind the camera")
    return best


def _errors(pose: Pose, cam: Camera, corrs: Correspondences):
    """Per-point reprojection error; points behind the camera get +inf."""
    pc = corrs.xyz @ pose.rotation.T + pose.translation
    z = pc[:, 2]
    out = np.full(len(corrs), np.inf)
    ok = z > 0
    proj = cam.focal * pc[ok, :2] / z[ok, None] + np.array([cam.px, cam.py])
    out[ok] = np.sqrt(((proj - corrs.uv[ok]) ** 2).sum(axis=1))
    return out


def solve_pnp_ransac(corrs, cam: Camera, iters: int = 500, threshold: float = 2.0,
                     seed: int = 0):
    """Robust PnP. Returns (pose, inlier flags).

    The flags are the consensus set of the best minimal hypothesis, so for a
    fixed seed the inlier count never decreases as the threshold grows. The
    returned pose is :func:`solve_pnp` on that consensus set.
    """
    corrs = as_correspondences(corrs)
    n = len(corrs)
    if n < MIN_POINTS:
        raise InsufficientDataError(f"PnP needs {MIN_POINTS} correspondences, got {n}")
    rng = np.random.default_rng(seed)
    best = None
    best_count = 0
    for _ in range(iters):
        idx = rng.choice(n, size=MIN_POINTS, replace=False)
        try:
            hyp = initial_pose(corrs.subset(idx), cam)
        except DegenerateConfigurationError:
            continue
        flags = _errors(hyp, cam, corrs) < threshold
        count = int(flags.sum())
        if count > best_count:
            best, best_count = flags, count
            if count == n:
                break
    if best is None or best_count < MIN_POINTS:
        raise NoConsensusError(f"no hypothesis reached {MIN_POINTS} inliers")
    return solve_pnp(corrs.subset(best), cam), best


def reprojection_error(pose: Pose, cam: Camera, corrs) -> float:
    """Root-mean-square pixel distance between projected points and observations."""
    corrs = as_correspondences(corrs)
    if len(corrs) == 0:
        raise ArgumentError("no correspondences")
    r, _ = _residuals(pose, cam, corrs)
    if r is None:
        raise BehindCameraError("a correspondence lies behind the camera")
    return float(np.sqrt(r @ r / len(corrs)))


def rotation_error_deg(Ra, Rb) -> float:
    """Geodesic angle between two rotations in degrees."""
    c = (np.trace(np.asarray(Ra).T @ np.asarray(Rb)) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
