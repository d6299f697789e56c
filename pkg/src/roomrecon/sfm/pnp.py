"""Camera resection: DLT projection-matrix estimate refined by LM, plus a
RANSAC wrapper used for incremental registration."""

from __future__ import annotations

import numpy as np

from ..core import CameraIntrinsics, Pose, nearest_rotation, project_points, rotvec_to_matrix
from ..errors import DegenerateGeometry, InsufficientData
from .bundle import projection_jacobians

MIN_POINTS = 6
_COND_TOL = 1e-6


def _normalize3(X: np.ndarray) -> np.ndarray:
    c = X.mean(axis=0)
    d = np.sqrt(((X - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(3.0) / d if d > 0 else 1.0
    T = np.eye(4)
    T[:3, :3] *= s
    T[:3, 3] = -s * c
    return T


def _spread_ok(X: np.ndarray) -> bool:
    ev = np.linalg.eigvalsh(np.cov((X - X.mean(axis=0)).T))
    return ev[-1] > 0 and ev[0] / ev[-1] > _COND_TOL


def _dlt(X: np.ndarray, x: np.ndarray):
    """Projection matrix [R|t] (normalized camera) from >= 6 points, or None
    when the linear system is rank deficient."""
    T3 = _normalize3(X)
    c = x.mean(axis=0)
    d = np.sqrt(((x - c) ** 2).sum(axis=1)).mean()
    s2 = np.sqrt(2.0) / d if d > 0 else 1.0
    T2 = np.array([[s2, 0, -s2 * c[0]], [0, s2, -s2 * c[1]], [0, 0, 1.0]])
    Xn = np.c_[X, np.ones(len(X))] @ T3.T
    xn = x * s2 - s2 * c
    n = len(X)
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xn
    A[0::2, 8:12] = -xn[:, :1] * Xn
    A[1::2, 4:8] = Xn
    A[1::2, 8:12] = -xn[:, 1:2] * Xn
    _, S, Vt = np.linalg.svd(A)
    if S[-2] < _COND_TOL * S[0]:
        return None
    P = np.linalg.inv(T2) @ Vt[-1].reshape(3, 4) @ T3
    M = P[:, :3]
    if np.linalg.det(M) < 0:
        P = -P
        M = -M
    sv = np.linalg.svd(M, compute_uv=False)
    scale = sv.mean()
    R = nearest_rotation(M)
    t = P[:, 3] / scale
    return R, t


def refine_pose(R, t, X: np.ndarray, uv: np.ndarray, K: CameraIntrinsics, iters: int = 50,
                huber_px: float | None = None):
    """LM on reprojection error over a single pose. Optional Huber weighting."""
    R = np.array(R, dtype=float)
    t = np.array(t, dtype=float)
    lam = 1e-3

    def cost_of(R_, t_):
        proj, z = project_points(R_, t_, K, X)
        if np.any(z <= 0):
            return np.inf, None
        r = proj - uv
        e = np.sqrt((r**2).sum(1))
        if huber_px is None:
            return 0.5 * float((e**2).sum()), r
        return float(np.where(e <= huber_px, 0.5 * e**2, huber_px * (e - 0.5 * huber_px)).sum()), r

    cost, r = cost_of(R, t)
    if not np.isfinite(cost):
        return R, t
    for _ in range(iters):
        _, _, Jc, _ = projection_jacobians(R, t, X, K)
        e = np.sqrt((r**2).sum(1))
        w = np.ones(len(e)) if huber_px is None else np.where(e <= huber_px, 1.0, huber_px / np.maximum(e, 1e-300))
        J = Jc.reshape(-1, 6)
        ww = np.repeat(w, 2)
        H = J.T @ (ww[:, None] * J)
        g = J.T @ (ww * r.ravel())
        improved = False
        while lam < 1e12:
            d = np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-12), -g)
            Rn = rotvec_to_matrix(d[:3]) @ R
            tn = t + d[3:]
            cn, rn = cost_of(Rn, tn)
            if cn < cost:
                rel = (cost - cn) / max(cost, 1e-300)
                R, t, cost, r = Rn, tn, cn, rn
                lam = max(lam / 10, 1e-12)
                improved = True
                break
            lam *= 10
        if not improved or rel < 1e-12:
            break
    return nearest_rotation(R), t


def pnp(points3d, pixels, K: CameraIntrinsics) -> Pose:
    """Pose from >= 6 exact-ish 2D-3D correspondences (no outlier handling)."""
    X = np.asarray(points3d, dtype=float).reshape(-1, 3)
    uv = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if len(X) < MIN_POINTS:
        raise InsufficientData(f"need at least {MIN_POINTS} correspondences, got {len(X)}")
    if not _spread_ok(X):
        raise DegenerateGeometry("3D points are collinear or coplanar")
    est = _dlt(X, K.normalize(uv))
    if est is None:
        raise DegenerateGeometry("DLT system is rank deficient")
    R, t = refine_pose(*est, X, uv, K)
    return Pose.from_rt(R, t)


def _inliers(R, t, X, uv, K, tol):
    proj, z = project_points(R, t, K, X)
    err = np.sqrt(((proj - uv) ** 2).sum(1))
    return (z > 0) & (err <= tol)


def pnp_ransac(points3d, pixels, K: CameraIntrinsics, iters: int = 300, px_tol: float = 3.0,
               seed: int = 0, init: Pose | None = None):
    """Robust resection. Hypotheses come from 6-point DLT samples and, when
    given, an initial pose refined under a Huber loss. Returns ``(pose, mask)``."""
    X = np.asarray(points3d, dtype=float).reshape(-1, 3)
    uv = np.asarray(pixels, dtype=float).reshape(-1, 2)
    n = len(X)
    if n < MIN_POINTS:
        raise InsufficientData(f"need at least {MIN_POINTS} correspondences, got {n}")
    xn = K.normalize(uv)
    rng = np.random.default_rng(seed)
    best = None
    cands = []
    if init is not None:
        cands.append(refine_pose(init.R, init.t, X, uv, K, iters=20, huber_px=px_tol))
    for _ in range(iters):
        idx = rng.choice(n, MIN_POINTS, replace=False)
        if not _spread_ok(X[idx]):
            continue
        est = _dlt(X[idx], xn[idx])
        if est is not None:
            cands.append(est)
    for k, (R, t) in enumerate(cands):
        m = _inliers(R, t, X, uv, K, px_tol)
        if best is None or m.sum() > best[2].sum():
            best = (R, t, m)
        if k >= (1 if init is not None else 0) and best[2].sum() > 0.8 * n:
            break
    if best is None or best[2].sum() < MIN_POINTS:
        raise DegenerateGeometry("no pose hypothesis with enough inliers")
    R, t, m = best
    for _ in range(3):
        R, t = refine_pose(R, t, X[m], uv[m], K)
        m_new = _inliers(R, t, X, uv, K, px_tol)
        if m_new.sum() < MIN_POINTS or np.array_equal(m_new, m):
            break
        m = m_new
    return Pose.from_rt(R, t), m


def _translation_lstsq(R, X, xn):
    """Least-squares t for fixed R: two linear equations per correspondence."""
    Y = X @ R.T
    A = np.zeros((2 * len(X), 3))
    A[0::2, 0] = 1.0
    A[0::2, 2] = -xn[:, 0]
    A[1::2, 1] = 1.0
    A[1::2, 2] = -xn[:, 1]
    b = np.empty(2 * len(X))
    b[0::2] = xn[:, 0] * Y[:, 2] - Y[:, 0]
    b[1::2] = xn[:, 1] * Y[:, 2] - Y[:, 1]
    return np.linalg.lstsq(A, b, rcond=None)[0]


def pnp_known_rotation(points3d, pixels, K: CameraIntrinsics, R, iters: int = 200, px_tol: float = 3.0,
                       seed: int = 0, min_inliers: int = MIN_POINTS):
    """Resection when the rotation is known up to a small error (e.g. from an
    orientation sensor). Translation hypotheses come from two-point linear
    solves; the winner is refined over all six degrees of freedom.
    Returns ``(pose, mask)``."""
    X = np.asarray(points3d, dtype=float).reshape(-1, 3)
    uv = np.asarray(pixels, dtype=float).reshape(-1, 2)
    R = np.asarray(R, dtype=float)
    n = len(X)
    if n < max(2, min_inliers):
        raise InsufficientData(f"need at least {max(2, min_inliers)} correspondences, got {n}")
    xn = K.normalize(uv)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(iters):
        idx = rng.choice(n, 2, replace=False)
        t = _translation_lstsq(R, X[idx], xn[idx])
        m = _inliers(R, t, X, uv, K, px_tol)
        if best is None or m.sum() > best[1].sum():
            best = (t, m)
    t, m = best
    if m.sum() < min_inliers:
        raise DegenerateGeometry("no translation hypothesis with enough inliers")
    t = _translation_lstsq(R, X[m], xn[m])
    R2, t2 = refine_pose(R, t, X[m], uv[m], K)
    m2 = _inliers(R2, t2, X, uv, K, px_tol)
    if m2.sum() >= m.sum():
        R, t, m = R2, t2, m2
    return Pose.from_rt(R, t), m
