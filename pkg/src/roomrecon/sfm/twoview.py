"""Two-view geometry: essential matrix estimation, pose recovery, triangulation."""

from __future__ import annotations

import numpy as np

from ..core import CameraIntrinsics, Pose
from ..errors import DegenerateGeometry, InsufficientData, InvalidArgument, LowParallax, NegativeDepth

MIN_PARALLAX_DEG = 0.5
MAX_DEPTH_BASELINES = 100.0
_W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def as_correspondences(corrs) -> np.ndarray:
    """Coerce to an (N, 4) array of (uA, vA, uB, vB)."""
    a = np.asarray(corrs, dtype=float)
    if a.size == 0:
        return a.reshape(0, 4)
    return a.reshape(len(a), 4)


def _hartley(x: np.ndarray) -> np.ndarray:
    c = x.mean(axis=0)
    d = np.sqrt(((x - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / d if d > 0 else 1.0
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _design(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Rows of the linear epipolar system xb^T E xa = 0 (last axis has 9)."""
    ua, va = xa[..., 0], xa[..., 1]
    ub, vb = xb[..., 0], xb[..., 1]
    one = np.ones_like(ua)
    return np.stack([ub * ua, ub * va, ub, vb * ua, vb * va, vb, ua, va, one], axis=-1)


def project_to_essential(E: np.ndarray) -> np.ndarray:
    """Nearest essential matrix: singular values (s, s, 0) with s the mean of
    the top two; works on stacks of matrices."""
    U, S, Vt = np.linalg.svd(E)
    s = 0.5 * (S[..., 0] + S[..., 1])
    D = np.zeros(S.shape)
    D[..., 0] = s
    D[..., 1] = s
    return (U * D[..., None, :]) @ Vt


def sampson_distance(E: np.ndarray, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Squared first-order geometric error of normalized correspondences; E may
    be a stack (..., 3, 3), giving (..., N)."""
    ha = np.concatenate([xa, np.ones((len(xa), 1))], axis=1).T  # (3, N)
    hb = np.concatenate([xb, np.ones((len(xb), 1))], axis=1).T
    Ex = E @ ha
    Etx = np.swapaxes(E, -1, -2) @ hb
    num = (hb * Ex).sum(axis=-2) ** 2
    den = Ex[..., 0, :] ** 2 + Ex[..., 1, :] ** 2 + Etx[..., 0, :] ** 2 + Etx[..., 1, :] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        d = num / den
    return np.where(den > 0, d, np.inf)


def eight_point(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Hartley-normalized linear solve on >= 8 normalized correspondences,
    projected to the essential manifold and scaled to unit Frobenius norm."""
    Ta, Tb = _hartley(xa), _hartley(xb)
    na = xa @ Ta[:2, :2].T + Ta[:2, 2]
    nb = xb @ Tb[:2, :2].T + Tb[:2, 2]
    _, _, Vt = np.linalg.svd(_design(na, nb))
    F = Vt[-1].reshape(3, 3)
    E = project_to_essential(Tb.T @ F @ Ta)
    return E / np.linalg.norm(E)


def _required_iters(inlier_frac: float, conf: float = 0.9999, s: int = 8) -> float:
    if inlier_frac <= 0:
        return np.inf
    p = inlier_frac**s
    if p >= 1.0:
        return 1.0
    return np.log(1 - conf) / np.log(1 - p)


def estimate_essential(corrs, K: CameraIntrinsics, iters: int = 2000, sampson_tol: float = 1e-5,
                       seed: int = 0, chunk: int = 250):
    """RANSAC over eight-point hypotheses, scored by Sampson distance in
    normalized coordinates. Returns ``(E, inlier_mask)``.

    Hypotheses are drawn in chunks; sampling stops early once the usual
    99.99 % confidence bound on the best inlier ratio is met.
    """
    c = as_correspondences(corrs)
    n = len(c)
    if n < 8:
        raise InsufficientData(f"need at least 8 correspondences, got {n}")
    if len(np.unique(c, axis=0)) < 8:
        raise DegenerateGeometry("fewer than 8 distinct correspondences")
    xa = K.normalize(c[:, :2])
    xb = K.normalize(c[:, 2:])
    Ta, Tb = _hartley(xa), _hartley(xb)
    na = xa @ Ta[:2, :2].T + Ta[:2, 2]
    nb = xb @ Tb[:2, :2].T + Tb[:2, 2]

    rng = np.random.default_rng(seed)
    best_count, best_mask = 0, None
    done = 0
    while done < iters:
        m = min(chunk, iters - done)
        idx = np.argsort(rng.random((m, n)), axis=1)[:, :8]
        A = _design(na[idx], nb[idx])  # (m, 8, 9)
        _, S, Vt = np.linalg.svd(A)
        ok = S[:, 7] > 1e-10 * S[:, 0]
        F = Vt[:, -1, :].reshape(m, 3, 3)
        E = project_to_essential(Tb.T @ F @ Ta)
        d = sampson_distance(E, xa, xb)
        inl = (d <= sampson_tol) & ok[:, None]
        counts = inl.sum(axis=1)
        j = int(np.argmax(counts))
        if counts[j] > best_count:
            best_count, best_mask = int(counts[j]), inl[j]
        done += m
        if done >= _required_iters(best_count / n):
            break
    if best_count < 8:
        raise DegenerateGeometry(f"best RANSAC hypothesis has only {best_count} inliers")

    mask = best_mask
    E = None
    for _ in range(3):
        E_new = eight_point(xa[mask], xb[mask])
        new_mask = sampson_distance(E_new, xa, xb) <= sampson_tol
        if new_mask.sum() < 8:
            break
        E = E_new
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    if E is None:
        raise DegenerateGeometry("inlier refit collapsed")
    return E, mask


def estimate_essential_known_rotation(corrs, K: CameraIntrinsics, R: np.ndarray, iters: int = 500,
                                      sampson_tol: float = 1e-5, seed: int = 0):
    """RANSAC for the translation direction when the relative rotation is
    already known (e.g. from an orientation sensor). Each correspondence gives
    one linear constraint on t, so two points fix a hypothesis. Returns
    ``(E, inlier_mask)`` with E = [t]x R at unit Frobenius norm."""
    c = as_correspondences(corrs)
    n = len(c)
    if n < 8:
        raise InsufficientData(f"need at least 8 correspondences, got {n}")
    R = np.asarray(R, dtype=float)
    xa = K.normalize(c[:, :2])
    xb = K.normalize(c[:, 2:])
    ha = np.c_[xa, np.ones(n)] @ R.T
    hb = np.c_[xb, np.ones(n)]
    A = np.cross(ha, hb)  # t . a_i = 0
    A /= np.maximum(np.linalg.norm(A, axis=1, keepdims=True), 1e-300)

    def essential(t):
        t = t / np.linalg.norm(t, axis=-1, keepdims=True)
        Tx = np.zeros(t.shape[:-1] + (3, 3))
        Tx[..., 0, 1], Tx[..., 0, 2] = -t[..., 2], t[..., 1]
        Tx[..., 1, 0], Tx[..., 1, 2] = t[..., 2], -t[..., 0]
        Tx[..., 2, 0], Tx[..., 2, 1] = -t[..., 1], t[..., 0]
        return Tx @ R / np.sqrt(2.0)

    rng = np.random.default_rng(seed)
    idx = np.argsort(rng.random((iters, n)), axis=1)[:, :2]
    T = np.cross(A[idx[:, 0]], A[idx[:, 1]])
    ok = np.linalg.norm(T, axis=1) > 1e-9
    if not ok.any():
        raise DegenerateGeometry("no usable two-point sample")
    T = T[ok]
    inl = sampson_distance(essential(T), xa, xb) <= sampson_tol
    mask = inl[int(np.argmax(inl.sum(axis=1)))]
    if mask.sum() < 8:
        raise DegenerateGeometry(f"best hypothesis has only {int(mask.sum())} inliers")
    for _ in range(3):
        t = np.linalg.svd(A[mask])[2][-1]
        new_mask = sampson_distance(essential(t), xa, xb) <= sampson_tol
        if new_mask.sum() < 8 or np.array_equal(new_mask, mask):
            break
        mask = new_mask
    return essential(t), mask


def decompose_essential(E: np.ndarray) -> list:
    """The four (R, t) candidates of an essential matrix, t unit norm."""
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    R1 = U @ _W @ Vt
    R2 = U @ _W.T @ Vt
    t = U[:, 2] / np.linalg.norm(U[:, 2])
    return [(R1, t), (R1, -t), (R2, t), (R2, -t)]


def triangulate_normalized(RA, tA, RB, tB, xa: np.ndarray, xb: np.ndarray):
    """Batched DLT in normalized coordinates. Returns (X, depthA, depthB,
    parallax_deg); points at infinity come back as NaN."""
    PA = np.hstack([RA, np.reshape(tA, (3, 1))])
    PB = np.hstack([RB, np.reshape(tB, (3, 1))])
    A = np.stack([
        xa[:, :1] * PA[2] - PA[0],
        xa[:, 1:2] * PA[2] - PA[1],
        xb[:, :1] * PB[2] - PB[0],
        xb[:, 1:2] * PB[2] - PB[1],
    ], axis=1)
    A = A / np.linalg.norm(A, axis=2, keepdims=True)
    _, _, Vt = np.linalg.svd(A)
    Xh = Vt[:, -1, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        X = Xh[:, :3] / Xh[:, 3:4]
    X[~np.isfinite(X).all(axis=1)] = np.nan
    dA = X @ RA[2] + tA[2]
    dB = X @ RB[2] + tB[2]
    CA = -RA.T @ tA
    CB = -RB.T @ tB
    ra = X - CA
    rb = X - CB
    with np.errstate(invalid="ignore"):
        cosang = (ra * rb).sum(1) / (np.linalg.norm(ra, axis=1) * np.linalg.norm(rb, axis=1))
    par = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return X, dA, dB, par


def _cheirality(R, t, xa, xb):
    X, dA, dB, par = triangulate_normalized(np.eye(3), np.zeros(3), R, t, xa, xb)
    good = (dA > 0) & (dB > 0) & (dA < MAX_DEPTH_BASELINES) & (dB < MAX_DEPTH_BASELINES)
    return np.nan_to_num(good, nan=False).astype(bool), X, par


def select_pose(E, xa: np.ndarray, xb: np.ndarray):
    """Cheirality test over the four decompositions on normalized
    correspondences. Returns (R, t, mask, X, parallax_deg)."""
    best = None
    for R, t in decompose_essential(E):
        mask, X, par = _cheirality(R, t, xa, xb)
        if best is None or mask.sum() > best[2].sum():
            best = (R, t, mask, X, par)
    if best[2].sum() == 0:
        raise DegenerateGeometry("no decomposition puts any point in front of both cameras")
    return best


def recover_pose(E, corrs, K: CameraIntrinsics):
    """Returns ``(R, t, n_in_front)`` with t unit norm."""
    c = as_correspondences(corrs)
    if len(c) == 0:
        raise InsufficientData("no correspondences")
    R, t, mask, _, _ = select_pose(np.asarray(E, dtype=float), K.normalize(c[:, :2]), K.normalize(c[:, 2:]))
    return R, t, int(mask.sum())


def triangulate(pose_a: Pose, pose_b: Pose, K: CameraIntrinsics, uv_a, uv_b) -> np.ndarray:
    """DLT triangulation of a single correspondence."""
    if np.linalg.norm(pose_a.center - pose_b.center) < 1e-12:
        raise LowParallax("camera centres coincide")
    xa = K.normalize(np.asarray(uv_a, dtype=float).reshape(1, 2))
    xb = K.normalize(np.asarray(uv_b, dtype=float).reshape(1, 2))
    X, dA, dB, par = triangulate_normalized(pose_a.R, pose_a.t, pose_b.R, pose_b.t, xa, xb)
    if not np.isfinite(X).all() or not par[0] >= MIN_PARALLAX_DEG:
        raise LowParallax(f"parallax {par[0]:.3g} deg below {MIN_PARALLAX_DEG}")
    if dA[0] <= 0 or dB[0] <= 0:
        raise NegativeDepth("triangulated point lies behind a camera")
    return X[0]


def triangulate_multiview(Rs, ts, xs: np.ndarray) -> np.ndarray:
    """Linear triangulation from any number of views (normalized coordinates)."""
    rows = []
    for R, t, x in zip(Rs, ts, xs):
        P = np.hstack([R, np.reshape(t, (3, 1))])
        rows.append(x[0] * P[2] - P[0])
        rows.append(x[1] * P[2] - P[1])
    A = np.array(rows)
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    _, _, Vt = np.linalg.svd(A)
    Xh = Vt[-1]
    if abs(Xh[3]) < 1e-12:
        raise LowParallax("point at infinity")
    return Xh[:3] / Xh[3]


def validate_rotation(R) -> None:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
        raise InvalidArgument("not a rotation matrix")
