"""Levenberg-Marquardt bundle adjustment with a Schur-complement solve.

Poses are updated by a left-multiplied rotation vector (``R <- exp(d) R``)
and an additive translation; the stored quaternion is renormalized after
every step. Points are updated additively.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..core import CameraIntrinsics, Pose, Quaternion, rotvec_to_matrix
from .model import BAOptions, SparseModel

# costs below this are round-off (residuals around 1e-10 px); nothing to refine
COST_FLOOR = 1e-20


def projection_jacobians(R: np.ndarray, t: np.ndarray, X: np.ndarray, K: CameraIntrinsics):
    """Projections of (N, 3) points through a single camera with Jacobians.

    Returns ``(uv, depth, J_cam, J_pt)`` with J_cam (N, 2, 6) ordered
    (rotation increment, translation) and J_pt (N, 2, 3).
    """
    Y = X @ R.T  # R X
    xc = Y + t
    z = xc[:, 2]
    iz = 1.0 / z
    uv = np.stack([K.fx * xc[:, 0] * iz + K.cx, K.fy * xc[:, 1] * iz + K.cy], axis=1)
    Jp = np.zeros((len(X), 2, 3))
    Jp[:, 0, 0] = K.fx * iz
    Jp[:, 0, 2] = -K.fx * xc[:, 0] * iz**2
    Jp[:, 1, 1] = K.fy * iz
    Jp[:, 1, 2] = -K.fy * xc[:, 1] * iz**2
    # d(exp(d) R X)/dd = -[R X]_x
    negskew = np.zeros((len(X), 3, 3))
    negskew[:, 0, 1] = Y[:, 2]
    negskew[:, 0, 2] = -Y[:, 1]
    negskew[:, 1, 0] = -Y[:, 2]
    negskew[:, 1, 2] = Y[:, 0]
    negskew[:, 2, 0] = Y[:, 1]
    negskew[:, 2, 1] = -Y[:, 0]
    J_cam = np.concatenate([Jp @ negskew, Jp], axis=2)
    J_pt = Jp @ R
    return uv, z, J_cam, J_pt


@dataclass
class _Problem:
    cam_ids: list
    pt_ids: list
    cam_idx: np.ndarray  # per observation
    pt_idx: np.ndarray
    uv: np.ndarray
    R: np.ndarray  # (nc, 3, 3)
    t: np.ndarray  # (nc, 3)
    X: np.ndarray  # (np, 3)
    K: CameraIntrinsics

    @classmethod
    def from_model(cls, model: SparseModel) -> "_Problem":
        cam_ids = sorted(model.poses)
        pt_ids = sorted(model.points)
        cpos = {c: i for i, c in enumerate(cam_ids)}
        ppos = {p: i for i, p in enumerate(pt_ids)}
        fr, pt, uv = model.observation_arrays()
        return cls(
            cam_ids, pt_ids,
            np.array([cpos[int(f)] for f in fr], dtype=np.int64),
            np.array([ppos[int(p)] for p in pt], dtype=np.int64),
            uv,
            np.array([model.poses[c].R for c in cam_ids]).reshape(-1, 3, 3),
            np.array([model.poses[c].t for c in cam_ids]).reshape(-1, 3),
            np.array([model.points[p] for p in pt_ids], dtype=float).reshape(-1, 3),
            model.intrinsics,
        )

    def evaluate(self, with_jac: bool = True):
        n = len(self.uv)
        res = np.empty((n, 2))
        depth = np.empty(n)
        Jc = np.empty((n, 2, 6)) if with_jac else None
        Jp = np.empty((n, 2, 3)) if with_jac else None
        for c in range(len(self.cam_ids)):
            m = self.cam_idx == c
            if not m.any():
                continue
            proj, z, jc, jp = projection_jacobians(self.R[c], self.t[c], self.X[self.pt_idx[m]], self.K)
            res[m] = proj - self.uv[m]
            depth[m] = z
            if with_jac:
                Jc[m] = jc
                Jp[m] = jp
        return res, depth, Jc, Jp

    def updated(self, dcam: np.ndarray, dpt: np.ndarray) -> "_Problem":
        R = np.array([rotvec_to_matrix(d[:3]) @ Rc for d, Rc in zip(dcam, self.R)]).reshape(-1, 3, 3)
        # renormalize through the quaternion representation
        R = np.array([Quaternion.from_matrix(r).to_matrix() for r in R]).reshape(-1, 3, 3)
        return _Problem(self.cam_ids, self.pt_ids, self.cam_idx, self.pt_idx, self.uv,
                        R, self.t + dcam[:, 3:], self.X + dpt, self.K)

    def to_model(self, like: SparseModel) -> SparseModel:
        out = like.copy()
        out.poses = {c: Pose.from_rt(self.R[i], self.t[i]) for i, c in enumerate(self.cam_ids)}
        out.points = {p: self.X[i].copy() for i, p in enumerate(self.pt_ids)}
        return out


def reprojection_jacobian(model: SparseModel):
    """Stacked residual vector and sparse Jacobian over all pose parameters
    (6 per camera in sorted frame order) followed by all point coordinates."""
    prob = _Problem.from_model(model)
    res, _, Jc, Jp = prob.evaluate()
    return res.ravel(), _assemble(prob, Jc, Jp, np.ones(len(prob.cam_ids) * 6, dtype=bool))


def apply_parameter_step(model: SparseModel, delta: np.ndarray) -> SparseModel:
    """Apply a full parameter step laid out as in :func:`reprojection_jacobian`."""
    prob = _Problem.from_model(model)
    nc = len(prob.cam_ids)
    return prob.updated(delta[:6 * nc].reshape(nc, 6), delta[6 * nc:].reshape(-1, 3)).to_model(model)


def _assemble(prob: _Problem, Jc, Jp, cam_free: np.ndarray) -> sp.csr_matrix:
    n = len(prob.uv)
    nc = len(prob.cam_ids)
    col_of = -np.ones(nc * 6, dtype=np.int64)
    col_of[cam_free] = np.arange(cam_free.sum())
    ncol_c = int(cam_free.sum())
    rows = np.repeat(np.arange(2 * n), 6).reshape(n, 2, 6)
    cols = np.broadcast_to((prob.cam_idx * 6)[:, None, None] + np.arange(6), (n, 2, 6))
    ccols = col_of[cols]
    keep = ccols >= 0
    prow = np.repeat(np.arange(2 * n), 3).reshape(n, 2, 3)
    pcols = np.broadcast_to((prob.pt_idx * 3)[:, None, None] + np.arange(3), (n, 2, 3)) + ncol_c
    data = np.concatenate([Jc[keep], Jp.ravel()])
    r = np.concatenate([rows[keep], prow.ravel()])
    c = np.concatenate([ccols[keep], pcols.ravel()])
    return sp.csr_matrix((data, (r, c)), shape=(2 * n, ncol_c + 3 * len(prob.pt_ids)))


def huber_cost(res: np.ndarray, delta: float) -> float:
    e = np.sqrt((res**2).sum(axis=1))
    return float(np.sum(np.where(e <= delta, 0.5 * e**2, delta * (e - 0.5 * delta))))


def _huber_weights(res: np.ndarray, delta: float) -> np.ndarray:
    e = np.sqrt((res**2).sum(axis=1))
    return np.where(e <= delta, 1.0, delta / np.maximum(e, 1e-300))


def _free_camera_mask(prob: _Problem, gauge: tuple) -> np.ndarray:
    free = np.ones((len(prob.cam_ids), 6), dtype=bool)
    fixed, scale = gauge
    if fixed in prob.cam_ids:
        free[prob.cam_ids.index(fixed)] = False
    if scale is not None and scale in prob.cam_ids:
        i = prob.cam_ids.index(scale)
        free[i, 3 + int(np.argmax(np.abs(prob.t[i])))] = False
    return free.ravel()


def gradient_norm(model: SparseModel, delta: float = 2.0) -> float:
    """Norm of the robust-cost gradient over the free (gauge-fixed) parameters."""
    prob = _Problem.from_model(model)
    res, _, Jc, Jp = prob.evaluate()
    J = _assemble(prob, Jc, Jp, _free_camera_mask(prob, model.gauge_frames()))
    w = np.repeat(_huber_weights(res, delta), 2)
    return float(np.linalg.norm(J.T @ (w * res.ravel())))


def bundle_adjust(model: SparseModel, opts: BAOptions | None = None):
    """Refine all poses and points. Returns ``(model, cost_trace)`` where the
    trace holds the initial cost followed by the cost after each accepted step."""
    opts = opts or BAOptions()
    model.validate()
    prob = _Problem.from_model(model)
    gauge = model.gauge_frames()
    free = _free_camera_mask(prob, gauge)
    nfree_c = int(free.sum())
    npt = len(prob.pt_ids)
    delta = opts.huber_delta_px

    res, _, Jc, Jp = prob.evaluate()
    cost = huber_cost(res, delta)
    trace = [cost]
    lam = opts.lm_lambda_init
    it = 0
    need_system = True
    while it < opts.max_iters and cost > COST_FLOOR:
        it += 1
        if need_system:
            J = _assemble(prob, Jc, Jp, free)
            w = np.repeat(_huber_weights(res, delta), 2)
            JtW = J.T.multiply(w).tocsr()
            H = (JtW @ J).tocsr()
            g = JtW @ res.ravel()
            U = H[:nfree_c, :nfree_c].toarray()
            W = H[:nfree_c, nfree_c:]
            Vblocks = np.zeros((npt, 3, 3))
            Hp = H[nfree_c:, nfree_c:].tocoo()
            Vblocks[Hp.row // 3, Hp.row % 3, Hp.col % 3] = Hp.data
            gc, gp = g[:nfree_c], g[nfree_c:].reshape(npt, 3)
            need_system = False

        Ud = U + lam * np.diag(np.diag(U))
        Vd = Vblocks + lam * Vblocks * np.eye(3)[None]
        Vinv = np.linalg.inv(Vd + 1e-12 * np.eye(3)[None])
        Vinv_sp = sp.block_diag(list(Vinv), format="csr") if npt else sp.csr_matrix((0, 0))
        WVinv = W @ Vinv_sp
        S = Ud - (WVinv @ W.T).toarray()
        rhs = -gc + WVinv @ gp.ravel()
        try:
            dc = np.linalg.solve(S, rhs) if nfree_c else np.zeros(0)
        except np.linalg.LinAlgError:
            lam *= opts.lm_lambda_factor
            continue
        dp = np.einsum("pij,pj->pi", Vinv, -gp - (W.T @ dc).reshape(npt, 3))

        dcam = np.zeros(len(prob.cam_ids) * 6)
        dcam[free] = dc
        cand = prob.updated(dcam.reshape(-1, 6), dp)
        res_c, depth_c, _, _ = cand.evaluate(with_jac=False)
        new_cost = huber_cost(res_c, delta) if np.all(depth_c > 0) else np.inf
        if new_cost < cost:
            rel = (cost - new_cost) / cost
            prob, cost = cand, new_cost
            trace.append(cost)
            lam = max(lam / opts.lm_lambda_factor, 1e-15)
            res, _, Jc, Jp = prob.evaluate()
            need_system = True
            if rel < opts.cost_rel_tol:
                break
        else:
            lam *= opts.lm_lambda_factor
            if lam > 1e16:
                break
    if len(trace) == 1:
        return model.copy(), trace
    return prob.to_model(model), trace
