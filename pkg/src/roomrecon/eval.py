"""Ground-truth evaluation of sparse reconstructions.

Reconstructed points are paired with ground-truth surface points, a
similarity transform is fitted with Umeyama's closed form, and point / pose
errors are measured in the ground-truth frame.

When the room geometry is known each track is traced back to the surface
point its observations see, by casting their rays from the ground-truth
cameras. Otherwise points are paired with the listed landmarks.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .capsim import GroundTruth, box_hits
from .core import Quaternion, project_points, rotation_angle
from .errors import DegenerateInput, InvalidArgument
from .sfm.model import SparseModel

MATCH_PX = 2.0
FALLBACK_RADIUS = 0.05  # fraction of the room diagonal
_RANK_TOL = 1e-10


def umeyama_align(estimated, reference):
    """Similarity ``(s, R, t)`` minimizing sum ||s R x_i + t - y_i||^2."""
    x = np.asarray(estimated, dtype=float).reshape(-1, 3)
    y = np.asarray(reference, dtype=float).reshape(-1, 3)
    if len(x) != len(y):
        raise InvalidArgument("point lists differ in length")
    if len(x) < 3:
        raise DegenerateInput(f"need at least 3 point pairs, got {len(x)}")
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    var_x = (xc**2).sum() / len(x)
    S = yc.T @ xc / len(x)
    U, D, Vt = np.linalg.svd(S)
    if var_x <= 0 or D[0] <= 0 or D[1] <= _RANK_TOL * D[0]:
        raise DegenerateInput("point sets are degenerate (coincident or collinear)")
    d = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        d[2] = -1.0
    R = U @ np.diag(d) @ Vt
    s = float((D * d).sum() / var_x)
    t = my - s * R @ mx
    return s, R, t


@dataclass(frozen=True)
class AlignedError:
    scale: float
    rotation: Quaternion
    translation: np.ndarray
    median_point_err_m: float
    mean_point_err_m: float
    median_rel_err: float
    pose_rot_err_deg: list = field(default_factory=list)
    reproj_rmse_px: float = 0.0
    n_matched: int = 0

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "rotation": self.rotation.as_array().tolist(),
            "translation": np.asarray(self.translation, dtype=float).tolist(),
            "median_point_err_m": self.median_point_err_m,
            "mean_point_err_m": self.mean_point_err_m,
            "median_rel_err": self.median_rel_err,
            "pose_rot_err_deg": list(self.pose_rot_err_deg),
            "reproj_rmse_px": self.reproj_rmse_px,
            "n_matched": self.n_matched,
        }


def match_by_ray_casting(model: SparseModel, gt: GroundTruth, tol_px: float = MATCH_PX) -> dict:
    """point id -> ground-truth surface point (3,). The observation rays of a
    track are intersected with the room and the hits averaged; the point is
    kept when that average reprojects within ``tol_px`` of every observation
    in the ground-truth cameras."""
    K = model.intrinsics
    h = np.asarray(gt.half_extents, dtype=float)
    out = {}
    for tr in model.tracks:
        obs = [(f, k) for f, k in tr.observations if 0 <= f < len(gt.poses)]
        if not obs:
            continue
        uv = np.array([model.keypoints[f][k] for f, k in obs], dtype=float)
        xn = K.normalize(uv)
        hits = []
        for (f, _), x in zip(obs, xn):
            pose = gt.pose_of(f)
            hits.append(box_hits(h, pose.center, pose.R.T @ np.array([x[0], x[1], 1.0]))[0][0])
        X = np.mean(hits, axis=0)
        ok = True
        for (f, _), target in zip(obs, uv):
            pose = gt.pose_of(f)
            p, z = project_points(pose.R, pose.t, K, X[None])
            if not (z[0] > 0 and np.linalg.norm(p[0] - target) <= tol_px):
                ok = False
                break
        if ok:
            out[tr.point_id] = X
    return out


def match_by_projection(model: SparseModel, gt: GroundTruth, tol_px: float = MATCH_PX) -> dict:
    """point id -> landmark index. Every observation votes for the landmark
    whose ground-truth projection is nearest to its keypoint; a point takes
    the landmark that wins a strict majority of its observations."""
    K = model.intrinsics
    L = np.asarray(gt.landmarks, dtype=float)
    votes: dict = {}
    by_frame: dict = {}
    for tr in model.tracks:
        for f, k in tr.observations:
            by_frame.setdefault(f, []).append((tr.point_id, k))
    for f in sorted(by_frame):
        if not 0 <= f < len(gt.poses):
            continue
        pose = gt.pose_of(f)
        uv, z = project_points(pose.R, pose.t, K, L)
        vis = np.nonzero((z > 0) & (uv[:, 0] >= -0.5) & (uv[:, 0] <= K.width - 0.5)
                         & (uv[:, 1] >= -0.5) & (uv[:, 1] <= K.height - 0.5))[0]
        if len(vis) == 0:
            continue
        tree = cKDTree(uv[vis])
        pids = [p for p, _ in by_frame[f]]
        kp = np.array([model.keypoints[f][k] for _, k in by_frame[f]], dtype=float)
        d, j = tree.query(kp, distance_upper_bound=tol_px)
        for p, dist, jj in zip(pids, d, j):
            if np.isfinite(dist):
                votes.setdefault(p, []).append(int(vis[jj]))
    n_obs = {tr.point_id: len(tr.observations) for tr in model.tracks}
    out = {}
    for p in sorted(votes):
        lm, count = Counter(votes[p]).most_common(1)[0]
        if 2 * count > n_obs[p]:
            out[p] = lm
    return out


def _match_by_nearest(model: SparseModel, gt: GroundTruth) -> dict:
    """Fallback: align camera centres, then take the nearest landmark within
    a fraction of the room diagonal."""
    ids = [f for f in sorted(model.poses) if 0 <= f < len(gt.poses)]
    est = np.array([model.poses[f].center for f in ids]).reshape(-1, 3)
    ref = np.array([gt.pose_of(f).center for f in ids]).reshape(-1, 3)
    s, R, t = umeyama_align(est, ref)
    pids = sorted(model.points)
    if not pids:
        return {}
    P = np.array([model.points[p] for p in pids]) @ (s * R).T + t
    d, j = cKDTree(np.asarray(gt.landmarks, dtype=float)).query(
        P, distance_upper_bound=FALLBACK_RADIUS * gt.room_diagonal)
    return {p: int(jj) for p, dist, jj in zip(pids, d, j) if np.isfinite(dist)}


def evaluate_model(model: SparseModel, gt: GroundTruth) -> AlignedError:
    """Align ``model`` to ground truth on matched landmarks and report errors."""
    if gt.half_extents is not None:
        refs = match_by_ray_casting(model, gt)
    else:
        L = np.asarray(gt.landmarks, dtype=float)
        matches = match_by_projection(model, gt)
        if len(matches) < 3:
            try:
                matches = _match_by_nearest(model, gt)
            except DegenerateInput:
                pass
        refs = {p: L[j] for p, j in matches.items()}
    if len(refs) < 3:
        raise DegenerateInput(f"only {len(refs)} points matched to ground truth")
    pids = sorted(refs)
    est = np.array([model.points[p] for p in pids], dtype=float)
    ref = np.array([refs[p] for p in pids], dtype=float)
    s, R, t = umeyama_align(est, ref)
    err = np.linalg.norm(est @ (s * R).T + t - ref, axis=1)
    med = float(np.median(err))
    rot_err = []
    for f in sorted(model.poses):
        if 0 <= f < len(gt.poses):
            # world-to-camera rotation expressed in the ground-truth frame
            rot_err.append(float(np.degrees(rotation_angle(model.poses[f].R @ R.T, gt.pose_of(f).R))))
    return AlignedError(
        scale=float(s),
        rotation=Quaternion.from_matrix(R),
        translation=np.asarray(t, dtype=float),
        median_point_err_m=med,
        mean_point_err_m=float(err.mean()),
        median_rel_err=med / gt.room_diagonal,
        pose_rot_err_deg=rot_err,
        reproj_rmse_px=model.reprojection_rmse(),
        n_matched=len(pids),
    )
