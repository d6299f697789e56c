"""Incremental sparse reconstruction from a list of frames."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..core import (CameraIntrinsics, Pose, camera_rotation_from_orient, nearest_rotation, project_points,
                    quat_angular_distance, rotation_angle)
from ..errors import InsufficientData, InvalidArgument, PipelineError, ReconstructionFailed
from .bundle import bundle_adjust
from .features import detect_features, feature_arrays, match_descriptors
from .model import BAOptions, SparseModel, Track
from .pnp import pnp_known_rotation, pnp_ransac
from .twoview import estimate_essential, estimate_essential_known_rotation, select_pose, triangulate_multiview

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReconstructOptions:
    max_features: int = 600
    patch_size: int = 11
    match_ratio: float = 0.8
    pair_max_angle_deg: float = 50.0
    min_pair_inliers: int = 20
    ransac_iters: int = 2000
    sampson_tol: float = 1e-5
    pair_rot_tol_deg: float = 1.0
    min_tri_parallax_deg: float = 1.0
    bootstrap_parallax_cap_deg: float = 5.0
    reproj_tol_px: float = 3.0
    min_register_inliers: int = 15
    min_prior_register_inliers: int = 6
    min_direct_register_inliers: int = 12
    register_rot_tol_deg: float = 2.0
    ba_every: int = 3
    ba_iters_incremental: int = 25
    seed: int = 0

    def __post_init__(self):
        for name in ("max_features", "min_pair_inliers", "ransac_iters", "min_register_inliers",
                     "min_prior_register_inliers", "min_direct_register_inliers",
                     "ba_every", "ba_iters_incremental"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"ReconstructOptions.{name} must be >= 1")
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise InvalidArgument("ReconstructOptions.patch_size must be odd and >= 3")
        if not 0 < self.match_ratio <= 1:
            raise InvalidArgument("ReconstructOptions.match_ratio must lie in (0, 1]")
        for name in ("pair_max_angle_deg", "sampson_tol", "reproj_tol_px", "pair_rot_tol_deg",
                     "register_rot_tol_deg", "bootstrap_parallax_cap_deg"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"ReconstructOptions.{name} must be positive")
        if self.min_tri_parallax_deg < 0 or self.seed < 0:
            raise InvalidArgument("ReconstructOptions.min_tri_parallax_deg and seed must be nonnegative")


@dataclass
class _PairGeometry:
    i: int
    j: int
    matches: np.ndarray  # (k, 2) feature indices, RANSAC inliers
    E: np.ndarray


def _union_find_tracks(n_frames: int, pairs: list) -> list:
    parent: dict = {}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for pg in pairs:
        for fa, fb in pg.matches:
            a, b = (pg.i, int(fa)), (pg.j, int(fb))
            for node in (a, b):
                parent.setdefault(node, node)
            ra, rb = find(a), find(b)
            if ra != rb:
                if rb < ra:
                    ra, rb = rb, ra
                parent[rb] = ra
    groups: dict = {}
    for node in sorted(parent):
        groups.setdefault(find(node), []).append(node)
    tracks = []
    for root in sorted(groups):
        nodes = groups[root]
        frames = [f for f, _ in nodes]
        if len(set(frames)) != len(frames):
            continue  # inconsistent track: two features in one frame
        tracks.append({f: k for f, k in nodes})
    return tracks


class _Builder:
    def __init__(self, frames, K: CameraIntrinsics, opts: ReconstructOptions, ba: BAOptions, threads: int):
        self.frames = list(frames)
        self.K = K
        self.opts = opts
        self.ba = ba
        self.threads = threads
        self.n = len(self.frames)
        self.poses: dict = {}  # frame position -> Pose
        self.points: dict = {}  # track index -> xyz
        self.obs: dict = {}  # track index -> set of frame positions used
        self.gauge = None

    # -- front end -------------------------------------------------------
    def detect(self):
        def run(f):
            return feature_arrays(detect_features(f.image, self.opts.max_features, patch=self.opts.patch_size))

        if self.threads == 1:
            res = [run(f) for f in self.frames]
        else:
            with ThreadPoolExecutor(max_workers=self.threads or None) as ex:
                res = list(ex.map(run, self.frames))
        self.xy = [r[0] for r in res]
        self.desc = [r[1] for r in res]

    def candidate_pairs(self) -> list:
        out = []
        lim = np.deg2rad(self.opts.pair_max_angle_deg)
        for i in range(self.n):
            for j in range(i + 1, self.n):
                if quat_angular_distance(self.frames[i].imu.orient, self.frames[j].imu.orient) <= lim:
                    out.append((i, j))
        return out

    def _imu_relative_rotation(self, i: int, j: int) -> np.ndarray:
        Ri = camera_rotation_from_orient(self.frames[i].imu.orient).to_matrix()
        Rj = camera_rotation_from_orient(self.frames[j].imu.orient).to_matrix()
        return Rj @ Ri.T

    def _rotation_agrees(self, E, corrs, mask, R_imu) -> bool:
        c = corrs[mask]
        try:
            R = select_pose(E, self.K.normalize(c[:, :2]), self.K.normalize(c[:, 2:]))[0]
        except PipelineError:
            return False
        return np.degrees(rotation_angle(R, R_imu)) <= self.opts.pair_rot_tol_deg

    def verify(self, pair):
        """Match a pair and estimate its essential matrix. The eight-point
        RANSAC result is kept when its rotation agrees with the orientation
        sensor; otherwise the sensor rotation is held fixed and only the
        translation direction is estimated. Repeated wall texture easily
        produces wrong but self-consistent eight-point solutions."""
        i, j = pair
        m = match_descriptors(self.desc[i], self.desc[j], self.opts.match_ratio)
        if len(m) < self.opts.min_pair_inliers:
            return None
        m = np.array(m)
        corrs = np.c_[self.xy[i][m[:, 0]], self.xy[j][m[:, 1]]]
        R_imu = self._imu_relative_rotation(i, j)
        found = None
        try:
            E, mask = estimate_essential(corrs, self.K, self.opts.ransac_iters, self.opts.sampson_tol, self.opts.seed)
            if self._rotation_agrees(E, corrs, mask, R_imu):
                found = (E, mask)
        except PipelineError:
            pass
        if found is None:
            try:
                E, mask = estimate_essential_known_rotation(corrs, self.K, R_imu, sampson_tol=self.opts.sampson_tol,
                                                            seed=self.opts.seed)
            except PipelineError:
                return None
            if not self._rotation_agrees(E, corrs, mask, R_imu):
                return None
            found = (E, mask)
        E, mask = found
        if mask.sum() < self.opts.min_pair_inliers:
            return None
        return _PairGeometry(i, j, m[mask], E)

    def match_all(self):
        pairs = self.candidate_pairs()
        if self.threads == 1:
            res = [self.verify(p) for p in pairs]
        else:
            with ThreadPoolExecutor(max_workers=self.threads or None) as ex:
                res = list(ex.map(self.verify, pairs))
        self.pairs = [r for r in res if r is not None]
        self.tracks = _union_find_tracks(self.n, self.pairs)
        self.track_of = [dict() for _ in range(self.n)]  # frame pos -> {feature: track}
        for ti, tr in enumerate(self.tracks):
            for f, k in tr.items():
                self.track_of[f][k] = ti

    # -- geometry helpers ------------------------------------------------
    def _normalized(self, f, k):
        return self.K.normalize(self.xy[f][k])

    def _try_triangulate(self, ti: int) -> bool:
        tr = self.tracks[ti]
        regs = [f for f in sorted(tr) if f in self.poses]
        if len(regs) < 2:
            return False
        Rs = [self.poses[f].R for f in regs]
        ts = [self.poses[f].t for f in regs]
        xs = [self._normalized(f, tr[f]) for f in regs]
        try:
            X = triangulate_multiview(Rs, ts, xs)
        except PipelineError:
            return False
        good = []
        for f in regs:
            p = self.poses[f]
            uv, z = project_points(p.R, p.t, self.K, X[None])
            if z[0] > 0 and np.linalg.norm(uv[0] - self.xy[f][tr[f]]) <= self.opts.reproj_tol_px:
                good.append(f)
        if len(good) < 2:
            return False
        centres = np.array([self.poses[f].center for f in good])
        rays = X - centres
        rays /= np.linalg.norm(rays, axis=1, keepdims=True)
        cosmin = np.min(rays @ rays.T)
        if np.degrees(np.arccos(np.clip(cosmin, -1, 1))) < self.opts.min_tri_parallax_deg:
            return False
        self.points[ti] = X
        self.obs[ti] = set(good)
        return True

    def _extend(self, f: int):
        """Attach frame ``f`` to existing points it reprojects well onto, then
        triangulate any newly observed tracks."""
        p = self.poses[f]
        for k, ti in sorted(self.track_of[f].items()):
            if ti in self.points:
                if f in self.obs[ti]:
                    continue
                uv, z = project_points(p.R, p.t, self.K, self.points[ti][None])
                if z[0] > 0 and np.linalg.norm(uv[0] - self.xy[f][k]) <= self.opts.reproj_tol_px:
                    self.obs[ti].add(f)
            else:
                self._try_triangulate(ti)

    # -- model conversion ------------------------------------------------
    def model(self) -> SparseModel:
        ids = [fr.id for fr in self.frames]
        poses = {ids[f]: p for f, p in sorted(self.poses.items())}
        tracks, points = [], {}
        for pid, ti in enumerate(sorted(self.points)):
            tr = self.tracks[ti]
            tracks.append(Track(pid, [(ids[f], tr[f]) for f in sorted(self.obs[ti])]))
            points[pid] = np.array(self.points[ti], dtype=float)
        keypoints = {ids[f]: self.xy[f] for f in sorted(self.poses)}
        gauge = (ids[self.gauge[0]], ids[self.gauge[1]]) if self.gauge else None
        return SparseModel(poses, points, tracks, self.K, keypoints, gauge)

    def absorb(self, model: SparseModel):
        pos = {fr.id: i for i, fr in enumerate(self.frames)}
        self.poses = {pos[fid]: p for fid, p in model.poses.items()}
        for pid, ti in enumerate(sorted(self.points)):
            self.points[ti] = model.points[pid]

    def adjust(self, max_iters: int):
        m = self.model()
        if not m.tracks:
            return
        opts = BAOptions(max_iters=max_iters, lm_lambda_init=self.ba.lm_lambda_init,
                         lm_lambda_factor=self.ba.lm_lambda_factor, cost_rel_tol=self.ba.cost_rel_tol,
                         huber_delta_px=self.ba.huber_delta_px)
        out, _ = bundle_adjust(m, opts)
        self.absorb(out)
        self.filter_outliers(self.opts.reproj_tol_px)

    def filter_outliers(self, tol: float):
        for ti in sorted(self.points):
            X = self.points[ti]
            keep = set()
            for f in self.obs[ti]:
                p = self.poses[f]
                uv, z = project_points(p.R, p.t, self.K, X[None])
                if z[0] > 0 and np.linalg.norm(uv[0] - self.xy[f][self.tracks[ti][f]]) <= tol:
                    keep.add(f)
            if len(keep) < 2:
                del self.points[ti]
                del self.obs[ti]
            else:
                self.obs[ti] = keep

    # -- stages ----------------------------------------------------------
    def bootstrap(self):
        cands = []
        for pg in self.pairs:
            if len(pg.matches) < max(self.opts.min_pair_inliers, 30):
                continue
            c = np.c_[self.xy[pg.i][pg.matches[:, 0]], self.xy[pg.j][pg.matches[:, 1]]]
            xa, xb = self.K.normalize(c[:, :2]), self.K.normalize(c[:, 2:])
            try:
                R, t, mask, X, par = select_pose(pg.E, xa, xb)
            except PipelineError:
                continue
            if mask.sum() < 30:
                continue
            med = float(np.median(par[mask]))
            if med < self.opts.min_tri_parallax_deg:
                continue
            # parallax beyond a few degrees no longer helps conditioning, while
            # wide baselines tend to carry fewer and less reliable matches
            score = int(mask.sum()) * min(med, self.opts.bootstrap_parallax_cap_deg)
            cands.append((-score, pg.i, pg.j, R, t))
        cands.sort(key=lambda c: (c[0], c[1], c[2]))
        for _, i, j, R, t in cands[:10]:
            self.poses = {i: Pose.identity(), j: Pose.from_rt(R, t)}
            self.points, self.obs = {}, {}
            self.gauge = (i, j)
            for ti, tr in enumerate(self.tracks):
                if i in tr and j in tr:
                    self._try_triangulate(ti)
            if len(self.points) < 30:
                continue
            self.adjust(self.ba.max_iters)
            if len(self.points) >= 30:
                log.info("bootstrap pair %d-%d with %d points", self.frames[i].id, self.frames[j].id, len(self.points))
                return
        raise ReconstructionFailed("no frame pair supports a two-view initialization")

    def _imu_rotation(self, f: int) -> np.ndarray:
        return camera_rotation_from_orient(self.frames[f].imu.orient).to_matrix()

    def _predicted_rotation(self, f: int) -> np.ndarray:
        """Rotation of frame ``f`` in model coordinates predicted from its
        orientation sensor, using the sensor-to-model alignment of all
        registered frames."""
        M = sum(self._imu_rotation(g).T @ self.poses[g].R for g in sorted(self.poses))
        return self._imu_rotation(f) @ nearest_rotation(M)

    def _register(self, f: int, X: np.ndarray, uv: np.ndarray, init):
        """Pose and inlier mask for frame ``f`` or None. General PnP is used
        when there are enough correspondences and its rotation is consistent
        with the sensor; otherwise the sensor rotation seeds a translation-only
        resection that needs far fewer points."""
        R_pred = self._predicted_rotation(f)
        tol = self.opts.register_rot_tol_deg
        if len(X) >= self.opts.min_register_inliers:
            try:
                pose, mask = pnp_ransac(X, uv, self.K, px_tol=self.opts.reproj_tol_px, seed=self.opts.seed, init=init)
                if (mask.sum() >= self.opts.min_register_inliers
                        and np.degrees(rotation_angle(pose.R, R_pred)) <= tol):
                    return pose, mask
            except PipelineError:
                pass
        try:
            pose, mask = pnp_known_rotation(X, uv, self.K, R_pred, px_tol=self.opts.reproj_tol_px,
                                            seed=self.opts.seed, min_inliers=self.opts.min_prior_register_inliers)
        except PipelineError:
            return None
        if np.degrees(rotation_angle(pose.R, R_pred)) > tol:
            return None
        return pose, mask

    def _point_matches(self, f: int) -> list:
        """(feature, track) pairs from matching frame ``f`` against the
        descriptors seen for every triangulated point. A point's distance to
        a feature is the smallest over its observations."""
        tis = sorted(self.points)
        rows, owner = [], []
        for n, ti in enumerate(tis):
            tr = self.tracks[ti]
            for g in sorted(self.obs[ti]):
                rows.append(self.desc[g][tr[g]])
                owner.append(n)
        if len(tis) < 2 or len(self.desc[f]) == 0:
            return []
        D = np.array(rows)
        d2 = (self.desc[f]**2).sum(1)[:, None] + (D**2).sum(1)[None, :] - 2.0 * self.desc[f] @ D.T
        P = np.full((len(tis), len(self.desc[f])), np.inf)
        np.minimum.at(P, np.array(owner), np.sqrt(np.maximum(d2, 0.0)).T)
        P = P.T
        ab, ba = P.argmin(axis=1), P.argmin(axis=0)
        out = []
        for k, j in enumerate(ab):
            if ba[j] == k and P[k, j] < self.opts.match_ratio * np.partition(P[k], 1)[1]:
                out.append((k, tis[j]))
        return out

    def _direct_resection(self, tried: dict) -> bool:
        """Register one frame from direct 2D-3D descriptor matches. This
        bridges gaps in the pairwise match graph, where no verified pair links
        an unregistered frame to the model. ``tried`` maps frame -> point count
        at the last failed attempt."""
        need = self.opts.min_direct_register_inliers
        for f in range(self.n):
            if f in self.poses or tried.get(f) == len(self.points):
                continue
            tried[f] = len(self.points)
            m = self._point_matches(f)
            if len(m) < need:
                continue
            ks = [k for k, _ in m]
            X = np.array([self.points[ti] for _, ti in m])
            R_pred = self._predicted_rotation(f)
            try:
                pose, mask = pnp_known_rotation(X, self.xy[f][ks], self.K, R_pred, px_tol=self.opts.reproj_tol_px,
                                                seed=self.opts.seed, min_inliers=need)
            except PipelineError:
                continue
            if np.degrees(rotation_angle(pose.R, R_pred)) > self.opts.register_rot_tol_deg:
                continue
            self.poses[f] = pose
            for (k, ti), ok in zip(m, mask):
                if not ok:
                    continue
                if f not in self.tracks[ti] and k not in self.track_of[f]:
                    self.tracks[ti][f] = k
                    self.track_of[f][k] = ti
                if self.tracks[ti].get(f) == k:
                    self.obs[ti].add(f)
            log.info("frame %d registered from %d direct matches", self.frames[f].id, int(mask.sum()))
            self._extend(f)
            return True
        return False

    def register_loop(self):
        failed_at: dict = {}
        direct_tried: dict = {}
        since_ba = 0
        need = min(self.opts.min_register_inliers, self.opts.min_prior_register_inliers)
        while True:
            best, best_n = None, 0
            for f in range(self.n):
                if f in self.poses:
                    continue
                n2d3d = sum(1 for ti in self.track_of[f].values() if ti in self.points)
                if n2d3d > best_n and n2d3d > failed_at.get(f, -1):
                    best, best_n = f, n2d3d
            if best is None or best_n < need:
                if not self._direct_resection(direct_tried):
                    break
                since_ba += 1
                continue
            f = best
            ks = sorted(k for k, ti in self.track_of[f].items() if ti in self.points)
            X = np.array([self.points[self.track_of[f][k]] for k in ks])
            uv = self.xy[f][ks]
            shared = {}
            for k in ks:
                for g in self.obs[self.track_of[f][k]]:
                    shared[g] = shared.get(g, 0) + 1
            init = self.poses[max(sorted(shared), key=lambda g: shared[g])] if shared else None
            found = self._register(f, X, uv, init)
            if found is None:
                failed_at[f] = best_n
                continue
            pose, mask = found
            self.poses[f] = pose
            for k, ok in zip(ks, mask):
                if ok:
                    self.obs[self.track_of[f][k]].add(f)
            self._extend(f)
            since_ba += 1
            if since_ba >= self.opts.ba_every:
                self.adjust(self.opts.ba_iters_incremental)
                since_ba = 0
        self.adjust(self.ba.max_iters)


def reconstruct(frames, K: CameraIntrinsics, opts: ReconstructOptions | None = None,
                ba: BAOptions | None = None, threads: int = 1) -> SparseModel:
    """Build a sparse model from ``frames`` (sequence of Frame). Frames that
    cannot be registered are listed in ``model.skipped_frames``."""
    frames = list(frames)
    if len(frames) < 2:
        raise InsufficientData(f"need at least 2 frames, got {len(frames)}")
    opts = opts or ReconstructOptions()
    b = _Builder(frames, K, opts, ba or BAOptions(), threads)
    b.detect()
    b.match_all()
    b.bootstrap()
    b.register_loop()
    model = b.model()
    model.skipped_frames = [fr.id for i, fr in enumerate(frames) if i not in b.poses]
    model.point_gray = _point_gray(model, {fr.id: fr for fr in frames})
    return model


def _point_gray(model: SparseModel, frames: dict) -> dict:
    out = {}
    for tr in model.tracks:
        vals = []
        for f, k in tr.observations:
            img = frames[f].image.pixels
            x, y = model.keypoints[f][k]
            vals.append(float(img[int(round(y)), int(round(x))]))
        out[tr.point_id] = int(round(float(np.mean(vals))))
    return out
