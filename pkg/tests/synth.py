"""Synthetic scenes and brute-force oracles shared by the tests."""

import itertools
import math

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial.transform import Rotation

from roomrecon.capsim import checkerboard_image
from roomrecon.core import (GRAVITY, CameraIntrinsics, Frame, GrayImage, ImuSample, Pose, Quaternion,
                            project_points, rotvec_to_matrix)
from roomrecon.sfm.bundle import apply_parameter_step, reprojection_jacobian
from roomrecon.sfm.model import SparseModel, Track

K_TEST = CameraIntrinsics(fx=220.0, fy=220.0, cx=128.0, cy=96.0, width=256, height=192)


def two_view_instance(rng, n=20, K=K_TEST):
    """Random relative pose and n points visible in both views."""
    while True:
        R = rotvec_to_matrix(rng.normal(size=3) * 0.15)
        t = rng.normal(size=3)
        t /= np.linalg.norm(t)
        X = np.c_[rng.uniform(-1.5, 1.5, (n, 2)), rng.uniform(3.0, 7.0, n)]
        uva, za = project_points(np.eye(3), np.zeros(3), K, X)
        uvb, zb = project_points(R, t, K, X)
        if np.all(zb > 0):
            return R, t, X, uva, uvb


def random_model(rng, n_cams=4, n_pts=30, K=K_TEST, noise_px=0.0):
    """Cameras along a line looking at a cloud of points; every point seen by every camera."""
    X = rng.uniform([-1.5, -1.0, 4.0], [1.5, 1.0, 7.0], (n_pts, 3))
    poses = {}
    for i in range(n_cams):
        c = np.array([0.4 * i - 0.2 * (n_cams - 1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)])
        R = rotvec_to_matrix(rng.normal(size=3) * 0.03)  # roughly looking down +z
        poses[i] = Pose.from_center(R, c)
    # fix camera 0 at identity by moving the world
    P0 = poses[0]
    X = P0.transform(X)
    poses = {i: Pose.from_rt(p.R @ P0.R.T, p.t - p.R @ P0.R.T @ P0.t) for i, p in poses.items()}
    keypoints = {}
    for i, p in poses.items():
        uv, z = project_points(p.R, p.t, K, X)
        assert np.all(z > 0)
        keypoints[i] = uv + noise_px * rng.normal(size=uv.shape)
    tracks = [Track(j, [(i, j) for i in range(n_cams)]) for j in range(n_pts)]
    points = {j: X[j].copy() for j in range(n_pts)}
    return SparseModel(poses, points, tracks, K, keypoints, gauge=(0, 1))


def perturb(model, rng, rot_deg=2.0, trans_m=0.05, pt_m=0.05):
    out = model.copy()
    fixed, scale = model.gauge_frames()
    for i, p in model.poses.items():
        if i == fixed:
            continue
        dR = rotvec_to_matrix(np.deg2rad(rot_deg) * _unit(rng))
        dt = trans_m * _unit(rng)
        if i == scale:
            k = int(np.argmax(np.abs(p.t)))
            dt[k] = 0.0
        out.poses[i] = Pose.from_rt(dR @ p.R, p.t + dt)
    for j in out.points:
        out.points[j] = out.points[j] + pt_m * _unit(rng)
    return out


def fd_jacobian(model, h=1e-6):
    """Analytic and central-difference Jacobians of the reprojection residuals."""
    r0, J = reprojection_jacobian(model)
    n = J.shape[1]
    out = np.empty((len(r0), n))
    for k in range(n):
        d = np.zeros(n)
        d[k] = h
        rp, _ = reprojection_jacobian(apply_parameter_step(model, d))
        rm, _ = reprojection_jacobian(apply_parameter_step(model, -d))
        out[:, k] = (rp - rm) / (2 * h)
    return J.toarray(), out


def max_rel_err(A, B):
    return float(np.abs(A - B).max() / max(np.abs(B).max(), 1e-12))


def _unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


# capture scenarios used by the end-to-end tests

def clean_walkthrough():
    """30 frames, steady walking, no blur, no exposure change, exact orientation."""
    from roomrecon.capsim import TrajectoryConfig
    return TrajectoryConfig(duration_s=60.0, pos_walk_sigma=0.15, orient_jitter_sigma=0.08, dwell_fraction=0.0,
                            blur_fraction=0.0, exposure_spread=0.0, orient_noise_sigma=0.0)


def degraded_capture():
    """Default capture with half the frames blurred and the widest exposure spread
    used by the acceptance suite."""
    from roomrecon.capsim import TrajectoryConfig
    return TrajectoryConfig(blur_fraction=0.5, exposure_spread=0.5)


# reduction helpers

TINY = GrayImage(4, 4, np.full((4, 4), 128))


def frame(i, orient=None, accel=(0.0, 0.0, GRAVITY), t_us=None, img=TINY):
    q = orient or Quaternion.identity()
    t = 2_000_000 * i if t_us is None else t_us
    return Frame(i, t, img, ImuSample(t, q, accel))


def yawed(deg, pitch_deg=0.0):
    """Device-to-world orientation of a camera looking at (yaw, pitch)."""
    # camera axes (right, down, forward) expressed in world coordinates
    y, p = math.radians(deg), math.radians(pitch_deg)
    fwd = np.array([math.cos(p) * math.cos(y), math.cos(p) * math.sin(y), math.sin(p)])
    right = np.cross(fwd, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return Quaternion.from_matrix(np.column_stack([right, down, fwd]))


def redundant_pairs(items, cfg):
    for (fa, _), (fb, _) in itertools.combinations(items, 2):
        d = Rotation.from_quat(fa.imu.orient.as_array()[[1, 2, 3, 0]]).inv() * Rotation.from_quat(
            fb.imu.orient.as_array()[[1, 2, 3, 0]])
        if abs(fa.id - fb.id) < cfg.dedup_window and d.magnitude() < cfg.dedup_theta_min:
            yield fa.id, fb.id


def dedup_oracle(items, cfg):
    """All kept sets that pack (no redundant kept pair) and cover (each drop is
    redundant with a keep), and among them the one a best-first greedy pass
    selects: lexicographically largest when frames are ranked by score."""
    ids = [f.id for f, _ in items]
    red = set()
    for a, b in redundant_pairs(items, cfg):
        red.add((a, b))
        red.add((b, a))
    valid = []
    for r in range(len(ids) + 1):
        for keep in itertools.combinations(ids, r):
            ks = set(keep)
            packs = not any((a, b) in red for a in ks for b in ks)
            covers = all(any((d, k) in red for k in ks) for d in set(ids) - ks)
            if packs and covers:
                valid.append(ks)
    rank = [f.id for f, _ in sorted(items, key=lambda fs: (-fs[1], fs[0].id))]
    best = max(valid, key=lambda ks: [i in ks for i in rank])
    return valid, sorted(best)


def blurred_board(sigma):
    a = checkerboard_image().pixels.astype(float)
    if sigma:
        a = gaussian_filter(a, sigma, mode="reflect")
    return GrayImage(a.shape[1], a.shape[0], np.rint(a).astype(np.uint8))
