"""Synthetic opportunistic capture: a textured box room, a handheld random-walk
camera, a ray-cast renderer with blur/exposure degradation, and IMU traces."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core import (
    GRAVITY,
    CameraIntrinsics,
    CaptureStream,
    Frame,
    GrayImage,
    ImuSample,
    Pose,
    Quaternion,
    look_rotation,
)
from .errors import InvalidArgument

N_BLUR_SUBPOSES = 8
# Walls are indexed 2*axis + (0 for the +side, 1 for the -side).
_INPLANE_AXES = {0: (1, 2), 1: (0, 2), 2: (0, 1)}


@dataclass(frozen=True)
class RoomScene:
    """Axis-aligned box room centred at the origin, textured with a checkerboard
    overlaid by seeded square dots."""

    half_extents: tuple = (4.0, 3.0, 1.5)
    texture_seed: int = 0
    checker_period: float = 0.4
    checker_levels: tuple = (80.0, 160.0)
    dot_spacing: float = 0.25
    dot_density: float = 0.7
    dot_size: tuple = (0.04, 0.11)
    dot_levels: tuple = (25.0, 220.0)
    supersample: int = 2

    def __post_init__(self):
        h = tuple(float(v) for v in self.half_extents)
        if len(h) != 3 or min(h) <= 0:
            raise InvalidArgument("half_extents must be three positive lengths")
        object.__setattr__(self, "half_extents", h)
        if self.checker_period <= 0 or self.dot_spacing <= 0:
            raise InvalidArgument("texture periods must be positive")
        if not 0.0 <= self.dot_density <= 1.0:
            raise InvalidArgument("dot_density must lie in [0, 1]")
        lo, hi = self.dot_size
        if not 0 < lo <= hi < self.dot_spacing:
            raise InvalidArgument("dot_size must satisfy 0 < min <= max < dot_spacing")
        if self.supersample < 1:
            raise InvalidArgument("supersample must be >= 1")

    @property
    def h(self) -> np.ndarray:
        return np.asarray(self.half_extents)

    @property
    def diagonal(self) -> float:
        return float(2.0 * np.linalg.norm(self.h))

    def contains(self, p, margin: float = 0.0) -> bool:
        return bool(np.all(np.abs(np.asarray(p)) < self.h - margin))

    @cached_property
    def _dots(self) -> list:
        """Per-wall dot tables: (present, centre_u, centre_v, half_size, level),
        each shaped (n_u, n_v)."""
        rng = np.random.default_rng([int(self.texture_seed) & (2**64 - 1), 0x7E57])
        tables = []
        lo, hi = self.dot_size
        for wall in range(6):
            ua, va = _INPLANE_AXES[wall // 2]
            hu, hv = self.h[ua], self.h[va]
            nu = int(math.ceil(2 * hu / self.dot_spacing))
            nv = int(math.ceil(2 * hv / self.dot_spacing))
            present = rng.random((nu, nv)) < self.dot_density
            half = 0.5 * rng.uniform(lo, hi, (nu, nv))
            room = 0.5 * self.dot_spacing - half
            cu = -hu + (np.arange(nu)[:, None] + 0.5) * self.dot_spacing + rng.uniform(-1, 1, (nu, nv)) * room
            cv = -hv + (np.arange(nv)[None, :] + 0.5) * self.dot_spacing + rng.uniform(-1, 1, (nu, nv)) * room
            level = np.where(rng.random((nu, nv)) < 0.5, self.dot_levels[0], self.dot_levels[1])
            # dots must lie wholly on the wall
            present &= (np.abs(cu) + half < hu) & (np.abs(cv) + half < hv)
            tables.append((present, cu, cv, half, level))
        return tables

    def texture(self, wall: int, u, v) -> np.ndarray:
        """Luminance of wall ``wall`` at in-plane coordinates (u, v), metres."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        lo, hi = self.checker_levels
        parity = (np.floor(u / self.checker_period) + np.floor(v / self.checker_period)) % 2
        out = np.where(parity == 0, lo, hi)
        present, cu, cv, half, level = self._dots[wall]
        ua, va = _INPLANE_AXES[wall // 2]
        i = np.clip(((u + self.h[ua]) // self.dot_spacing).astype(np.int64), 0, present.shape[0] - 1)
        j = np.clip(((v + self.h[va]) // self.dot_spacing).astype(np.int64), 0, present.shape[1] - 1)
        inside = present[i, j] & (np.abs(u - cu[i, j]) <= half[i, j]) & (np.abs(v - cv[i, j]) <= half[i, j])
        return np.where(inside, level[i, j], out)

    def landmarks(self) -> np.ndarray:
        """3D texture corners: interior checker corners and the four corners of
        every dot, as an (M, 3) array."""
        pts = []
        p = self.checker_period
        for wall in range(6):
            axis, sign = wall // 2, 1.0 if wall % 2 == 0 else -1.0
            ua, va = _INPLANE_AXES[axis]
            hu, hv = self.h[ua], self.h[va]
            gu = np.arange(math.ceil(-hu / p), math.floor(hu / p) + 1) * p
            gv = np.arange(math.ceil(-hv / p), math.floor(hv / p) + 1) * p
            gu = gu[np.abs(gu) < hu - 1e-9]
            gv = gv[np.abs(gv) < hv - 1e-9]
            U, V = np.meshgrid(gu, gv, indexing="ij")
            uv = [np.stack([U.ravel(), V.ravel()], axis=1)]
            present, cu, cv, half, _ = self._dots[wall]
            for su in (-1, 1):
                for sv in (-1, 1):
                    uv.append(np.stack([cu[present] + su * half[present], cv[present] + sv * half[present]], axis=1))
            uv = np.concatenate(uv)
            P = np.empty((len(uv), 3))
            P[:, axis] = sign * self.h[axis]
            P[:, ua] = uv[:, 0]
            P[:, va] = uv[:, 1]
            pts.append(P)
        return np.concatenate(pts)


@dataclass(frozen=True)
class TrajectoryConfig:
    duration_s: float = 600.0
    rate_fps: float = 0.5
    pos_walk_sigma: float = 0.08
    orient_jitter_sigma: float = 0.12
    dwell_fraction: float = 0.35
    blur_fraction: float = 0.3
    exposure_spread: float = 0.5
    accel_noise_sigma: float = 0.05
    orient_noise_sigma: float = 0.002
    wall_margin: float = 0.8
    dwell_mean_frames: float = 6.0

    def __post_init__(self):
        if not (self.duration_s > 0 and self.rate_fps > 0):
            raise InvalidArgument("duration_s and rate_fps must be positive")
        if self.duration_s * self.rate_fps < 2 - 1e-9:
            raise InvalidArgument("trajectory must produce at least two frames")
        for name in ("dwell_fraction", "blur_fraction", "exposure_spread"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidArgument(f"{name} must lie in [0, 1]")
        for name in ("pos_walk_sigma", "orient_jitter_sigma", "accel_noise_sigma", "orient_noise_sigma", "wall_margin"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"{name} must be nonnegative")
        if self.dwell_mean_frames < 1:
            raise InvalidArgument("dwell_mean_frames must be >= 1")

    @property
    def n_frames(self) -> int:
        return int(math.floor(self.duration_s * self.rate_fps + 1e-9))


@dataclass(frozen=True)
class Degradation:
    blur_subposes: tuple = ()
    exposure_gain: float = 1.0


@dataclass(frozen=True)
class GroundTruth:
    poses: tuple
    landmarks: np.ndarray
    room_diagonal: float
    blurred: tuple = ()
    exposure_gains: tuple = ()
    half_extents: tuple | None = None  # room box, when known

    def pose_of(self, frame_id: int) -> Pose:
        return self.poses[frame_id]


def _ray_grid(K: CameraIntrinsics, ss: int) -> np.ndarray:
    """Camera-frame ray directions for an ss x ss supersampled pixel grid,
    shaped (ss*ss, H*W, 3)."""
    off = (np.arange(ss) + 0.5) / ss - 0.5
    ys, xs = np.mgrid[0:K.height, 0:K.width].astype(float)
    rays = []
    for dy in off:
        for dx in off:
            d = np.empty((K.height * K.width, 3))
            d[:, 0] = (xs.ravel() + dx - K.cx) / K.fx
            d[:, 1] = (ys.ravel() + dy - K.cy) / K.fy
            d[:, 2] = 1.0
            rays.append(d)
    return np.stack(rays)


def box_hits(h, origin, dirs):
    """First intersections of rays from ``origin`` (inside the box with
    half extents ``h``) with the walls. Returns ``(points (n, 3), wall (n,))``
    with walls indexed ``2 * axis + (0 for the + side, 1 for the - side)``."""
    h = np.asarray(h, dtype=float)
    C = np.asarray(origin, dtype=float)
    d = np.asarray(dirs, dtype=float).reshape(-1, 3)
    with np.errstate(divide="ignore", invalid="ignore"):
        tt = np.where(d != 0, (np.sign(d) * h - C) / d, np.inf)
    axis = np.argmin(tt, axis=1)
    rows = np.arange(len(d))
    P = C + tt[rows, axis][:, None] * d
    side = np.where(d[rows, axis] > 0, 0, 1)
    return P, 2 * axis + side


def _shade(scene: RoomScene, pose: Pose, rays_cam: np.ndarray) -> np.ndarray:
    C = pose.center
    if not scene.contains(C):
        raise InvalidArgument(f"camera centre {C} is not strictly inside the room")
    P, wall = box_hits(scene.h, C, rays_cam @ pose.R)  # rows are R^T @ ray
    out = np.empty(len(P))
    for w in range(6):
        m = wall == w
        if m.any():
            ua, va = _INPLANE_AXES[w // 2]
            out[m] = scene.texture(w, P[m, ua], P[m, va])
    return out


def render(scene: RoomScene, pose: Pose, K: CameraIntrinsics, degrade: Degradation | None = None) -> GrayImage:
    """Ray-cast the room from ``pose``. Blur averages the sub-pose renders;
    exposure gain scales luminance before clamping to [0, 255]."""
    if K.width <= 0 or K.height <= 0:
        raise InvalidArgument("zero-sized image")
    degrade = degrade or Degradation()
    if not scene.contains(pose.center):
        raise InvalidArgument("camera centre is not strictly inside the room")
    poses = list(degrade.blur_subposes) or [pose]
    # sub-pose averaging already antialiases, so blurred renders skip supersampling
    ss = 1 if degrade.blur_subposes else scene.supersample
    rays = _ray_grid(K, ss).reshape(-1, 3)
    acc = np.zeros(len(rays))
    for p in poses:
        acc += _shade(scene, p, rays)
    lum = acc.reshape(ss**2, -1).mean(axis=0) / len(poses)
    lum = np.clip(lum * degrade.exposure_gain, 0.0, 255.0)
    return GrayImage(K.width, K.height, np.rint(lum).astype(np.uint8).reshape(K.height, K.width))


def _reflect(x: np.ndarray, lim: np.ndarray) -> np.ndarray:
    x = x.copy()
    for _ in range(4):
        x = np.where(x > lim, 2 * lim - x, x)
        x = np.where(x < -lim, -2 * lim - x, x)
    return np.clip(x, -lim, lim)


def _trajectory(scene: RoomScene, traj: TrajectoryConfig, rng: np.random.Generator):
    """Random-walk centres and (yaw, pitch, roll) angles plus a dwell mask."""
    n = traj.n_frames
    lim = scene.h - traj.wall_margin
    lim[2] = min(lim[2], 0.6)
    if np.any(lim <= 0):
        raise InvalidArgument("room too small for the configured wall margin")
    d = traj.dwell_fraction
    p_leave = 1.0 / traj.dwell_mean_frames
    p_enter = 1.0 if d >= 1.0 else min(1.0, p_leave * d / (1.0 - d))
    centres = np.empty((n, 3))
    angles = np.empty((n, 3))
    dwell = np.zeros(n, dtype=bool)
    c = rng.uniform(-0.5, 0.5, 3) * lim
    ang = np.array([rng.uniform(-np.pi, np.pi), 0.0, 0.0])
    state = rng.random() < d
    so = traj.orient_jitter_sigma
    for i in range(n):
        steps = rng.normal(size=6)  # always drawn so dwell does not shift the stream
        u = rng.random()
        if i > 0:
            state = (u >= p_leave) if state else (u < p_enter)
            if d >= 1.0:
                state = True
            elif d <= 0.0:
                state = False
        if i > 0 and not state:
            c = _reflect(c + traj.pos_walk_sigma * steps[:3] * np.array([1.0, 1.0, 0.3]), lim)
            ang = np.array([
                ang[0] + so * steps[3],
                np.clip(0.8 * ang[1] + 0.5 * so * steps[4], -0.6, 0.6),
                np.clip(0.8 * ang[2] + 0.25 * so * steps[5], -0.3, 0.3),
            ])
        centres[i] = c
        angles[i] = ang
        dwell[i] = state and i > 0
    return centres, angles, dwell


def _pose(centre, ang) -> Pose:
    return Pose.from_center(look_rotation(*ang), centre)


def _blur_subposes(centre, ang, prev_centre, prev_ang, rng: np.random.Generator, scene: RoomScene):
    """Eight sub-poses spread along the inter-frame motion direction."""
    draws = rng.normal(size=5)
    ang_mag = np.deg2rad(rng.uniform(1.5, 4.0))
    trans_mag = rng.uniform(0.02, 0.08)
    dang = np.asarray(ang[:2]) - np.asarray(prev_ang[:2])
    if np.linalg.norm(dang) < 1e-9:
        dang = draws[:2]
    dang = dang / np.linalg.norm(dang)
    vel = np.asarray(centre) - np.asarray(prev_centre)
    if np.linalg.norm(vel) < 1e-9:
        vel = draws[2:5]
    vel = vel / np.linalg.norm(vel)
    subs = []
    for k in range(N_BLUR_SUBPOSES):
        s = k / (N_BLUR_SUBPOSES - 1) - 0.5
        c = np.asarray(centre) + s * trans_mag * vel
        a = np.array([ang[0] + s * ang_mag * dang[0], ang[1] + s * ang_mag * dang[1], ang[2]])
        if not scene.contains(c):
            c = np.asarray(centre)
        subs.append(_pose(c, a))
    return tuple(subs)


def exposure_gain_range(spread: float) -> tuple:
    """Gain interval for an exposure spread: [1, 1] at 0, [0.1, 3] at 1."""
    return 1.0 - 0.9 * spread, 1.0 + 2.0 * spread


def simulate(scene: RoomScene, traj: TrajectoryConfig, K: CameraIntrinsics, seed: int = 0):
    """Generate a capture stream and its ground truth. Deterministic in ``seed``."""
    if not isinstance(scene, RoomScene) or not isinstance(traj, TrajectoryConfig):
        raise InvalidArgument("scene and traj must be RoomScene and TrajectoryConfig")
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1))
    rng_traj, rng_blur, rng_expo, rng_imu = (np.random.default_rng(s) for s in ss.spawn(4))

    centres, angles, dwell = _trajectory(scene, traj, rng_traj)
    n = len(centres)
    dt_us = 1e6 / traj.rate_fps
    g_lo, g_hi = exposure_gain_range(traj.exposure_spread)

    frames, poses, blurred, gains = [], [], [], []
    for i in range(n):
        pose = _pose(centres[i], angles[i])
        prev = max(i - 1, 0)
        is_blur = rng_blur.random() < traj.blur_fraction
        subposes = _blur_subposes(centres[i], angles[i], centres[prev], angles[prev], rng_blur, scene)
        shake = rng_blur.normal(size=3)
        shake_mag = rng_blur.uniform(4.0, 12.0)
        gain = float(np.exp(rng_expo.uniform(np.log(g_lo), np.log(g_hi)))) if g_hi > g_lo else 1.0

        img = render(scene, pose, K, Degradation(subposes if is_blur else (), gain))

        R = pose.R
        walk = 0.3 * rng_imu.normal(size=3)
        if is_blur:
            motion = shake_mag * shake / np.linalg.norm(shake)
        elif dwell[i]:
            motion = np.zeros(3)
        else:
            motion = walk
        noise_a = rng_imu.normal(size=3) * traj.accel_noise_sigma
        noise_q = rng_imu.normal(size=3) * traj.orient_noise_sigma
        accel = R @ np.array([0.0, 0.0, GRAVITY]) + motion + noise_a
        orient = pose.rotation.conjugate()
        if traj.orient_noise_sigma > 0:
            orient = (orient * Quaternion.from_rotvec(noise_q)).normalized()
        t_us = int(round(i * dt_us))
        imu = ImuSample(t_us, orient, accel, lux=250.0 * gain)
        frames.append(Frame(i, t_us, img, imu))
        poses.append(pose)
        blurred.append(bool(is_blur))
        gains.append(gain)

    stream = CaptureStream(K, tuple(frames))
    gt = GroundTruth(tuple(poses), scene.landmarks(), scene.diagonal, tuple(blurred), tuple(gains),
                     scene.half_extents)
    return stream, gt


def checkerboard_image(width: int = 128, height: int = 96, square: int = 8, lo: int = 40, hi: int = 200) -> GrayImage:
    """Axis-aligned checkerboard test image; the top-left square is ``lo``."""
    if square < 1:
        raise InvalidArgument("square must be >= 1")
    y, x = np.mgrid[0:height, 0:width]
    return GrayImage(width, height, np.where((x // square + y // square) % 2 == 0, lo, hi))


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=220.0, fy=220.0, cx=128.0, cy=96.0, width=256, height=192)
