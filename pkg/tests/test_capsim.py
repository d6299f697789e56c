import math

import numpy as np
import pytest

from roomrecon.capsim import (GRAVITY, Degradation, RoomScene, TrajectoryConfig, exposure_gain_range, render,
                              simulate)
from roomrecon.core import CameraIntrinsics, Pose
from roomrecon.errors import InvalidArgument

SMALL_K = CameraIntrinsics(fx=40.0, fy=40.0, cx=16.0, cy=12.0, width=32, height=24)
# rows: camera right, down, forward for a camera looking along world +x
FACING_X = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


def short(**kw):
    base = dict(duration_s=20.0)
    base.update(kw)
    return TrajectoryConfig(**base)


def checker_oracle(u, v, period=0.4, lo=80.0, hi=160.0):
    return np.where((np.floor(u / period) + np.floor(v / period)) % 2 == 0, lo, hi)


def plus_x_wall_oracle(centre, K, offsets=(0.0,), half=(4.0, 3.0, 1.5)):
    """Luminance per pixel for rays that hit the x = +4 wall, from a direct
    ray/plane intersection. NaN where the ray leaves through another wall."""
    vs, us = np.mgrid[0:K.height, 0:K.width].astype(float)
    acc = np.zeros(us.shape)
    valid = np.ones(us.shape, dtype=bool)
    for dy in offsets:
        for dx in offsets:
            # world direction of the camera ray (x_cam right, y_cam down, z_cam forward)
            right, down = (us + dx - K.cx) / K.fx, (vs + dy - K.cy) / K.fy
            d = np.stack([np.ones_like(us), -right, -down], axis=-1)
            s = (half[0] - centre[0]) / d[..., 0]
            y = centre[1] + s * d[..., 1]
            z = centre[2] + s * d[..., 2]
            valid &= (np.abs(y) < half[1]) & (np.abs(z) < half[2])
            acc += checker_oracle(y, z)
    out = acc / len(offsets)**2
    out[~valid] = np.nan
    return out


def test_default_stream_has_300_frames(default_sim):
    stream, gt, _ = default_sim
    assert len(stream.frames) == 300 == len(gt.poses)
    assert [f.id for f in stream.frames] == list(range(300))
    assert [f.t_us for f in stream.frames] == [2_000_000 * i for i in range(300)]


@pytest.mark.parametrize("duration,rate,n", [(600.0, 0.5, 300), (7.9, 0.5, 3), (10.0, 1.0, 10), (4.0, 0.5, 2)])
def test_frame_count_is_floor(duration, rate, n):
    assert TrajectoryConfig(duration_s=duration, rate_fps=rate).n_frames == n


def test_orientations_are_unit(default_sim):
    stream, _, _ = default_sim
    assert max(abs(f.imu.orient.norm - 1.0) for f in stream.frames) <= 1e-9


def test_poses_stay_inside_room(default_sim):
    _, gt, _ = default_sim
    scene = RoomScene()
    assert all(scene.contains(p.center) for p in gt.poses)


def test_landmarks_lie_on_walls():
    scene = RoomScene()
    L = scene.landmarks()
    h = scene.h
    on = np.isclose(np.abs(L), h, atol=1e-12)
    assert np.all(on.sum(axis=1) >= 1)
    assert np.all(np.abs(L) <= h + 1e-12)


def test_same_seed_same_stream():
    a, ga = simulate(RoomScene(), short(), SMALL_K, seed=3)
    b, gb = simulate(RoomScene(), short(), SMALL_K, seed=3)
    for fa, fb in zip(a.frames, b.frames):
        assert np.array_equal(fa.image.pixels, fb.image.pixels)
        assert fa.imu.orient == fb.imu.orient
        assert np.array_equal(fa.imu.accel, fb.imu.accel)
    assert all(pa == pb for pa, pb in zip(ga.poses, gb.poses))
    c, _ = simulate(RoomScene(), short(), SMALL_K, seed=4)
    assert any(not np.array_equal(fa.image.pixels, fc.image.pixels) for fa, fc in zip(a.frames, c.frames))


def test_degradations_do_not_move_the_trajectory():
    _, clean = simulate(RoomScene(), short(blur_fraction=0.0, exposure_spread=0.0), SMALL_K, seed=5)
    _, rough = simulate(RoomScene(), short(blur_fraction=1.0, exposure_spread=1.0), SMALL_K, seed=5)
    assert all(pa == pb for pa, pb in zip(clean.poses, rough.poses))
    assert all(rough.blurred) and not any(clean.blurred)


def test_clean_capture_equals_clean_render():
    scene = RoomScene()
    stream, gt = simulate(scene, short(blur_fraction=0.0, exposure_spread=0.0), SMALL_K, seed=1)
    for f in stream.frames:
        assert np.array_equal(f.image.pixels, render(scene, gt.pose_of(f.id), SMALL_K).pixels)


def test_exact_orientation_without_sensor_noise():
    stream, gt = simulate(RoomScene(), short(orient_noise_sigma=0.0), SMALL_K, seed=2)
    for f in stream.frames:
        assert f.imu.orient == gt.pose_of(f.id).rotation.conjugate()


def test_still_camera_measures_gravity():
    traj = short(dwell_fraction=1.0, blur_fraction=0.0, accel_noise_sigma=0.0)
    stream, gt = simulate(RoomScene(), traj, SMALL_K, seed=0)
    for f in stream.frames[1:]:
        R = gt.pose_of(f.id).R
        assert np.allclose(f.imu.accel, R @ [0.0, 0.0, GRAVITY], atol=1e-12)
        assert np.linalg.norm(f.imu.accel) == pytest.approx(GRAVITY)
    assert all(p == gt.poses[0] for p in gt.poses)


def test_exposure_gains_within_range():
    _, gt = simulate(RoomScene(), short(exposure_spread=0.5), SMALL_K, seed=0)
    lo, hi = exposure_gain_range(0.5)
    assert (lo, hi) == (0.55, 2.0)
    assert all(lo <= g <= hi for g in gt.exposure_gains)
    assert exposure_gain_range(0.0) == (1.0, 1.0)


def test_rejects_bad_configuration():
    with pytest.raises(InvalidArgument):
        TrajectoryConfig(blur_fraction=1.5)
    with pytest.raises(InvalidArgument):
        TrajectoryConfig(duration_s=0.0)
    with pytest.raises(InvalidArgument):
        TrajectoryConfig(duration_s=1.0)  # a single frame
    with pytest.raises(InvalidArgument):
        RoomScene(half_extents=(4.0, 0.0, 1.5))
    with pytest.raises(InvalidArgument):
        RoomScene(dot_size=(0.1, 0.3))
    with pytest.raises(InvalidArgument):
        CameraIntrinsics(40.0, 40.0, 16.0, 12.0, 0, 24)


def test_render_rejects_camera_outside_room():
    with pytest.raises(InvalidArgument):
        render(RoomScene(), Pose.from_center(FACING_X, [5.0, 0.0, 0.0]), SMALL_K)
    with pytest.raises(InvalidArgument):
        render(RoomScene(), Pose.from_center(FACING_X, [4.0, 0.0, 0.0]), SMALL_K)


def test_zero_sized_image_is_rejected():
    # a zero-sized camera cannot be built, so render never sees one
    with pytest.raises(InvalidArgument):
        CameraIntrinsics(fx=40.0, fy=40.0, cx=0.0, cy=12.0, width=0, height=24)


def test_principal_pixel_matches_wall_texture_at_origin():
    K = CameraIntrinsics(fx=220.0, fy=220.0, cx=128.0, cy=96.0, width=256, height=192)
    pose = Pose.from_center(FACING_X, [0.0, 0.0, 0.0])
    plain = RoomScene(dot_density=0.0, supersample=1)
    # the principal ray meets the wall at (4, 0, 0): checker cell (0, 0)
    assert render(plain, pose, K).pixels[96, 128] == checker_oracle(0.0, 0.0) == 80
    dotted = RoomScene(supersample=1)
    assert render(dotted, pose, K).pixels[96, 128] == dotted.texture(0, 0.0, 0.0)


def test_render_matches_ray_plane_oracle():
    centre = (0.3, -0.17, 0.11)
    pose = Pose.from_center(FACING_X, centre)
    img = render(RoomScene(dot_density=0.0, supersample=1), pose, SMALL_K).pixels
    ref = plus_x_wall_oracle(centre, SMALL_K)
    hit = ~np.isnan(ref)
    assert hit.sum() > 0.9 * hit.size
    assert np.array_equal(img[hit], ref[hit])


def test_supersampled_render_averages_subpixels():
    centre = (0.3, -0.17, 0.11)
    pose = Pose.from_center(FACING_X, centre)
    img = render(RoomScene(dot_density=0.0, supersample=2), pose, SMALL_K).pixels
    ref = plus_x_wall_oracle(centre, SMALL_K, offsets=(-0.25, 0.25))
    hit = ~np.isnan(ref)
    assert np.array_equal(img[hit], np.rint(ref[hit]))
    assert set(np.unique(img[hit])) <= {80, 100, 120, 140, 160}


def test_render_is_deterministic_and_gain_scales():
    scene = RoomScene()
    pose = Pose.from_center(FACING_X, (0.3, -0.17, 0.11))
    a = render(scene, pose, SMALL_K).pixels
    assert np.array_equal(a, render(scene, pose, SMALL_K).pixels)
    dark = render(scene, pose, SMALL_K, Degradation(exposure_gain=0.5)).pixels.astype(float)
    plain = render(RoomScene(dot_density=0.0, supersample=1), pose, SMALL_K, Degradation(exposure_gain=0.5))
    assert set(np.unique(plain.pixels)) <= {40, 80}
    assert dark.mean() < a.mean()


def test_blur_changes_the_image():
    scene = RoomScene()
    pose = Pose.from_center(FACING_X, (0.3, -0.17, 0.11))
    subs = tuple(Pose.from_center(FACING_X, (0.3, -0.17 + 0.01 * k, 0.11)) for k in range(-4, 4))
    sharp = render(scene, pose, SMALL_K).pixels
    blurred = render(scene, pose, SMALL_K, Degradation(blur_subposes=subs)).pixels
    assert not np.array_equal(sharp, blurred)
    assert math.isclose(blurred.mean(), sharp.mean(), rel_tol=0.1)
