from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from synth import clean_walkthrough

from roomrecon.capsim import RoomScene, default_intrinsics, simulate
from roomrecon.core import Pose, project_points, rotvec_to_matrix
from roomrecon.errors import DegenerateInput
from roomrecon.eval import evaluate_model, umeyama_align
from roomrecon.sfm.model import SparseModel, Track


def sim_cost(s, R, t, x, y):
    return float(((x @ (s * R).T + t - y) ** 2).sum())


def random_similarity(rng):
    return float(np.exp(rng.normal())), rotvec_to_matrix(rng.normal(size=3)), rng.normal(size=3)


def test_umeyama_examples():
    x = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    s, R, t = umeyama_align(x, x)
    assert s == pytest.approx(1.0) and np.allclose(R, np.eye(3)) and np.allclose(t, 0, atol=1e-12)
    s, R, t = umeyama_align(x, 2 * x + [1, 2, 3])
    assert s == pytest.approx(2.0) and np.allclose(R, np.eye(3)) and np.allclose(t, [1, 2, 3])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_umeyama_recovers_exact_similarity(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(12, 3))
    s0, R0, t0 = random_similarity(rng)
    s, R, t = umeyama_align(x, x @ (s0 * R0).T + t0)
    assert s == pytest.approx(s0, rel=1e-9)
    assert np.abs(R - R0).max() < 1e-9 and np.abs(t - t0).max() < 1e-8


def test_umeyama_beats_random_search():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(10, 3))
    s0, R0, t0 = random_similarity(rng)
    y = x @ (s0 * R0).T + t0 + 0.1 * rng.normal(size=(10, 3))
    s, R, t = umeyama_align(x, y)
    best = sim_cost(s, R, t, x, y)
    for k in range(1000):
        if k % 2:  # anywhere
            ds, dR, dt = random_similarity(rng)
        else:  # close to the answer
            ds = s * np.exp(0.05 * rng.normal())
            dR = rotvec_to_matrix(0.05 * rng.normal(size=3)) @ R
            dt = t + 0.05 * rng.normal(size=3)
        assert sim_cost(ds, dR, dt, x, y) >= best - 1e-12


def test_umeyama_never_returns_a_reflection():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(10, 3))
    y = x * [1.0, 1.0, -1.0]  # mirror image
    _, R, _ = umeyama_align(x, y)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_umeyama_degenerate_input():
    x = np.array([[0.0, 0, 0], [1, 0, 0]])
    with pytest.raises(DegenerateInput):
        umeyama_align(x, x)
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateInput):
        umeyama_align(line, line)


@pytest.fixture(scope="module")
def gt_short():
    _, gt = simulate(RoomScene(), replace(clean_walkthrough(), duration_s=20.0), default_intrinsics(), 0)
    return gt


def verbatim_model(gt, K):
    """A model whose points are ground-truth landmarks observed at their exact
    projections in the ground-truth poses."""
    poses = {f: p for f, p in enumerate(gt.poses)}
    keypoints = {f: [] for f in poses}
    tracks, points = [], {}
    for j, X in enumerate(gt.landmarks):
        obs = []
        for f, p in poses.items():
            uv, z = project_points(p.R, p.t, K, X[None])
            u, v = uv[0]
            if z[0] > 0.5 and 20 <= u <= K.width - 20 and 20 <= v <= K.height - 20:
                obs.append((f, len(keypoints[f])))
                keypoints[f].append(uv[0])
        if len(obs) >= 2:
            points[j] = np.array(X, dtype=float)
            tracks.append(Track(j, obs))
    kp = {f: np.array(v, dtype=float).reshape(-1, 2) for f, v in keypoints.items()}
    return SparseModel(poses, points, tracks, K, kp, gauge=(0, 1))


def transformed(model, s, Rs, T):
    """The same reconstruction expressed after X -> s Rs X + T."""
    poses = {f: Pose.from_rt(p.R @ Rs.T, s * p.t - p.R @ Rs.T @ T) for f, p in model.poses.items()}
    points = {k: s * Rs @ X + T for k, X in model.points.items()}
    return replace(model, poses=poses, points=points)


def test_verbatim_model_has_zero_error(gt_short):
    model = verbatim_model(gt_short, default_intrinsics())
    assert len(model.points) > 50
    err = evaluate_model(model, gt_short)
    assert err.n_matched == len(model.points)
    assert err.scale == pytest.approx(1.0, abs=1e-9)
    assert err.median_point_err_m < 1e-9 and err.mean_point_err_m < 1e-9
    assert max(err.pose_rot_err_deg) < 1e-9
    assert err.reproj_rmse_px < 1e-9


def test_half_scale_model_reports_scale_two(gt_short):
    model = transformed(verbatim_model(gt_short, default_intrinsics()), 0.5, np.eye(3), np.zeros(3))
    err = evaluate_model(model, gt_short)
    assert err.scale == pytest.approx(2.0, rel=1e-9)
    assert err.median_point_err_m < 1e-9


def test_errors_are_similarity_invariant(gt_short):
    K = default_intrinsics()
    model = verbatim_model(gt_short, K)
    rng = np.random.default_rng(5)
    for k in list(model.points)[::3]:
        model.points[k] = model.points[k] + 0.01 * rng.normal(size=3)
    base = evaluate_model(model, gt_short)
    s, R, T = random_similarity(rng)
    moved = evaluate_model(transformed(model, s, R, T), gt_short)
    assert moved.median_point_err_m == pytest.approx(base.median_point_err_m, abs=1e-9)
    assert moved.mean_point_err_m == pytest.approx(base.mean_point_err_m, abs=1e-9)
    assert np.allclose(moved.pose_rot_err_deg, base.pose_rot_err_deg, rtol=0, atol=1e-9)
    assert moved.scale * s == pytest.approx(base.scale, rel=1e-9)
    assert base.median_rel_err == base.median_point_err_m / gt_short.room_diagonal


def test_landmark_matching_without_room_geometry(gt_short):
    gt = replace(gt_short, half_extents=None)
    model = verbatim_model(gt, default_intrinsics())
    err = evaluate_model(model, gt)
    assert err.n_matched == len(model.points)
    assert err.median_point_err_m < 1e-9


def test_too_few_matches_raise(gt_short):
    model = verbatim_model(gt_short, default_intrinsics())
    keep = model.tracks[:2]
    small = replace(model, tracks=keep, points={t.point_id: model.points[t.point_id] for t in keep})
    with pytest.raises(DegenerateInput):
        evaluate_model(small, gt_short)
