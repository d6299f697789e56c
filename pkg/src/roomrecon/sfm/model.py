from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core import CameraIntrinsics, project_points
from ..errors import InvalidArgument


@dataclass(frozen=True)
class Feature:
    x: float
    y: float
    response: float
    descriptor: np.ndarray


@dataclass
class Track:
    point_id: int
    observations: list = field(default_factory=list)  # (frame_id, feature_index)


@dataclass(frozen=True)
class BAOptions:
    max_iters: int = 100
    lm_lambda_init: float = 1e-3
    lm_lambda_factor: float = 10.0
    cost_rel_tol: float = 1e-10
    huber_delta_px: float = 2.0

    def __post_init__(self):
        for name in ("max_iters", "lm_lambda_init", "lm_lambda_factor", "cost_rel_tol", "huber_delta_px"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"BAOptions.{name} must be positive")


@dataclass
class SparseModel:
    """Poses keyed by frame id, 3D points keyed by point id, one track per
    point, and the pixel position of every feature referenced by a track.

    ``gauge`` names the frame whose pose is held fixed and the frame whose
    largest translation component is held fixed during bundle adjustment.
    """

    poses: dict
    points: dict
    tracks: list
    intrinsics: CameraIntrinsics
    keypoints: dict  # frame_id -> (n, 2) pixel array
    gauge: Optional[tuple] = None
    point_gray: dict = field(default_factory=dict)
    skipped_frames: list = field(default_factory=list)

    def copy(self) -> "SparseModel":
        return SparseModel(
            dict(self.poses),
            {k: np.array(v, dtype=float) for k, v in self.points.items()},
            [Track(t.point_id, list(t.observations)) for t in self.tracks],
            self.intrinsics,
            self.keypoints,
            self.gauge,
            dict(self.point_gray),
            list(self.skipped_frames),
        )

    def gauge_frames(self) -> tuple:
        if self.gauge is not None:
            return self.gauge
        ids = sorted(self.poses)
        return (ids[0], ids[1] if len(ids) > 1 else None)

    def observation_arrays(self):
        """Flattened observations: (frame_ids, point_ids, pixels)."""
        fr, pt, uv = [], [], []
        for tr in self.tracks:
            for f, k in tr.observations:
                fr.append(f)
                pt.append(tr.point_id)
                uv.append(self.keypoints[f][k])
        return np.array(fr, dtype=np.int64), np.array(pt, dtype=np.int64), np.array(uv, dtype=float).reshape(-1, 2)

    def residuals(self) -> np.ndarray:
        """Reprojection residuals, (n_obs, 2) pixels."""
        fr, pt, uv = self.observation_arrays()
        out = np.empty_like(uv)
        for f in np.unique(fr):
            m = fr == f
            pose = self.poses[int(f)]
            X = np.array([self.points[int(p)] for p in pt[m]])
            proj, _ = project_points(pose.R, pose.t, self.intrinsics, X)
            out[m] = proj - uv[m]
        return out

    def reprojection_rmse(self) -> float:
        r = self.residuals()
        return float(np.sqrt(np.mean(np.sum(r**2, axis=1)))) if len(r) else 0.0

    def validate(self) -> None:
        if len(self.poses) < 1:
            raise InvalidArgument("model has no poses")
        ids = {t.point_id for t in self.tracks}
        if ids != set(self.points):
            raise InvalidArgument("tracks and points disagree")
        for tr in self.tracks:
            frames = [f for f, _ in tr.observations]
            if len(frames) < 2:
                raise InvalidArgument(f"point {tr.point_id} has fewer than two observations")
            if len(set(frames)) != len(frames):
                raise InvalidArgument(f"point {tr.point_id} observed twice in one frame")
            for f, k in tr.observations:
                if f not in self.poses:
                    raise InvalidArgument(f"observation references unknown frame {f}")
                if not 0 <= k < len(self.keypoints[f]):
                    raise InvalidArgument(f"observation references unknown feature {k} in frame {f}")
                pose = self.poses[f]
                if (pose.R @ self.points[tr.point_id] + pose.t)[2] <= 0:
                    raise InvalidArgument(f"point {tr.point_id} behind camera {f}")
