# Bundle adjustment: jointly refine camera poses and points to minimise
# reprojection error, starting from a perturbed solution.

# %%
import numpy as np

from roomrecon.core import CameraIntrinsics, Pose, project_points, rotvec_to_matrix
from roomrecon.sfm import BAOptions, bundle_adjust
from roomrecon.sfm.model import SparseModel, Track

K = CameraIntrinsics(220.0, 220.0, 128.0, 96.0, 256, 192)
rng = np.random.default_rng(0)
X = rng.uniform([-1.5, -1.0, 4.0], [1.5, 1.0, 7.0], (40, 3))
poses = {0: Pose.identity()}
for i in range(1, 5):
    poses[i] = Pose.from_center(rotvec_to_matrix(rng.normal(size=3) * 0.03), [0.4 * i, 0.0, 0.0])
keypoints = {i: project_points(p.R, p.t, K, X)[0] + 0.3 * rng.normal(size=(40, 2)) for i, p in poses.items()}
tracks = [Track(j, [(i, j) for i in poses]) for j in range(40)]

# %%
# Start from noisy points and slightly wrong cameras. Camera 0 and the x
# translation of camera 1 are held fixed to remove the gauge freedom.
start_poses = {0: poses[0]}
for i in range(1, 5):
    p = poses[i]
    dt = np.r_[0.0, rng.normal(size=2) * 0.05] if i == 1 else rng.normal(size=3) * 0.05
    start_poses[i] = Pose.from_rt(rotvec_to_matrix(rng.normal(size=3) * 0.02) @ p.R, p.t + dt)
start = SparseModel(start_poses, {j: X[j] + rng.normal(size=3) * 0.05 for j in range(40)},
                    tracks, K, keypoints, gauge=(0, 1))
print("start RMSE:", round(start.reprojection_rmse(), 3), "px")

# %%
out, trace = bundle_adjust(start, BAOptions())
print("cost per accepted step:", [round(c, 2) for c in trace])
print("final RMSE:", round(out.reprojection_rmse(), 3), "px (keypoint noise was 0.3 px)")
