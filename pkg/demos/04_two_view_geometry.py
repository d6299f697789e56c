# Two views: the essential matrix from pixel correspondences, the relative
# pose it encodes, and triangulation.

# %%
import numpy as np

from roomrecon.core import CameraIntrinsics, Pose, project_points, rotation_angle, rotvec_to_matrix
from roomrecon.sfm import estimate_essential, recover_pose, triangulate

K = CameraIntrinsics(220.0, 220.0, 128.0, 96.0, 256, 192)
rng = np.random.default_rng(1)
R = rotvec_to_matrix([0.02, -0.12, 0.01])
t = np.array([-0.9, 0.05, 0.2])
t /= np.linalg.norm(t)
X = np.c_[rng.uniform(-1.5, 1.5, (40, 2)), rng.uniform(3.0, 6.0, 40)]
uva, _ = project_points(np.eye(3), np.zeros(3), K, X)
uvb, _ = project_points(R, t, K, X)

# %%
# A quarter of the matches are wrong; RANSAC finds the rest.
uvb[::4] += rng.uniform(10, 30, (10, 2))
E, inliers = estimate_essential(np.c_[uva, uvb], K, seed=0)
print(inliers.sum(), "inliers of", len(inliers))

# %%
Rr, tr, n_front = recover_pose(E, np.c_[uva, uvb][inliers], K)
print("rotation error (deg):", np.degrees(rotation_angle(Rr, R)))
print("translation direction:", np.round(tr, 4), "true:", np.round(t, 4))

# %%
# Depth is only known up to the baseline length (here 1).
A, B = Pose.identity(), Pose.from_rt(Rr, tr)
i = int(np.nonzero(inliers)[0][0])
print("triangulated", np.round(triangulate(A, B, K, uva[i], uvb[i]), 4), "true", np.round(X[i], 4))
