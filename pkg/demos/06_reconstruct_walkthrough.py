# Sparse reconstruction of a short walkthrough and comparison with the
# simulator's ground truth.

# %%
import tempfile
from dataclasses import replace
from pathlib import Path

from roomrecon import io as rio
from roomrecon.capsim import RoomScene, TrajectoryConfig, default_intrinsics, simulate
from roomrecon.eval import evaluate_model
from roomrecon.sfm import reconstruct

traj = TrajectoryConfig(duration_s=30.0, pos_walk_sigma=0.15, orient_jitter_sigma=0.08, dwell_fraction=0.0,
                        blur_fraction=0.0, exposure_spread=0.0, orient_noise_sigma=0.0)
stream, gt = simulate(RoomScene(), traj, default_intrinsics(), seed=0)

# %%
model = reconstruct(stream.frames, stream.intrinsics)
print(f"{len(model.poses)}/{len(stream.frames)} frames registered, {len(model.points)} points, "
      f"RMSE {model.reprojection_rmse():.3f} px")

# %%
# The reconstruction has its own scale and frame; a similarity aligns it to
# the ground truth before errors are measured.
err = evaluate_model(model, gt)
print(f"scale {err.scale:.3f}, median point error {err.median_point_err_m * 100:.2f} cm "
      f"({err.median_rel_err:.2%} of the room diagonal), {err.n_matched} points matched")
print("worst camera rotation error:", round(max(err.pose_rot_err_deg), 3), "deg")

# %%
# Without the room geometry, points are matched to the listed landmarks instead.
print("landmark matching:", evaluate_model(model, replace(gt, half_extents=None)).n_matched, "points")

# %%
out = Path(tempfile.mkdtemp())
rio.write_ply(out / "points.ply", model)
rio.write_model(out / "model.json", model)
print((out / "points.ply").read_text().splitlines()[:3])
