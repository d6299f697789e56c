# Simulated opportunistic capture: a textured box room, a camera that
# wanders and dwells, one frame and one IMU sample every two seconds.

# %%
import tempfile
from pathlib import Path

import numpy as np

from roomrecon import io as rio
from roomrecon.capsim import RoomScene, TrajectoryConfig, default_intrinsics, simulate

# %%
scene = RoomScene()
traj = TrajectoryConfig(duration_s=120.0, blur_fraction=0.2, exposure_spread=0.4)
stream, gt = simulate(scene, traj, default_intrinsics(), seed=3)
print(len(stream.frames), "frames,", len(gt.landmarks), "landmarks, room diagonal", round(gt.room_diagonal, 2), "m")

# %%
# The IMU logs device orientation and specific force; a still device reads
# about +g along world z.
f = stream.frames[5]
print("t =", f.t_us / 1e6, "s  accel =", np.round(f.imu.accel, 3), " quat =", np.round(f.imu.orient.as_array(), 3))

# %%
# Some frames are motion blurred and the exposure gain varies per frame.
print("blurred:", [i for i, b in enumerate(gt.blurred) if b])
print("gain range:", round(min(gt.exposure_gains), 2), "-", round(max(gt.exposure_gains), 2))
means = [float(fr.image.pixels.mean()) for fr in stream.frames]
print("mean gray per frame ranges from", round(min(means), 1), "to", round(max(means), 1))

# %%
# Streams are stored as binary PGM frames plus a JSON-lines sensor log.
out = Path(tempfile.mkdtemp()) / "stream"
rio.write_stream(out, stream)
rio.write_ground_truth(out / rio.GT_FILE, gt)
print(sorted(p.name for p in out.iterdir())[:4], "...")
print(len(rio.read_stream(out).frames), "frames read back")
