# Reducing a capture stream: drop frames that are badly exposed, taken while
# the device was shaking, blurry, redundant with a better nearby frame, or in
# an already well covered viewing direction.

# %%
from roomrecon.capsim import RoomScene, TrajectoryConfig, default_intrinsics, simulate
from roomrecon.reduce import ReduceConfig, reduce_stream

stream, gt = simulate(RoomScene(), TrajectoryConfig(), default_intrinsics(), seed=0)
cfg = ReduceConfig()
kept, report = reduce_stream(stream, cfg)

# %%
print(f"{report.total} frames in, {len(kept)} kept, reduction {report.reduction_ratio:.1%}")
for stage, n in report.dropped.items():
    print(f"  {stage:15s} dropped {n}")

# %%
# Blurred frames should rarely survive.
blurred_kept = [f.id for f in kept if gt.blurred[f.id]]
print("blurred frames kept:", blurred_kept)

# %%
# Relaxing the gates keeps more of the stream.
loose = ReduceConfig(aniso_keep_percentile=20.0, coverage_kmax=4)
kept2, report2 = reduce_stream(stream, loose)
print(f"looser settings keep {len(kept2)} frames ({report2.reduction_ratio:.1%} reduction)")
