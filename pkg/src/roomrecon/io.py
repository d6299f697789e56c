"""File formats: binary PGM frames, JSON-lines sensor logs, ground truth,
sparse models (JSON), poses (JSON) and ASCII PLY point clouds.

A stream directory holds ``camera.json``, ``sensors.jsonl`` and one
``frame_%06d.pgm`` per line of the sensor log. Malformed content raises
:class:`InvalidArgument`; missing files raise ``FileNotFoundError``.
"""

from __future__ import annotations

import json
import os
import re
from pathlib import Path

import numpy as np

from .capsim import GroundTruth
from .core import CameraIntrinsics, CaptureStream, Frame, GrayImage, ImuSample, Pose, Quaternion
from .errors import InvalidArgument
from .sfm.model import SparseModel, Track

CAMERA_FILE = "camera.json"
SENSOR_FILE = "sensors.jsonl"
GT_FILE = "ground_truth.json"
FRAME_PATTERN = "frame_%06d.pgm"


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dump_json(obj), encoding="utf-8")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InvalidArgument(f"{path}: malformed JSON ({e.msg} at line {e.lineno})") from None


# -- PGM -------------------------------------------------------------------

def write_pgm(path, img: GrayImage) -> None:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(img.pixels, dtype=np.uint8).tobytes())


_PGM_HEADER = re.compile(rb"P5(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)\s")


def read_pgm(path) -> GrayImage:
    data = Path(path).read_bytes()
    m = _PGM_HEADER.match(data)
    if m is None:
        raise InvalidArgument(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise InvalidArgument(f"{path}: maxval {maxval} unsupported (need 255)")
    body = data[m.end():]
    if len(body) < w * h:
        raise InvalidArgument(f"{path}: truncated pixel data")
    px = np.frombuffer(body[:w * h], dtype=np.uint8).reshape(h, w).copy()
    return GrayImage(w, h, px)


# -- capture streams -------------------------------------------------------

def intrinsics_from_dict(d: dict) -> CameraIntrinsics:
    try:
        return CameraIntrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                                int(d["width"]), int(d["height"]))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, InvalidArgument):
            raise
        raise InvalidArgument(f"bad camera intrinsics: {e!r}") from None


def sensor_record(frame: Frame) -> dict:
    imu = frame.imu
    return {"id": frame.id, "t_us": imu.t_us, "quat": imu.orient.as_array().tolist(),
            "accel": imu.accel.tolist(), "lux": imu.lux}


def write_stream(directory, stream: CaptureStream) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_json(d / CAMERA_FILE, stream.intrinsics.to_dict())
    lines = []
    for fr in stream.frames:
        write_pgm(d / (FRAME_PATTERN % fr.id), fr.image)
        lines.append(json.dumps(sensor_record(fr), sort_keys=True))
    (d / SENSOR_FILE).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_sensor_log(path) -> list:
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            imu = ImuSample(int(rec["t_us"]), Quaternion.from_array(rec["quat"]), rec["accel"],
                            None if rec.get("lux") is None else float(rec["lux"]))
            out.append((int(rec["id"]), imu))
        except InvalidArgument as e:
            raise InvalidArgument(f"{path}:{n}: {e}") from None
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise InvalidArgument(f"{path}:{n}: malformed sensor record ({e!r})") from None
    return out


def read_stream(directory) -> CaptureStream:
    """Load a stream directory. The frame timestamp is the sensor timestamp
    (the simulator writes one sample per frame)."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"no such directory: {d}")
    K = intrinsics_from_dict(read_json(d / CAMERA_FILE))
    frames = []
    for fid, imu in read_sensor_log(d / SENSOR_FILE):
        img = read_pgm(d / (FRAME_PATTERN % fid))
        if (img.width, img.height) != (K.width, K.height):
            raise InvalidArgument(f"frame {fid}: size {img.width}x{img.height} does not match camera")
        frames.append(Frame(fid, imu.t_us, img, imu))
    return CaptureStream(K, tuple(frames))


# -- ground truth ----------------------------------------------------------

def pose_to_dict(p: Pose) -> dict:
    return {"quat": p.rotation.as_array().tolist(), "t": np.asarray(p.translation, dtype=float).tolist()}


def pose_from_dict(d: dict) -> Pose:
    try:
        return Pose(Quaternion.from_array(d["quat"]), np.asarray(d["t"], dtype=float).reshape(3))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, InvalidArgument):
            raise
        raise InvalidArgument(f"bad pose record: {e!r}") from None


def ground_truth_to_dict(gt: GroundTruth) -> dict:
    return {
        "poses": [pose_to_dict(p) for p in gt.poses],
        "landmarks": np.asarray(gt.landmarks, dtype=float).tolist(),
        "room_diagonal": gt.room_diagonal,
        "blurred": list(gt.blurred),
        "exposure_gains": list(gt.exposure_gains),
        "half_extents": None if gt.half_extents is None else [float(v) for v in gt.half_extents],
    }


def ground_truth_from_dict(d: dict) -> GroundTruth:
    try:
        return GroundTruth(
            tuple(pose_from_dict(p) for p in d["poses"]),
            np.asarray(d["landmarks"], dtype=float).reshape(-1, 3),
            float(d["room_diagonal"]),
            tuple(bool(b) for b in d.get("blurred", ())),
            tuple(float(g) for g in d.get("exposure_gains", ())),
            None if d.get("half_extents") is None else tuple(float(v) for v in d["half_extents"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, InvalidArgument):
            raise
        raise InvalidArgument(f"bad ground truth: {e!r}") from None


def write_ground_truth(path, gt: GroundTruth) -> None:
    write_json(path, ground_truth_to_dict(gt))


def read_ground_truth(path) -> GroundTruth:
    return ground_truth_from_dict(read_json(path))


# -- sparse models ---------------------------------------------------------

def poses_to_dict(model: SparseModel) -> dict:
    return {str(f): pose_to_dict(p) for f, p in sorted(model.poses.items())}


def model_to_dict(model: SparseModel) -> dict:
    return {
        "intrinsics": model.intrinsics.to_dict(),
        "gauge": list(model.gauge) if model.gauge is not None else None,
        "poses": poses_to_dict(model),
        "points": {str(p): np.asarray(x, dtype=float).tolist() for p, x in sorted(model.points.items())},
        "tracks": [{"point_id": t.point_id, "observations": [[int(f), int(k)] for f, k in t.observations]}
                   for t in model.tracks],
        "keypoints": {str(f): np.asarray(kp, dtype=float).tolist() for f, kp in sorted(model.keypoints.items())},
        "point_gray": {str(p): int(g) for p, g in sorted(model.point_gray.items())},
        "skipped_frames": [int(f) for f in model.skipped_frames],
    }


def model_from_dict(d: dict) -> SparseModel:
    try:
        model = SparseModel(
            poses={int(f): pose_from_dict(p) for f, p in d["poses"].items()},
            points={int(p): np.asarray(x, dtype=float).reshape(3) for p, x in d["points"].items()},
            tracks=[Track(int(t["point_id"]), [(int(f), int(k)) for f, k in t["observations"]])
                    for t in d["tracks"]],
            intrinsics=intrinsics_from_dict(d["intrinsics"]),
            keypoints={int(f): np.asarray(kp, dtype=float).reshape(-1, 2) for f, kp in d["keypoints"].items()},
            gauge=tuple(d["gauge"]) if d.get("gauge") is not None else None,
            point_gray={int(p): int(g) for p, g in d.get("point_gray", {}).items()},
            skipped_frames=[int(f) for f in d.get("skipped_frames", [])],
        )
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        if isinstance(e, InvalidArgument):
            raise
        raise InvalidArgument(f"bad model file: {e!r}") from None
    model.validate()
    return model


def write_model(path, model: SparseModel) -> None:
    write_json(path, model_to_dict(model))


def read_model(path) -> SparseModel:
    return model_from_dict(read_json(path))


def write_poses(path, model: SparseModel) -> None:
    write_json(path, poses_to_dict(model))


# -- PLY -------------------------------------------------------------------

def write_ply(path, model: SparseModel) -> None:
    """ASCII PLY with one vertex per point: x y z and the mean observed gray."""
    pids = sorted(model.points)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(pids)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar gray",
        "end_header",
    ]
    for p in pids:
        x, y, z = (float(v) for v in model.points[p])
        lines.append(f"{x:.6f} {y:.6f} {z:.6f} {int(model.point_gray.get(p, 128))}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_ply(path):
    """Returns ``(xyz (n, 3), gray (n,))`` from an ASCII PLY written above."""
    text = Path(path).read_text(encoding="ascii").splitlines()
    if not text or text[0] != "ply" or "format ascii 1.0" not in text[:3]:
        raise InvalidArgument(f"{path}: not an ASCII PLY file")
    try:
        n = next(int(ln.split()[2]) for ln in text if ln.startswith("element vertex"))
        start = text.index("end_header") + 1
        rows = np.array([ln.split() for ln in text[start:start + n]], dtype=float).reshape(n, 4)
    except (StopIteration, ValueError, IndexError) as e:
        raise InvalidArgument(f"{path}: malformed PLY ({e!r})") from None
    return rows[:, :3], rows[:, 3].astype(np.uint8)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    if not os.access(p, os.W_OK):
        raise PermissionError(f"directory not writable: {p}")
    return p
