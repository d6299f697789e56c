"""Geometry and data primitives shared by every stage.

Conventions
-----------
* Quaternions are Hamilton, stored ``(w, x, y, z)``.
* ``Pose`` is world-to-camera: ``x_cam = R @ x_world + t``.
* Camera frame is x right, y down, z forward. The device (IMU) frame is the
  camera frame, so an IMU orientation (device-to-world) is the conjugate of
  the camera rotation.
* World frame is z up; gravity points along -z.
* Pixel centres sit at integer coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgument

GRAVITY = 9.80665
UNIT_TOL = 1e-6
IMU_MATCH_WINDOW_US = 100_000


@dataclass(frozen=True)
class Quaternion:
    w: float
    x: float
    y: float
    z: float

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, a) -> "Quaternion":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Quaternion":
        axis = np.asarray(axis, dtype=float)
        n = np.linalg.norm(axis)
        if n == 0.0:
            return cls.identity()
        axis = axis / n
        s = np.sin(0.5 * angle)
        return cls(float(np.cos(0.5 * angle)), *(float(c) for c in s * axis))

    @classmethod
    def from_rotvec(cls, rv) -> "Quaternion":
        rv = np.asarray(rv, dtype=float)
        return cls.from_axis_angle(rv, float(np.linalg.norm(rv)))

    @classmethod
    def from_matrix(cls, R) -> "Quaternion":
        """Shepperd's method; returns the representative with w >= 0."""
        R = np.asarray(R, dtype=float)
        tr = np.trace(R)
        if tr > 0:
            s = 2.0 * np.sqrt(tr + 1.0)
            q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
            s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
            q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        elif R[1, 1] > R[2, 2]:
            s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
            q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
            q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        q = np.asarray(q)
        if q[0] < 0:
            q = -q
        return cls.from_array(q / np.linalg.norm(q))

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2))

    def is_unit(self, tol: float = UNIT_TOL) -> bool:
        return abs(self.norm - 1.0) <= tol

    def normalized(self) -> "Quaternion":
        n = self.norm
        if n == 0.0:
            raise InvalidArgument("cannot normalize a zero quaternion")
        return Quaternion(self.w / n, self.x / n, self.y / n, self.z / n)

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        a, b = self, other
        return Quaternion(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])


def _require_unit(q: Quaternion, name: str = "quaternion") -> None:
    if not q.is_unit():
        raise InvalidArgument(f"{name} is not unit norm (|q| = {q.norm:.9g})")


def quat_angular_distance(a: Quaternion, b: Quaternion) -> float:
    """Rotation angle between ``a`` and ``b`` in radians, in [0, pi]."""
    _require_unit(a, "a")
    _require_unit(b, "b")
    d = abs(a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z)
    return 2.0 * float(np.arccos(min(1.0, d)))


def quat_rotate(q: Quaternion, v) -> np.ndarray:
    _require_unit(q)
    v = np.asarray(v, dtype=float)
    u = np.array([q.x, q.y, q.z])
    uv = np.cross(u, v)
    return v + 2.0 * q.w * uv + 2.0 * np.cross(u, uv)


def skew(v) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def rotvec_to_matrix(rv) -> np.ndarray:
    """Rodrigues formula."""
    rv = np.asarray(rv, dtype=float)
    theta = np.linalg.norm(rv)
    if theta < 1e-12:
        return np.eye(3) + skew(rv)
    k = skew(rv / theta)
    return np.eye(3) + np.sin(theta) * k + (1 - np.cos(theta)) * (k @ k)


def nearest_rotation(M) -> np.ndarray:
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rotation_angle(Ra, Rb) -> float:
    """Angle in radians of the relative rotation Ra^T Rb."""
    M = np.asarray(Ra).T @ np.asarray(Rb)
    # atan2 keeps full precision near 0 and pi, unlike arccos of the trace
    sin = 0.5 * np.linalg.norm([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
    cos = 0.5 * (np.trace(M) - 1.0)
    return float(np.arctan2(sin, cos))


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform."""

    rotation: Quaternion
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(Quaternion.identity(), np.zeros(3))

    @classmethod
    def from_rt(cls, R, t) -> "Pose":
        return cls(Quaternion.from_matrix(R), np.asarray(t, dtype=float))

    @classmethod
    def from_center(cls, R, center) -> "Pose":
        R = np.asarray(R, dtype=float)
        return cls(Quaternion.from_matrix(R), -R @ np.asarray(center, dtype=float))

    @property
    def R(self) -> np.ndarray:
        return self.rotation.to_matrix()

    @property
    def t(self) -> np.ndarray:
        return self.translation

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.translation

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return X @ self.R.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return self.rotation == other.rotation and np.array_equal(self.translation, other.translation)

    __hash__ = None


def look_rotation(yaw: float, pitch: float = 0.0, roll: float = 0.0) -> np.ndarray:
    """World-to-camera rotation for a camera whose optical axis has the given
    yaw (about world z, from +x) and pitch (positive looks up), rolled about
    the optical axis."""
    cp, sp = np.cos(pitch), np.sin(pitch)
    fwd = np.array([cp * np.cos(yaw), cp * np.sin(yaw), sp])
    right = np.cross(fwd, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.vstack([right, down, fwd])
    if roll:
        R = rotvec_to_matrix([0.0, 0.0, roll]) @ R
    return R


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidArgument(f"image size must be positive, got {self.width}x{self.height}")
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgument("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidArgument("principal point outside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array([
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ])

    def normalize(self, uv) -> np.ndarray:
        """Pixel coordinates -> normalized image-plane coordinates."""
        uv = np.asarray(uv, dtype=float)
        return np.stack([(uv[..., 0] - self.cx) / self.fx, (uv[..., 1] - self.cy) / self.fy], axis=-1)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass(frozen=True)
class GrayImage:
    width: int
    height: int
    pixels: np.ndarray  # (height, width) uint8, row-major

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidArgument(f"image size must be positive, got {self.width}x{self.height}")
        px = np.asarray(self.pixels)
        if px.size != self.width * self.height:
            raise InvalidArgument("pixel count does not match image dimensions")
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255):
                raise InvalidArgument("pixel values outside [0, 255]")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", px.reshape(self.height, self.width))

    @classmethod
    def from_array(cls, a) -> "GrayImage":
        a = np.asarray(a)
        if a.ndim != 2:
            raise InvalidArgument("expected a 2-D array")
        return cls(a.shape[1], a.shape[0], a)

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and np.array_equal(
            self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True)
class ImuSample:
    t_us: int
    orient: Quaternion  # device-to-world
    accel: np.ndarray  # m/s^2 in the device frame, gravity included
    lux: Optional[float] = None

    def __post_init__(self):
        if self.t_us < 0:
            raise InvalidArgument("t_us must be nonnegative")
        _require_unit(self.orient, "orient")
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float).reshape(3))
        if self.lux is not None and self.lux < 0:
            raise InvalidArgument("lux must be nonnegative")

    def __eq__(self, other):
        if not isinstance(other, ImuSample):
            return NotImplemented
        return (self.t_us == other.t_us and self.orient == other.orient
                and np.array_equal(self.accel, other.accel) and self.lux == other.lux)

    __hash__ = None


def camera_rotation_from_orient(orient: Quaternion) -> Quaternion:
    """Device-to-world IMU orientation -> world-to-camera rotation."""
    return orient.conjugate()


def viewing_direction(orient: Quaternion) -> np.ndarray:
    """World-frame optical axis for a device-to-world orientation."""
    return quat_rotate(orient, [0.0, 0.0, 1.0])


@dataclass(frozen=True)
class Frame:
    id: int
    t_us: int
    image: GrayImage
    imu: ImuSample

    def __post_init__(self):
        if self.id < 0:
            raise InvalidArgument("frame id must be nonnegative")
        if abs(self.imu.t_us - self.t_us) > IMU_MATCH_WINDOW_US:
            raise InvalidArgument(f"frame {self.id}: IMU sample is more than 100 ms from the exposure")


@dataclass(frozen=True)
class CaptureStream:
    intrinsics: CameraIntrinsics
    frames: tuple = ()

    def __post_init__(self):
        frames = tuple(self.frames)
        for a, b in zip(frames, frames[1:]):
            if b.t_us <= a.t_us or b.id <= a.id:
                raise InvalidArgument("frames must be strictly ordered by time and id")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)


def nearest_imu_sample(samples: Sequence[ImuSample], t_us: int) -> Optional[ImuSample]:
    """IMU sample closest in time to ``t_us``, or None if none lies within 100 ms."""
    best = None
    for s in samples:
        if abs(s.t_us - t_us) <= IMU_MATCH_WINDOW_US and (best is None or abs(s.t_us - t_us) < abs(best.t_us - t_us)):
            best = s
    return best


def project(pose: Pose, K: CameraIntrinsics, X):
    """Pinhole projection of a world point. Returns ``(u, v)``, or None when the
    point is not strictly in front of the camera."""
    xc = pose.R @ np.asarray(X, dtype=float) + pose.translation
    if xc[2] <= 0:
        return None
    return (K.fx * xc[0] / xc[2] + K.cx, K.fy * xc[1] / xc[2] + K.cy)


def unproject(pose: Pose, K: CameraIntrinsics, u: float, v: float, depth: float) -> np.ndarray:
    """World point at camera depth ``depth`` along the ray through pixel (u, v)."""
    xc = np.array([(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, depth])
    return pose.R.T @ (xc - pose.translation)


def project_points(R, t, K: CameraIntrinsics, X):
    """Vectorized projection. Returns ``(uv, depth)`` for an (N, 3) array."""
    xc = np.asarray(X, dtype=float) @ np.asarray(R).T + np.asarray(t)
    z = xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack([K.fx * xc[:, 0] / z + K.cx, K.fy * xc[:, 1] / z + K.cy], axis=1)
    return uv, z
