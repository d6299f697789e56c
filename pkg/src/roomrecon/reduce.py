"""Frame reduction: exposure and motion gates, a directional-entropy anisotropy
quality score, orientation dedup among temporal neighbours, and global
viewing-direction coverage pruning."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import GRAVITY, CaptureStream, Frame, GrayImage, ImuSample, quat_angular_distance, viewing_direction
from .errors import InvalidArgument

STAGES = ("exposure", "motion", "anisotropy", "temporal_dedup", "coverage")


@dataclass(frozen=True)
class ReduceConfig:
    directions_n: int = 8
    pwd_window: int = 8
    renyi_alpha: float = 3.0
    aniso_keep_percentile: float = 50.0
    lum_mean_lo: float = 30.0
    lum_mean_hi: float = 225.0
    sat_frac_max: float = 0.05
    accel_dev_max: float = 2.0
    jerk_max: float = 40.0
    dedup_window: int = 5
    dedup_theta_min: float = 0.1745
    coverage_bin_deg: float = 15.0
    coverage_kmax: int = 2
    anchor_stride: int = 4

    def __post_init__(self):
        if self.directions_n < 1 or self.pwd_window < 1 or self.anchor_stride < 1:
            raise InvalidArgument("directions_n, pwd_window and anchor_stride must be >= 1")
        if self.renyi_alpha <= 0 or self.renyi_alpha == 1:
            raise InvalidArgument("renyi_alpha must be positive and != 1")
        if not 0 <= self.aniso_keep_percentile <= 100:
            raise InvalidArgument("aniso_keep_percentile must lie in [0, 100]")
        if not 0 <= self.lum_mean_lo <= self.lum_mean_hi <= 255:
            raise InvalidArgument("need 0 <= lum_mean_lo <= lum_mean_hi <= 255")
        if not 0 <= self.sat_frac_max <= 1:
            raise InvalidArgument("sat_frac_max must lie in [0, 1]")
        if self.accel_dev_max < 0 or self.jerk_max < 0 or self.dedup_theta_min < 0:
            raise InvalidArgument("thresholds must be nonnegative")
        if self.dedup_window < 1:
            raise InvalidArgument("dedup_window must be >= 1")
        if self.coverage_bin_deg <= 0 or self.coverage_kmax < 1:
            raise InvalidArgument("coverage_bin_deg must be positive and coverage_kmax >= 1")


@dataclass
class ReductionReport:
    total: int = 0
    kept_ids: list = field(default_factory=list)
    dropped: dict = field(default_factory=lambda: {s: 0 for s in STAGES})

    @property
    def reduction_ratio(self) -> float:
        return 0.0 if self.total == 0 else 1.0 - len(self.kept_ids) / self.total

    def to_dict(self) -> dict:
        return {"total": self.total, "kept_ids": list(self.kept_ids),
                "dropped": {s: int(self.dropped[s]) for s in STAGES},
                "reduction_ratio": self.reduction_ratio}


def renyi_entropy(p, alpha: float) -> float:
    """Renyi entropy of order ``alpha`` in bits."""
    p = np.asarray(p, dtype=float)
    if alpha == 1 or alpha <= 0:
        raise InvalidArgument("alpha must be positive and != 1")
    if p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidArgument("p must be a nonnegative vector summing to 1")
    support = p[p > 0]
    if support.max() == support.min():
        # uniform on its support: log2 of the support size for every order
        return float(np.log2(support.size))
    return float(np.log2(np.sum(p**alpha)) / (1.0 - alpha))


def _renyi_rows(P: np.ndarray, alpha: float) -> np.ndarray:
    s = np.sum(P**alpha, axis=-1)
    with np.errstate(divide="ignore"):
        h = np.log2(s) / (1.0 - alpha)
    return np.where(s > 0, h, 0.0)


def directional_entropies(img: GrayImage, cfg: ReduceConfig) -> np.ndarray:
    """Expected Renyi entropy of the normalized pseudo-Wigner distribution along
    each of ``cfg.directions_n`` orientations."""
    a = np.asarray(img.pixels, dtype=float)
    N = cfg.pwd_window
    H, W = a.shape
    if H < 2 * N + 1 or W < 2 * N + 1:
        raise InvalidArgument(f"image must be at least {2 * N + 1} pixels in each dimension")
    rows = np.arange(N, H - N, cfg.anchor_stride)
    cols = np.arange(N, W - N, cfg.anchor_stride)
    ar, ac = (g.ravel() for g in np.meshgrid(rows, cols, indexing="ij"))
    m = np.arange(-N, N + 1)
    out = np.empty(cfg.directions_n)
    for k in range(cfg.directions_n):
        th = k * np.pi / cfg.directions_n
        c, s = np.cos(th), np.sin(th)
        # one pixel per step along the dominant axis, nearest pixel on the other
        major = max(abs(c), abs(s))
        dr = np.rint(-m * s / major).astype(int)
        dc = np.rint(m * c / major).astype(int)
        z = a[ar[:, None] + dr, ac[:, None] + dc]  # (anchors, 2N+1), lag m = -N..N
        r = z * z[:, ::-1]  # z[n+m] z[n-m]
        wd = np.fft.fft(np.fft.ifftshift(r, axes=1), axis=1).real
        e = wd**2
        tot = e.sum(axis=1, keepdims=True)
        P = np.divide(e, tot, out=np.zeros_like(e), where=tot > 0)
        out[k] = _renyi_rows(P, cfg.renyi_alpha).mean()
    return out


def anisotropy(img: GrayImage, cfg: ReduceConfig | None = None) -> float:
    """Population standard deviation of the directional expected entropies."""
    cfg = cfg or ReduceConfig()
    t = directional_entropies(img, cfg)
    return float(np.std(t))


def exposure_ok(img: GrayImage, cfg: ReduceConfig | None = None) -> bool:
    cfg = cfg or ReduceConfig()
    px = np.asarray(img.pixels)
    if px.size == 0:
        raise InvalidArgument("empty image")
    mean = float(px.mean())
    sat = float(np.count_nonzero((px == 0) | (px == 255))) / px.size
    return cfg.lum_mean_lo <= mean <= cfg.lum_mean_hi and sat <= cfg.sat_frac_max


def motion_gate(imu: ImuSample, prev: Optional[ImuSample] = None, cfg: ReduceConfig | None = None) -> bool:
    """Accept a frame unless its accelerometer reading suggests handheld motion:
    specific-force magnitude far from g, or a large jerk since ``prev``."""
    cfg = cfg or ReduceConfig()
    if abs(float(np.linalg.norm(imu.accel)) - GRAVITY) > cfg.accel_dev_max:
        return False
    if prev is None:
        return True
    dt = (imu.t_us - prev.t_us) * 1e-6
    if dt <= 0:
        raise InvalidArgument("IMU samples must be strictly increasing in time")
    return float(np.linalg.norm(imu.accel - prev.accel)) / dt <= cfg.jerk_max


def _by_score(items):
    # descending score, ties broken by lower id
    return sorted(items, key=lambda fs: (-fs[1], fs[0].id))


def temporal_dedup(frames: Sequence, cfg: ReduceConfig | None = None) -> list:
    """Drop frames whose orientation repeats a better-scored temporal neighbour.

    ``frames`` is a sequence of ``(Frame, score)``. Two frames are neighbours
    when their ids differ by less than ``dedup_window``, i.e. some window of
    ``dedup_window`` consecutive ids holds both. Frames are visited in
    descending score and kept iff they are at least ``dedup_theta_min`` away
    from every kept neighbour. Returns kept ids in increasing order.
    """
    cfg = cfg or ReduceConfig()
    kept = []
    for f, _ in _by_score(frames):
        ok = True
        for g in kept:
            near = abs(g.id - f.id) < cfg.dedup_window
            if near and quat_angular_distance(f.imu.orient, g.imu.orient) < cfg.dedup_theta_min:
                ok = False
                break
        if ok:
            kept.append(f)
    return sorted(f.id for f in kept)


def coverage_cell(frame: Frame, bin_deg: float) -> tuple:
    d = viewing_direction(frame.imu.orient)
    yaw = np.degrees(np.arctan2(d[1], d[0]))
    pitch = np.degrees(np.arcsin(np.clip(d[2], -1.0, 1.0)))
    return int(np.floor(yaw / bin_deg)), int(np.floor(pitch / bin_deg))


def coverage_prune(frames: Sequence, cfg: ReduceConfig | None = None) -> list:
    """Keep at most ``coverage_kmax`` best-scored frames per (yaw, pitch) cell."""
    cfg = cfg or ReduceConfig()
    counts: dict = {}
    kept = []
    for f, _ in _by_score(frames):
        cell = coverage_cell(f, cfg.coverage_bin_deg)
        if counts.get(cell, 0) < cfg.coverage_kmax:
            counts[cell] = counts.get(cell, 0) + 1
            kept.append(f.id)
    return sorted(kept)


def score_frames(frames: Iterable[Frame], cfg: ReduceConfig, threads: int = 1) -> dict:
    """Anisotropy per frame id; scoring may run on a thread pool."""
    frames = list(frames)
    if threads == 1 or len(frames) < 2:
        scores = [anisotropy(f.image, cfg) for f in frames]
    else:
        with ThreadPoolExecutor(max_workers=threads or None) as ex:
            scores = list(ex.map(lambda f: anisotropy(f.image, cfg), frames))
    return {f.id: s for f, s in zip(frames, scores)}


def reduce_stream(stream: CaptureStream, cfg: ReduceConfig | None = None, *,
                  threads: int = 1, skip_percentile: bool = False):
    """Run exposure -> motion -> anisotropy percentile -> temporal dedup ->
    coverage. Returns ``(kept_frames, ReductionReport)``."""
    cfg = cfg or ReduceConfig()
    frames = list(stream.frames)
    report = ReductionReport(total=len(frames))
    if not frames:
        return [], report

    survivors = [f for f in frames if exposure_ok(f.image, cfg)]
    report.dropped["exposure"] = len(frames) - len(survivors)

    # jerk is measured against the preceding sample of the original sensor log
    prev_imu = {}
    for a, b in zip(frames, frames[1:]):
        prev_imu[b.id] = a.imu
    n = len(survivors)
    survivors = [f for f in survivors if motion_gate(f.imu, prev_imu.get(f.id), cfg)]
    report.dropped["motion"] = n - len(survivors)

    scores = score_frames(survivors, cfg, threads)
    n = len(survivors)
    if survivors and not skip_percentile:
        thr = float(np.percentile([scores[f.id] for f in survivors], cfg.aniso_keep_percentile))
        survivors = [f for f in survivors if scores[f.id] >= thr]
    report.dropped["anisotropy"] = n - len(survivors)

    n = len(survivors)
    keep = set(temporal_dedup([(f, scores[f.id]) for f in survivors], cfg))
    survivors = [f for f in survivors if f.id in keep]
    report.dropped["temporal_dedup"] = n - len(survivors)

    n = len(survivors)
    keep = set(coverage_prune([(f, scores[f.id]) for f in survivors], cfg))
    survivors = [f for f in survivors if f.id in keep]
    report.dropped["coverage"] = n - len(survivors)

    report.kept_ids = [f.id for f in survivors]
    return survivors, report


def config_from_dict(d: dict) -> ReduceConfig:
    known = {f.name for f in fields(ReduceConfig)}
    unknown = set(d) - known
    if unknown:
        raise InvalidArgument(f"unknown ReduceConfig keys: {sorted(unknown)}")
    return ReduceConfig(**d)
