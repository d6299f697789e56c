"""Harris corners with normalized patch descriptors, and ratio-test matching."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..core import GrayImage
from ..errors import InvalidArgument
from .model import Feature

HARRIS_K = 0.04
PATCH = 11
_GAUSS3 = np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0]) / 16.0


def harris_response(a: np.ndarray) -> np.ndarray:
    """Harris response: Sobel gradients, 3x3 Gaussian-weighted structure tensor."""
    a = np.asarray(a, dtype=float)
    gx = ndimage.sobel(a, axis=1, mode="nearest")
    gy = ndimage.sobel(a, axis=0, mode="nearest")
    sxx = ndimage.correlate(gx * gx, _GAUSS3, mode="nearest")
    syy = ndimage.correlate(gy * gy, _GAUSS3, mode="nearest")
    sxy = ndimage.correlate(gx * gy, _GAUSS3, mode="nearest")
    return sxx * syy - sxy * sxy - HARRIS_K * (sxx + syy) ** 2


def _subpixel(R: np.ndarray, r: int, c: int) -> tuple:
    def off(m, z, p):
        den = m - 2 * z + p
        return 0.0 if den >= 0 else float(np.clip(0.5 * (m - p) / den, -0.5, 0.5))

    return c + off(R[r, c - 1], R[r, c], R[r, c + 1]), r + off(R[r - 1, c], R[r, c], R[r + 1, c])


def detect_features(img: GrayImage, max_n: int = 500, rel_threshold: float = 1e-3,
                    patch: int = PATCH) -> list:
    """Top ``max_n`` Harris corners after 3x3 non-max suppression, each with an
    ``patch`` x ``patch`` zero-mean unit-norm descriptor (odd size). Corners
    whose patch would leave the image are skipped."""
    if img.width < 16 or img.height < 16:
        raise InvalidArgument("image must be at least 16x16")
    if patch < 3 or patch % 2 == 0:
        raise InvalidArgument("patch size must be odd and >= 3")
    a = np.asarray(img.pixels, dtype=float)
    R = harris_response(a)
    peak = R.max()
    if not peak > 0:
        return []
    nms = ndimage.maximum_filter(R, size=3, mode="constant", cval=-np.inf)
    half = patch // 2
    mask = (R == nms) & (R > rel_threshold * peak)
    mask[:half, :] = mask[-half:, :] = False
    mask[:, :half] = mask[:, -half:] = False
    rs, cs = np.nonzero(mask)
    order = np.lexsort((cs, rs, -R[rs, cs]))  # strongest first, then raster order
    feats = []
    for i in order:
        if len(feats) >= max_n:
            break
        r, c = int(rs[i]), int(cs[i])
        patch = a[r - half:r + half + 1, c - half:c + half + 1].ravel()
        patch = patch - patch.mean()
        n = np.linalg.norm(patch)
        if n < 1e-9:
            continue
        x, y = _subpixel(R, r, c)
        feats.append(Feature(x, y, float(R[r, c]), patch / n))
    return feats


def feature_arrays(feats: list):
    xy = np.array([[f.x, f.y] for f in feats], dtype=float).reshape(-1, 2)
    if not feats:
        return xy, np.zeros((0, 0))
    desc = np.array([f.descriptor for f in feats], dtype=float).reshape(len(feats), -1)
    return xy, desc


def match_descriptors(da: np.ndarray, db: np.ndarray, ratio: float = 0.8) -> list:
    """Mutual nearest neighbours under Euclidean distance that pass the ratio
    test (skipped when there is no second neighbour)."""
    if len(da) == 0 or len(db) == 0:
        return []
    d2 = (da**2).sum(1)[:, None] + (db**2).sum(1)[None, :] - 2.0 * da @ db.T
    d = np.sqrt(np.maximum(d2, 0.0))
    ab = np.argmin(d, axis=1)
    ba = np.argmin(d, axis=0)
    out = []
    for i, j in enumerate(ab):
        if ba[j] != i:
            continue
        if d.shape[1] > 1:
            row = d[i]
            second = np.partition(row, 1)[1]
            if not row[j] < ratio * second:
                continue
        out.append((i, int(j)))
    return out


def match_features(a: list, b: list, ratio: float = 0.8) -> list:
    return match_descriptors(feature_arrays(a)[1], feature_arrays(b)[1], ratio)
