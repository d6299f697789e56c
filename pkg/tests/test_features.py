import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roomrecon.capsim import checkerboard_image
from roomrecon.core import GrayImage
from roomrecon.errors import InvalidArgument
from roomrecon.sfm import Feature, detect_features, match_features
from roomrecon.sfm.features import match_descriptors


def harris_oracle(a, k=0.04):
    """Harris response written out with edge padding and explicit kernels."""
    a = np.asarray(a, dtype=float)
    p = np.pad(a, 1, mode="edge")
    H, W = a.shape

    def win(dy, dx):
        return p[1 + dy:1 + dy + H, 1 + dx:1 + dx + W]

    gx = (win(-1, 1) + 2 * win(0, 1) + win(1, 1)) - (win(-1, -1) + 2 * win(0, -1) + win(1, -1))
    gy = (win(1, -1) + 2 * win(1, 0) + win(1, 1)) - (win(-1, -1) + 2 * win(-1, 0) + win(-1, 1))
    w = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]]) / 16.0

    def smooth(x):
        q = np.pad(x, 1, mode="edge")
        return sum(w[i, j] * q[i:i + H, j:j + W] for i in range(3) for j in range(3))

    sxx, syy, sxy = smooth(gx * gx), smooth(gy * gy), smooth(gx * gy)
    return sxx * syy - sxy**2 - k * (sxx + syy) ** 2


def test_constant_image_has_no_features():
    assert detect_features(GrayImage(40, 30, np.full((30, 40), 90))) == []


def test_single_dot_peak_matches_oracle():
    px = np.zeros((64, 64))
    px[31:34, 31:34] = 255
    feats = detect_features(GrayImage(64, 64, px), max_n=10)
    best = max(feats, key=lambda f: f.response)
    assert np.hypot(best.x - 32, best.y - 32) <= 2.0
    R = harris_oracle(px)
    r, c = np.unravel_index(np.argmax(R), R.shape)
    assert best.response == pytest.approx(R.max(), rel=1e-9)
    assert abs(round(best.x) - c) <= 1 and abs(round(best.y) - r) <= 1


def test_checkerboard_corners_are_found():
    img = checkerboard_image(128, 96, 8)
    # square boundaries fall between pixel centres, at 8 i - 0.5
    corners = np.array([(8 * i - 0.5, 8 * j - 0.5) for i in range(1, 16) for j in range(1, 12)])
    feats = detect_features(img, max_n=1000)
    xy = np.array([(f.x, f.y) for f in feats])
    d = np.linalg.norm(corners[:, None, :] - xy[None, :, :], axis=2).min(axis=1)
    assert (d <= 1.5).sum() >= 0.9 * len(corners)


def test_feature_invariants():
    img = checkerboard_image(96, 64, 6)
    feats = detect_features(img, max_n=50)
    assert 0 < len(feats) <= 50
    for f in feats:
        assert np.linalg.norm(f.descriptor) == pytest.approx(1.0, abs=1e-6)
        assert abs(f.descriptor.sum()) < 1e-9
        assert f.descriptor.shape == (121,)
        assert 5 <= f.x <= 96 - 6 and 5 <= f.y <= 64 - 6
    again = detect_features(img, max_n=50)
    assert [(f.x, f.y) for f in feats] == [(f.x, f.y) for f in again]
    responses = [f.response for f in feats]
    assert responses == sorted(responses, reverse=True)


def test_detect_rejects_bad_input():
    with pytest.raises(InvalidArgument):
        detect_features(GrayImage(15, 40, np.zeros((40, 15))))
    with pytest.raises(InvalidArgument):
        detect_features(checkerboard_image(), patch=10)


def _feat(desc):
    d = np.asarray(desc, dtype=float)
    return Feature(0.0, 0.0, 1.0, d)


def test_identical_lists_match_identically():
    rng = np.random.default_rng(0)
    desc = rng.normal(size=(12, 20))
    desc /= np.linalg.norm(desc, axis=1, keepdims=True)
    feats = [_feat(d) for d in desc]
    assert match_features(feats, feats) == [(i, i) for i in range(12)]


def test_ratio_test_examples():
    a = [_feat([0.0, 0.0])]
    # best 0.10, second 0.11: ratio 0.909 is not below 0.8
    assert match_features(a, [_feat([0.10, 0.0]), _feat([0.0, 0.11])]) == []
    assert match_features(a, [_feat([0.10, 0.0]), _feat([0.0, 0.20])]) == [(0, 0)]
    # a single candidate makes the ratio test vacuous
    assert match_features(a, [_feat([5.0, 5.0])]) == [(0, 0)]
    assert match_features([], a) == []


@settings(max_examples=50)
@given(st.integers(1, 15), st.integers(1, 15), st.integers(0, 10_000))
def test_matches_are_one_to_one_mutual_neighbours(na, nb, seed):
    rng = np.random.default_rng(seed)
    da, db = rng.normal(size=(na, 6)), rng.normal(size=(nb, 6))
    m = match_descriptors(da, db)
    assert len({i for i, _ in m}) == len(m) == len({j for _, j in m})
    D = np.linalg.norm(da[:, None] - db[None], axis=2)
    for i, j in m:
        assert D[i].argmin() == j and D[:, j].argmin() == i
