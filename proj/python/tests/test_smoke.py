import numpy as np
import pytest

import batman_vos as bv


def test_generate_sequence_shapes():
    seq = bv.generate_sequence("twin", seed=3, height=32, width=32, frames=4)
    assert seq["frames"].shape == (4, 3, 32, 32)
    assert seq["masks"].shape == (4, 32, 32)
    assert seq["flows"].shape == (3, 2, 32, 32)
    assert seq["masks"].max() == 2
    assert 0.0 <= seq["frames"].min() and seq["frames"].max() <= 1.0


def test_generate_sequence_is_deterministic():
    a = bv.generate_sequence("distractor", seed=9)
    b = bv.generate_sequence("distractor", seed=9)
    assert np.array_equal(a["frames"], b["frames"])
    assert a["manifest"] == b["manifest"]


def test_unknown_category_raises():
    with pytest.raises(ValueError):
        bv.generate_sequence("nope", seed=0)


def test_maximal_rank_window_gives_spatial_window():
    rng = np.random.default_rng(0)
    e = rng.normal(size=(5, 6))
    dense = bv.bilateral_mask(e, window_radius=1, rank_window=8)
    ys, xs = np.divmod(np.arange(30), 6)
    window = (np.abs(ys[:, None] - ys[None, :]) <= 1) & (np.abs(xs[:, None] - xs[None, :]) <= 1)
    assert np.array_equal(dense.astype(bool), window)


def test_attention_matches_numpy_reference():
    rng = np.random.default_rng(1)
    h, w, c = 4, 5, 6
    q = rng.normal(size=(h * w, c))
    k = rng.normal(size=(h * w, c))
    v = rng.normal(size=(h * w, 3))
    e = rng.normal(size=(h, w))
    mask = bv.bilateral_mask(e, 1, 3).astype(bool)
    scores = q @ k.T / np.sqrt(c)
    scores = np.where(mask, scores, -np.inf)
    p = np.exp(scores - scores.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    for variant in ("exact", "windowed"):
        out = bv.bilateral_attention(q, k, v, e, 1, 3, variant=variant)
        assert np.allclose(out, p @ v, atol=1e-10)


def test_metrics():
    gt = np.zeros((10, 10), dtype=np.uint8)
    gt[2:8, 2:8] = 1
    assert bv.region_j(gt, gt) == 1.0
    assert bv.boundary_f(gt, gt) == 1.0
    left = np.zeros((4, 4), dtype=np.uint8)
    left[:, :2] = 1
    assert bv.region_j(left, left.T.copy()) == pytest.approx(1 / 3)


def test_flow_to_color_zero_is_white():
    img = bv.flow_to_color(np.zeros((2, 3, 4)))
    assert img.shape == (3, 4, 3)
    assert (img == 255).all()
