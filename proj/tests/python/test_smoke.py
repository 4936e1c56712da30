import numpy as np
import pytest

import egoattn


def test_cam_and_attention_match_numpy():
    rng = np.random.default_rng(0)
    f = rng.normal(size=(4, 7, 7))
    w = rng.normal(size=(3, 4))
    cam = egoattn.compute_cam(f, w, 2)
    np.testing.assert_allclose(cam, np.einsum("l,lhw->hw", w[2], f), atol=1e-12)
    p = np.exp(cam - cam.max())
    p /= p.sum()
    np.testing.assert_allclose(egoattn.spatial_softmax(cam), p, atol=1e-12)
    np.testing.assert_allclose(egoattn.apply_spatial_attention(f, cam), f * p, atol=1e-12)
    np.testing.assert_allclose(egoattn.global_avg_pool(f), f.mean(axis=(1, 2)), atol=1e-12)


def test_conv2d_matches_loops():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 5, 5))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    y = egoattn.conv2d(x, k, b, stride=1, pad=1)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ref = np.empty((3, 5, 5))
    for o in range(3):
        for i in range(5):
            for j in range(5):
                ref[o, i, j] = (k[o] * xp[:, i:i + 3, j:j + 3]).sum() + b[o]
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_winning_class_and_fusion():
    assert egoattn.winning_class(np.array([0.1, 2.0, -1.0])) == 1
    assert egoattn.winning_class(np.array([5.0, 5.0, 3.0])) == 0
    np.testing.assert_array_equal(egoattn.fuse_average(np.array([2.0, 0.0]), np.array([0.0, 2.0])), [1.0, 1.0])
    with pytest.raises(ValueError):
        egoattn.fuse_average(np.zeros(2), np.zeros(3))


def test_convlstm_scalar_step():
    ones = np.ones((4, 1, 1, 1))
    h, c = egoattn.convlstm_step(
        np.full((1, 1, 1), 0.5), np.zeros((1, 1, 1)), np.zeros((1, 1, 1)), ones, ones, np.zeros(4)
    )
    s = 1.0 / (1.0 + np.exp(-0.5))
    assert c.item() == pytest.approx(s * np.tanh(0.5), abs=1e-12)
    assert h.item() == pytest.approx(s * np.tanh(s * np.tanh(0.5)), abs=1e-12)


def test_flow_translation_and_warp():
    y, x = np.mgrid[0:40, 0:40].astype(float)

    def img(dx, dy):
        return 0.5 + 0.2 * np.sin(0.3 * (x - dx) + 0.2 * (y - dy)) + 0.15 * np.cos(0.25 * (y - dy) - 0.1 * (x - dx))

    u, v = egoattn.tvl1_flow(img(0, 0), img(2, 0))
    inner = (slice(6, -6), slice(6, -6))
    assert np.mean(np.hypot(u[inner] - 2.0, v[inner])) < 0.3
    ru, rv, model, degenerate = egoattn.warp_compensate(np.full((16, 16), 1.5), np.full((16, 16), -0.5))
    assert not degenerate
    assert np.abs(ru).max() < 1e-9 and np.abs(rv).max() < 1e-9
    assert model[0] == pytest.approx(1.5) and model[3] == pytest.approx(-0.5)


def test_flow_stack_and_cross_modality_init():
    flows = [(np.full((4, 4), float(k)), np.full((4, 4), -float(k))) for k in range(6)]
    s = egoattn.build_flow_stack(flows, 3, 5)
    assert s.shape == (10, 4, 4)
    np.testing.assert_allclose(s[::2, 0, 0], np.arange(1, 6) / 20.0)
    k = np.random.default_rng(2).normal(size=(5, 3, 3, 3))
    t = egoattn.cross_modality_init(k, 10)
    np.testing.assert_allclose(t, np.repeat(k.mean(axis=1, keepdims=True), 10, axis=1), atol=1e-15)


def test_generated_clip_is_deterministic():
    a = egoattn.generate_clip(1, 2, seed=4)
    b = egoattn.generate_clip(1, 2, seed=4)
    assert a["frames"].shape == (30, 3, 32, 32)
    np.testing.assert_array_equal(a["frames"], b["frames"])
    assert len(a["boxes"]) == 30
    assert a["label"] == 1 * 6 + 2


def test_config_resolution():
    text = egoattn.resolve_config("stage1.epochs = 300\n", {"train.hidden": "9"})
    assert "stage1.epochs = 300" in text and "train.hidden = 9" in text
    with pytest.raises(ValueError):
        egoattn.resolve_config("stage1.epoch = 7\n")
    assert "tvl1.lambda" in egoattn.config_keys()


def test_flow_suite_passes():
    checks = egoattn.run_suite("flow")
    assert checks and all(c["passed"] for c in checks)
