import json
import math

import numpy as np
import pytest

from leanvae import ModelConfig
from leanvae.errors import DimensionError, InputError
from leanvae.metrics import cost_model, psnr, ssim


def ssim_loop_oracle(a, b, size=11, sigma=1.5):
    """Single-channel SSIM by explicit window sums, inputs on the [0, 1] scale."""
    ax = np.arange(size) - (size - 1) / 2
    g1 = np.exp(-ax**2 / (2 * sigma**2))
    w = np.outer(g1, g1)
    w /= w.sum()
    c1, c2 = 0.01**2, 0.03**2
    H, W = a.shape
    vals = []
    for i in range(H - size + 1):
        for j in range(W - size + 1):
            pa, pb = a[i:i + size, j:j + size], b[i:i + size, j:j + size]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va = (w * (pa - ma) ** 2).sum()
            vb = (w * (pb - mb) ** 2).sum()
            cov = (w * (pa - ma) * (pb - mb)).sum()
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_psnr_examples(rng):
    x = rng.uniform(-1, 1, (4, 8, 8, 3))
    assert psnr(x, x) == math.inf
    # 0.1 on the [0, 1] scale is 0.2 on [-1, 1]
    assert psnr(x * 0, x * 0 + 0.2) == pytest.approx(20.0, abs=1e-12)
    y = np.clip(x + rng.normal(0, 0.05, x.shape), -1, 1)
    mse = np.mean(((x + 1) / 2 - (y + 1) / 2) ** 2)
    assert abs(psnr(x, y) - 10 * math.log10(1 / mse)) < 1e-9
    with pytest.raises(DimensionError):
        psnr(x, x[:2])


def test_ssim_examples(rng):
    img = rng.uniform(-1, 1, (16, 16, 3))
    assert ssim(img, img) == pytest.approx(1.0)
    assert ssim(img, -img) < 1.0
    with pytest.raises(InputError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_ssim_matches_loop_oracle():
    rng = np.random.default_rng(42)
    base = np.add.outer(np.linspace(-0.8, 0.8, 16), np.linspace(-0.5, 0.5, 16))
    x = np.clip(base + 0.2 * rng.standard_normal((16, 16)), -1, 1)
    y = np.clip(x + 0.1 * rng.standard_normal((16, 16)), -1, 1)
    ref = ssim_loop_oracle((x + 1) / 2, (y + 1) / 2)
    assert abs(ssim(x, y) - ref) < 1e-6


def test_ssim_video_is_mean_over_frames_and_channels(rng):
    x = rng.uniform(-1, 1, (2, 12, 12, 3))
    y = np.clip(x + 0.1 * rng.standard_normal(x.shape), -1, 1)
    per = [ssim(x[f, :, :, c], y[f, :, :, c]) for f in range(2) for c in range(3)]
    assert ssim(x, y) == pytest.approx(np.mean(per), abs=1e-12)


def test_cost_default_budget():
    rep = cost_model(ModelConfig(), (17, 768, 768))
    assert 34e6 <= rep.params_total <= 46e6
    assert 1.2e12 <= rep.total <= 2.6e12
    assert rep.latent_shape == (5, 96, 96, 4)
    assert json.loads(rep.to_json())["params_total"] == rep.params_total


def test_cost_linear_in_time():
    cfg = ModelConfig()
    totals = [cost_model(cfg, (1 + 4 * k, 256, 256)).total for k in (1, 2, 3, 4)]
    steps = np.diff(totals)
    np.testing.assert_allclose(steps, steps[0], rtol=1e-12)


def test_cost_spatial_scaling():
    cfg = ModelConfig()
    small = cost_model(cfg, (17, 256, 256)).total
    big = cost_model(cfg, (17, 512, 512)).total
    assert big / small == pytest.approx(4.0, rel=0.01)


def test_cost_flops_per_mac_option():
    a = cost_model(ModelConfig(), (17, 256, 256))
    b = cost_model(ModelConfig(), (17, 256, 256), flops_per_mac=2)
    macs = a.to_dict()["macs_total"]
    assert b.total - a.total == pytest.approx(macs)


def test_cost_invalid_shape():
    with pytest.raises(DimensionError):
        cost_model(ModelConfig(), (16, 256, 256))
    with pytest.raises(DimensionError):
        cost_model(ModelConfig(), (17, 250, 256))
