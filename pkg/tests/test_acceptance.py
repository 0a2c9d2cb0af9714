"""Acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (printed in the pytest terminal summary)
before asserting, so a failing criterion still reports its measured value.
Criteria 9-11 train models and take roughly half an hour together on one core.
"""

import json
import math
import time

import numpy as np
import pytest

from conftest import project, record_acceptance
from leanvae import LeanVAE, ModelConfig
from leanvae.bottleneck import CSBottleneck
from leanvae.gradcheck import check_gradients
from leanvae.metrics import cost_model, parameter_counts
from leanvae.ntsr import read_manifest
from leanvae.tensor import (
    Tensor, absolute, add, concat, dwconv3d_causal, exp, gelu, layer_norm, linear, matmul_lastdim, mean, mul,
    neg, parameter, reshape, slice_axis, soft, softplus, split, square, sub, sum_all, transpose,
)
from leanvae.tiling import split_frames, stream_decode, stream_encode
from leanvae.training import (
    Adam, CosineSchedule, LossWeights, SyntheticCorpus, TrainConfig, Trainer, recon_loss, run_training,
    total_loss, train_step,
)
from leanvae.wavelet import dwt2, dwt3, idwt2, idwt3, wavelet_merge, wavelet_split
from test_bottleneck import ista_oracle
from test_tiling import random_chunking

TINY = ModelConfig(d1=8, d2=8, D=16, d=4, ff_expansion=2, low_layers=1, high_layers=1, fuse_layers=1,
                   joint_layers=2, K=2, dtype="float64")
# desk-scale model: the default topology at 1/8 width
DESK = ModelConfig(d1=16, d2=48, D=64, d=4)
DESK_LR = dict(lr_peak=2e-3, lr_floor=2e-4, warmup_steps=100)


def test_criterion_01_wavelet_perfect_reconstruction():
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    worst = {"float32": 0.0, "float64": 0.0}
    for i in range(1000):
        dtype = "float32" if i % 2 else "float64"
        c = int(rng.integers(1, 4))
        t, h, w = (2 * int(n) for n in rng.integers(1, 5, size=3))
        x3 = rng.standard_normal((c, t, h, w)).astype(dtype)
        x2 = rng.standard_normal((c, h, w)).astype(dtype)
        e3 = np.abs(idwt3(dwt3(x3)) - x3).max()
        e2 = np.abs(idwt2(dwt2(x2)) - x2).max()
        worst[dtype] = max(worst[dtype], float(e3), float(e2))
    elapsed = time.perf_counter() - start
    ok = worst["float32"] < 1e-6 and worst["float64"] < 1e-12 and elapsed < 30
    record_acceptance(1, "wavelet perfect reconstruction", ok,
                      f"max err f32 {worst['float32']:.2e}, f64 {worst['float64']:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_02_parameter_count(tmp_path):
    cfg = ModelConfig()
    analytic = sum(parameter_counts(cfg).values())
    model = LeanVAE(cfg)
    model.save(tmp_path / "default.ntsa")
    manifest, _ = read_manifest((tmp_path / "default.ntsa").read_bytes())
    stored = sum(int(np.prod(t["shape"])) for t in manifest["tensors"])
    ok = 34e6 <= analytic <= 46e6 and analytic == stored == model.param_count()
    record_acceptance(2, "parameter count", ok, f"cost model {analytic:,}, checkpoint manifest {stored:,}")
    assert ok


def test_criterion_03_flops():
    report = cost_model(ModelConfig(), (17, 768, 768))
    tflops = report.total / 1e12
    ok = 1.2 <= tflops <= 2.6
    record_acceptance(3, "FLOP consistency", ok,
                      f"{tflops:.3f} TFLOPs encode+decode at 17x768x768 ({94.1 / tflops:.1f}x below 94.1)")
    assert ok


def test_criterion_04_shape_contract():
    model = LeanVAE()
    x = np.random.default_rng(0).uniform(-1, 1, (17, 256, 256, 3)).astype(np.float32)
    z = model.encode(x).z
    out = model.decode(z)
    ok = z.shape == (5, 32, 32, 4) and out.shape == (17, 256, 256, 3)
    record_acceptance(4, "shape contract", ok, f"{x.shape} -> {z.shape} -> {out.shape}")
    assert ok


def test_criterion_05_causality():
    rng = np.random.default_rng(5)
    model = LeanVAE(TINY)
    violations = 0
    for trial in range(200):
        k = int(rng.integers(1, 5))
        x = rng.uniform(-1, 1, (1 + 4 * k, 16, 16, 3))
        t = int(rng.integers(0, k))  # latent rows 0..t are fixed by frames 0..4t
        if trial % 2 == 0:
            y = x.copy()
            y[4 * t + 1:] = rng.uniform(-1, 1, y[4 * t + 1:].shape)
            a, b = model.encode(x).z.data, model.encode(y).z.data
            violations += not np.array_equal(a[: t + 1], b[: t + 1])
        else:
            z = rng.standard_normal((1 + k, 2, 2, 4))
            z2 = z.copy()
            z2[t + 1:] += rng.standard_normal(z2[t + 1:].shape)
            a, b = model.decode(z).data, model.decode(z2).data
            violations += not np.array_equal(a[: 4 * t + 1], b[: 4 * t + 1])
    record_acceptance(5, "causality", violations == 0, f"{violations} violations in 200 trials")
    assert violations == 0


def test_criterion_06_lossless_tiling():
    rng = np.random.default_rng(6)
    start = time.perf_counter()
    worst = {}
    for dtype, trials in (("float32", 4), ("float64", 4)):
        model = LeanVAE(ModelConfig(dtype=dtype))
        x = rng.uniform(-1, 1, (17, 32, 32, 3)).astype(dtype)
        z_full = model.encode(x).z.data
        v_full = model.decode(z_full).data
        err = 0.0
        for _ in range(trials):
            sizes = random_chunking(rng, 17)
            z = np.concatenate([g.z.data for g in stream_encode(model, split_frames(x, sizes))])
            rows = np.cumsum([0, 1 + (sizes[0] - 1) // 4] + [n // 4 for n in sizes[1:]])
            v = np.concatenate(stream_decode(model, [z_full[a:b] for a, b in zip(rows[:-1], rows[1:])]))
            err = max(err, float(np.abs(z - z_full).max()), float(np.abs(v - v_full).max()))
        worst[dtype] = err
    elapsed = time.perf_counter() - start
    ok = worst["float32"] < 1e-5 and worst["float64"] < 1e-12 and elapsed < 120
    record_acceptance(6, "lossless tiling", ok,
                      f"max deviation f32 {worst['float32']:.2e}, f64 {worst['float64']:.2e}, {elapsed:.1f}s")
    assert ok


def _op_cases(rng):
    def p(*shape):
        return parameter(rng.standard_normal(shape))

    a, b, v = p(2, 3, 4), p(4), p(3, 4)
    away = parameter(rng.uniform(0.2, 1.0, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4)))
    th = parameter(np.asarray(0.1))
    shrink_in = parameter(rng.uniform(0.2, 1.0, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4)))
    w, bias = p(4, 5), p(5)
    g, beta = p(4), p(4)
    x5, k, cb = p(3, 4, 4, 2), p(3, 3, 3, 2), p(2)
    cache = rng.standard_normal((2, 4, 4, 2))
    vid = p(2, 4, 4, 3)
    bands = p(4, 4, 8)
    s = parameter(np.asarray(0.7))
    return {
        "add": (lambda: add(a, b), [a, b]),
        "sub": (lambda: sub(a, b), [a, b]),
        "mul": (lambda: mul(a, b), [a, b]),
        "scalar_mul": (lambda: mul(s, v), [s, v]),
        "neg": (lambda: neg(v), [v]),
        "square": (lambda: square(v), [v]),
        "absolute": (lambda: absolute(away), [away]),
        "exp": (lambda: exp(v), [v]),
        "softplus": (lambda: softplus(v), [v]),
        "gelu": (lambda: gelu(v), [v]),
        "soft": (lambda: soft(shrink_in, th), [shrink_in, th]),
        "sum_all": (lambda: sum_all(v), [v]),
        "mean": (lambda: mean(v), [v]),
        "reshape": (lambda: reshape(a, (6, 4)), [a]),
        "transpose": (lambda: transpose(a, (2, 0, 1)), [a]),
        "concat": (lambda: concat([v, away], axis=0), [v, away]),
        "slice": (lambda: slice_axis(a, 1, 3, 1), [a]),
        "split": (lambda: split(a, [1, 3], axis=-1)[1], [a]),
        "matmul_lastdim": (lambda: matmul_lastdim(v, w), [v, w]),
        "linear": (lambda: linear(v, w, bias), [v, w, bias]),
        "layer_norm": (lambda: layer_norm(v, g, beta), [v, g, beta]),
        "dwconv3d_causal": (lambda: dwconv3d_causal(x5, k, cb), [x5, k, cb]),
        "dwconv3d_causal_cached": (lambda: dwconv3d_causal(x5, k, cb, cache=cache), [x5, k, cb]),
        "wavelet_split": (lambda: wavelet_split(vid, (-4, -3, -2)), [vid]),
        "wavelet_merge": (lambda: wavelet_merge(bands, (-3, -2)), [bands]),
    }


def test_criterion_07_gradient_integrity():
    rng = np.random.default_rng(7)
    errors = {}
    for name, (fn, params) in _op_cases(rng).items():
        errs = check_gradients(lambda: project(fn()), params, eps=1e-5, max_entries=32)
        errors[name] = max(errs.values())
    x = rng.uniform(-1, 1, (5, 4, 4, 3))
    y = parameter(x + rng.uniform(0.05, 0.3, x.shape) * rng.choice([-1, 1], x.shape))
    errors["recon_loss"] = max(check_gradients(lambda: recon_loss(x, y), [y], max_entries=32).values())
    model = LeanVAE(TINY)
    clip = rng.uniform(-1, 1, (1, 5, 8, 8, 3))
    weights = LossWeights(lambda_kl=0.1)
    params = model.parameters()

    def loss():
        return total_loss(model, clip, weights, np.random.default_rng(3))[0]

    errs = check_gradients(loss, params, eps=1e-5, max_entries=4)
    errors["end_to_end_loss"] = max(errs.values())
    worst = max(errors, key=errors.get)
    ok = all(e < 1e-4 for e in errors.values())
    record_acceptance(7, "gradient integrity", ok,
                      f"{len(errors)} checks ({len(params)} model tensors end to end), "
                      f"worst {worst} rel err {errors[worst]:.2e}")
    assert ok


def test_criterion_08_ista_oracle():
    rng = np.random.default_rng(8)
    cfg = ModelConfig(d1=4, d2=4, D=8, d=3, K=2, ff_expansion=2, dtype="float64")
    worst = 0.0
    for _ in range(3):
        bn = CSBottleneck(cfg, rng)
        for _, prm in bn.named_parameters():
            prm.data[...] = rng.uniform(-0.5, 0.5, prm.shape)
        z = rng.standard_normal((2, 4, 4, 3))
        worst = max(worst, float(np.abs(bn.recover(Tensor(z)).data - ista_oracle(z, bn)).max()))
    record_acceptance(8, "ISTA-Net+ oracle equivalence", worst < 1e-10, f"max abs diff {worst:.2e}")
    assert worst < 1e-10


@pytest.mark.slow
def test_criterion_09_desk_training(tmp_path):
    start = time.perf_counter()
    cfg = TrainConfig(model=DESK, steps=5000, batch_size=4, log_every=250, heldout_clips=8, seed=0, **DESK_LR)
    _, log_path = run_training(cfg, tmp_path / "desk")
    records = [json.loads(line) for line in log_path.read_text().splitlines()]
    psnr0, psnr1 = records[0]["heldout_psnr"], records[-1]["heldout_psnr"]
    train_minutes = (time.perf_counter() - start) / 60

    model = LeanVAE(DESK)
    clip = SyntheticCorpus(0).batch([0])
    opt = Adam(model.parameters())
    sched = CosineSchedule(2e-3, 2e-4, 20, 500)
    rng = np.random.default_rng(0)
    first = last = None
    for step in range(500):
        r = train_step(clip, model, opt, LossWeights(), sched(step), rng, step=step)
        last = r["rgb"] + r["frequency"]
        first = last if first is None else first
    ratio = first / last
    elapsed = (time.perf_counter() - start) / 60
    ok = psnr1 - psnr0 >= 10 and ratio >= 10 and elapsed <= 120
    record_acceptance(9, "desk-scale training", ok,
                      f"held-out PSNR {psnr0:.2f} -> {psnr1:.2f} dB (+{psnr1 - psnr0:.2f}) after 5000 steps "
                      f"({train_minutes:.1f} min); single-clip recon_loss {first:.4f} -> {last:.4f} ({ratio:.1f}x); "
                      f"{elapsed:.1f} min total")
    assert ok


def _train(model_cfg, steps):
    tr = Trainer(TrainConfig(model=model_cfg, steps=steps, batch_size=4, heldout_clips=8, seed=0, **DESK_LR))
    for _ in range(steps):
        tr.train_step(tr.next_batch())
    return tr


@pytest.mark.slow
def test_criterion_10_ablation_directions():
    steps = 400
    cs = _train(DESK, steps)
    ae = _train(DESK.replace(bottleneck="ae"), steps)
    pn = _train(DESK.replace(patch_norm=True), steps)
    cs_loss, ae_loss = cs.heldout_recon_loss(), ae.heldout_recon_loss()
    cs_psnr, pn_psnr = cs.heldout_psnr(), pn.heldout_psnr()
    ok_a = cs_loss <= ae_loss
    ok_b = pn_psnr < cs_psnr
    record_acceptance(10, "ablation directions", ok_a and ok_b,
                      f"(a) held-out recon_loss CS {cs_loss:.5f} vs AE {ae_loss:.5f}; "
                      f"(b) held-out PSNR patch_norm on {pn_psnr:.2f} vs off {cs_psnr:.2f} dB "
                      f"({steps} steps each, seed 0)")
    assert ok_a and ok_b


@pytest.mark.slow
def test_criterion_11_variants_smoke():
    counts, finite, notes = {}, True, []
    for variant in ("variant1", "variant2", "variant3"):
        cfg = ModelConfig(variant=variant)
        tr = Trainer(TrainConfig(model=cfg, steps=200, batch_size=2, lr_peak=5e-5, lr_floor=1e-5, seed=0))
        losses = [tr.train_step(tr.next_batch())["loss"] for _ in range(200)]
        finite &= all(math.isfinite(v) for v in losses)
        counts[variant] = tr.model.param_count()
        notes.append(f"{variant} {counts[variant] / 1e6:.2f}M loss {losses[0]:.3f}->{losses[-1]:.3f}")
    spread = max(counts.values()) / min(counts.values()) - 1
    base = counts["variant2"]
    within = all(abs(n - base) / base <= 0.20 for n in counts.values())
    ok = finite and within
    record_acceptance(11, "architecture variants", ok,
                      f"{'; '.join(notes)}; max/min param ratio {1 + spread:.3f}, finite={finite}")
    assert ok
