"""Fast built-in checks run by ``leanvae selftest``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import ModelConfig
from .gradcheck import check_gradients
from .model import LeanVAE
from .tensor import Tensor
from .tiling import split_frames, stream_decode, stream_encode
from .training import LossWeights, total_loss
from .wavelet import dwt2, dwt3, idwt2, idwt3

TINY = ModelConfig(d1=8, d2=8, D=16, d=4, ff_expansion=2, low_layers=1, high_layers=1,
                   fuse_layers=1, K=1, dtype="float64")


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def _wavelet_roundtrip(rng: np.random.Generator) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(20):
        x3 = rng.standard_normal((3, 4, 8, 6))
        x2 = rng.standard_normal((3, 8, 6))
        worst = max(worst, np.abs(idwt3(dwt3(x3)) - x3).max(), np.abs(idwt2(dwt2(x2)) - x2).max())
    return worst < 1e-12, f"max error {worst:.2e}"


def _causality(rng: np.random.Generator) -> tuple[bool, str]:
    model = LeanVAE(TINY)
    x = rng.uniform(-1, 1, (9, 16, 16, 3))
    z = model.encode(x).z.data
    y = x.copy()
    y[5:] = rng.uniform(-1, 1, y[5:].shape)
    z2 = model.encode(y).z.data
    enc_ok = np.array_equal(z[:2], z2[:2]) and not np.array_equal(z[2:], z2[2:])
    v = model.decode(z).data
    z3 = z.copy()
    z3[2:] += 1.0
    v2 = model.decode(z3).data
    dec_ok = np.array_equal(v[:5], v2[:5])
    return enc_ok and dec_ok, f"encoder {'ok' if enc_ok else 'leaks'}, decoder {'ok' if dec_ok else 'leaks'}"


def _tiling(rng: np.random.Generator) -> tuple[bool, str]:
    model = LeanVAE(TINY)
    x = rng.uniform(-1, 1, (17, 16, 16, 3))
    full_z = model.encode(x).z.data
    chunks = stream_encode(model, split_frames(x, [5, 8, 4]))
    z = np.concatenate([c.z.data for c in chunks], axis=0)
    full_v = model.decode(full_z).data
    v = np.concatenate(stream_decode(model, [z[:1], z[1:4], z[4:]]), axis=0)
    err = max(np.abs(z - full_z).max(), np.abs(v - full_v).max())
    return err < 1e-12, f"max deviation {err:.2e}"


def _gradients(rng: np.random.Generator) -> tuple[bool, str]:
    model = LeanVAE(TINY)
    x = rng.uniform(-1, 1, (1, 5, 8, 8, 3))
    weights = LossWeights(lambda_kl=0.1)
    params = [model.bottleneck.phi, model.encoder.fuse.layers[0].w1,
              model.patchifier.video_hc.weight, model.bottleneck.stages[0].theta_raw]

    def fn() -> Tensor:
        return total_loss(model, x, weights, np.random.default_rng(3))[0]

    errs = check_gradients(fn, params, max_entries=8)
    worst = max(errs.values())
    return worst < 1e-4, f"worst relative error {worst:.2e}"


CHECKS: dict[str, Callable[[np.random.Generator], tuple[bool, str]]] = {
    "wavelet_roundtrip": _wavelet_roundtrip,
    "causality": _causality,
    "tiling_equivalence": _tiling,
    "gradient_check": _gradients,
}


def run_selftest(seed: int = 0) -> list[CheckResult]:
    results = []
    for name, check in CHECKS.items():
        try:
            ok, detail = check(np.random.default_rng(seed))
        except Exception as exc:  # a crash is a failed check, not a crashed selftest
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail))
    return results
