"""Reconstruction metrics and the analytic parameter/FLOP cost model."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import ArchVariant, BottleneckKind, ModelConfig
from .errors import DimensionError, InputError


def _to_unit(v: np.ndarray) -> np.ndarray:
    return (np.asarray(v, dtype=np.float64) + 1.0) * 0.5


def psnr(x: np.ndarray, y: np.ndarray) -> float:
    """PSNR in dB of [-1, 1] data, computed on the [0, 1] scale; ``inf`` if equal."""
    x, y = np.asarray(x), np.asarray(y)
    if x.shape != y.shape:
        raise DimensionError(f"psnr: shapes differ {x.shape} vs {y.shape}")
    mse = float(np.mean((_to_unit(x) - _to_unit(y)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation over the last two axes."""
    n = g.size
    h = sum(g[i] * img[..., i:img.shape[-2] - n + 1 + i, :] for i in range(n))
    return sum(g[i] * h[..., :, i:h.shape[-1] - n + 1 + i] for i in range(n))


def ssim(x: np.ndarray, y: np.ndarray, win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM of [-1, 1] frames.

    Accepts (H, W), (H, W, C) or (F, H, W, C); each frame and channel gets its
    own SSIM map (Gaussian window, valid region) and the result is the mean
    over channels, then frames.
    """
    x, y = np.asarray(x), np.asarray(y)
    if x.shape != y.shape:
        raise DimensionError(f"ssim: shapes differ {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[None, :, :, None], y[None, :, :, None]
    elif x.ndim == 3:
        x, y = x[None], y[None]
    elif x.ndim != 4:
        raise DimensionError(f"ssim: expected 2-4 dims, got {x.shape}")
    H, W = x.shape[1:3]
    if H < win_size or W < win_size:
        raise InputError(f"ssim: frame {H}x{W} is smaller than the {win_size}x{win_size} window")
    # (F, C, H, W) on the [0, 1] scale
    a = np.moveaxis(_to_unit(x), -1, 1)
    b = np.moveaxis(_to_unit(y), -1, 1)
    g = gaussian_window(win_size, sigma)
    c1, c2 = 0.01**2, 0.03**2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    per_channel = smap.mean(axis=(-2, -1))
    return float(per_channel.mean(axis=1).mean())


# -- cost model -----------------------------------------------------------------
@dataclass
class CostReport:
    """Parameter and FLOP counts per module for one input shape.

    ``macs`` counts multiply-accumulates; ``flops`` is
    ``flops_per_mac * macs + elementwise`` where elementwise ops (bias adds,
    activations, residual adds, soft-shrinkage, wavelet butterflies) count
    one FLOP per element.
    """

    input_shape: tuple[int, int, int]
    latent_shape: tuple[int, int, int, int]
    flops_per_mac: float
    params: dict[str, int] = field(default_factory=dict)
    encode_macs: dict[str, int] = field(default_factory=dict)
    encode_elementwise: dict[str, int] = field(default_factory=dict)
    decode_macs: dict[str, int] = field(default_factory=dict)
    decode_elementwise: dict[str, int] = field(default_factory=dict)

    def _flops(self, macs: dict[str, int], elem: dict[str, int]) -> dict[str, float]:
        keys = list(dict.fromkeys(list(macs) + list(elem)))
        return {k: self.flops_per_mac * macs.get(k, 0) + elem.get(k, 0) for k in keys}

    @property
    def encode_flops(self) -> dict[str, float]:
        return self._flops(self.encode_macs, self.encode_elementwise)

    @property
    def decode_flops(self) -> dict[str, float]:
        return self._flops(self.decode_macs, self.decode_elementwise)

    @property
    def params_total(self) -> int:
        return sum(self.params.values())

    @property
    def encode_total(self) -> float:
        return sum(self.encode_flops.values())

    @property
    def decode_total(self) -> float:
        return sum(self.decode_flops.values())

    @property
    def total(self) -> float:
        return self.encode_total + self.decode_total

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "latent_shape": list(self.latent_shape),
            "flops_per_mac": self.flops_per_mac,
            "params": dict(self.params),
            "params_total": self.params_total,
            "encode_flops": self.encode_flops,
            "decode_flops": self.decode_flops,
            "encode_total": self.encode_total,
            "decode_total": self.decode_total,
            "total": self.total,
            "total_tflops": self.total / 1e12,
            "macs_total": sum(self.encode_macs.values()) + sum(self.decode_macs.values()),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _naf_params(width: int, e: int) -> int:
    return 27 * width + width + width * e * width + e * width + e * width * width + width


def _naf_costs(width: int, e: int, sites: int) -> tuple[int, int]:
    """(MACs, elementwise FLOPs) of one NAF layer over ``sites`` tokens; residual add included."""
    hidden = e * width
    macs = sites * (27 * width + width * hidden + hidden * width)
    # conv bias, gelu, b1, gelu, b2, residual
    elem = sites * (width + width + hidden + hidden + width + width)
    return macs, elem


def _linear_params(n_in: int, n_out: int) -> int:
    return n_in * n_out + n_out


def _stacks(config: ModelConfig) -> list[tuple[int, int]]:
    """(width, depth) of the encoder stacks; the decoder mirrors them."""
    if config.variant is ArchVariant.VARIANT2:
        return [(config.d2, config.low_layers), (config.d1, config.high_layers), (config.D, config.fuse_layers)]
    return [(config.D, config.joint_layers)]


def _patch_dims(config: ModelConfig) -> dict[str, tuple[int, int]]:
    """stream -> (raw patch width, embedding width)."""
    if config.variant is ArchVariant.VARIANT3:
        return {"video": (3 * 4 * 8 * 8, config.D), "image": (3 * 8 * 8, config.D)}
    return {"video_lc": (3 * 32, config.d2), "video_hc": (21 * 32, config.d1),
            "image_lc": (3 * 16, config.d2), "image_hc": (9 * 16, config.d1)}


def parameter_counts(config: ModelConfig) -> dict[str, int]:
    e, D, d = config.ff_expansion, config.D, config.d
    patch = 0
    for n_raw, n_emb in _patch_dims(config).values():
        patch += _linear_params(n_raw, n_emb) + _linear_params(n_emb, n_raw)
        if config.patch_norm:
            patch += 2 * n_raw
    stacks = sum(depth * _naf_params(width, e) for width, depth in _stacks(config))
    bottleneck = 3 * d * D + config.K * 4 * _naf_params(D, e)
    if config.bottleneck is BottleneckKind.CS:
        bottleneck += 2 * config.K
    return {"patchifier": patch, "encoder": stacks, "bottleneck": bottleneck, "decoder": stacks}


def cost_model(config: ModelConfig, input_shape: Sequence[int], flops_per_mac: float = 1.0) -> CostReport:
    """Analytic costs of one encode and one decode of a (1+T, H, W) clip.

    The default ``flops_per_mac=1`` follows the profiler convention used for
    the published TFLOP comparisons; pass 2 to count multiply and add
    separately.
    """
    F, H, W = (int(v) for v in input_shape)
    if F < 1 or (F - 1) % 4 or H % 8 or W % 8 or H <= 0 or W <= 0:
        raise DimensionError(f"input shape must be (1+4k, 8m, 8n), got {tuple(input_shape)}")
    e, D, d = config.ff_expansion, config.D, config.d
    rows, gh, gw = 1 + (F - 1) // 4, H // 8, W // 8
    grid = gh * gw
    tokens = rows * grid
    video_tokens = (rows - 1) * grid
    report = CostReport((F, H, W), (rows, gh, gw, d), flops_per_mac, params=parameter_counts(config))

    # patch stage
    enc_m, enc_e, dec_m, dec_e = {}, {}, {}, {}
    dims = _patch_dims(config)
    m = el = 0
    for name, (n_raw, n_emb) in dims.items():
        sites = grid if name.startswith("image") else video_tokens
        m += sites * n_raw * n_emb
        el += sites * n_emb
        if config.patch_norm:
            el += sites * 8 * n_raw
    enc_m["patchify"], enc_e["patchify"] = m, el
    m = el = 0
    for name, (n_raw, n_emb) in dims.items():
        sites = grid if name.startswith("image") else video_tokens
        m += sites * n_emb * n_raw
        el += sites * n_raw
    dec_m["unpatchify"], dec_e["unpatchify"] = m, el
    if config.variant is not ArchVariant.VARIANT3:
        # one add/sub and one scale per element per transformed axis
        wave = H * W * 3 * 2 * 2 + (F - 1) * H * W * 3 * 3 * 2
        enc_e["wavelet"] = wave
        dec_e["wavelet"] = wave

    m = el = 0
    for width, depth in _stacks(config):
        mm, ee = _naf_costs(width, e, tokens)
        m += depth * mm
        el += depth * ee
    enc_m["encoder"], enc_e["encoder"] = m, el
    dec_m["decoder"], dec_e["decoder"] = m, el

    enc_m["sense"], enc_e["sense"] = tokens * d * D, 0
    naf_m, naf_e = _naf_costs(D, e, tokens)
    naf_e -= tokens * D  # F / Ftilde layers carry no residual add
    m = tokens * D * d
    el = 0
    for _ in range(config.K):
        m += 4 * naf_m
        el += 4 * naf_e
        if config.bottleneck is BottleneckKind.CS:
            m += 2 * tokens * d * D
            # residual (d), rho scale, subtract, soft, final add (D each)
            el += tokens * (d + 4 * D)
        else:
            el += tokens * D
    dec_m["recover"], dec_e["recover"] = m, el

    report.encode_macs, report.encode_elementwise = enc_m, enc_e
    report.decode_macs, report.decode_elementwise = dec_m, dec_e
    return report
