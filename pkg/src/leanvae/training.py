"""Desk-scale training: losses, Adam, cosine schedule, synthetic clips, the loop."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from .config import ModelConfig
from .errors import DimensionError, NonFiniteLossError
from .metrics import psnr
from .model import LeanVAE, kl_term
from .tensor import Tensor, absolute, concat, mean, reshape, slice_axis, sub
from .wavelet import split_channels_last, wavelet_split

log = logging.getLogger(__name__)

LossHook = Callable[[Tensor, Tensor], Tensor]


@dataclass
class LossWeights:
    """Weights of the training objective.

    The perceptual and adversarial terms are hook slots: a callable
    ``(x, x_hat) -> scalar Tensor`` must be bound before giving them a
    non-zero weight.
    """

    lambda_lpips: float = 0.0
    lambda_adv: float = 0.0
    lambda_kl: float = 1e-7
    rgb: bool = True
    frequency: bool = True
    lpips_hook: LossHook | None = field(default=None, repr=False, compare=False)
    adv_hook: LossHook | None = field(default=None, repr=False, compare=False)

    def active_terms(self) -> list[str]:
        terms = []
        if self.rgb:
            terms.append("rgb")
        if self.frequency:
            terms.append("frequency")
        if self.lambda_lpips:
            terms.append("lpips")
        if self.lambda_adv:
            terms.append("adv")
        if self.lambda_kl:
            terms.append("kl")
        return terms

    def validate(self) -> None:
        if self.lambda_lpips and self.lpips_hook is None:
            raise ValueError("lambda_lpips > 0 needs an lpips_hook")
        if self.lambda_adv and self.adv_hook is None:
            raise ValueError("lambda_adv > 0 needs an adv_hook")
        if self.lambda_kl < 0:
            raise ValueError("lambda_kl must be non-negative")


def frequency_bands(v: Tensor) -> Tensor:
    """Flattened subbands of a video: 2D DWT of frame 0, 3D DWT of the rest."""
    F = v.shape[-4]
    lead = v.shape[:-4]
    first = wavelet_split(reshape(slice_axis(v, 0, 1, -4), lead + v.shape[-3:]), (-3, -2))
    parts = [reshape(first, lead + (-1,))]
    if F > 1:
        rest = wavelet_split(slice_axis(v, 1, F, -4), (-4, -3, -2))
        parts.append(reshape(rest, lead + (-1,)))
    return concat(parts, axis=-1)


def recon_terms(x, x_hat: Tensor) -> dict[str, Tensor]:
    """Per-element mean L1 in RGB and in the wavelet domain."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=x_hat.dtype))
    if x.shape != x_hat.shape:
        raise DimensionError(f"recon_loss: shapes differ {x.shape} vs {x_hat.shape}")
    diff = sub(x_hat, x)
    return {"rgb": mean(absolute(diff)), "frequency": mean(absolute(frequency_bands(diff)))}


def recon_loss(x, x_hat: Tensor) -> Tensor:
    t = recon_terms(x, x_hat)
    return t["rgb"] + t["frequency"]


def frequency_l1_numpy(x: np.ndarray, y: np.ndarray) -> float:
    """Frequency term without the tape (evaluation helper)."""
    diff = np.asarray(y, dtype=np.float64) - np.asarray(x, dtype=np.float64)
    first = split_channels_last(diff[..., 0, :, :, :], (-3, -2))
    total = np.abs(first).sum()
    count = first.size
    if diff.shape[-4] > 1:
        rest = split_channels_last(diff[..., 1:, :, :, :], (-4, -3, -2))
        total += np.abs(rest).sum()
        count += rest.size
    return float(total / count)


def total_loss(model: LeanVAE, x: np.ndarray, weights: LossWeights, rng: np.random.Generator
               ) -> tuple[Tensor, dict[str, Tensor]]:
    x_hat, latent = model.forward(x, rng)
    xt = Tensor(np.asarray(x, dtype=model.dtype))
    parts = recon_terms(xt, x_hat)
    terms: dict[str, Tensor] = {}
    if weights.rgb:
        terms["rgb"] = parts["rgb"]
    if weights.frequency:
        terms["frequency"] = parts["frequency"]
    loss = None
    for t in terms.values():
        loss = t if loss is None else loss + t
    if weights.lambda_lpips:
        terms["lpips"] = weights.lpips_hook(xt, x_hat)
        loss = loss + terms["lpips"] * weights.lambda_lpips
    if weights.lambda_adv:
        terms["adv"] = weights.adv_hook(xt, x_hat)
        loss = loss + terms["adv"] * weights.lambda_adv
    terms["kl"] = kl_term(latent.mu, latent.logvar)
    if weights.lambda_kl:
        loss = loss + terms["kl"] * weights.lambda_kl
    return loss, terms


# -- optimization ------------------------------------------------------------------
class Adam:
    """Adam with bias correction; learning rate supplied per step."""

    def __init__(self, params, betas: tuple[float, float] = (0.5, 0.9), eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if lr == 0.0:
                continue
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= (lr * update).astype(p.dtype, copy=False)

    def state_dict(self) -> dict[str, Any]:
        return {"step": self.step_count, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}


def clip_grad_norm(params, max_norm: float) -> tuple[float, bool]:
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
        return norm, True
    return norm, False


@dataclass(frozen=True)
class CosineSchedule:
    """Linear warmup to ``peak``, then cosine decay to ``floor`` at ``total_steps``."""

    peak: float
    floor: float
    warmup_steps: int
    total_steps: int

    def __call__(self, step: int) -> float:
        if self.warmup_steps and step < self.warmup_steps:
            return self.peak * (step + 1) / self.warmup_steps
        span = max(self.total_steps - self.warmup_steps, 1)
        frac = min(max(step - self.warmup_steps, 0) / span, 1.0)
        return self.floor + 0.5 * (self.peak - self.floor) * (1.0 + math.cos(math.pi * frac))


# -- synthetic data ------------------------------------------------------------------
@dataclass(frozen=True)
class SyntheticCorpus:
    """Procedural clips of moving rectangles and Gaussian blobs over a gradient.

    Clip ``i`` depends only on ``(seed, i)``. Values lie in [-1, 1].
    """

    seed: int = 0
    frames: int = 17
    height: int = 32
    width: int = 32
    max_shapes: int = 3

    def clip(self, index: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, index])
        F, H, W = self.frames, self.height, self.width
        t = np.arange(F, dtype=np.float64)[:, None, None]
        yy = np.arange(H, dtype=np.float64)[None, :, None]
        xx = np.arange(W, dtype=np.float64)[None, None, :]
        base = rng.uniform(-0.6, 0.6, size=3)
        grad = rng.uniform(-0.3, 0.3, size=(3, 2))
        video = np.empty((F, H, W, 3))
        for c in range(3):
            video[..., c] = base[c] + grad[c, 0] * (yy / H - 0.5) + grad[c, 1] * (xx / W - 0.5) + 0 * t
        for _ in range(rng.integers(1, self.max_shapes + 1)):
            color = rng.uniform(-1.0, 1.0, size=3)
            cy, cx = rng.uniform(0, H), rng.uniform(0, W)
            vy, vx = rng.uniform(-1.0, 1.0, size=2) * (H / 16)
            py, px = cy + vy * t, cx + vx * t
            if rng.random() < 0.5:
                hy, hx = rng.uniform(H / 10, H / 4), rng.uniform(W / 10, W / 4)
                mask = ((np.abs(yy - py) <= hy) & (np.abs(xx - px) <= hx)).astype(np.float64)
            else:
                s = rng.uniform(H / 12, H / 5)
                mask = np.exp(-((yy - py) ** 2 + (xx - px) ** 2) / (2 * s * s))
            video = video * (1 - mask[..., None]) + color * mask[..., None]
        return np.clip(video, -1.0, 1.0).astype(np.float32)

    def batch(self, indices) -> np.ndarray:
        return np.stack([self.clip(int(i)) for i in indices])


# -- training loop ---------------------------------------------------------------------
@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    steps: int = 200
    batch_size: int = 2
    lr_peak: float = 5e-5
    lr_floor: float = 1e-5
    warmup_steps: int = 0
    betas: tuple[float, float] = (0.5, 0.9)
    grad_clip: float = 1.0
    frames: int = 17
    height: int = 32
    width: int = 32
    corpus_size: int | None = None
    heldout_clips: int = 4
    log_every: int = 50
    checkpoint_every: int = 0
    seed: int = 0

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "TrainConfig":
        """Build from nested ``{"model": {...}, "loss": {...}, "train": {...}}`` (TOML layout)."""
        model = ModelConfig.from_dict(data.get("model", {}))
        loss_fields = {f.name for f in dataclasses.fields(LossWeights)} - {"lpips_hook", "adv_hook"}
        loss_in = dict(data.get("loss", {}))
        bad = set(loss_in) - loss_fields
        if bad:
            raise ValueError(f"unknown loss fields: {sorted(bad)}")
        train_in = dict(data.get("train", {}))
        train_fields = {f.name for f in dataclasses.fields(cls)} - {"model", "loss"}
        bad = set(train_in) - train_fields
        if bad:
            raise ValueError(f"unknown train fields: {sorted(bad)}")
        if "betas" in train_in:
            train_in["betas"] = tuple(train_in["betas"])
        return cls(model=model, loss=LossWeights(**loss_in), **train_in)

    def to_dict(self) -> dict[str, Any]:
        train = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name not in ("model", "loss")}
        train["betas"] = list(self.betas)
        loss = {k: getattr(self.loss, k) for k in ("lambda_lpips", "lambda_adv", "lambda_kl", "rgb", "frequency")}
        return {"model": self.model.to_dict(), "loss": loss, "train": train}


class Trainer:
    """Owns a model, its optimizer and the data order for one training run."""

    def __init__(self, config: TrainConfig, model: LeanVAE | None = None):
        config.loss.validate()
        self.config = config
        self.model = model or LeanVAE(config.model)
        self.optimizer = Adam(self.model.parameters(), betas=config.betas)
        self.schedule = CosineSchedule(config.lr_peak, config.lr_floor, config.warmup_steps, config.steps)
        self.corpus = SyntheticCorpus(config.seed, config.frames, config.height, config.width)
        self.heldout = SyntheticCorpus(config.seed + 1_000_003, config.frames, config.height, config.width)
        self.rng = np.random.default_rng([config.seed, 7])
        self.step = 0

    def next_batch(self) -> np.ndarray:
        c = self.config
        idx = np.arange(self.step * c.batch_size, (self.step + 1) * c.batch_size)
        if c.corpus_size:
            idx = idx % c.corpus_size
        return self.corpus.batch(idx)

    def train_step(self, batch: np.ndarray, lr: float | None = None) -> dict[str, float]:
        lr = self.schedule(self.step) if lr is None else lr
        return train_step(batch, self.model, self.optimizer, self.config.loss, lr, self.rng,
                          self.config.grad_clip, step=self.step, after=self._advance)

    def _advance(self) -> None:
        self.step += 1

    def heldout_clips(self) -> np.ndarray:
        return self.heldout.batch(range(self.config.heldout_clips))

    def heldout_psnr(self) -> float:
        return evaluate_psnr(self.model, self.heldout_clips())

    def heldout_recon_loss(self) -> float:
        return evaluate_recon_loss(self.model, self.heldout_clips())


def evaluate_psnr(model: LeanVAE, clips: np.ndarray) -> float:
    """Mean PSNR over clips (capped at 100 dB so an exact clip does not dominate)."""
    values = [min(psnr(c, model.reconstruct(c)), 100.0) for c in clips]
    return float(np.mean(values))


def evaluate_recon_loss(model: LeanVAE, clips: np.ndarray) -> float:
    """Mean recon_loss of inference-mode reconstructions (latent means, no sampling)."""
    values = []
    for clip in clips:
        rec = model.reconstruct(clip)
        rgb = float(np.mean(np.abs(rec.astype(np.float64) - clip)))
        values.append(rgb + frequency_l1_numpy(clip, rec))
    return float(np.mean(values))


def train_step(batch: np.ndarray, model: LeanVAE, opt: Adam, weights: LossWeights, lr: float,
               rng: np.random.Generator, grad_clip: float = 1.0, step: int = 0,
               after: Callable[[], None] | None = None) -> dict[str, float]:
    """One Adam step on ``batch``; returns the loss breakdown and gradient norm."""
    model.zero_grad()
    loss, terms = total_loss(model, batch, weights, rng)
    value = loss.item()
    report = {k: t.item() for k, t in terms.items()}
    if not math.isfinite(value) or not all(math.isfinite(v) for v in report.values()):
        raise NonFiniteLossError(json.dumps({"step": step, "lr": lr, "loss": repr(value),
                                             "terms": {k: repr(v) for k, v in report.items()}}))
    loss.backward()
    norm, clipped = clip_grad_norm(opt.params, grad_clip)
    if clipped:
        log.debug("step %d: gradient norm %.4g clipped to %.4g", step, norm, grad_clip)
    opt.step(lr)
    if after is not None:
        after()
    report.update(loss=value, grad_norm=norm, clipped=clipped, lr=lr)
    return report


def run_training(config: TrainConfig, out_dir: str | os.PathLike,
                 progress: Callable[[dict], None] | None = None) -> tuple[Path, Path]:
    """Train, writing JSON-lines metrics and checkpoints into ``out_dir``.

    Returns (final checkpoint path, metrics log path).
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    trainer = Trainer(config)
    log_path = out / "metrics.jsonl"
    (out / "train_config.json").write_text(json.dumps(config.to_dict(), indent=2))
    start = time.perf_counter()
    with open(log_path, "w") as fh:
        record = {"step": 0, "lr": trainer.schedule(0), "heldout_psnr": trainer.heldout_psnr(), "elapsed_s": 0.0}
        fh.write(json.dumps(record) + "\n")
        for _ in range(config.steps):
            report = trainer.train_step(trainer.next_batch())
            step = trainer.step
            if step % max(config.log_every, 1) == 0 or step == config.steps:
                record = {"step": step, **{k: v for k, v in report.items() if k != "clipped"},
                          "clipped": bool(report["clipped"]), "elapsed_s": time.perf_counter() - start}
                if step == config.steps or (config.log_every and step % (config.log_every * 10) == 0):
                    record["heldout_psnr"] = trainer.heldout_psnr()
                fh.write(json.dumps(record) + "\n")
                fh.flush()
                if progress:
                    progress(record)
            if config.checkpoint_every and step % config.checkpoint_every == 0 and step != config.steps:
                trainer.model.save(out / f"checkpoint_{step:07d}.ntsa", extra={"step": step})
    final = out / "checkpoint_final.ntsa"
    trainer.model.save(final, extra={"step": trainer.step})
    return final, log_path
