"""LeanVAE assembly: patchify -> encoder -> sensing, and the inverse path."""

from __future__ import annotations

import os
from typing import Any

import numpy as np

from .backbone import Decoder, Encoder, NAFLayer
from .bottleneck import LatentGrid, build_bottleneck
from .config import ModelConfig
from .errors import DimensionError, InputError, VersionError
from .nn import Module
from .ntsr import read_archive, write_archive
from .patchify import Patchifier, check_video_shape
from .tensor import Tensor, exp, mean, no_grad, square, sub

CHECKPOINT_KIND = "leanvae-checkpoint"
CHECKPOINT_VERSION = 1


def kl_term(mu: Tensor, logvar: Tensor) -> Tensor:
    """``0.5 * mean(mu^2 + exp(logvar) - 1 - logvar)`` against a standard normal."""
    if mu.shape != logvar.shape:
        raise DimensionError(f"kl_term: shapes differ {mu.shape} vs {logvar.shape}")
    inner = sub(sub(square(mu) + exp(logvar), Tensor(np.asarray(1.0, dtype=mu.dtype))), logvar)
    return mean(inner) * 0.5


class LeanVAE(Module):
    def __init__(self, config: ModelConfig | None = None):
        self.config = config or ModelConfig()
        rng = np.random.default_rng(self.config.seed)
        self.patchifier = Patchifier(self.config, rng)
        self.encoder = Encoder(self.config, rng)
        self.bottleneck = build_bottleneck(self.config, rng)
        self.decoder = Decoder(self.config, rng)
        for name, module in self.named_modules():
            if isinstance(module, NAFLayer):
                module.cache_key = name

    @property
    def dtype(self) -> np.dtype:
        return self.config.np_dtype

    def _as_input(self, x) -> Tensor:
        if isinstance(x, Tensor):
            return x if x.dtype == self.dtype else Tensor(x.data, dtype=self.dtype)
        return Tensor(np.asarray(x), dtype=self.dtype)

    def validate_video(self, x: np.ndarray, has_first_frame: bool = True) -> None:
        try:
            check_video_shape(x.shape, has_first_frame)
        except DimensionError as exc:
            raise InputError(str(exc)) from exc
        if not np.all(np.isfinite(x)) or x.min(initial=0.0) < -1.0 or x.max(initial=0.0) > 1.0:
            raise InputError("video values must be finite and lie in [-1, 1]")

    def encode(self, x, mode: str = "infer", rng: np.random.Generator | None = None,
               stream=None, has_first_frame: bool = True) -> LatentGrid:
        """Video (..., 1+4k, 8m, 8n, 3) -> latent (..., 1+k, m, n, d).

        In ``"infer"`` mode no tape is recorded and ``z == mu``.
        """
        xt = self._as_input(x)
        self.validate_video(xt.data, has_first_frame)
        if mode == "infer":
            with no_grad():
                return self._encode(xt, mode, rng, stream, has_first_frame)
        return self._encode(xt, mode, rng, stream, has_first_frame)

    def _encode(self, x, mode, rng, stream, has_first_frame) -> LatentGrid:
        emb = self.patchifier.patchify(x, has_first_frame)
        p = self.encoder(emb.pL, emb.pH, stream)
        return self.bottleneck.sense(p, mode, rng)

    def decode(self, z, stream=None, has_first_frame: bool = True) -> Tensor:
        """Latent (..., 1+k, m, n, d) -> video (..., 1+4k, 8m, 8n, 3)."""
        if isinstance(z, LatentGrid):
            z = z.z
        zt = self._as_input(z)
        if zt.ndim < 4 or zt.shape[-1] != self.config.d:
            raise DimensionError(f"latent must be (..., T', H', W', {self.config.d}), got {zt.shape}")
        if not has_first_frame and zt.shape[-4] < 1:
            raise DimensionError("empty latent chunk")
        if not zt.requires_grad:
            with no_grad():
                return self._decode(zt, stream, has_first_frame)
        return self._decode(zt, stream, has_first_frame)

    def _decode(self, z: Tensor, stream, has_first_frame: bool) -> Tensor:
        p_hat = self.bottleneck.recover(z, stream)
        pL, pH = self.decoder(p_hat, stream)
        return self.patchifier.unpatchify(pL, pH, has_first_frame)

    def forward(self, x, rng: np.random.Generator, mode: str = "train") -> tuple[Tensor, LatentGrid]:
        """Recorded encode + decode for training; returns (x_hat, latent)."""
        latent = self.encode(x, mode=mode, rng=rng)
        p_hat = self.bottleneck.recover(latent.z)
        pL, pH = self.decoder(p_hat)
        return self.patchifier.unpatchify(pL, pH), latent

    def reconstruct(self, x) -> np.ndarray:
        return self.decode(self.encode(x).z).data

    # -- checkpoints ------------------------------------------------------
    def save(self, path: str | os.PathLike, extra: dict[str, Any] | None = None) -> dict:
        meta = {"kind": CHECKPOINT_KIND, "checkpoint_version": CHECKPOINT_VERSION,
                "config": self.config.to_dict(), "param_count": self.param_count()}
        if extra:
            meta["extra"] = extra
        return write_archive(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path: str | os.PathLike, expected_config: ModelConfig | None = None) -> "LeanVAE":
        manifest, tensors = read_archive(path)
        meta = manifest.get("meta", {})
        if meta.get("kind") != CHECKPOINT_KIND or meta.get("checkpoint_version") != CHECKPOINT_VERSION:
            raise VersionError(f"{path}: not a version-{CHECKPOINT_VERSION} LeanVAE checkpoint")
        config = ModelConfig.from_dict(meta["config"])
        if expected_config is not None and expected_config != config:
            raise VersionError(f"{path}: checkpoint config does not match the expected config")
        model = cls(config)
        try:
            model.load_state_dict(tensors)
        except (KeyError, DimensionError) as exc:
            raise VersionError(f"{path}: weights do not fit the stored config: {exc}") from exc
        return model


def passthrough_model(dtype: str = "float64") -> LeanVAE:
    """A d = D build whose weights make encode/decode an exact identity up to rounding.

    Every NAF branch is zeroed (residual layers pass through, non-residual
    layers output zero), the patch projections are coordinate embeddings
    and both sensing maps are the identity. Used to test the I/O path.
    """
    v_lc, v_hc = 3 * 32, 21 * 32
    config = ModelConfig(d1=v_hc, d2=v_lc, D=v_lc + v_hc, d=v_lc + v_hc, K=1, ff_expansion=1,
                         low_layers=1, high_layers=1, fuse_layers=1, dtype=dtype)
    model = LeanVAE(config)
    for _, module in model.named_modules():
        if isinstance(module, NAFLayer):
            module.w2.data[...] = 0.0
            module.b2.data[...] = 0.0
    pf = model.patchifier
    for name in ("video_lc", "video_hc", "image_lc", "image_hc"):
        for lin in (getattr(pf, name), getattr(pf, "inv_" + name)):
            n_in, n_out = lin.weight.shape
            lin.weight.data[...] = np.eye(n_in, n_out)
            lin.bias.data[...] = 0.0
    bn = model.bottleneck
    bn.phi.data[...] = np.eye(config.D)
    bn.phi_tilde.data[...] = np.eye(config.D)
    bn.phi_sigma.data[...] = 0.0
    return model


def save(model: LeanVAE, path: str | os.PathLike) -> dict:
    return model.save(path)


def load(path: str | os.PathLike, expected_config: ModelConfig | None = None) -> LeanVAE:
    return LeanVAE.load(path, expected_config)
