"""Neighborhood-aware feedforward (NAF) blocks and the encoder/decoder stacks.

A NAF layer mixes a token with its causal 3x3x3 neighborhood through a
depthwise convolution, then transforms it with a per-token two-matrix
feedforward::

    y = FF(gelu(dwconv(x)))          FF(h) = W2 gelu(W1 h + b1) + b2
    y = x + FF(gelu(dwconv(x)))      (ResNAF)

The encoder for the default topology runs LC and HC embeddings through their
own stacks and fuses them; the decoder mirrors it.
"""

from __future__ import annotations

import numpy as np

from .config import ArchVariant, ModelConfig
from .errors import DimensionError
from .nn import Module, uniform_init, zeros_param
from .tensor import Tensor, add, concat, dwconv3d_causal, gelu, linear, next_cache, split


class NAFLayer(Module):
    def __init__(self, width: int, expansion: int, rng: np.random.Generator,
                 residual: bool = True, dtype=np.float32):
        hidden = expansion * width
        self.width = width
        self.residual = residual
        self.conv_kernel = uniform_init(rng, (3, 3, 3, width), 27, dtype)
        self.conv_bias = zeros_param((width,), dtype)
        self.w1 = uniform_init(rng, (width, hidden), width, dtype)
        self.b1 = zeros_param((hidden,), dtype)
        self.w2 = uniform_init(rng, (hidden, width), hidden, dtype)
        self.b2 = zeros_param((width,), dtype)
        # set by the owning model; identifies this layer's streaming cache
        self.cache_key: str | None = None

    def __call__(self, x: Tensor, stream=None) -> Tensor:
        if x.shape[-1] != self.width:
            raise DimensionError(f"NAF layer of width {self.width} got input {x.shape}")
        cache = None
        if stream is not None:
            cache = stream.get(self.cache_key)
            stream.put(self.cache_key, next_cache(x.data, cache))
        h = gelu(dwconv3d_causal(x, self.conv_kernel, self.conv_bias, cache))
        h = linear(gelu(linear(h, self.w1, self.b1)), self.w2, self.b2)
        return add(x, h) if self.residual else h


def naf_forward(x: Tensor, layer: NAFLayer, stream=None) -> Tensor:
    return layer(x, stream)


class NAFStack(Module):
    def __init__(self, width: int, depth: int, expansion: int, rng: np.random.Generator,
                 residual: bool = True, dtype=np.float32):
        self.width = width
        self.layers = [NAFLayer(width, expansion, rng, residual, dtype) for _ in range(depth)]

    def __call__(self, x: Tensor, stream=None) -> Tensor:
        for layer in self.layers:
            x = layer(x, stream)
        return x


class Encoder(Module):
    """Maps (pL, pH) embeddings to fused features of width D.

    For Variant3 there is a single RGB stream and ``pH`` must be ``None``.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        c, e, dt = config, config.ff_expansion, config.np_dtype
        self.variant = c.variant
        self.d1, self.d2, self.D = c.d1, c.d2, c.D
        if c.variant is ArchVariant.VARIANT2:
            self.low = NAFStack(c.d2, c.low_layers, e, rng, dtype=dt)
            self.high = NAFStack(c.d1, c.high_layers, e, rng, dtype=dt)
            self.fuse = NAFStack(c.D, c.fuse_layers, e, rng, dtype=dt)
        else:
            self.joint = NAFStack(c.D, c.joint_layers, e, rng, dtype=dt)

    def __call__(self, pL: Tensor, pH: Tensor | None, stream=None) -> Tensor:
        if self.variant is ArchVariant.VARIANT3:
            if pH is not None or pL.shape[-1] != self.D:
                raise DimensionError("Variant3 encoder takes one stream of width D")
            return self.joint(pL, stream)
        if pH is None or pL.shape[-1] != self.d2 or pH.shape[-1] != self.d1:
            raise DimensionError(
                f"encoder expects pL width {self.d2} and pH width {self.d1}, got "
                f"{pL.shape} and {None if pH is None else pH.shape}"
            )
        if self.variant is ArchVariant.VARIANT1:
            return self.joint(concat([pL, pH], axis=-1), stream)
        return self.fuse(concat([self.low(pL, stream), self.high(pH, stream)], axis=-1), stream)


class Decoder(Module):
    """Mirror of :class:`Encoder`: width-D features back to (pL_hat, pH_hat)."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        c, e, dt = config, config.ff_expansion, config.np_dtype
        self.variant = c.variant
        self.d1, self.d2, self.D = c.d1, c.d2, c.D
        if c.variant is ArchVariant.VARIANT2:
            self.fuse = NAFStack(c.D, c.fuse_layers, e, rng, dtype=dt)
            self.low = NAFStack(c.d2, c.low_layers, e, rng, dtype=dt)
            self.high = NAFStack(c.d1, c.high_layers, e, rng, dtype=dt)
        else:
            self.joint = NAFStack(c.D, c.joint_layers, e, rng, dtype=dt)

    def __call__(self, p: Tensor, stream=None) -> tuple[Tensor, Tensor | None]:
        if p.shape[-1] != self.D:
            raise DimensionError(f"decoder expects width {self.D}, got {p.shape}")
        if self.variant is ArchVariant.VARIANT3:
            return self.joint(p, stream), None
        if self.variant is ArchVariant.VARIANT1:
            pL, pH = split(self.joint(p, stream), [self.d2, self.d1], axis=-1)
            return pL, pH
        pL, pH = split(self.fuse(p, stream), [self.d2, self.d1], axis=-1)
        return self.low(pL, stream), self.high(pH, stream)


def encoder_forward(pL: Tensor, pH: Tensor | None, encoder: Encoder, stream=None) -> Tensor:
    return encoder(pL, pH, stream)


def decoder_forward(p_hat: Tensor, decoder: Decoder, stream=None) -> tuple[Tensor, Tensor | None]:
    return decoder(p_hat, stream)

