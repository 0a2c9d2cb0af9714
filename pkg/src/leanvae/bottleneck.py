"""Latent channel bottleneck: D -> d sensing and unfolded ISTA-Net+ recovery.

Sensing applies ``Phi`` (d x D) per token. Recovery starts from
``p0 = Phi_tilde z`` and runs K unfolded iterations::

    r_k = p_{k-1} - rho_k * Phi^T (Phi p_{k-1} - z)
    p_k = r_k + Ftilde_k(soft(F_k(r_k), theta_k))

``F_k`` and ``Ftilde_k`` are two-layer non-residual NAF stacks, so they see
each token's causal spatiotemporal neighborhood. ``theta_k`` is kept
non-negative through a softplus of an unconstrained parameter.

:class:`AEBottleneck` is the ablation baseline: two plain linear maps
followed by the same NAF stacks used as residual post-processing, so the
parameter count differs from the CS version only by the 2K scalars.
"""

from __future__ import annotations

import numpy as np

from .backbone import NAFStack
from .config import ModelConfig
from .errors import DimensionError
from .nn import Module, uniform_init
from .tensor import (
    Tensor, add, exp, matmul_lastdim, mul, parameter, soft, softplus, sub, transpose,
)

RHO_INIT = 0.5
THETA_INIT = 0.01


class LatentGrid:
    """Latent ``z`` plus the posterior (mu, logvar) that produced it."""

    def __init__(self, z: Tensor, mu: Tensor | None = None, logvar: Tensor | None = None):
        self.z = z
        self.mu = mu
        self.logvar = logvar

    @property
    def shape(self) -> tuple[int, ...]:
        return self.z.shape


def _check_width(x: Tensor, width: int, what: str) -> None:
    if x.ndim < 1 or x.shape[-1] != width:
        raise DimensionError(f"{what}: expected last dim {width}, got shape {x.shape}")


def _posterior(p: Tensor, mean_map: Tensor, logvar_map: Tensor, mode: str,
               rng: np.random.Generator | None) -> LatentGrid:
    mu = matmul_lastdim(p, transpose(mean_map, (1, 0)))
    logvar = matmul_lastdim(p, transpose(logvar_map, (1, 0)))
    if mode == "infer":
        return LatentGrid(mu, mu, logvar)
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if rng is None:
        raise ValueError("training mode needs a random generator for the latent noise")
    eps = Tensor(rng.standard_normal(mu.shape).astype(mu.dtype))
    z = add(mu, mul(exp(mul(logvar, Tensor(np.asarray(0.5, dtype=mu.dtype)))), eps))
    return LatentGrid(z, mu, logvar)


class ISTAStage(Module):
    def __init__(self, width: int, expansion: int, rng: np.random.Generator, dtype):
        self.rho = parameter(np.asarray(RHO_INIT, dtype=dtype))
        # softplus^-1(THETA_INIT)
        self.theta_raw = parameter(np.asarray(np.log(np.expm1(THETA_INIT)), dtype=dtype))
        self.forward_net = NAFStack(width, 2, expansion, rng, residual=False, dtype=dtype)
        self.backward_net = NAFStack(width, 2, expansion, rng, residual=False, dtype=dtype)

    @property
    def theta(self) -> Tensor:
        return softplus(self.theta_raw)


class CSBottleneck(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        D, d, dt = config.D, config.d, config.np_dtype
        self.D, self.d = D, d
        self.phi = uniform_init(rng, (d, D), D, dt)
        self.phi_sigma = uniform_init(rng, (d, D), D, dt)
        self.phi_tilde = uniform_init(rng, (D, d), d, dt)
        self.stages = [ISTAStage(D, config.ff_expansion, rng, dt) for _ in range(config.K)]

    def sense(self, p: Tensor, mode: str = "infer", rng: np.random.Generator | None = None) -> LatentGrid:
        _check_width(p, self.D, "sense")
        return _posterior(p, self.phi, self.phi_sigma, mode, rng)

    def recover(self, z: Tensor, stream=None) -> Tensor:
        _check_width(z, self.d, "recover")
        phi_t = transpose(self.phi, (1, 0))
        p = matmul_lastdim(z, transpose(self.phi_tilde, (1, 0)))
        for stage in self.stages:
            residual = sub(matmul_lastdim(p, phi_t), z)
            r = sub(p, mul(stage.rho, matmul_lastdim(residual, self.phi)))
            shrunk = soft(stage.forward_net(r, stream), stage.theta)
            p = add(r, stage.backward_net(shrunk, stream))
        return p


class AEBottleneck(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        D, d, dt = config.D, config.d, config.np_dtype
        self.D, self.d = D, d
        self.w_down = uniform_init(rng, (d, D), D, dt)
        self.w_sigma = uniform_init(rng, (d, D), D, dt)
        self.w_up = uniform_init(rng, (D, d), d, dt)
        # consecutive (first, second) pairs, one pair per unfolded stage of the CS version
        self.post_nets = [
            NAFStack(D, 2, config.ff_expansion, rng, residual=False, dtype=dt)
            for _ in range(2 * config.K)
        ]

    def sense(self, p: Tensor, mode: str = "infer", rng: np.random.Generator | None = None) -> LatentGrid:
        _check_width(p, self.D, "sense")
        return _posterior(p, self.w_down, self.w_sigma, mode, rng)

    def recover(self, z: Tensor, stream=None) -> Tensor:
        _check_width(z, self.d, "recover")
        q = matmul_lastdim(z, transpose(self.w_up, (1, 0)))
        for i in range(0, len(self.post_nets), 2):
            first, second = self.post_nets[i], self.post_nets[i + 1]
            q = add(q, second(first(q, stream), stream))
        return q


def build_bottleneck(config: ModelConfig, rng: np.random.Generator) -> CSBottleneck | AEBottleneck:
    if config.bottleneck.value == "ae":
        return AEBottleneck(config, rng)
    return CSBottleneck(config, rng)


def ae_bottleneck(p: Tensor, bottleneck: AEBottleneck) -> tuple[Tensor, Tensor]:
    """Deterministic AE pass: ``(z, p_hat)``."""
    z = bottleneck.sense(p, "infer").z
    return z, bottleneck.recover(z)
