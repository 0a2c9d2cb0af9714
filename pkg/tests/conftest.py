import numpy as np
import pytest

from leanvae.config import ModelConfig
from leanvae.tensor import Tensor, mul, sum_all


def project(out: Tensor, seed: int = 99) -> Tensor:
    """Scalar loss ``sum(out * R)`` with a fixed random R, for gradient checks."""
    r = np.random.default_rng(seed).standard_normal(out.shape)
    return sum_all(mul(out, Tensor(r, dtype=out.dtype)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Small float64 model used by structural tests."""
    return ModelConfig(d1=8, d2=8, D=16, d=4, ff_expansion=2, low_layers=1, high_layers=1,
                       fuse_layers=1, joint_layers=2, K=2, dtype="float64")


def dwconv_oracle(x, k, b, cache=None):
    """Direct loop evaluation of the causal depthwise 3x3x3 convolution."""
    T, H, W, C = x.shape
    prev = np.zeros((2, H, W, C)) if cache is None else cache
    full = np.concatenate([prev, x], axis=0)
    out = np.zeros_like(x)
    for t in range(T):
        for h in range(H):
            for w in range(W):
                for c in range(C):
                    acc = b[c]
                    for a in range(3):
                        for i in range(3):
                            for j in range(3):
                                hh, ww = h + i - 1, w + j - 1
                                if 0 <= hh < H and 0 <= ww < W:
                                    acc += full[t + a, hh, ww, c] * k[a, i, j, c]
                    out[t, h, w, c] = acc
    return out


# -- acceptance report --------------------------------------------------------------
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, name: str, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
