"""Model configuration."""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from .errors import VersionError


class ArchVariant(str, enum.Enum):
    """Encoder/decoder topology.

    ``VARIANT1`` processes LC and HC embeddings jointly, ``VARIANT2`` (the
    default) processes them separately and then fuses, ``VARIANT3`` patches raw
    RGB with no wavelet stage.
    """

    VARIANT1 = "variant1"
    VARIANT2 = "variant2"
    VARIANT3 = "variant3"


class BottleneckKind(str, enum.Enum):
    CS = "cs"
    AE = "ae"


@dataclass(frozen=True)
class ModelConfig:
    c_s: int = 8
    c_t: int = 4
    d1: int = 128
    d2: int = 384
    D: int = 512
    d: int = 4
    K: int = 2
    ff_expansion: int = 4
    variant: ArchVariant = ArchVariant.VARIANT2
    bottleneck: BottleneckKind = BottleneckKind.CS
    patch_norm: bool = False
    # per-stream / fusion depths of the default topology
    low_layers: int = 2
    high_layers: int = 2
    fuse_layers: int = 4
    # depth of the single stream used by Variant1 and Variant3
    joint_layers: int = 6
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "variant", ArchVariant(self.variant))
        object.__setattr__(self, "bottleneck", BottleneckKind(self.bottleneck))
        if self.d1 + self.d2 != self.D:
            raise ValueError(f"d1 + d2 must equal D ({self.d1} + {self.d2} != {self.D})")
        if self.c_s != 8 or self.c_t != 4:
            raise ValueError("only c_s=8, c_t=4 are supported")
        if min(self.d1, self.d2, self.d) < 1 or self.K < 0 or self.ff_expansion < 1:
            raise ValueError("widths and ff_expansion must be positive, K non-negative")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["variant"] = self.variant.value
        out["bottleneck"] = self.bottleneck.value
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise VersionError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**dict(data))
