"""LeanVAE: a lean video autoencoder with wavelet patches, NAF blocks and a compressed-sensing bottleneck."""

from .config import ArchVariant, BottleneckKind, ModelConfig
from .model import LeanVAE, kl_term

__version__ = "0.1.0"

__all__ = ["ArchVariant", "BottleneckKind", "LeanVAE", "ModelConfig", "kl_term", "__version__"]
