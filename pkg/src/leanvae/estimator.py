"""scikit-learn style wrapper: fit trains, transform encodes, inverse_transform decodes."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import ModelConfig
from .metrics import psnr
from .model import LeanVAE
from .training import Adam, CosineSchedule, LossWeights, train_step
from .validation import check_latent_batch, check_positive_int, check_video_batch


class LeanVAEEstimator(TransformerMixin, BaseEstimator):
    """Video autoencoder as a transformer over batches of clips.

    Parameters
    ----------
    d1, d2 : int
        Embedding widths of the high and low frequency streams; ``D = d1 + d2``.
    d : int
        Latent channels.
    variant, bottleneck : str
        Topology (``"variant1"``, ``"variant2"``, ``"variant3"``) and
        bottleneck kind (``"cs"`` or ``"ae"``).
    patch_norm : bool
        LayerNorm raw patches before projection.
    ff_expansion : int
        Hidden width multiplier of the feedforward blocks.
    steps, batch_size : int
        Optimizer steps and clips per step used by :meth:`fit`.
    lr, lr_floor, warmup_steps
        Cosine schedule.
    lambda_kl : float
        KL weight.
    dtype : str
        ``"float32"`` or ``"float64"``.
    random_state : int
        Seeds weight init, batch order and latent sampling.

    Attributes
    ----------
    model_ : LeanVAE
    loss_curve_ : list of float
    n_frames_in_ : int
        Frame count of the clips seen in ``fit``.
    """

    def __init__(self, d1=16, d2=48, d=4, variant="variant2", bottleneck="cs", patch_norm=False,
                 ff_expansion=4, steps=200, batch_size=2, lr=2e-3, lr_floor=2e-4, warmup_steps=0,
                 lambda_kl=1e-7, dtype="float32", random_state=0):
        self.d1 = d1
        self.d2 = d2
        self.d = d
        self.variant = variant
        self.bottleneck = bottleneck
        self.patch_norm = patch_norm
        self.ff_expansion = ff_expansion
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.lr_floor = lr_floor
        self.warmup_steps = warmup_steps
        self.lambda_kl = lambda_kl
        self.dtype = dtype
        self.random_state = random_state

    def _model_config(self) -> ModelConfig:
        return ModelConfig(d1=self.d1, d2=self.d2, D=self.d1 + self.d2, d=self.d, variant=self.variant,
                           bottleneck=self.bottleneck, patch_norm=self.patch_norm,
                           ff_expansion=self.ff_expansion, seed=self.random_state, dtype=self.dtype)

    def fit(self, X, y=None):
        """Train a fresh model on clips ``X`` of shape (N, 1+4k, H, W, 3) in [-1, 1]."""
        X = check_video_batch(X, dtype=np.dtype(self.dtype))
        steps = check_positive_int(self.steps, "steps", minimum=0)
        batch = check_positive_int(self.batch_size, "batch_size")
        self.model_ = LeanVAE(self._model_config())
        opt = Adam(self.model_.parameters())
        sched = CosineSchedule(self.lr, self.lr_floor, self.warmup_steps, max(steps, 1))
        weights = LossWeights(lambda_kl=self.lambda_kl)
        rng = np.random.default_rng([self.random_state, 11])
        self.loss_curve_ = []
        for step in range(steps):
            idx = rng.choice(len(X), size=min(batch, len(X)), replace=False)
            report = train_step(X[idx], self.model_, opt, weights, sched(step), rng, step=step)
            self.loss_curve_.append(report["loss"])
        self.n_frames_in_ = X.shape[1]
        return self

    def transform(self, X):
        """Encode clips to latent means, shape (N, 1+k, H/8, W/8, d)."""
        check_is_fitted(self, "model_")
        X = check_video_batch(X, dtype=self.model_.dtype)
        return self.model_.encode(X).z.data

    def inverse_transform(self, Z):
        """Decode latents back to clips in pixel space."""
        check_is_fitted(self, "model_")
        Z = check_latent_batch(Z, self.model_.config.d, dtype=self.model_.dtype)
        return self.model_.decode(Z).data

    def score(self, X, y=None) -> float:
        """Mean reconstruction PSNR (dB) over the clips in ``X``."""
        check_is_fitted(self, "model_")
        X = check_video_batch(X, dtype=self.model_.dtype)
        rec = self.inverse_transform(self.transform(X))
        return float(np.mean([min(psnr(a, b), 100.0) for a, b in zip(X, rec)]))
