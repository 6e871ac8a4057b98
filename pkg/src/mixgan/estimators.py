"""scikit-learn style wrappers around the two training stages.

``ContentAAE`` is a transformer: ``fit`` trains the adversarial
autoencoder, ``transform`` encodes, ``inverse_transform`` decodes.
``MixGAN`` fits both stages from a content and a style batch and samples
mixture images.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .checkpoint import ModelCheckpoint
from .generate import generate_content, generate_mixture, sample_latent
from .losses import DEFAULT_LAMBDA
from .nets import ArchSpec, encoder_forward
from .train import TrainConfig, epoch_means, train_content_stage, train_mixture_stage
from .validation import check_images, check_latent, check_positive_int


def _arch(arch, size) -> ArchSpec:
    if arch is None:
        return ArchSpec(image_size=size)
    if isinstance(arch, ArchSpec):
        return arch
    return ArchSpec(**{"image_size": size, **dict(arch)})


class ContentAAE(TransformerMixin, BaseEstimator):
    """Adversarial autoencoder on single-channel images.

    ``arch`` is an :class:`ArchSpec` or a dict of its fields; ``None`` uses
    the defaults at the input image size.
    """

    def __init__(self, arch=None, epochs=100, batch_size=64, lr=2e-4, lam=DEFAULT_LAMBDA, seed=0):
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lam = lam
        self.seed = seed

    def _config(self):
        return TrainConfig(stage="content", epochs=self.epochs, batch_size=self.batch_size,
                           lr=self.lr, lam=self.lam, seed=self.seed)

    def fit(self, X, y=None):
        X = check_images(X, channels=1)
        self.arch_ = _arch(self.arch, X.shape[-1])
        self.checkpoint_ = train_content_stage(self._config(), X, self.arch_)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        self.reconstruction_curve_ = epoch_means(self.checkpoint_.history, "reconstruction")
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "checkpoint_")
        X = check_images(X, channels=1, size=self.arch_.image_size)
        return encoder_forward(self.checkpoint_.build_nets().encoder, X)

    def inverse_transform(self, Z) -> np.ndarray:
        check_is_fitted(self, "checkpoint_")
        return generate_content(self.checkpoint_, check_latent(Z, self.arch_.latent_dim)).data

    def sample(self, n, seed=0) -> np.ndarray:
        check_is_fitted(self, "checkpoint_")
        z = sample_latent(check_positive_int(n, "n"), self.arch_.latent_dim, seed)
        return self.inverse_transform(z.data)

    def score(self, X, y=None) -> float:
        """Negative mean absolute reconstruction error (higher is better)."""
        X = check_images(X, channels=1)
        return -float(np.abs(self.inverse_transform(self.transform(X)) - X).mean())


class MixGAN(BaseEstimator):
    """Two-stage mixture generator: content shapes from one domain, style from another."""

    def __init__(self, arch=None, content_epochs=100, mixture_epochs=300, batch_size=64, lr=2e-4,
                 mixture_lr=None, lam=DEFAULT_LAMBDA, freeze_content_decoder=False, seed=0):
        self.arch = arch
        self.content_epochs = content_epochs
        self.mixture_epochs = mixture_epochs
        self.batch_size = batch_size
        self.lr = lr
        self.mixture_lr = mixture_lr
        self.lam = lam
        self.freeze_content_decoder = freeze_content_decoder
        self.seed = seed

    def fit(self, content, style):
        content = check_images(content, channels=1)
        self.content_model_ = ContentAAE(
            arch=self.arch, epochs=self.content_epochs, batch_size=self.batch_size,
            lr=self.lr, lam=self.lam, seed=self.seed,
        ).fit(content)
        self.arch_ = self.content_model_.arch_
        style = check_images(style, channels=self.arch_.style_channels, size=self.arch_.image_size)
        config = TrainConfig(
            stage="mixture", epochs=self.mixture_epochs, batch_size=self.batch_size,
            lr=self.mixture_lr if self.mixture_lr is not None else self.lr,
            seed=self.seed, freeze_content_decoder=self.freeze_content_decoder,
        )
        self.checkpoint_ = train_mixture_stage(config, self.content_model_.checkpoint_, style)
        return self

    @classmethod
    def from_checkpoint(cls, ckpt: ModelCheckpoint) -> "MixGAN":
        """Wrap an existing mixture checkpoint for sampling."""
        ckpt.require_stage("mixture")
        model = cls(arch=ckpt.arch)
        model.arch_, model.checkpoint_ = ckpt.arch, ckpt
        return model

    def _z(self, n, seed):
        return sample_latent(check_positive_int(n, "n"), self.arch_.latent_dim, seed).data

    def sample(self, n, seed=0) -> np.ndarray:
        check_is_fitted(self, "checkpoint_")
        return generate_mixture(self.checkpoint_, self._z(n, seed)).data

    def sample_content(self, n, seed=0) -> np.ndarray:
        check_is_fitted(self, "checkpoint_")
        return generate_content(self.checkpoint_, self._z(n, seed)).data

    def sample_pairs(self, n, seed=0):
        """``(content, mixture)`` arrays generated from the same codes."""
        return self.sample_content(n, seed), self.sample(n, seed)
