"""scikit-learn style estimator around the registration engine.

``fit`` trains the shared-weight model on a stack of image pairs;
``predict`` returns one displacement field per pair and ``transform`` the
correspondingly warped source images.  Hyperparameters follow sklearn
conventions (stored verbatim in ``__init__``, fitted state carries a
trailing underscore), so ``get_params`` / ``set_params`` and ``clone``
work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .loss import LossConfig
from .model import ModelConfig, coarse_to_fine_batch, PyramidPair, scaled_channels
from .sampling import KernelKind
from .train import train_model
from .validation import check_pair_stack


class DeformableRegistration(BaseEstimator, TransformerMixin):
    """Pairwise deformable image registration as a transformer.

    X is a float array of shape (n_pairs, 2, H, W): channel 0 the moving
    source, channel 1 the fixed target.  There is no y; training is
    unsupervised.  Defaults suit small images (64x64); for 256x256 inputs
    use ``levels=4, width_scale=1.0``.
    """

    def __init__(
        self,
        levels: int = 3,
        width_scale: float = 0.25,
        iters: int = 200,
        lr: float = 1e-3,
        lam: float = 1e-3,
        similarity_eps: float = 1e-3,
        batch_size: int = 4,
        seed: int = 0,
        image_warp_kernel: str = "bilinear",
        dvf_kernel: str = "catmull_rom",
    ):
        self.levels = levels
        self.width_scale = width_scale
        self.iters = iters
        self.lr = lr
        self.lam = lam
        self.similarity_eps = similarity_eps
        self.batch_size = batch_size
        self.seed = seed
        self.image_warp_kernel = image_warp_kernel
        self.dvf_kernel = dvf_kernel

    def _config(self) -> ModelConfig:
        return ModelConfig(
            levels=self.levels,
            channels=scaled_channels(self.width_scale),
            image_warp_kernel=KernelKind.parse(self.image_warp_kernel),
            dvf_kernel=KernelKind.parse(self.dvf_kernel),
        )

    def fit(self, X, y=None):
        config = self._config()
        X = check_pair_stack(X, config.size_divisor())
        result = train_model(
            [(pair[0:1], pair[1:2]) for pair in X],
            config,
            iters=self.iters,
            lr=self.lr,
            loss_cfg=LossConfig(eps=self.similarity_eps, lam=self.lam),
            batch_size=self.batch_size,
            seed=self.seed,
        )
        self.checkpoint_ = result.checkpoint
        self.loss_history_ = result.history
        return self

    def _check_fitted(self):
        if not hasattr(self, "checkpoint_"):
            raise NotFittedError(
                "This DeformableRegistration instance is not fitted yet; call fit first."
            )

    def _forward(self, X):
        self._check_fitted()
        ckpt = self.checkpoint_
        X = check_pair_stack(X, ckpt.config.size_divisor())
        pyrs = [PyramidPair.build(pair[0:1], pair[1:2], ckpt.config.levels) for pair in X]
        return [
            coarse_to_fine_batch([p], ckpt.params, ckpt.config, training=False,
                                 update_running=False)[0]
            for p in pyrs
        ]

    def predict(self, X) -> np.ndarray:
        """Displacement fields, shape (n_pairs, 2, H, W)."""
        return np.stack([r.u_final.values for r in self._forward(X)])

    def transform(self, X) -> np.ndarray:
        """Warped source images, shape (n_pairs, 1, H, W)."""
        return np.stack([r.warped_final.values for r in self._forward(X)])
