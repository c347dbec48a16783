"""scikit-learn style front end.

``fit`` trains one model at one lambda, ``transform`` maps images to integer
codes, ``inverse_transform`` maps codes back to (padded) images.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import codec
from . import transforms as tr
from .container import CodecModel, ModelRegistry
from .errors import ParameterError
from .trainer import TrainConfig, evaluate_discrete, preprocess_dataset, train


def check_images(X, color: str | None = None) -> list[np.ndarray]:
    """Validate a collection of 8-bit images and return it as a list of arrays.

    A single ``(H, W)`` or ``(H, W, 3)`` array counts as one image; a
    ``(N, H, W)`` uint8 stack as ``N`` grayscale images.
    """
    if isinstance(X, np.ndarray):
        if X.ndim == 2 or (X.ndim == 3 and X.shape[-1] == 3 and color == "rgb"):
            X = [X]
        elif X.ndim in (3, 4):
            X = list(X)
        else:
            raise ParameterError(f"cannot interpret an array of shape {X.shape} as images")
    images = [np.asarray(im) for im in X]
    if not images:
        raise ParameterError("no images given")
    for i, im in enumerate(images):
        if im.dtype != np.uint8:
            raise ParameterError(f"image {i} has dtype {im.dtype}; expected uint8")
        if im.ndim == 2:
            ok = color in (None, "grayscale")
        elif im.ndim == 3 and im.shape[-1] == 3:
            ok = color in (None, "rgb")
        else:
            ok = False
        if not ok:
            raise ParameterError(f"image {i} with shape {im.shape} does not match color mode {color!r}")
    return images


class NonlinearTransformCoder(TransformerMixin, BaseEstimator):
    """Learned transform coder trained for a single rate-distortion trade-off."""

    def __init__(self, lmbda=1e-3, arch="desk", max_steps=2000, batch_size=8, patch_size=64,
                 patches_per_image=16, initial_step=1e-3, step_decay_floor=1e-7,
                 density_fit_step=0.5, range_adapt_every=100, seed=0):
        self.lmbda = lmbda
        self.arch = arch
        self.max_steps = max_steps
        self.batch_size = batch_size
        self.patch_size = patch_size
        self.patches_per_image = patches_per_image
        self.initial_step = initial_step
        self.step_decay_floor = step_decay_floor
        self.density_fit_step = density_fit_step
        self.range_adapt_every = range_adapt_every
        self.seed = seed

    def _spec(self) -> tr.ArchitectureSpec:
        return self.arch if isinstance(self.arch, tr.ArchitectureSpec) else tr.preset(self.arch)

    def _config(self) -> TrainConfig:
        return TrainConfig(
            lmbda=self.lmbda, initial_step=self.initial_step, step_decay_floor=self.step_decay_floor,
            batch_size=self.batch_size, max_steps=self.max_steps, seed=self.seed,
            density_fit_step=self.density_fit_step, range_adapt_every=self.range_adapt_every,
        )

    def fit(self, X, y=None, log_stream=None):
        spec = self._spec()
        config = self._config()
        images = check_images(X, spec.color)
        patches = preprocess_dataset(images, self.seed, patch_size=self.patch_size, color=spec.color,
                                     patches_per_image=self.patches_per_image)
        if len(patches) == 0:
            raise ParameterError("no usable training patches (images too small or saturated)")
        result = train(config, patches / 255.0, spec, log_stream=log_stream)
        self.model_ = CodecModel.from_training(result)
        self.training_log_ = result.log
        self.n_patches_ = len(patches)
        return self

    @classmethod
    def from_model(cls, model: CodecModel, **params) -> "NonlinearTransformCoder":
        est = cls(lmbda=model.lmbda, arch=model.spec, **params)
        est.model_ = model
        est.training_log_ = []
        return est

    # -------------------------------------------------------------- transforms

    def transform(self, X):
        """Integer codes ``(C, H/16, W/16)`` per image (sizes rounded up)."""
        check_is_fitted(self, "model_")
        return [codec.encode_image(im, self.model_) for im in check_images(X, self.model_.spec.color)]

    def inverse_transform(self, Q):
        """8-bit images (padded size) from integer codes."""
        check_is_fitted(self, "model_")
        if isinstance(Q, np.ndarray) and Q.ndim == 3:
            Q = [Q]
        out = []
        for q in Q:
            q = np.asarray(q)
            if q.ndim != 3 or q.shape[0] != self.model_.spec.code_channels:
                raise ParameterError(f"code of shape {q.shape} does not fit this model")
            f = self.model_.spec.total_factor
            x_hat, _ = tr.synthesis_forward(q.astype(np.float64), self.model_.synthesis)
            out.append(codec._to_pixels(x_hat, self.model_, q.shape[1] * f, q.shape[2] * f))
        return out

    def reconstruct(self, X):
        check_is_fitted(self, "model_")
        return [codec.reconstruct(im, self.model_) for im in check_images(X, self.model_.spec.color)]

    def compress(self, image, lambda_index: int = 0) -> bytes:
        return codec.compress(image, lambda_index, self.registry(lambda_index))

    def decompress(self, data: bytes) -> np.ndarray:
        f = codec.CompressedFile.from_bytes(data)
        return codec.decompress(data, self.registry(f.lambda_index))

    def registry(self, lambda_index: int = 0) -> ModelRegistry:
        check_is_fitted(self, "model_")
        return ModelRegistry({lambda_index: self.model_})

    def save(self, path, lambda_index: int = 0) -> None:
        self.registry(lambda_index).save(path)

    def score(self, X, y=None) -> float:
        """Negative mean discrete loss ``rate + lambda * MSE`` (higher is better)."""
        check_is_fitted(self, "model_")
        total = 0.0
        images = check_images(X, self.model_.spec.color)
        for im in images:
            x = codec._to_tensor(codec._as_image(im, self.model_.spec.color == "rgb"), self.model_)
            p = evaluate_discrete(x, self.model_.analysis, self.model_.synthesis, self.model_.pmfs, self.lmbda)
            total += p.rate + self.lmbda * p.distortion
        return -total / len(images)
