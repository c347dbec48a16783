"""Relaxed rate-distortion training.

Units used throughout: images enter as floats in ``[0, 1]`` (8-bit pixels
divided by 255). The rate term is in bits per pixel, the distortion term is
the mean squared error in 8-bit units squared, and the loss is
``rate + lambda * distortion_scale * distortion``. Both terms are averaged
over the batch.
"""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from PIL import Image

from . import transforms as tr
from .density import (
    SPACING,
    DiscretePMF,
    MarginalDensity,
    adapt_range,
    discretize,
    fit_step,
    log2_likelihood_and_grads,
    sample_gradient,
    uniform_density,
)
from .errors import NumericError, ParameterError
from .quantize import quantize

log = logging.getLogger(__name__)

PIXEL_MAX = 255.0


@dataclass(frozen=True)
class TrainConfig:
    lmbda: float
    initial_step: float = 1e-4
    step_decay_floor: float = 1e-7
    batch_size: int = 8
    max_steps: int = 1000
    seed: int = 0
    density_fit_step: float = 0.5
    range_adapt_every: int = 100
    distortion_scale: float = 1.0
    density_objective: str = "likelihood"
    stagnation_window: int = 100
    stagnation_patience: int = 500
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not (self.lmbda >= 0 and math.isfinite(self.lmbda)):
            raise ParameterError(f"lambda must be a finite non-negative number, got {self.lmbda}")
        if not 0 < self.step_decay_floor <= self.initial_step:
            raise ParameterError("need 0 < step_decay_floor <= initial_step")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ParameterError("batch_size must be >= 1 and max_steps >= 0")
        if self.density_fit_step <= 0 or self.range_adapt_every < 1:
            raise ParameterError("density_fit_step must be > 0 and range_adapt_every >= 1")
        if self.distortion_scale <= 0:
            raise ParameterError("distortion_scale must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d


@dataclass(frozen=True)
class RDPoint:
    rate: float
    distortion: float
    lmbda: float
    mode: str = "relaxed"

    def __post_init__(self):
        if self.rate < 0 or self.distortion < 0:
            raise ParameterError("rate and distortion are non-negative")
        if self.mode not in ("relaxed", "discrete"):
            raise ParameterError(f"mode must be relaxed or discrete, got {self.mode!r}")


class NoiseSource:
    """Seeded i.i.d. ``U[-1/2, 1/2)`` samples standing in for quantization error."""

    def __init__(self, seed=0):
        self._rng = np.random.default_rng(seed)

    def draw(self, shape) -> np.ndarray:
        return self._rng.uniform(-0.5, 0.5, size=shape)


# --------------------------------------------------------------------------
# loss


@dataclass
class LossTape:
    x: np.ndarray
    y_tilde: np.ndarray
    x_hat: np.ndarray
    analysis_record: tr.ForwardRecord
    synthesis_record: tr.ForwardRecord
    rate_d_t: np.ndarray
    weight_rate: float
    weight_dist: float
    likelihoods: list = field(default_factory=list)


@dataclass
class LossResult:
    loss: float
    rate_term: float
    distortion_term: float
    tape: LossTape


def _batched(x, channels):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[0] == 0:
        raise ParameterError(f"batch must be a non-empty (N, C, H, W) array, got shape {x.shape}")
    if x.shape[1] != channels:
        raise ParameterError(f"batch has {x.shape[1]} channels, model expects {channels}")
    return x


def relaxed_loss(x, phi: tr.AnalysisParams, theta: tr.SynthesisParams,
                 densities: Sequence[MarginalDensity], lmbda: float, noise,
                 distortion_scale: float = 1.0) -> LossResult:
    """Noisy-relaxation loss of a batch.

    ``noise`` is a :class:`NoiseSource` or an explicit array shaped like the code.
    """
    x = _batched(x, phi.spec.image_channels)
    n, c, h, w = x.shape
    y, a_rec = tr.analysis_forward(x, phi)
    if len(densities) != y.shape[1]:
        raise ParameterError(f"{y.shape[1]} code channels but {len(densities)} densities")
    delta = noise.draw(y.shape) if isinstance(noise, NoiseSource) else np.asarray(noise, dtype=np.float64)
    if delta.shape != y.shape:
        raise ParameterError(f"noise shape {delta.shape} does not match code shape {y.shape}")
    y_tilde = y + delta
    x_hat, s_rec = tr.synthesis_forward(y_tilde, theta)

    bits = 0.0
    d_t = np.empty_like(y_tilde)
    liks = []
    for ch, psi in enumerate(densities):
        lik = log2_likelihood_and_grads(psi, y_tilde[:, ch])
        liks.append(lik)
        bits -= float(lik.value.sum())
        d_t[:, ch] = lik.d_t
    rate_term = bits / (n * h * w)
    sq = float(np.sum((x - x_hat) ** 2))
    distortion_term = PIXEL_MAX**2 * sq / (n * c * h * w)
    loss = rate_term + lmbda * distortion_scale * distortion_term
    for name, value in (("rate", rate_term), ("distortion", distortion_term), ("loss", loss)):
        if not math.isfinite(value):
            raise NumericError(f"non-finite {name} term", term=name)
    tape = LossTape(
        x, y_tilde, x_hat, a_rec, s_rec, d_t,
        weight_rate=1.0 / (n * h * w),
        weight_dist=lmbda * distortion_scale * PIXEL_MAX**2 / (n * c * h * w),
        likelihoods=liks,
    )
    return LossResult(loss, rate_term, distortion_term, tape)


def relaxed_loss_backward(tape: LossTape):
    """Gradients ``(grad_phi, grad_theta)`` of the loss from :func:`relaxed_loss`."""
    g_xhat = 2.0 * tape.weight_dist * (tape.x_hat - tape.x)
    g_theta, g_ytilde = tr.synthesis_backward(tape.synthesis_record, g_xhat)
    g_ytilde = g_ytilde - tape.weight_rate * tape.rate_d_t
    g_phi, _ = tr.analysis_backward(tape.analysis_record, g_ytilde)
    return g_phi, g_theta


def density_gradients(tape: LossTape, densities: Sequence[MarginalDensity]) -> list[np.ndarray]:
    """Gradient of the rate part of the loss w.r.t. each density's samples."""
    return [
        -tape.weight_rate * sample_gradient(psi, lik.index, lik.d_lo, lik.d_hi)
        for psi, lik in zip(densities, tape.likelihoods)
    ]


# --------------------------------------------------------------------------
# optimizer and schedule


class Adam:
    def __init__(self, arrays: Sequence[np.ndarray], betas=(0.9, 0.999), eps=1e-8):
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]

    def step(self, arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float) -> list[np.ndarray]:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        out = []
        for i, (a, g) in enumerate(zip(arrays, grads)):
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            out.append(a - lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return out


class StagnationMonitor:
    """Signals a step decay when neither moving average set a new minimum for ``patience`` steps."""

    def __init__(self, window: int = 100, patience: int = 500):
        self.window = window
        self.patience = patience
        self._rate = deque(maxlen=window)
        self._dist = deque(maxlen=window)
        self._best = [math.inf, math.inf]
        self._since = 0

    def update(self, rate: float, distortion: float) -> bool:
        self._rate.append(rate)
        self._dist.append(distortion)
        if len(self._rate) < self.window:
            return False
        improved = False
        for i, buf in enumerate((self._rate, self._dist)):
            avg = sum(buf) / len(buf)
            if avg < self._best[i]:
                self._best[i] = avg
                improved = True
        self._since = 0 if improved else self._since + 1
        if self._since >= self.patience:
            self._since = 0
            return True
        return False


# --------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    analysis: tr.AnalysisParams
    synthesis: tr.SynthesisParams
    densities: list[MarginalDensity]
    log: list[dict]
    config: TrainConfig

    def pmfs(self) -> list[DiscretePMF]:
        return [discretize(psi) for psi in self.densities]


class TrainingDiverged(NumericError):
    def __init__(self, message, snapshot: TrainResult, term=None):
        super().__init__(message, term=term)
        self.snapshot = snapshot


def initial_densities(y: np.ndarray) -> list[MarginalDensity]:
    out = []
    for ch in range(y.shape[1]):
        v = y[:, ch]
        lo = SPACING * math.floor((float(v.min()) - 1.0) / SPACING)
        hi = SPACING * math.ceil((float(v.max()) + 1.0) / SPACING)
        out.append(uniform_density(lo, hi, ch))
    return out


def train(config: TrainConfig, dataset, spec: tr.ArchitectureSpec, *,
          log_stream=None, callback: Callable[[dict], None] | None = None,
          init: tuple[tr.AnalysisParams, tr.SynthesisParams] | None = None) -> TrainResult:
    """Jointly optimize transforms and densities on patches from ``dataset``.

    ``dataset`` is an ``(N, C, H, W)`` array of patches in ``[0, 1]``. Each
    step logs ``{step, loss, rate_term, distortion_term, step_size}``; lines
    go to ``log_stream`` as NDJSON when given.
    """
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != 4 or data.shape[0] == 0:
        raise ParameterError("dataset must be a non-empty (N, C, H, W) array")
    if data.shape[1] != spec.image_channels:
        raise ParameterError(f"dataset has {data.shape[1]} channels, spec expects {spec.image_channels}")
    if not np.all(np.isfinite(data)):
        raise ParameterError("dataset contains non-finite values")
    phi, theta = init if init is not None else tr.init_params(spec, config.seed)
    batch_seq, noise_seq = np.random.SeedSequence(config.seed).spawn(2)
    batch_rng = np.random.default_rng(batch_seq)
    noise = NoiseSource(noise_seq)

    y0, _ = tr.analysis_forward(data[: min(len(data), config.batch_size)], phi)
    densities = initial_densities(y0)
    records: list[dict] = []
    result = TrainResult(phi, theta, densities, records, config)
    if config.max_steps == 0:
        return result

    arrays = phi.arrays() + theta.arrays()
    n_phi = len(phi.arrays())
    adam = Adam(arrays, config.adam_betas, config.adam_eps)
    monitor = StagnationMonitor(config.stagnation_window, config.stagnation_patience)
    step_size = config.initial_step
    seen_lo = np.full(len(densities), np.inf)
    seen_hi = np.full(len(densities), -np.inf)

    for step in range(1, config.max_steps + 1):
        batch = data[batch_rng.integers(0, len(data), config.batch_size)]
        try:
            res = relaxed_loss(batch, phi, theta, densities, config.lmbda, noise, config.distortion_scale)
            g_phi, g_theta = relaxed_loss_backward(res.tape)
            grads = g_phi.arrays() + g_theta.arrays()
            if not all(np.all(np.isfinite(g)) for g in grads):
                raise NumericError("non-finite gradient", term="gradient")
        except NumericError as exc:
            raise TrainingDiverged(f"training diverged at step {step}: {exc}", result, exc.term) from exc

        arrays = adam.step(arrays, grads, step_size)
        phi = tr.renormalize_filters(tr.project_parameters(phi.with_arrays(arrays[:n_phi])))
        theta = tr.renormalize_filters(tr.project_parameters(theta.with_arrays(arrays[n_phi:])))
        arrays = phi.arrays() + theta.arrays()

        y_tilde = res.tape.y_tilde
        fit_rate = 1e12 if step == 1 else max(config.density_fit_step, 1.0 / (SPACING * (step - 1)))
        densities = [
            fit_step(psi, y_tilde[:, ch], fit_rate, config.density_objective)
            for ch, psi in enumerate(densities)
        ]
        seen_lo = np.minimum(seen_lo, y_tilde.min(axis=(0, 2, 3)))
        seen_hi = np.maximum(seen_hi, y_tilde.max(axis=(0, 2, 3)))
        if step % config.range_adapt_every == 0:
            densities = [adapt_range(psi, seen_lo[ch], seen_hi[ch]) for ch, psi in enumerate(densities)]
            seen_lo[:] = np.inf
            seen_hi[:] = -np.inf

        entry = {
            "step": step,
            "loss": res.loss,
            "rate_term": res.rate_term,
            "distortion_term": res.distortion_term,
            "step_size": step_size,
        }
        records.append(entry)
        if log_stream is not None:
            log_stream.write(json.dumps(entry) + "\n")
        if callback is not None:
            callback(entry)
        result = TrainResult(phi, theta, densities, records, config)

        if monitor.update(res.rate_term, res.distortion_term) and step_size > config.step_decay_floor:
            step_size = max(step_size / 10.0, config.step_decay_floor)
            log.info("step %d: lowering step size to %g", step, step_size)
    return result


def smoothed(values: Sequence[float], window: int = 100) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.cumsum(np.r_[0.0, v])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


# --------------------------------------------------------------------------
# evaluation


def evaluate_discrete(x, phi: tr.AnalysisParams, theta: tr.SynthesisParams,
                      model: Sequence[DiscretePMF | MarginalDensity], lmbda: float) -> RDPoint:
    """Rate (entropy-model codelength, bpp) and distortion of actual rounding."""
    x = _batched(x, phi.spec.image_channels)
    pmfs = [m if isinstance(m, DiscretePMF) else discretize(m) for m in model]
    n, c, h, w = x.shape
    y, _ = tr.analysis_forward(x, phi)
    q = quantize(y)
    bits = sum(pmf.codelength(q[:, ch]) for ch, pmf in enumerate(pmfs))
    x_hat, _ = tr.synthesis_forward(q.astype(np.float64), theta)
    mse = PIXEL_MAX**2 * float(np.mean((x - x_hat) ** 2))
    return RDPoint(bits / (n * h * w), mse, lmbda, "discrete")


def evaluate_relaxed(x, phi, theta, densities, lmbda, noise) -> RDPoint:
    res = relaxed_loss(x, phi, theta, densities, lmbda, noise)
    return RDPoint(max(res.rate_term, 0.0), res.distortion_term, lmbda, "relaxed")


# --------------------------------------------------------------------------
# data


def _to_luma(img: np.ndarray) -> np.ndarray:
    return img @ np.array([0.299, 0.587, 0.114])


def _area_resize(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Area-averaging resize of an (H, W[, C]) float image to ``(height, width)``."""
    planes = img[..., None] if img.ndim == 2 else img
    out = [
        np.asarray(Image.fromarray(planes[..., k].astype(np.float32), mode="F").resize(
            (size[1], size[0]), Image.Resampling.BOX), dtype=np.float64)
        for k in range(planes.shape[-1])
    ]
    out = np.stack(out, axis=-1)
    return out[..., 0] if img.ndim == 2 else out


def preprocess_dataset(images: Iterable[np.ndarray], seed: int = 0, *, patch_size: int = 64,
                       color: str = "grayscale", patches_per_image: int = 1,
                       max_factor: float = 0.75, min_factor: float = 0.25,
                       saturation_threshold: float = 0.1, multiple: int = 16) -> np.ndarray:
    """Turn 8-bit images into training patches, ``(N, C, patch, patch)`` in 8-bit units.

    Over-saturated images are rejected; the rest get ``U[-1/2, 1/2)``
    dequantization noise, a random area-averaging downsample by a factor in
    ``[min_factor, max_factor]`` and random crops.
    """
    if patch_size <= 0 or patch_size % multiple:
        raise ParameterError(f"patch_size must be a positive multiple of {multiple}")
    if color not in ("grayscale", "rgb"):
        raise ParameterError(f"color must be grayscale or rgb, got {color!r}")
    if not 0 < min_factor <= max_factor < 1:
        raise ParameterError("need 0 < min_factor <= max_factor < 1")
    rng = np.random.default_rng(seed)
    patches = []
    for i, raw in enumerate(images):
        img = np.asarray(raw)
        if img.ndim == 3 and img.shape[2] == 4:
            img = img[..., :3]
        if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
            log.warning("image %d: unsupported shape %s, skipped", i, img.shape)
            continue
        if img.dtype != np.uint8:
            img = np.clip(np.round(img.astype(np.float64) * (255.0 if img.max() <= 1.0 else 1.0)), 0, 255)
        img = img.astype(np.float64)
        saturated = np.mean((img <= 0) | (img >= 255))
        if saturated > saturation_threshold:
            log.info("image %d: %.1f%% saturated pixels, rejected", i, 100 * saturated)
            continue
        if color == "grayscale" and img.ndim == 3:
            img = _to_luma(img)
        elif color == "rgb" and img.ndim == 2:
            log.warning("image %d: grayscale image in an rgb dataset, skipped", i)
            continue
        h, w = img.shape[:2]
        lowest = max(min_factor, patch_size / min(h, w))
        if lowest > max_factor:
            log.info("image %d (%dx%d) too small for %d-pixel patches, skipped", i, h, w, patch_size)
            continue
        img = img + rng.uniform(-0.5, 0.5, size=img.shape)
        for _ in range(patches_per_image):
            f = rng.uniform(lowest, max_factor)
            size = (max(patch_size, round(h * f)), max(patch_size, round(w * f)))
            small = _area_resize(img, size)
            top = int(rng.integers(0, size[0] - patch_size + 1))
            left = int(rng.integers(0, size[1] - patch_size + 1))
            crop = small[top : top + patch_size, left : left + patch_size]
            patches.append(crop[None] if crop.ndim == 2 else np.moveaxis(crop, -1, 0))
    if not patches:
        return np.empty((0, 1 if color == "grayscale" else 3, patch_size, patch_size))
    return np.stack(patches)
