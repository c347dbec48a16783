"""Non-parametric piecewise-linear marginal densities and their discretization.

Each code channel owns one :class:`MarginalDensity`: density samples on a
regular grid with 10 points per unit, linearly interpolated in between.
Outside the grid, and wherever the interpolant falls below it, the density
is floored at :data:`EPSILON` so log-likelihoods stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import ParameterError

EPSILON = 1e-9
SPACING = 0.1
LN2 = math.log(2.0)


@dataclass(frozen=True)
class MarginalDensity:
    """Samples of ``p`` at ``left + k * spacing``, ``k = 0 .. len(samples) - 1``."""

    left: float
    samples: np.ndarray
    spacing: float = SPACING
    channel_index: int = 0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size < 2:
            raise ParameterError("a density needs at least two grid samples")
        if np.any(s < 0) or not np.all(np.isfinite(s)):
            raise ParameterError("density samples must be finite and non-negative")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "left", float(self.left))

    @property
    def right(self) -> float:
        return self.left + (self.samples.size - 1) * self.spacing

    @property
    def grid(self) -> np.ndarray:
        return self.left + self.spacing * np.arange(self.samples.size)

    def integral(self) -> float:
        s = self.samples
        return float(self.spacing * (s.sum() - 0.5 * (s[0] + s[-1])))


@dataclass(frozen=True)
class DiscretePMF:
    """Probabilities of the integers ``q_min .. q_max``."""

    q_min: int
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ParameterError("a PMF needs a non-empty support")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "q_min", int(self.q_min))

    @property
    def q_max(self) -> int:
        return self.q_min + self.probs.size - 1

    @property
    def mode(self) -> int:
        # ties go to the integer closest to zero, then to the smaller one
        ties = np.flatnonzero(self.probs == self.probs.max()) + self.q_min
        return int(ties[np.argmin(np.abs(ties) * 2 + (ties > 0))])

    def prob(self, q):
        q = np.asarray(q)
        idx = q - self.q_min
        inside = (idx >= 0) & (idx < self.probs.size)
        return np.where(inside, self.probs[np.clip(idx, 0, self.probs.size - 1)], 0.0)

    def codelength(self, q) -> float:
        """Ideal code length ``sum -log2 P(q)`` in bits; out-of-support values cost ``-log2 EPSILON``."""
        p = self.prob(q)
        return float(-np.sum(np.log2(np.where(p > 0, p, EPSILON))))


def uniform_density(left: float, right: float, channel_index: int = 0, spacing: float = SPACING):
    n = int(round((right - left) / spacing)) + 1
    samples = np.full(n, 1.0)
    return renormalize(MarginalDensity(left, samples, spacing, channel_index))


def renormalize(psi: MarginalDensity) -> MarginalDensity:
    """Scale samples so the trapezoidal integral over the grid is one."""
    total = psi.integral()
    if total <= 0:
        return replace(psi, samples=np.full(psi.samples.size, 1.0 / (psi.right - psi.left)))
    return replace(psi, samples=psi.samples / total)


def _locate(psi: MarginalDensity, t):
    t = np.asarray(t, dtype=np.float64)
    pos = (t - psi.left) / psi.spacing
    last = psi.samples.size - 1
    # absorb rounding of left + k * spacing at the grid ends
    inside = (pos >= -1e-9) & (pos <= last + 1e-9)
    pos = np.clip(pos, 0, last)
    k = np.minimum(np.floor(pos), last - 1).astype(np.int64)
    frac = np.where(inside, pos - k, 0.0)
    return t, inside, k, frac


def eval_density(psi: MarginalDensity, t):
    """Piecewise-linear density at ``t``, floored at ``EPSILON``."""
    _, inside, k, frac = _locate(psi, t)
    s = psi.samples
    value = (1.0 - frac) * s[k] + frac * s[k + 1]
    return np.where(inside, np.maximum(value, EPSILON), EPSILON)


class Likelihood(NamedTuple):
    """``log2 p(t)`` with its gradients.

    ``d_lo``/``d_hi`` are the derivatives w.r.t. ``samples[index]`` and
    ``samples[index + 1]``; every other sample has zero derivative.
    """

    value: np.ndarray
    d_t: np.ndarray
    index: np.ndarray
    d_lo: np.ndarray
    d_hi: np.ndarray


def log2_likelihood_and_grads(psi: MarginalDensity, t) -> Likelihood:
    _, inside, k, frac = _locate(psi, t)
    s = psi.samples
    raw = (1.0 - frac) * s[k] + frac * s[k + 1]
    active = inside & (raw > EPSILON)
    p = np.where(active, raw, EPSILON)
    scale = np.where(active, 1.0 / (p * LN2), 0.0)
    slope = (s[k + 1] - s[k]) / psi.spacing
    return Likelihood(np.log2(p), slope * scale, k, (1.0 - frac) * scale, frac * scale)


def sample_gradient(psi: MarginalDensity, index, weights_lo, weights_hi) -> np.ndarray:
    """Scatter sparse per-value sample derivatives into a dense vector."""
    n = psi.samples.size
    index = np.ravel(index)
    grad = np.bincount(index, np.ravel(weights_lo), minlength=n)
    grad += np.bincount(index + 1, np.ravel(weights_hi), minlength=n)
    return grad


def fit_step(psi: MarginalDensity, values, step_size: float, objective: str = "likelihood"):
    """One SGD step on the density samples, then clamp and renormalize.

    ``objective="likelihood"`` minimizes ``-E[p(v)]``; its gradient does not
    depend on ``psi``, which turns the update into an exponentially weighted
    linear-binning histogram. ``"log-likelihood"`` minimizes ``-E[log p(v)]``.
    """
    if step_size <= 0:
        raise ParameterError("step_size must be positive")
    values = np.ravel(np.asarray(values, dtype=np.float64))
    if values.size == 0:
        return renormalize(psi)
    _, inside, k, frac = _locate(psi, values)
    w_lo = np.where(inside, 1.0 - frac, 0.0)
    w_hi = frac
    if objective == "log-likelihood":
        p = eval_density(psi, values)
        w_lo = w_lo / p
        w_hi = w_hi / p
    elif objective != "likelihood":
        raise ParameterError(f"unknown density objective {objective!r}")
    ascent = sample_gradient(psi, k, w_lo, w_hi) / values.size
    samples = np.maximum(psi.samples + step_size * ascent, 0.0)
    return renormalize(replace(psi, samples=samples))


def adapt_range(psi: MarginalDensity, lo: float, hi: float) -> MarginalDensity:
    """Move the grid to cover ``[lo - 1, hi + 1]``, keeping it aligned to the old grid.

    Coincident nodes keep their values exactly; new nodes outside the old
    grid start at zero (evaluation floors them at ``EPSILON``).
    """
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
        raise ParameterError(f"invalid observed range [{lo}, {hi}]")
    h = psi.spacing
    start = math.floor((lo - 1.0 - psi.left) / h + 1e-9)
    stop = math.ceil((hi + 1.0 - psi.left) / h - 1e-9)
    stop = max(stop, start + 1)
    samples = np.zeros(stop - start + 1)
    old = psi.samples
    a, b = max(start, 0), min(stop, old.size - 1)
    if a <= b:
        samples[a - start : b - start + 1] = old[a : b + 1]
    return renormalize(replace(psi, left=psi.left + start * h, samples=samples))


def discretize(psi: MarginalDensity) -> DiscretePMF:
    """Sample the density at the integers inside its grid, floor and normalize."""
    q_min = math.ceil(psi.left - 1e-9)
    q_max = math.floor(psi.right + 1e-9)
    if q_max < q_min:
        raise ParameterError(
            f"density grid [{psi.left}, {psi.right}] contains no integer"
        )
    probs = eval_density(psi, np.arange(q_min, q_max + 1, dtype=np.float64))
    probs = probs / probs.sum()
    low = probs < EPSILON
    if low.any():
        probs = np.where(low, EPSILON, probs * (1.0 - EPSILON * low.sum()) / probs[~low].sum())
    return DiscretePMF(q_min, probs)


def pmf_entropy(pmf: DiscretePMF) -> float:
    p = pmf.probs[pmf.probs > 0]
    return float(-np.sum(p * np.log2(p)))


def differential_entropy(psi: MarginalDensity) -> float:
    """Exact ``-integral p log2 p`` of the piecewise-linear density over its grid."""
    a = psi.samples[:-1]
    b = psi.samples[1:]

    def g(p):
        # antiderivative of p ln p in p
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(p > 0, 0.5 * p * p * np.log(p) - 0.25 * p * p, 0.0)

    d = b - a
    close = np.abs(d) <= 1e-12 * np.maximum(np.abs(a), np.abs(b))
    with np.errstate(divide="ignore", invalid="ignore"):
        seg = np.where(close, 0.0, (g(b) - g(a)) / np.where(close, 1.0, d))
        m = 0.5 * (a + b)
        flat = np.where(m > 0, m * np.log(np.where(m > 0, m, 1.0)), 0.0)
    seg = np.where(close, flat, seg)
    return float(-psi.spacing * seg.sum() / LN2)


def fit_density(values, *, batch_size: int = 65536, channel_index: int = 0,
                objective: str = "likelihood", spacing: float = SPACING) -> MarginalDensity:
    """Fit a density to a fixed sample by repeated :func:`fit_step` calls.

    The grid covers the sample range plus one unit on each side, aligned to
    multiples of ``spacing``. Step sizes follow ``10 / (t - 1)`` so that, for
    the likelihood objective, the result is the running mean of all batch
    histograms (the first step effectively replaces the initial guess).
    """
    values = np.ravel(np.asarray(values, dtype=np.float64))
    if values.size == 0:
        raise ParameterError("cannot fit a density to an empty sample")
    lo = spacing * math.floor((values.min() - 1.0) / spacing)
    hi = spacing * math.ceil((values.max() + 1.0) / spacing)
    psi = uniform_density(lo, hi, channel_index, spacing)
    for t, start in enumerate(range(0, values.size, batch_size), start=1):
        step = 1e12 if t == 1 else 1.0 / (spacing * (t - 1))
        psi = fit_step(psi, values[start : start + batch_size], step, objective)
    return psi
