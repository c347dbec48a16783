"""Dense layer primitives with hand-written reverse-mode gradients.

Tensors are plain float64 numpy arrays laid out as ``(channels, height,
width)``; every op also accepts a leading batch axis ``(N, C, H, W)`` and
returns arrays with the same rank as its input.

Convolutions are evaluated as a sum over taps of ``A_a @ x @ B_b.T`` where
``A``/``B`` are 0/1 selection matrices that encode the border extension
and, for the fused variants, the down- or upsampling. This keeps every
layer a handful of BLAS calls and makes the backward pass a transpose of
the same matrices.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import NumericError, ParameterError

__all__ = [
    "PaddingMode",
    "ConvKernel",
    "GdnParams",
    "conv2d",
    "conv2d_backward",
    "conv_down",
    "conv_down_backward",
    "up_conv",
    "up_conv_backward",
    "downsample",
    "downsample_backward",
    "upsample",
    "upsample_backward",
    "gdn_forward",
    "gdn_backward",
    "igdn_forward",
    "igdn_backward",
]


class PaddingMode(str, enum.Enum):
    """Border extension used by same-size convolutions."""

    MIRROR = "mirror"  # symmetric: edge sample repeated, x[-1] == x[0]
    ZERO = "zero"


@dataclass(frozen=True)
class ConvKernel:
    """Filter bank ``weights[out, in, kh, kw]`` plus one bias per output."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 4:
            raise ParameterError(f"kernel weights must be 4-D, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise ParameterError(
                f"bias shape {b.shape} does not match {w.shape[0]} output channels"
            )
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_size(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]


@dataclass(frozen=True)
class GdnParams:
    """Per-channel ``beta`` and symmetric, non-negative coupling ``gamma``."""

    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        gamma = np.asarray(self.gamma, dtype=np.float64)
        c = beta.shape[0] if beta.ndim == 1 else -1
        if beta.ndim != 1 or gamma.shape != (c, c):
            raise ParameterError(
                f"GDN expects beta (C,) and gamma (C, C); got {beta.shape}, {gamma.shape}"
            )
        if np.any(beta < 0) or np.any(gamma < 0):
            raise ParameterError("GDN beta and gamma must be non-negative")
        if not np.array_equal(gamma, gamma.T):
            raise ParameterError("GDN gamma must be symmetric")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)

    @property
    def channels(self) -> int:
        return self.beta.shape[0]


# --------------------------------------------------------------------------
# selection matrices


def _source_index(t: int, length: int, mode: PaddingMode) -> int | None:
    if 0 <= t < length:
        return t
    if mode is PaddingMode.ZERO:
        return None
    period = 2 * length
    t %= period
    return t if t < length else period - 1 - t


@lru_cache(maxsize=256)
def _tap_matrices(n_in: int, k: int, mode: PaddingMode, up: int, down: int) -> np.ndarray:
    """Stack ``S[a, m, src]`` of one-hot rows for a 1-D convolution axis.

    Output sample ``m`` sits at position ``down * m`` of the (upsampled)
    signal of length ``up * n_in``; tap ``a`` reads position
    ``down * m + k // 2 - a`` there (true convolution, centred support).
    """
    length = n_in * up
    n_out = length // down
    r = k // 2
    mats = np.zeros((k, n_out, n_in))
    for a in range(k):
        for m in range(n_out):
            t = _source_index(down * m + r - a, length, mode)
            if t is None or t % up:
                continue
            mats[a, m, t // up] = 1.0
    mats.setflags(write=False)
    return mats


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ParameterError(f"expected a (C, H, W) or (N, C, H, W) array, got shape {x.shape}")


def _restore(x: np.ndarray, squeezed: bool) -> np.ndarray:
    return x[0] if squeezed else x


def _check_kernel(x: np.ndarray, kernel: ConvKernel) -> None:
    if x.shape[1] != kernel.in_channels:
        raise ParameterError(
            f"input has {x.shape[1]} channels, kernel expects {kernel.in_channels}"
        )
    kh, kw = kernel.kernel_size
    if kh % 2 == 0 or kw % 2 == 0:
        raise ParameterError(f"kernel support must be odd, got {kh}x{kw}")


def _matrices(x, kernel, mode, up, down):
    _, _, h, w = x.shape
    if (h * up) % down or (w * up) % down:
        raise ParameterError(f"spatial dims {h}x{w} not divisible by factor {down}")
    kh, kw = kernel.kernel_size
    mode = PaddingMode(mode)
    return _tap_matrices(h, kh, mode, up, down), _tap_matrices(w, kw, mode, up, down)


def _sandwich(x, weights, a_mats, b_mats):
    n = x.shape[0]
    o = weights.shape[0]
    kw, w_out, w_in = b_mats.shape
    h_out = a_mats.shape[1]
    taps = np.matmul(a_mats[None, None], x[:, :, None])  # (N, C, kh, Ho, W)
    rows = np.tensordot(weights, taps, axes=([1, 2], [1, 2]))  # (O, kw, N, Ho, W)
    rows = rows.transpose(2, 0, 3, 1, 4).reshape(n, o, h_out, kw * w_in)
    b_flat = b_mats.transpose(0, 2, 1).reshape(kw * w_in, w_out)
    return rows @ b_flat, taps, b_flat


def _sandwich_backward(grad_out, weights, a_mats, b_mats, taps, b_flat):
    n, o, h_out, _ = grad_out.shape
    kw, _, w_in = b_mats.shape
    g_rows = (grad_out @ b_flat.T).reshape(n, o, h_out, kw, w_in)
    g_rows = g_rows.transpose(1, 3, 0, 2, 4)  # (O, kw, N, Ho, W)
    grad_w = np.tensordot(g_rows, taps, axes=([2, 3, 4], [0, 3, 4]))  # (O, kw, C, kh)
    grad_w = grad_w.transpose(0, 2, 3, 1)
    g_taps = np.tensordot(weights, g_rows, axes=([0, 3], [0, 1]))  # (C, kh, N, Ho, W)
    grad_x = np.tensordot(g_taps, a_mats, axes=([1, 3], [0, 1]))  # (C, N, W, H)
    return grad_x.transpose(1, 0, 3, 2), grad_w


def _conv(x, kernel, mode, up, down):
    x, squeezed = _as_batch(x)
    _check_kernel(x, kernel)
    a_mats, b_mats = _matrices(x, kernel, mode, up, down)
    out, _, _ = _sandwich(x, kernel.weights, a_mats, b_mats)
    out += kernel.bias[None, :, None, None]
    return _restore(out, squeezed)


def _conv_backward(x, kernel, grad_out, mode, up, down):
    x, squeezed = _as_batch(x)
    _check_kernel(x, kernel)
    g, _ = _as_batch(grad_out)
    a_mats, b_mats = _matrices(x, kernel, mode, up, down)
    expected = (x.shape[0], kernel.out_channels, a_mats.shape[1], b_mats.shape[1])
    if g.shape != expected:
        raise ParameterError(f"grad_out shape {g.shape} does not match output {expected}")
    _, taps, b_flat = _sandwich(x, kernel.weights, a_mats, b_mats)
    grad_x, grad_w = _sandwich_backward(g, kernel.weights, a_mats, b_mats, taps, b_flat)
    grad_b = g.sum(axis=(0, 2, 3))
    return _restore(grad_x, squeezed), ConvKernel(grad_w, grad_b)


# --------------------------------------------------------------------------
# convolution


def conv2d(input, kernel: ConvKernel, padding=PaddingMode.MIRROR):
    """Same-size affine convolution ``sum_j h_ij * u_j + c_i``."""
    return _conv(input, kernel, padding, 1, 1)


def conv2d_backward(input, kernel: ConvKernel, grad_out, padding=PaddingMode.MIRROR):
    """Gradients of ``sum(grad_out * conv2d(input))`` w.r.t. input and kernel."""
    return _conv_backward(input, kernel, grad_out, padding, 1, 1)


def conv_down(input, kernel: ConvKernel, factor: int, padding=PaddingMode.MIRROR):
    """``downsample(conv2d(input), factor)`` without computing dropped samples."""
    return _conv(input, kernel, padding, 1, factor)


def conv_down_backward(input, kernel, grad_out, factor, padding=PaddingMode.MIRROR):
    return _conv_backward(input, kernel, grad_out, padding, 1, factor)


def up_conv(input, kernel: ConvKernel, factor: int, padding=PaddingMode.MIRROR):
    """``conv2d(upsample(input, factor))`` without multiplying inserted zeros."""
    return _conv(input, kernel, padding, factor, 1)


def up_conv_backward(input, kernel, grad_out, factor, padding=PaddingMode.MIRROR):
    return _conv_backward(input, kernel, grad_out, padding, factor, 1)


# --------------------------------------------------------------------------
# resampling


def _check_factor(factor):
    if int(factor) != factor or factor < 1:
        raise ParameterError(f"sampling factor must be a positive integer, got {factor}")
    return int(factor)


def downsample(input, factor: int):
    """Keep samples at ``(factor*m, factor*n)``."""
    factor = _check_factor(factor)
    x = np.asarray(input, dtype=np.float64)
    if x.ndim not in (3, 4):
        raise ParameterError(f"expected a 3-D or 4-D array, got shape {x.shape}")
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise ParameterError(f"spatial dims {h}x{w} not divisible by factor {factor}")
    return x[..., ::factor, ::factor].copy()


def downsample_backward(grad_out, factor: int):
    return upsample(grad_out, factor)


def upsample(input, factor: int):
    """Zero insertion: ``out[m, n] = in[m/f, n/f]`` on the lattice, 0 elsewhere."""
    factor = _check_factor(factor)
    x = np.asarray(input, dtype=np.float64)
    if x.ndim not in (3, 4):
        raise ParameterError(f"expected a 3-D or 4-D array, got shape {x.shape}")
    h, w = x.shape[-2:]
    out = np.zeros(x.shape[:-2] + (h * factor, w * factor))
    out[..., ::factor, ::factor] = x
    return out


def upsample_backward(grad_out, factor: int):
    return downsample(grad_out, factor)


# --------------------------------------------------------------------------
# divisive normalization


def _check_gdn(x, beta, gamma):
    if x.shape[1] != beta.shape[0]:
        raise ParameterError(
            f"input has {x.shape[1]} channels, GDN parameters have {beta.shape[0]}"
        )


def _norm_pool(x, beta, gamma):
    norm = np.tensordot(gamma, x * x, axes=([1], [1])).transpose(1, 0, 2, 3)
    norm += beta[None, :, None, None]
    if not np.all(norm > 0):
        raise NumericError("GDN denominator is not strictly positive", term="gdn")
    return norm


def _gdn(w, beta, gamma):
    return w / np.sqrt(_norm_pool(w, beta, gamma))


def _gdn_grads(w, beta, gamma, g):
    norm = _norm_pool(w, beta, gamma)
    inv_sqrt = 1.0 / np.sqrt(norm)
    # s_i = -1/2 * g_i * w_i * norm_i^{-3/2}; both beta and gamma grads are sums of s
    s = -0.5 * g * w * inv_sqrt / norm
    grad_w = g * inv_sqrt + 2.0 * w * np.tensordot(gamma, s, axes=([0], [1])).transpose(1, 0, 2, 3)
    grad_beta = s.sum(axis=(0, 2, 3))
    grad_gamma = np.tensordot(s, w * w, axes=([0, 2, 3], [0, 2, 3]))
    return grad_w, grad_beta, grad_gamma


def _igdn(u, beta, gamma):
    return u * np.sqrt(_norm_pool(u, beta, gamma))


def _igdn_grads(u, beta, gamma, g):
    norm = _norm_pool(u, beta, gamma)
    root = np.sqrt(norm)
    s = 0.5 * g * u / root
    grad_u = g * root + 2.0 * u * np.tensordot(gamma, s, axes=([0], [1])).transpose(1, 0, 2, 3)
    grad_beta = s.sum(axis=(0, 2, 3))
    grad_gamma = np.tensordot(s, u * u, axes=([0, 2, 3], [0, 2, 3]))
    return grad_u, grad_beta, grad_gamma


def _symmetric_grad(grad_gamma):
    # gamma_ij and gamma_ji are one parameter
    return grad_gamma + grad_gamma.T - np.diag(np.diag(grad_gamma))


def gdn_forward(w, p: GdnParams):
    """``u_i = w_i / sqrt(beta_i + sum_j gamma_ij w_j^2)`` at every location."""
    x, squeezed = _as_batch(w)
    _check_gdn(x, p.beta, p.gamma)
    return _restore(_gdn(x, p.beta, p.gamma), squeezed)


def gdn_backward(w, p: GdnParams, grad_out):
    """Return ``(grad_w, grad_beta, grad_gamma)``.

    ``grad_gamma`` is taken w.r.t. the symmetric parameterization, i.e. the
    off-diagonal entry ``(i, j)`` carries ``d/dgamma_ij + d/dgamma_ji``.
    """
    x, squeezed = _as_batch(w)
    g, _ = _as_batch(grad_out)
    _check_gdn(x, p.beta, p.gamma)
    if g.shape != x.shape:
        raise ParameterError(f"grad_out shape {g.shape} does not match input {x.shape}")
    grad_w, grad_beta, grad_gamma = _gdn_grads(x, p.beta, p.gamma, g)
    return _restore(grad_w, squeezed), grad_beta, _symmetric_grad(grad_gamma)


def igdn_forward(u, p: GdnParams):
    """``w_i = u_i * sqrt(beta_i + sum_j gamma_ij u_j^2)``."""
    x, squeezed = _as_batch(u)
    _check_gdn(x, p.beta, p.gamma)
    return _restore(_igdn(x, p.beta, p.gamma), squeezed)


def igdn_backward(u, p: GdnParams, grad_out):
    """Return ``(grad_u, grad_beta, grad_gamma)``, gamma grad symmetric as in GDN."""
    x, squeezed = _as_batch(u)
    g, _ = _as_batch(grad_out)
    _check_gdn(x, p.beta, p.gamma)
    if g.shape != x.shape:
        raise ParameterError(f"grad_out shape {g.shape} does not match input {x.shape}")
    grad_u, grad_beta, grad_gamma = _igdn_grads(x, p.beta, p.gamma, g)
    return _restore(grad_u, squeezed), grad_beta, _symmetric_grad(grad_gamma)
