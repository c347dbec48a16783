"""Three-stage analysis and synthesis transforms and their raw parameters.

Filters are stored as orthonormal 2-D DCT-II coefficients; GDN/IGDN
parameters are stored in a square-root form (``beta = beta_raw**2 - 2**-10``,
same for ``gamma``). Gradients are always returned with respect to these raw
quantities so an optimizer can work on them directly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.fft import dctn, idctn

from . import tensor as T
from .errors import ParameterError, UsageError

logger = logging.getLogger(__name__)

PEDESTAL = 2.0**-10
RAW_FLOOR = 2.0**-5


@dataclass(frozen=True)
class StageSpec:
    kernel: tuple[int, int]
    in_channels: int
    out_channels: int
    factor: int


@dataclass(frozen=True)
class ArchitectureSpec:
    """Analysis stages in order; the synthesis transform mirrors them."""

    stages: tuple[StageSpec, ...]
    color: str = "grayscale"
    padding: str = "mirror"

    def __post_init__(self):
        if self.color not in ("grayscale", "rgb"):
            raise ParameterError(f"color must be 'grayscale' or 'rgb', got {self.color!r}")
        stages = tuple(s if isinstance(s, StageSpec) else StageSpec(**s) for s in self.stages)
        if not stages:
            raise ParameterError("architecture needs at least one stage")
        for prev, nxt in zip(stages, stages[1:]):
            if prev.out_channels != nxt.in_channels:
                raise ParameterError("stage channel counts do not chain")
        if stages[0].in_channels != self.image_channels:
            raise ParameterError(
                f"{self.color} images have {self.image_channels} channels, "
                f"first stage expects {stages[0].in_channels}"
            )
        object.__setattr__(self, "stages", stages)
        T.PaddingMode(self.padding)

    @property
    def image_channels(self) -> int:
        return 3 if self.color == "rgb" else 1

    @property
    def code_channels(self) -> int:
        return self.stages[-1].out_channels

    @property
    def total_factor(self) -> int:
        return int(np.prod([s.factor for s in self.stages]))

    def to_dict(self) -> dict:
        return {
            "color": self.color,
            "padding": self.padding,
            "stages": [
                {
                    "kernel": list(s.kernel),
                    "in_channels": s.in_channels,
                    "out_channels": s.out_channels,
                    "factor": s.factor,
                }
                for s in self.stages
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        stages = tuple(
            StageSpec(tuple(s["kernel"]), s["in_channels"], s["out_channels"], s["factor"])
            for s in d["stages"]
        )
        return cls(stages, d.get("color", "grayscale"), d.get("padding", "mirror"))


def three_stage(channels: int, color: str = "grayscale", first: int = 9, rest: int = 5):
    c0 = 3 if color == "rgb" else 1
    return ArchitectureSpec(
        (
            StageSpec((first, first), c0, channels, 4),
            StageSpec((rest, rest), channels, channels, 2),
            StageSpec((rest, rest), channels, channels, 2),
        ),
        color,
    )


PRESETS = {
    "full": three_stage(128),
    "full-high": three_stage(256),
    "full-rgb": three_stage(192, "rgb"),
    "desk": three_stage(8),
    "desk16": three_stage(16),
    "desk-rgb": three_stage(16, "rgb"),
    "tiny": ArchitectureSpec(
        (StageSpec((5, 5), 1, 3, 2), StageSpec((3, 3), 3, 3, 2)),
    ),
}


def preset(name: str) -> ArchitectureSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ParameterError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# --------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class StageParams:
    """Raw parameters of one stage.

    ``coeffs`` holds DCT coefficients shaped like the spatial filters
    ``(out, in, kh, kw)``. ``beta_raw``/``gamma_raw`` belong to the GDN that
    follows the convolution (analysis) or the IGDN that precedes it
    (synthesis).
    """

    coeffs: np.ndarray
    bias: np.ndarray
    beta_raw: np.ndarray
    gamma_raw: np.ndarray

    def arrays(self):
        return [self.coeffs, self.bias, self.beta_raw, self.gamma_raw]


@dataclass(frozen=True)
class TransformParams:
    spec: ArchitectureSpec
    stages: tuple[StageParams, ...]

    kind = "transform"

    def arrays(self) -> list[np.ndarray]:
        return [a for s in self.stages for a in s.arrays()]

    def with_arrays(self, arrays: Sequence[np.ndarray]):
        arrays = list(arrays)
        if len(arrays) != 4 * len(self.stages):
            raise ParameterError("array count does not match the parameter structure")
        stages = tuple(StageParams(*arrays[4 * i : 4 * i + 4]) for i in range(len(self.stages)))
        return replace(self, stages=stages)

    def filters(self, k: int) -> np.ndarray:
        return idctn(self.stages[k].coeffs, type=2, axes=(2, 3), norm="ortho")

    def gdn_params(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        s = self.stages[k]
        return s.beta_raw**2 - PEDESTAL, s.gamma_raw**2 - PEDESTAL

    def kernel(self, k: int) -> T.ConvKernel:
        return T.ConvKernel(self.filters(k), self.stages[k].bias)


class AnalysisParams(TransformParams):
    kind = "analysis"


class SynthesisParams(TransformParams):
    kind = "synthesis"


def dct_parameterize(filters: np.ndarray) -> np.ndarray:
    """Spatial filters -> orthonormal 2-D DCT-II coefficients (last two axes)."""
    return dctn(np.asarray(filters, dtype=np.float64), type=2, axes=(-2, -1), norm="ortho")


def dct_to_spatial(coeffs: np.ndarray) -> np.ndarray:
    return idctn(np.asarray(coeffs, dtype=np.float64), type=2, axes=(-2, -1), norm="ortho")


def _stage_layout(spec: ArchitectureSpec, kind: str):
    """Yield ``(kernel_shape, gdn_channels, factor)`` per stage in execution order."""
    if kind == "analysis":
        for s in spec.stages:
            yield (s.out_channels, s.in_channels) + tuple(s.kernel), s.out_channels, s.factor
    else:
        for s in reversed(spec.stages):
            yield (s.in_channels, s.out_channels) + tuple(s.kernel), s.out_channels, s.factor


def init_params(spec: ArchitectureSpec, seed: int = 0) -> tuple[AnalysisParams, SynthesisParams]:
    rng = np.random.default_rng(seed)
    out = []
    for kind, cls in (("analysis", AnalysisParams), ("synthesis", SynthesisParams)):
        stages = []
        for shape, g, _ in _stage_layout(spec, kind):
            gamma = np.full((g, g), RAW_FLOOR)
            np.fill_diagonal(gamma, 2.0**-2)
            stages.append(
                StageParams(
                    coeffs=rng.normal(scale=0.1, size=shape),
                    bias=np.zeros(shape[0]),
                    beta_raw=np.ones(g),
                    gamma_raw=gamma,
                )
            )
        params = cls(spec, tuple(stages))
        out.append(renormalize_filters(project_parameters(params)))
    return out[0], out[1]


def project_parameters(params: TransformParams) -> TransformParams:
    """Clamp raw beta/gamma to ``[2**-5, inf)``; gamma is symmetrized first."""
    stages = []
    for s in params.stages:
        gamma = 0.5 * (s.gamma_raw + s.gamma_raw.T)
        stages.append(
            replace(
                s,
                beta_raw=np.maximum(s.beta_raw, RAW_FLOOR),
                gamma_raw=np.maximum(gamma, RAW_FLOOR),
            )
        )
    return replace(params, stages=tuple(stages))


def renormalize_filters(params: TransformParams) -> TransformParams:
    """Scale every filter to unit Euclidean norm.

    Analysis filters are indexed by output channel (norm over space and
    inputs); synthesis filters by input channel (norm over space and
    outputs). The DCT is orthonormal, so coefficients are scaled directly.
    """
    axes = (1, 2, 3) if params.kind == "analysis" else (0, 2, 3)
    stages = []
    for k, s in enumerate(params.stages):
        norms = np.sqrt(np.sum(s.coeffs**2, axis=axes, keepdims=True))
        zero = norms == 0
        if zero.any():
            logger.warning(
                "stage %d of %s transform has %d zero-norm filter(s); left unnormalized",
                k, params.kind, int(zero.sum()),
            )
        coeffs = s.coeffs / np.where(zero, 1.0, norms)
        stages.append(replace(s, coeffs=coeffs))
    return replace(params, stages=tuple(stages))


def degenerate_filters(params: TransformParams) -> list[tuple[int, int]]:
    """(stage, filter index) pairs whose norm is exactly zero."""
    axes = (1, 2, 3) if params.kind == "analysis" else (0, 2, 3)
    found = []
    for k, s in enumerate(params.stages):
        for i in np.flatnonzero(np.sum(s.coeffs**2, axis=axes) == 0):
            found.append((k, int(i)))
    return found


# --------------------------------------------------------------------------
# forward / backward


@dataclass
class ForwardRecord:
    """Intermediates of one forward pass; consumed by the matching backward."""

    params: TransformParams
    inputs: list = field(default_factory=list)  # per stage: conv input / igdn input
    hidden: list = field(default_factory=list)  # per stage: gdn input / conv input
    squeezed: bool = False


def _check_input(x, channels, factor, name):
    x = np.asarray(x, dtype=np.float64)
    squeezed = x.ndim == 3
    if squeezed:
        x = x[None]
    if x.ndim != 4:
        raise ParameterError(f"{name} must be (C, H, W) or (N, C, H, W), got shape {x.shape}")
    if x.shape[1] != channels:
        raise ParameterError(f"{name} has {x.shape[1]} channels, expected {channels}")
    if factor and (x.shape[2] % factor or x.shape[3] % factor):
        raise ParameterError(
            f"{name} spatial dims {x.shape[2:]} not divisible by {factor}"
        )
    return x, squeezed


def analysis_forward(x, params: AnalysisParams):
    """``y = g_a(x)``: per stage conv, downsample, GDN. Returns ``(y, record)``."""
    spec = params.spec
    u, squeezed = _check_input(x, spec.image_channels, spec.total_factor, "image")
    record = ForwardRecord(params, squeezed=squeezed)
    for k, stage in enumerate(spec.stages):
        w = T.conv_down(u, params.kernel(k), stage.factor, spec.padding)
        beta, gamma = params.gdn_params(k)
        record.inputs.append(u)
        record.hidden.append(w)
        u = T._gdn(w, beta, gamma)
    return (u[0] if squeezed else u), record


def analysis_backward(record: ForwardRecord, grad_y, params: AnalysisParams | None = None):
    """Return ``(grad_params, grad_x)`` for a record from :func:`analysis_forward`."""
    p = _check_record(record, params, "analysis")
    spec = p.spec
    g = np.asarray(grad_y, dtype=np.float64)
    if record.squeezed:
        g = g[None]
    grads = [None] * len(spec.stages)
    for k in reversed(range(len(spec.stages))):
        stage, s = spec.stages[k], p.stages[k]
        beta, gamma = p.gdn_params(k)
        w = record.hidden[k]
        if g.shape != w.shape:
            raise ParameterError(f"gradient shape {g.shape} does not match {w.shape}")
        g_w, g_beta, g_gamma = T._gdn_grads(w, beta, gamma, g)
        g, g_kernel = T.conv_down_backward(record.inputs[k], p.kernel(k), g_w, stage.factor, spec.padding)
        grads[k] = StageParams(
            coeffs=dct_parameterize(g_kernel.weights),
            bias=g_kernel.bias,
            beta_raw=2.0 * s.beta_raw * g_beta,
            gamma_raw=2.0 * s.gamma_raw * g_gamma,
        )
    return AnalysisParams(spec, tuple(grads)), (g[0] if record.squeezed else g)


def synthesis_forward(y_hat, params: SynthesisParams):
    """``x_hat = g_s(y_hat)``: per stage IGDN, upsample, conv."""
    spec = params.spec
    u, squeezed = _check_input(y_hat, spec.code_channels, 0, "code")
    record = ForwardRecord(params, squeezed=squeezed)
    for k, (_, _, factor) in enumerate(_stage_layout(spec, "synthesis")):
        beta, gamma = params.gdn_params(k)
        w = T._igdn(u, beta, gamma)
        record.inputs.append(u)
        record.hidden.append(w)
        u = T.up_conv(w, params.kernel(k), factor, spec.padding)
    return (u[0] if squeezed else u), record


def synthesis_backward(record: ForwardRecord, grad_x_hat, params: SynthesisParams | None = None):
    """Return ``(grad_params, grad_y_hat)``."""
    p = _check_record(record, params, "synthesis")
    spec = p.spec
    layout = list(_stage_layout(spec, "synthesis"))
    g = np.asarray(grad_x_hat, dtype=np.float64)
    if record.squeezed:
        g = g[None]
    grads = [None] * len(layout)
    for k in reversed(range(len(layout))):
        s = p.stages[k]
        factor = layout[k][2]
        w = record.hidden[k]
        g_w, g_kernel = T.up_conv_backward(w, p.kernel(k), g, factor, spec.padding)
        beta, gamma = p.gdn_params(k)
        g, g_beta, g_gamma = T._igdn_grads(record.inputs[k], beta, gamma, g_w)
        grads[k] = StageParams(
            coeffs=dct_parameterize(g_kernel.weights),
            bias=g_kernel.bias,
            beta_raw=2.0 * s.beta_raw * g_beta,
            gamma_raw=2.0 * s.gamma_raw * g_gamma,
        )
    return SynthesisParams(spec, tuple(grads)), (g[0] if record.squeezed else g)


def _check_record(record, params, kind):
    if not isinstance(record, ForwardRecord) or record.params.kind != kind:
        raise UsageError(f"expected a forward record from the {kind} transform")
    if params is not None and params is not record.params:
        raise UsageError("forward record was produced with different parameters")
    return record.params
