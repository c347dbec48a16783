"""Nonlinear transform coding: learned GDN transforms, density models and an adaptive range coder."""

__version__ = "0.1.0"

from .codec import compress, decompress, quantize, rd_curve  # noqa: E402
from .container import CodecModel, ModelRegistry  # noqa: E402
from .errors import CorruptStreamError, NTCError, NumericError, ParameterError, UsageError  # noqa: E402
from .estimator import NonlinearTransformCoder  # noqa: E402
from .metrics import ms_ssim, psnr  # noqa: E402
from .trainer import RDPoint, TrainConfig, evaluate_discrete, relaxed_loss, train  # noqa: E402

__all__ = [
    "CodecModel",
    "CorruptStreamError",
    "ModelRegistry",
    "NTCError",
    "NonlinearTransformCoder",
    "NumericError",
    "ParameterError",
    "RDPoint",
    "TrainConfig",
    "UsageError",
    "compress",
    "decompress",
    "evaluate_discrete",
    "ms_ssim",
    "psnr",
    "quantize",
    "rd_curve",
    "relaxed_loss",
    "train",
]
