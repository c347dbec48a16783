"""Image compression pipeline and the NTCB file format.

File layout::

    "NTCB"                              4 bytes
    width u16, height u16, color u1, lambda index u16   (MSB first, zero-padded to 7 bytes)
    payload                             range-coded code, to end of file

The header fields are written as plain bits, outside the arithmetic coder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import transforms as tr
from .container import CodecModel, ModelRegistry
from .entropy import BitReader, BitWriter, decode_code, encode_code
from .errors import CorruptStreamError, ParameterError
from .quantize import dequantize, quantize

MAGIC = b"NTCB"
HEADER_BITS = 16 + 16 + 1 + 16
HEADER_SIZE = len(MAGIC) + (HEADER_BITS + 7) // 8

__all__ = [
    "CompressedFile",
    "compress",
    "decompress",
    "quantize",
    "dequantize",
    "reconstruct",
    "encode_image",
    "padded_size",
    "rd_curve",
]


@dataclass(frozen=True)
class CompressedFile:
    width: int
    height: int
    color: bool
    lambda_index: int
    payload: bytes

    def __post_init__(self):
        for name in ("width", "height", "lambda_index"):
            v = getattr(self, name)
            if not 0 <= v <= 0xFFFF:
                raise ParameterError(f"{name} {v} does not fit in 16 bits")
        if self.width == 0 or self.height == 0:
            raise ParameterError("image dimensions must be positive")

    def to_bytes(self) -> bytes:
        w = BitWriter()
        w.write_bits(self.width, 16)
        w.write_bits(self.height, 16)
        w.write_bit(int(self.color))
        w.write_bits(self.lambda_index, 16)
        return MAGIC + w.getvalue() + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompressedFile":
        data = bytes(data)
        if data[:4] != MAGIC:
            raise CorruptStreamError("not an NTCB file (bad magic)")
        if len(data) < HEADER_SIZE:
            raise CorruptStreamError("truncated header")
        r = BitReader(data[4:HEADER_SIZE])
        width, height = r.read_bits(16), r.read_bits(16)
        color = bool(r.read_bit())
        index = r.read_bits(16)
        if r.read_bits(8 * (HEADER_SIZE - 4) - HEADER_BITS):
            raise CorruptStreamError("non-zero header padding")
        if width == 0 or height == 0:
            raise CorruptStreamError("zero image dimension in header")
        return cls(width, height, color, index, data[HEADER_SIZE:])

    @property
    def size(self) -> int:
        return HEADER_SIZE + len(self.payload)


def padded_size(n: int, multiple: int) -> int:
    return -(-n // multiple) * multiple


def _as_image(image, color: bool) -> np.ndarray:
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise ParameterError(f"expected an 8-bit image, got dtype {img.dtype}")
    if color:
        if img.ndim != 3 or img.shape[2] != 3:
            raise ParameterError(f"model expects an RGB image (H, W, 3), got shape {img.shape}")
        return img
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim != 2:
        raise ParameterError(f"model expects a grayscale image (H, W), got shape {img.shape}")
    return img


def _to_tensor(img: np.ndarray, model: CodecModel) -> np.ndarray:
    m = model.spec.total_factor
    h, w = img.shape[:2]
    if h > 0xFFFF or w > 0xFFFF:
        raise ParameterError(f"image {w}x{h} exceeds the 65535-pixel header limit")
    if h == 0 or w == 0:
        raise ParameterError("empty image")
    pad = [(0, padded_size(h, m) - h), (0, padded_size(w, m) - w)] + [(0, 0)] * (img.ndim - 2)
    x = np.pad(img.astype(np.float64), pad, mode="symmetric") / model.pixel_scale
    return x[None] if x.ndim == 2 else np.moveaxis(x, -1, 0)


def _to_pixels(x_hat: np.ndarray, model: CodecModel, height: int, width: int) -> np.ndarray:
    pix = np.clip(np.round(x_hat * model.pixel_scale), 0, 255).astype(np.uint8)
    pix = pix[:, :height, :width]
    return pix[0] if pix.shape[0] == 1 else np.moveaxis(pix, 0, -1)


def encode_image(image, model: CodecModel) -> np.ndarray:
    """Integer code ``round(g_a(x))`` of an 8-bit image, padded to the transform's block size."""
    img = _as_image(image, model.spec.color == "rgb")
    y, _ = tr.analysis_forward(_to_tensor(img, model), model.analysis)
    return quantize(y)


def reconstruct(image, model: CodecModel) -> np.ndarray:
    """``g_s(round(g_a(x)))`` cropped and rounded to 8 bits, without entropy coding."""
    img = _as_image(image, model.spec.color == "rgb")
    q = encode_image(img, model)
    x_hat, _ = tr.synthesis_forward(dequantize(q), model.synthesis)
    return _to_pixels(x_hat, model, img.shape[0], img.shape[1])


def compress(image, lambda_index: int, registry: ModelRegistry, adaptive: bool = True) -> bytes:
    model = registry.get(lambda_index)
    color = model.spec.color == "rgb"
    img = _as_image(image, color)
    q = encode_image(img, model)
    payload = encode_code(q, model.pmfs, adaptive)
    return CompressedFile(img.shape[1], img.shape[0], color, lambda_index, payload).to_bytes()


def decompress(data: bytes, registry: ModelRegistry, adaptive: bool = True) -> np.ndarray:
    f = CompressedFile.from_bytes(data)
    model = registry.get(f.lambda_index)
    if f.color != (model.spec.color == "rgb"):
        raise CorruptStreamError("color flag does not match the model for this lambda index")
    m = model.spec.total_factor
    shape = (model.spec.code_channels, padded_size(f.height, m) // m, padded_size(f.width, m) // m)
    q = decode_code(f.payload, shape, model.pmfs, adaptive)
    x_hat, _ = tr.synthesis_forward(dequantize(q), model.synthesis)
    return _to_pixels(x_hat, model, f.height, f.width)


def rd_curve(images, registry: ModelRegistry, lambda_indices=None) -> list[dict]:
    """Average rate (from actual file sizes), PSNR and MS-SSIM per lambda index.

    PSNR is on luma for color images. MS-SSIM is ``None`` for images below
    its minimum size; an infinite PSNR serializes as ``None``.
    """
    from .metrics import ms_ssim, psnr

    images = [np.asarray(im) for im in images]
    if not images:
        raise ParameterError("rd_curve needs at least one image")
    points = []
    for index in (registry.indices() if lambda_indices is None else lambda_indices):
        model = registry.get(index)
        rates, psnrs, ssims = [], [], []
        for img in images:
            data = compress(img, index, registry)
            out = decompress(data, registry)
            rates.append(8.0 * len(data) / (img.shape[0] * img.shape[1]))
            psnrs.append(psnr(img, out))
            try:
                ssims.append(ms_ssim(img, out))
            except ParameterError:
                pass
        mean_psnr = float(np.mean(psnrs))
        points.append({
            "lambda_index": int(index),
            "lambda": float(model.lmbda),
            "bpp": float(np.mean(rates)),
            "psnr": mean_psnr if np.isfinite(mean_psnr) else None,
            "ms_ssim": float(np.mean(ssims)) if len(ssims) == len(images) else None,
            "images": len(images),
        })
    return points
