"""8-bit image files: PNG and binary PGM/PPM via Pillow."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import CorruptStreamError, ParameterError

SUFFIXES = {".png": "PNG", ".pgm": "PPM", ".ppm": "PPM", ".pnm": "PPM"}


def read_image(path) -> np.ndarray:
    """``(H, W)`` uint8 for grayscale files, ``(H, W, 3)`` for color ones."""
    try:
        with Image.open(path) as im:
            im.load()
            gray = im.mode in ("1", "L", "LA", "I", "I;16", "F")
            arr = np.asarray(im.convert("L" if gray else "RGB"))
    except FileNotFoundError:
        raise ParameterError(f"no such image: {path}") from None
    except (UnidentifiedImageError, OSError) as exc:
        raise CorruptStreamError(f"cannot decode image {path}: {exc}") from None
    return np.ascontiguousarray(arr, dtype=np.uint8)


def write_image(path, image) -> None:
    img = np.asarray(image)
    if img.dtype != np.uint8 or img.ndim not in (2, 3):
        raise ParameterError("write_image expects an 8-bit (H, W) or (H, W, 3) array")
    fmt = SUFFIXES.get(Path(path).suffix.lower())
    if fmt is None:
        raise ParameterError(f"unsupported image suffix {Path(path).suffix!r}; use .png, .pgm or .ppm")
    if Path(path).suffix.lower() == ".pgm" and img.ndim == 3:
        raise ParameterError("cannot store a color image as PGM")
    Image.fromarray(img).save(path, format=fmt)


def read_directory(path, limit: int | None = None) -> list[np.ndarray]:
    readable = set(SUFFIXES) | {".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
    files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() in readable)
    if limit is not None:
        files = files[:limit]
    return [read_image(p) for p in files]
