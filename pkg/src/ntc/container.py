"""NTC1 model container and the registry of models keyed by lambda index.

Layout (little-endian)::

    "NTC1"  u16 version  u32 meta_length  meta (UTF-8 JSON)
    float64 arrays, concatenated in the order listed in meta["arrays"]
    u32 CRC-32 of everything before it

The JSON meta block records, per model: its lambda index and value, the
architecture, the pixel normalization and the per-channel densities and
PMFs (PMF supports as integers, probabilities as arrays).
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import transforms as tr
from .density import DiscretePMF, MarginalDensity, discretize
from .errors import CorruptStreamError, ParameterError

MAGIC = b"NTC1"
VERSION = 1
PIXEL_SCALE = 255.0


@dataclass
class CodecModel:
    """Everything encoder and decoder need for one rate-distortion point."""

    analysis: tr.AnalysisParams
    synthesis: tr.SynthesisParams
    pmfs: list[DiscretePMF]
    lmbda: float = 0.0
    densities: list[MarginalDensity] | None = None
    pixel_scale: float = PIXEL_SCALE
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.analysis.spec != self.synthesis.spec:
            raise ParameterError("analysis and synthesis parameters use different architectures")
        if len(self.pmfs) != self.spec.code_channels:
            raise ParameterError(f"{len(self.pmfs)} PMFs for {self.spec.code_channels} code channels")

    @property
    def spec(self) -> tr.ArchitectureSpec:
        return self.analysis.spec

    @classmethod
    def from_training(cls, result, **extra) -> "CodecModel":
        return cls(result.analysis, result.synthesis, [discretize(p) for p in result.densities],
                   result.config.lmbda, list(result.densities), extra=dict(extra))


class ModelRegistry:
    """Map from 16-bit lambda index to :class:`CodecModel`."""

    def __init__(self, models: dict[int, CodecModel] | None = None):
        self._models: dict[int, CodecModel] = {}
        for k, m in (models or {}).items():
            self.add(k, m)

    def add(self, index: int, model: CodecModel) -> None:
        if not 0 <= int(index) <= 0xFFFF:
            raise ParameterError(f"lambda index must fit in 16 bits, got {index}")
        self._models[int(index)] = model

    def get(self, index: int) -> CodecModel:
        try:
            return self._models[int(index)]
        except KeyError:
            raise ParameterError(
                f"unknown lambda index {index}; registry has {sorted(self._models)}"
            ) from None

    def __contains__(self, index) -> bool:
        return int(index) in self._models

    def __len__(self) -> int:
        return len(self._models)

    def items(self):
        return sorted(self._models.items())

    def indices(self) -> list[int]:
        return sorted(self._models)

    def merge(self, other: "ModelRegistry") -> "ModelRegistry":
        merged = ModelRegistry(dict(self._models))
        for k, m in other.items():
            merged.add(k, m)
        return merged

    # ------------------------------------------------------------------ io

    def to_bytes(self) -> bytes:
        arrays: list[np.ndarray] = []
        listing: list[dict] = []

        def put(name, a):
            a = np.ascontiguousarray(a, dtype="<f8")
            listing.append({"name": name, "shape": list(a.shape)})
            arrays.append(a)

        models = []
        for index, m in self.items():
            prefix = f"{index}"
            for kind, params in (("analysis", m.analysis), ("synthesis", m.synthesis)):
                for k, stage in enumerate(params.stages):
                    for part, a in zip(("coeffs", "bias", "beta_raw", "gamma_raw"), stage.arrays()):
                        put(f"{prefix}/{kind}/{k}/{part}", a)
            for c, pmf in enumerate(m.pmfs):
                put(f"{prefix}/pmf/{c}", pmf.probs)
            dens = []
            for c, psi in enumerate(m.densities or []):
                put(f"{prefix}/density/{c}", psi.samples)
                dens.append({"left": psi.left, "spacing": psi.spacing})
            models.append({
                "index": index,
                "lambda": m.lmbda,
                "spec": m.spec.to_dict(),
                "pixel_scale": m.pixel_scale,
                "pmf_q_min": [pmf.q_min for pmf in m.pmfs],
                "densities": dens,
                "extra": m.extra,
            })
        meta = json.dumps({"models": models, "arrays": listing}, sort_keys=True).encode()
        body = MAGIC + struct.pack("<HI", VERSION, len(meta)) + meta + b"".join(a.tobytes() for a in arrays)
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelRegistry":
        data = bytes(data)
        if len(data) < 14 or data[:4] != MAGIC:
            raise CorruptStreamError("not an NTC1 model container")
        (crc,) = struct.unpack("<I", data[-4:])
        if zlib.crc32(data[:-4]) != crc:
            raise CorruptStreamError("model container checksum mismatch")
        version, meta_len = struct.unpack("<HI", data[4:10])
        if version != VERSION:
            raise CorruptStreamError(f"unsupported container version {version}")
        try:
            meta = json.loads(data[10 : 10 + meta_len])
        except ValueError as exc:
            raise CorruptStreamError(f"bad container metadata: {exc}") from None
        pos = 10 + meta_len
        arrays = {}
        for entry in meta["arrays"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape, dtype=np.int64)) * 8
            if pos + n > len(data) - 4:
                raise CorruptStreamError("model container truncated")
            arrays[entry["name"]] = np.frombuffer(data, "<f8", n // 8, pos).reshape(shape).astype(np.float64)
            pos += n
        if pos != len(data) - 4:
            raise CorruptStreamError("unexpected bytes after the last array")

        reg = cls()
        for m in meta["models"]:
            index = m["index"]
            spec = tr.ArchitectureSpec.from_dict(m["spec"])

            def params(kind, klass):
                stages = tuple(
                    tr.StageParams(*(arrays[f"{index}/{kind}/{k}/{part}"]
                                     for part in ("coeffs", "bias", "beta_raw", "gamma_raw")))
                    for k in range(len(spec.stages))
                )
                return klass(spec, stages)

            pmfs = [DiscretePMF(q, arrays[f"{index}/pmf/{c}"]) for c, q in enumerate(m["pmf_q_min"])]
            dens = [
                MarginalDensity(d["left"], arrays[f"{index}/density/{c}"], d["spacing"], c)
                for c, d in enumerate(m["densities"])
            ] or None
            reg.add(index, CodecModel(params("analysis", tr.AnalysisParams),
                                      params("synthesis", tr.SynthesisParams),
                                      pmfs, m["lambda"], dens, m["pixel_scale"], m.get("extra", {})))
        return reg

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, paths: str | Path | Iterable) -> "ModelRegistry":
        if isinstance(paths, (str, Path)):
            paths = [paths]
        reg = cls()
        for p in paths:
            try:
                raw = Path(p).read_bytes()
            except OSError as exc:
                raise ParameterError(f"cannot read model file {p}: {exc}") from None
            reg = reg.merge(cls.from_bytes(raw))
        return reg
