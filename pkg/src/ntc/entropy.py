"""Adaptive binary arithmetic coding of quantized codes.

The coder core is a carry-propagating 32-bit range coder with byte-wise
renormalization (the LZMA construction). Context probabilities are 16-bit
fixed point integers, so encoder and decoder state trajectories are
integer-identical on every platform. Equiprobable "bypass" bits go through
the same engine with the interval simply halved.

Binarization of one value ``q`` against a channel PMF with mode ``m``::

    node 0            q == m ?                      (1 -> done)
    node 1            q >  m ?                      (side)
    less side         q == m-1 ?, q == m-2 ?, ... q == q_min ?   (1 -> done)
    greater side      q >  m+1 ?, q >  m+2 ?, ... q >  q_max ?   (0 -> done)

Falling off either end of the chain sends ``|q - bound| - 1`` as an order-0
exponential-Golomb code in bypass bits.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .density import DiscretePMF
from .errors import CorruptStreamError, ParameterError

PROB_BITS = 16
PROB_ONE = 1 << PROB_BITS
PROB_MIN = 1
PROB_MAX = PROB_ONE - 1
DELTA = 2.0**-PROB_BITS
ADAPT_SHIFT = 5
TOP = 1 << 24
MAX_EG_PREFIX = 40


# --------------------------------------------------------------------------
# plain bit I/O


class BitWriter:
    """MSB-first bit sink."""

    def __init__(self):
        self._bytes = bytearray()
        self._acc = 0
        self._n = 0

    def write_bit(self, bit: int) -> None:
        self._acc = (self._acc << 1) | (1 if bit else 0)
        self._n += 1
        if self._n == 8:
            self._bytes.append(self._acc)
            self._acc = 0
            self._n = 0

    def write_bits(self, value: int, count: int) -> None:
        for shift in range(count - 1, -1, -1):
            self.write_bit((value >> shift) & 1)

    @property
    def bit_length(self) -> int:
        return 8 * len(self._bytes) + self._n

    def getvalue(self) -> bytes:
        """Bytes written so far, zero-padded to a byte boundary."""
        out = bytearray(self._bytes)
        if self._n:
            out.append(self._acc << (8 - self._n))
        return bytes(out)

    def bits(self) -> str:
        full = "".join(f"{b:08b}" for b in self._bytes)
        return full + (f"{self._acc:0{self._n}b}" if self._n else "")


class BitReader:
    def __init__(self, data: bytes):
        self._data = bytes(data)
        self._pos = 0

    def read_bit(self) -> int:
        byte, bit = divmod(self._pos, 8)
        if byte >= len(self._data):
            raise CorruptStreamError("bitstream exhausted")
        self._pos += 1
        return (self._data[byte] >> (7 - bit)) & 1

    def read_bits(self, count: int) -> int:
        value = 0
        for _ in range(count):
            value = (value << 1) | self.read_bit()
        return value

    @property
    def position(self) -> int:
        return self._pos


# --------------------------------------------------------------------------
# exponential Golomb


def exp_golomb_encode(bits, n: int) -> None:
    """Order-0 exp-Golomb: ``len(bin(n+1)) - 1`` zeros, then ``n + 1`` in binary."""
    if n < 0:
        raise ParameterError(f"exp-Golomb codes non-negative integers, got {n}")
    v = n + 1
    for _ in range(v.bit_length() - 1):
        bits.write_bit(0)
    for shift in range(v.bit_length() - 1, -1, -1):
        bits.write_bit((v >> shift) & 1)


def exp_golomb_decode(bits) -> int:
    zeros = 0
    while bits.read_bit() == 0:
        zeros += 1
        if zeros > MAX_EG_PREFIX:
            raise CorruptStreamError("exp-Golomb prefix too long")
    v = 1
    for _ in range(zeros):
        v = (v << 1) | bits.read_bit()
    return v - 1


def exp_golomb_length(n: int) -> int:
    return 2 * (n + 1).bit_length() - 1


# --------------------------------------------------------------------------
# range coder


class Context:
    """Adaptive probability that the next decision is 1, in 1/65536 units."""

    __slots__ = ("p", "count")

    def __init__(self, p: int = PROB_ONE // 2):
        self.p = min(max(int(p), PROB_MIN), PROB_MAX)
        self.count = 0

    @classmethod
    def from_probability(cls, prob: float) -> "Context":
        return cls(round(prob * PROB_ONE))

    @property
    def probability(self) -> float:
        return self.p / PROB_ONE

    def update(self, bit: int) -> None:
        p = self.p + ((((bit & 1) << PROB_BITS) - self.p) >> ADAPT_SHIFT)
        self.p = PROB_MIN if p < PROB_MIN else PROB_MAX if p > PROB_MAX else p
        self.count += 1

    def __repr__(self):
        return f"Context(p={self.p}, count={self.count})"


class RangeEncoder:
    def __init__(self, adaptive: bool = True):
        self.adaptive = adaptive
        self.low = 0
        self.range = 0xFFFFFFFF
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()

    def _shift_low(self) -> None:
        low = self.low
        if low < 0xFF000000 or low > 0xFFFFFFFF:
            carry = low >> 32
            temp = self._cache
            while True:
                self._out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self._cache_size -= 1
                if not self._cache_size:
                    break
            self._cache = (low >> 24) & 0xFF
        self._cache_size += 1
        self.low = (low & 0x00FFFFFF) << 8

    def encode(self, ctx: Context, bit: int) -> None:
        bound = (self.range >> PROB_BITS) * ctx.p
        if bit:
            self.range = bound
        else:
            self.low += bound
            self.range -= bound
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()
        if self.adaptive:
            ctx.update(bit)

    def write_bit(self, bit: int) -> None:
        """Bypass (equiprobable) bit."""
        self.range >>= 1
        if bit:
            self.low += self.range
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        # the first byte out of this construction is always zero; drop it
        return bytes(self._out[1:])


class RangeDecoder:
    def __init__(self, data: bytes, adaptive: bool = True):
        self.adaptive = adaptive
        self._data = bytes(data)
        self._pos = 0
        self.range = 0xFFFFFFFF
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next()

    def _next(self) -> int:
        if self._pos >= len(self._data):
            raise CorruptStreamError("arithmetic-coded payload exhausted")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def decode(self, ctx: Context) -> int:
        bound = (self.range >> PROB_BITS) * ctx.p
        if self.code < bound:
            self.range = bound
            bit = 1
        else:
            self.code -= bound
            self.range -= bound
            bit = 0
        while self.range < TOP:
            self.range <<= 8
            self.code = ((self.code << 8) | self._next()) & 0xFFFFFFFF
        if self.adaptive:
            ctx.update(bit)
        return bit

    def read_bit(self) -> int:
        self.range >>= 1
        if self.code >= self.range:
            self.code -= self.range
            bit = 1
        else:
            bit = 0
        while self.range < TOP:
            self.range <<= 8
            self.code = ((self.code << 8) | self._next()) & 0xFFFFFFFF
        return bit

    @property
    def consumed(self) -> int:
        return self._pos

    def check_end(self) -> None:
        if self._pos != len(self._data):
            raise CorruptStreamError(
                f"{len(self._data) - self._pos} trailing byte(s) after the coded payload"
            )


# --------------------------------------------------------------------------
# binarization


def init_contexts_from_pmf(pmf: DiscretePMF) -> np.ndarray:
    """Exact conditional probability of a 1 at every tree node, clamped to (delta, 1 - delta).

    Layout: ``[mode, side, less chain (m-1 .. q_min), greater chain (m+1 .. q_max)]``.
    Sums use :func:`math.fsum` (correctly rounded), so the seeded contexts
    are identical on every IEEE-754 platform.
    """
    raw = [float(v) for v in pmf.probs]
    total = math.fsum(raw)
    p = [v / total for v in raw]
    m = pmf.mode - pmf.q_min
    n = len(p)
    out = [p[m]]
    rest = math.fsum(p[:m]) + math.fsum(p[m + 1 :])
    out.append(math.fsum(p[m + 1 :]) / rest if rest > 0 else 0.5)
    for v in range(m - 1, -1, -1):  # P(q = v | q <= v)
        below = math.fsum(p[: v + 1])
        out.append(p[v] / below if below > 0 else 1.0)
    for v in range(m + 1, n):  # P(q > v | q >= v)
        at_least = math.fsum(p[v:])
        out.append(math.fsum(p[v + 1 :]) / at_least if at_least > 0 else 0.0)
    return np.clip(np.array(out), DELTA, 1.0 - DELTA)


def contexts_from_pmf(pmf: DiscretePMF) -> list[Context]:
    return [Context.from_probability(float(p)) for p in init_contexts_from_pmf(pmf)]


def decisions(q: int, pmf: DiscretePMF) -> tuple[list[tuple[int, int]], int | None]:
    """Binary decisions ``(node, bit)`` for ``q`` plus the exp-Golomb excess (or None)."""
    mode, q_min, q_max = pmf.mode, pmf.q_min, pmf.q_max
    if q == mode:
        return [(0, 1)], None
    out = [(0, 0)]
    n_less = mode - q_min
    if q < mode:
        out.append((1, 0))
        for j, v in enumerate(range(mode - 1, q_min - 1, -1)):
            out.append((2 + j, int(q == v)))
            if q == v:
                return out, None
        return out, q_min - q - 1
    out.append((1, 1))
    for j, v in enumerate(range(mode + 1, q_max + 1)):
        out.append((2 + n_less + j, int(q > v)))
        if q == v:
            return out, None
    return out, q - q_max - 1


def binarize_encode(coder: RangeEncoder, contexts: Sequence[Context], q: int, pmf: DiscretePMF) -> int:
    """Code one value; returns the number of arithmetic-coded decisions."""
    steps, excess = decisions(int(q), pmf)
    for node, bit in steps:
        coder.encode(contexts[node], bit)
    if excess is not None:
        exp_golomb_encode(coder, excess)
    return len(steps)


def binarize_decode(coder: RangeDecoder, contexts: Sequence[Context], pmf: DiscretePMF) -> int:
    mode, q_min, q_max = pmf.mode, pmf.q_min, pmf.q_max
    if coder.decode(contexts[0]):
        return mode
    n_less = mode - q_min
    if not coder.decode(contexts[1]):
        for j, v in enumerate(range(mode - 1, q_min - 1, -1)):
            if coder.decode(contexts[2 + j]):
                return v
        return q_min - 1 - exp_golomb_decode(coder)
    for j, v in enumerate(range(mode + 1, q_max + 1)):
        if not coder.decode(contexts[2 + n_less + j]):
            return v
    return q_max + 1 + exp_golomb_decode(coder)


# --------------------------------------------------------------------------
# whole code tensors


def _check_pmfs(q_shape, pmfs):
    if len(q_shape) != 3:
        raise ParameterError(f"code must be (channels, height, width), got shape {q_shape}")
    if len(pmfs) != q_shape[0]:
        raise ParameterError(f"{q_shape[0]} code channels but {len(pmfs)} PMFs")


def encode_code(q, pmfs: Sequence[DiscretePMF], adaptive: bool = True) -> bytes:
    """Arithmetic-code ``q`` channel by channel in raster order; returns the payload."""
    q = np.asarray(q)
    if not np.issubdtype(q.dtype, np.integer):
        raise ParameterError("quantized code must be an integer array")
    _check_pmfs(q.shape, pmfs)
    coder = RangeEncoder(adaptive)
    for c, pmf in enumerate(pmfs):
        contexts = contexts_from_pmf(pmf)
        for value in q[c].ravel().tolist():
            binarize_encode(coder, contexts, value, pmf)
    return coder.finish()


def decode_code(payload: bytes, shape: Iterable[int], pmfs: Sequence[DiscretePMF],
                adaptive: bool = True) -> np.ndarray:
    shape = tuple(int(s) for s in shape)
    _check_pmfs(shape, pmfs)
    coder = RangeDecoder(payload, adaptive)
    out = np.empty(shape, dtype=np.int64)
    per_channel = shape[1] * shape[2]
    for c, pmf in enumerate(pmfs):
        contexts = contexts_from_pmf(pmf)
        flat = out[c].reshape(-1)
        for i in range(per_channel):
            flat[i] = binarize_decode(coder, contexts, pmf)
    coder.check_end()
    return out


def code_codelength(q, pmfs: Sequence[DiscretePMF]) -> float:
    """Ideal code length ``sum -log2 P_c(q)`` under the per-channel PMFs, in bits."""
    q = np.asarray(q)
    _check_pmfs(q.shape, pmfs)
    return sum(pmf.codelength(q[c]) for c, pmf in enumerate(pmfs))
