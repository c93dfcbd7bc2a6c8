"""Bit-accurate quantized arithmetic.

Integer domain used throughout:

* activations are unsigned level codes ``0 .. 2**a - 1`` standing for the
  values ``code / (2**a - 1)`` on [0, 1];
* 1-bit weights are bipolar (bit 1 -> +1, bit 0 -> -1);
* multi-bit weights are two's complement with ``w - 2`` fractional bits,
  i.e. integer ``q`` stands for ``q * 2**(2 - w)``;
* accumulators hold the exact integer ``sum(code_a * int_w)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import QuantError

log = logging.getLogger(__name__)

RELU_MODES = ("standard", "paper-literal")


@dataclass(frozen=True)
class QuantSpec:
    a_bits: int

    def __post_init__(self):
        if not 1 <= self.a_bits <= 8:
            raise QuantError(f"a_bits must be in 1..8, got {self.a_bits}")

    @property
    def levels(self) -> int:
        return 1 << self.a_bits

    @property
    def max_code(self) -> int:
        return self.levels - 1

    def level_value(self, code: int) -> float:
        return code / self.max_code


def _clip(x: float, relu_mode: str) -> float:
    if relu_mode == "standard":
        return min(max(x, 0.0), 1.0)
    if relu_mode == "paper-literal":
        # f(x) = x on [0, 1], 0 elsewhere
        return x if 0.0 <= x <= 1.0 else 0.0
    raise QuantError(f"unknown relu mode {relu_mode!r}")


def quantize_activation(x: float, spec: QuantSpec, relu_mode: str = "standard") -> int:
    """Clipped ReLU followed by rounding to the nearest of ``2**a`` levels.

    Midpoints round up.
    """
    x = float(x)
    if math.isnan(x):
        raise QuantError("cannot quantize NaN")
    y = _clip(x, relu_mode)
    return min(int(math.floor(y * spec.max_code + 0.5)), spec.max_code)


def quantize_activations(x, spec: QuantSpec, relu_mode: str = "standard") -> np.ndarray:
    """Vectorized :func:`quantize_activation`."""
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise QuantError("cannot quantize NaN")
    if relu_mode == "standard":
        y = np.clip(x, 0.0, 1.0)
    elif relu_mode == "paper-literal":
        y = np.where((x >= 0.0) & (x <= 1.0), x, 0.0)
    else:
        raise QuantError(f"unknown relu mode {relu_mode!r}")
    return np.minimum(np.floor(y * spec.max_code + 0.5), spec.max_code).astype(np.int64)


# -- weights ---------------------------------------------------------------


@dataclass(frozen=True)
class WeightEncoding:
    w_bits: int

    def __post_init__(self):
        if not 1 <= self.w_bits <= 8:
            raise QuantError(f"w_bits must be in 1..8, got {self.w_bits}")

    @property
    def mode(self) -> str:
        return "bipolar" if self.w_bits == 1 else "twos_complement"

    @property
    def frac_bits(self) -> int | None:
        return None if self.w_bits == 1 else self.w_bits - 2

    @property
    def step(self) -> float:
        """Real value of one integer unit."""
        return 1.0 if self.w_bits == 1 else 2.0 ** (2 - self.w_bits)

    @property
    def int_range(self) -> tuple[int, int]:
        if self.w_bits == 1:
            return -1, 1
        return -(1 << (self.w_bits - 1)), (1 << (self.w_bits - 1)) - 1

    @property
    def max_abs_int(self) -> int:
        lo, hi = self.int_range
        return max(-lo, hi)


def encode_weights(values, enc: WeightEncoding) -> tuple[np.ndarray, int]:
    """Encode real weights to unsigned ``w``-bit codes.

    Returns ``(codes, saturated)`` where ``saturated`` counts values clamped
    to the representable range.
    """
    v = np.asarray(values, dtype=np.float64)
    if np.isnan(v).any():
        raise QuantError("cannot encode NaN weight")
    if enc.w_bits == 1:
        return (v >= 0).astype(np.int64), 0
    q = np.rint(v / enc.step)  # rint rounds half to even
    lo, hi = enc.int_range
    saturated = int(np.count_nonzero((q < lo) | (q > hi)))
    q = np.clip(q, lo, hi).astype(np.int64)
    return q & ((1 << enc.w_bits) - 1), saturated


def encode_weight(v: float, enc: WeightEncoding) -> int:
    codes, saturated = encode_weights([v], enc)
    if saturated:
        log.warning("weight %r saturated to %d-bit range", v, enc.w_bits)
    return int(codes[0])


def weight_ints(codes, enc: WeightEncoding) -> np.ndarray:
    """Integer weight values for unsigned codes."""
    codes = np.asarray(codes, dtype=np.int64)
    if enc.w_bits == 1:
        return 2 * codes - 1
    sign = 1 << (enc.w_bits - 1)
    return (codes ^ sign) - sign


def decode_weight(code: int, enc: WeightEncoding) -> float:
    return float(weight_ints([code], enc)[0]) * enc.step


# -- dot products ----------------------------------------------------------


def mac_dot(act_codes: Sequence[int], w_codes: Sequence[int], enc: WeightEncoding,
            spec: QuantSpec) -> int:
    """Exact integer dot product of activation level codes and weight codes."""
    a = np.asarray(act_codes, dtype=np.int64)
    w = np.asarray(w_codes, dtype=np.int64)
    if a.shape != w.shape or a.ndim != 1:
        raise QuantError(f"length mismatch: {a.shape} vs {w.shape}")
    if a.size and (a.min() < 0 or a.max() > spec.max_code):
        raise QuantError(f"activation code out of range for {spec.a_bits} bits")
    if w.size and (w.min() < 0 or w.max() >= 1 << enc.w_bits):
        raise QuantError(f"weight code out of range for {enc.w_bits} bits")
    return int(np.dot(a, weight_ints(w, enc)))


def pack_bits(bits: Sequence[int]) -> int:
    """Pack a 0/1 sequence into an int, element 0 in bit 0."""
    word = 0
    for i, b in enumerate(bits):
        if b:
            word |= 1 << i
    return word


def popcount(x: int) -> int:
    return bin(x).count("1")


def mac_popcount(act_word: int, w_word: int, simd: int) -> int:
    """Dot product for 1-bit level-code activations and bipolar weights.

    With activations in {0, 1} and weights in {-1, +1}:
    ``sum = 2 * popcount(a & w) - popcount(a)``.
    """
    mask = (1 << simd) - 1
    a = act_word & mask
    return 2 * popcount(a & w_word & mask) - popcount(a)


def mac_xnor(x_word: int, w_word: int, simd: int) -> int:
    """Dot product of two bipolar vectors: ``2 * popcount(xnor) - simd``."""
    mask = (1 << simd) - 1
    return 2 * popcount(~(x_word ^ w_word) & mask) - simd


# -- thresholds ------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdSet:
    """Integer thresholds of one output channel.

    The output code for accumulator ``v`` is the number of thresholds
    ``t <= v``. ``cutoff`` (paper-literal ReLU only) forces code 0 for
    ``v >= cutoff``.
    """

    thresholds: tuple[int, ...]
    cutoff: int | None = None

    def __post_init__(self):
        t = tuple(int(x) for x in self.thresholds)
        if any(b < a for a, b in zip(t, t[1:])):
            raise QuantError("thresholds must be non-decreasing")
        object.__setattr__(self, "thresholds", t)

    @property
    def out_bits(self) -> int:
        n = len(self.thresholds) + 1
        bits = n.bit_length() - 1
        if 1 << bits != n:
            raise QuantError(f"{len(self.thresholds)} thresholds is not 2**a - 1")
        return bits

    def apply(self, v: int) -> int:
        if self.cutoff is not None and v >= self.cutoff:
            return 0
        return sum(1 for t in self.thresholds if v >= t)

    def apply_array(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.int64)
        out = np.searchsorted(np.asarray(self.thresholds, dtype=np.int64), v, side="right")
        if self.cutoff is not None:
            out = np.where(v >= self.cutoff, 0, out)
        return out.astype(np.int64)


def _smallest_int(pred, guess: float) -> int:
    """Smallest integer v with pred(v) true, for a monotone predicate."""
    if math.isinf(guess) or math.isnan(guess):
        guess = 0.0
    v = int(math.floor(guess))
    step = 1
    if pred(v):
        while pred(v - step):
            v -= step
            step *= 2
        lo, hi = v - step, v  # pred(lo) false, pred(hi) true
    else:
        while not pred(v + step):
            v += step
            step *= 2
        lo, hi = v, v + step
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def build_thresholds(spec: QuantSpec, scale: float, bias: float,
                     acc_range: tuple[int, int] | None = None,
                     relu_mode: str = "standard") -> ThresholdSet:
    """Fold ``quantize_activation(scale * v + bias)`` into integer thresholds.

    Each threshold is located by searching on the quantizer itself, so the
    threshold unit reproduces the quantizer exactly on every integer,
    rounding and ties included. ``acc_range`` saturates thresholds into the
    reachable accumulator range ``[lo, hi]`` (lo and hi + 1 stand for
    "always" and "never").
    """
    if not scale > 0:
        raise QuantError(f"scale must be positive, got {scale}")
    if math.isnan(bias):
        raise QuantError("bias is NaN")

    def q(v):
        return quantize_activation(scale * v + bias, spec, "standard")

    thresholds = []
    for j in range(1, spec.levels):
        guess = ((j - 0.5) / spec.max_code - bias) / scale
        thresholds.append(_smallest_int(lambda v, j=j: q(v) >= j, guess))
    cutoff = None
    if relu_mode == "paper-literal":
        cutoff = _smallest_int(lambda v: scale * v + bias > 1.0, (1.0 - bias) / scale)
    elif relu_mode != "standard":
        raise QuantError(f"unknown relu mode {relu_mode!r}")
    if acc_range is not None:
        lo, hi = acc_range
        thresholds = [min(max(t, lo), hi + 1) for t in thresholds]
        if cutoff is not None:
            cutoff = min(max(cutoff, lo), hi + 1)
    return ThresholdSet(tuple(thresholds), cutoff)


def accumulator_range(simd_total: int, a_bits: int, enc: WeightEncoding) -> tuple[int, int]:
    """Worst-case accumulator range for a dot product of length ``simd_total``."""
    lo_w, hi_w = enc.int_range
    max_a = (1 << a_bits) - 1
    return simd_total * max_a * lo_w, simd_total * max_a * hi_w


def accumulator_bits(simd_total: int, a_bits: int, enc: WeightEncoding, minimum: int = 32) -> int:
    """Signed accumulator width covering the worst case, at least ``minimum``."""
    lo, hi = accumulator_range(simd_total, a_bits, enc)
    need = max(hi.bit_length(), (-lo - 1).bit_length()) + 1
    return max(minimum, need)
