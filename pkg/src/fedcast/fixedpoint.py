"""Fixed-point encoding of real vectors into a prime field.

Additive masking needs exact arithmetic: floating-point masks would not
cancel bit-for-bit, so client updates are quantized to integers and summed
mod a prime.  Values are scaled by ``2**fractional_bits``, rounded, and
mapped into ``[0, p)`` with the upper half representing negatives.  Sums of
up to ``n`` encoded vectors decode back to the real sum within
``n * 2**-(fractional_bits+1)`` per coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# 2**61 - 1, a Mersenne prime: sums of 45 clamped updates stay far below p/2
# while single elements and pairwise sums still fit in signed 64-bit words.
DEFAULT_MODULUS = (1 << 61) - 1
DEFAULT_FRACTIONAL_BITS = 16
DEFAULT_CLAMP_RANGE = float(1 << 20)


class ModulusOverflowRisk(Exception):
    """Summing this many encoded values could wrap past p/2."""


@dataclass(frozen=True)
class FixedPointCodec:
    fractional_bits: int = DEFAULT_FRACTIONAL_BITS
    modulus: int = DEFAULT_MODULUS
    clamp_range: float = DEFAULT_CLAMP_RANGE

    @property
    def scale(self) -> int:
        return 1 << self.fractional_bits

    @property
    def quantum(self) -> float:
        """Worst-case rounding error of a single encoded value."""
        return 0.5 / self.scale

    def check_capacity(self, n_summands: int) -> None:
        if n_summands * self.clamp_range * self.scale >= self.modulus / 2:
            raise ModulusOverflowRisk(
                f"{n_summands} summands of magnitude {self.clamp_range} "
                f"* 2^{self.fractional_bits} do not fit below p/2"
            )

    def encode(self, values: np.ndarray) -> np.ndarray:
        """Real vector -> field elements in [0, p), negatives as p - |x|."""
        clamped = np.clip(np.asarray(values, dtype=np.float64),
                          -self.clamp_range, self.clamp_range)
        signed = np.rint(clamped * self.scale).astype(np.int64)
        return np.mod(signed, self.modulus)

    def decode(self, elements: np.ndarray, n_summands: int = 1) -> np.ndarray:
        """Field elements -> reals, reading values above p/2 as negative."""
        self.check_capacity(n_summands)
        elems = np.asarray(elements, dtype=np.int64)
        signed = np.where(elems > self.modulus // 2, elems - self.modulus, elems)
        return signed.astype(np.float64) / self.scale

    def add(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        # Elements are < 2^61 so a pairwise sum fits in int64 before reduction.
        return np.mod(a + b, self.modulus)

    def sub(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.mod(a - b, self.modulus)

    def describe(self) -> dict:
        return {
            "fractional_bits": self.fractional_bits,
            "modulus": self.modulus,
            "clamp_range": self.clamp_range,
        }
