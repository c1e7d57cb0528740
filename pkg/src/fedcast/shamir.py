"""Shamir secret sharing over a prime field.

Seeds for pairwise masks are split so that any ``threshold`` holders can
reconstruct them (Lagrange interpolation at zero) while fewer reveal
nothing.  Shares carry their threshold so reconstruction can refuse
under-determined subsets instead of silently returning garbage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fixedpoint import DEFAULT_MODULUS


class ShamirError(Exception):
    pass


class InsufficientShares(ShamirError):
    """Fewer shares than the scheme's threshold."""


class DuplicateIndex(ShamirError):
    """Two shares claim the same evaluation point."""


@dataclass(frozen=True)
class SeedShare:
    """One evaluation of the sharing polynomial, held by one party."""

    issuer_id: int
    holder_id: int
    index: int
    value: int
    threshold: int
    modulus: int = DEFAULT_MODULUS


def _eval_poly(coeffs: list[int], x: int, p: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % p
    return acc


def shamir_share(
    secret: int,
    n: int,
    t: int,
    rng: np.random.Generator,
    issuer_id: int = 0,
    holder_ids: list[int] | None = None,
    modulus: int = DEFAULT_MODULUS,
) -> list[SeedShare]:
    """Split *secret* into *n* shares, any *t* of which reconstruct it.

    The polynomial has the secret as constant term and t-1 random
    coefficients; share i is its value at x=i (1-based).
    """
    if not 1 <= t <= n:
        raise ShamirError(f"threshold {t} must be in [1, {n}]")
    if n >= modulus:
        raise ShamirError("more shares than field elements")
    holders = holder_ids if holder_ids is not None else list(range(1, n + 1))
    if len(holders) != n:
        raise ShamirError("holder_ids length must equal n")
    coeffs = [secret % modulus]
    coeffs += [int(rng.integers(0, modulus)) for _ in range(t - 1)]
    return [
        SeedShare(
            issuer_id=issuer_id,
            holder_id=holder,
            index=i,
            value=_eval_poly(coeffs, i, modulus),
            threshold=t,
            modulus=modulus,
        )
        for i, holder in enumerate(holders, start=1)
    ]


def shamir_reconstruct(shares: list[SeedShare]) -> int:
    """Lagrange-interpolate the sharing polynomial at zero."""
    if not shares:
        raise InsufficientShares("no shares supplied")
    t = shares[0].threshold
    p = shares[0].modulus
    if len(shares) < t:
        raise InsufficientShares(f"got {len(shares)} shares, need {t}")
    indices = [s.index for s in shares]
    if len(set(indices)) != len(indices):
        raise DuplicateIndex(f"duplicate share indices in {sorted(indices)}")

    secret = 0
    for i, si in enumerate(shares):
        num, den = 1, 1
        for j, sj in enumerate(shares):
            if i == j:
                continue
            num = num * (-sj.index) % p
            den = den * (si.index - sj.index) % p
        secret = (secret + si.value * num * pow(den, -1, p)) % p
    return secret
