"""Fragment-loss recovery codes.

The randomized Hadamard path multiplies the (zero-padded) vector by a seeded
+-1 diagonal and applies the orthonormal fast Walsh-Hadamard transform, so
every input coordinate's energy is spread over all fragments: losing a
fragment degrades every coordinate slightly instead of erasing some outright.
Decoding rescales the surviving coefficients by n/received, which makes the
estimate unbiased under uniformly random fragment drops.

The XOR path adds one bytewise parity fragment per group of k data fragments
(overhead 1/k) and recovers any single loss per group exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


def next_pow2(n: int) -> int:
    if n < 1:
        return 1
    return 1 << (n - 1).bit_length()


def fwht(v: np.ndarray) -> np.ndarray:
    """Orthonormal Walsh-Hadamard transform; its own inverse.

    Butterfly with a single 1/sqrt(n) scaling, so norms are preserved and
    fwht(fwht(x)) == x up to float rounding.
    """
    a = np.asarray(v, dtype=np.float64)
    n = a.size
    if n == 0 or n & (n - 1):
        raise ValueError(f"fwht needs a power-of-two length, got {n}")
    a = a.copy()
    h = 1
    while h < n:
        a = a.reshape(-1, 2, h)
        top = a[:, 0, :] + a[:, 1, :]
        bottom = a[:, 0, :] - a[:, 1, :]
        a[:, 0, :] = top
        a[:, 1, :] = bottom
        a = a.reshape(n)
        h *= 2
    return a / np.sqrt(n)


def sign_diagonal(seed: int, n: int) -> np.ndarray:
    """Seeded +-1 diagonal; the same seed always regenerates it."""
    gen = np.random.Generator(np.random.PCG64(seed))
    return gen.integers(0, 2, size=n).astype(np.float64) * 2.0 - 1.0


@dataclass
class EncodedPayload:
    coeffs: np.ndarray  # transformed values, padded length n = 2**k
    sign_seed: int
    fragment_size: int
    orig_len: int

    @property
    def fragment_count(self) -> int:
        return self.coeffs.size // self.fragment_size


@dataclass
class DecodeResult:
    values: np.ndarray
    total_loss: bool
    received_fraction: float


def encode(values: np.ndarray, sign_seed: int, fragment_size: int,
           padded_len: Optional[int] = None) -> EncodedPayload:
    """Pad to a power of two, apply the sign diagonal and the transform.

    ``padded_len`` selects a larger power-of-two length than the minimal one;
    extra padding spreads each coordinate over more fragments, which lowers
    the per-coordinate variance of lossy reconstruction.
    """
    g = np.asarray(values, dtype=np.float64).ravel()
    n = padded_len if padded_len is not None else next_pow2(max(g.size, 1))
    if n < max(g.size, 1) or n & (n - 1):
        raise ValueError(f"padded_len {n} must be a power of two >= input length")
    if fragment_size < 1 or n % fragment_size:
        raise ValueError(
            f"fragment_size {fragment_size} must divide padded length {n}"
        )
    padded = np.zeros(n, dtype=np.float64)
    padded[: g.size] = g
    coeffs = fwht(padded * sign_diagonal(sign_seed, n))
    return EncodedPayload(coeffs=coeffs, sign_seed=sign_seed,
                          fragment_size=fragment_size, orig_len=g.size)


def decode(payload: EncodedPayload, received_mask: Sequence[bool]) -> DecodeResult:
    """Invert the encoding from the surviving fragments.

    Missing fragments are zero-filled and survivors rescaled by n/received
    before the inverse transform; a fully lost payload comes back as zeros
    with the total_loss flag set.
    """
    n = payload.coeffs.size
    fs = payload.fragment_size
    count = n // fs
    mask = np.asarray(received_mask, dtype=bool)
    if mask.size != count:
        raise ValueError(f"mask has {mask.size} entries for {count} fragments")
    kept = int(mask.sum())
    if kept == 0:
        return DecodeResult(values=np.zeros(payload.orig_len), total_loss=True,
                            received_fraction=0.0)
    coeff_mask = np.repeat(mask, fs)
    scaled = np.where(coeff_mask, payload.coeffs, 0.0) * (n / (kept * fs))
    restored = fwht(scaled) * sign_diagonal(payload.sign_seed, n)
    return DecodeResult(values=restored[: payload.orig_len], total_loss=False,
                        received_fraction=kept / count)


def xor_encode(fragments: Sequence[bytes], group_size: int) -> list[bytes]:
    """One bytewise parity per group of ``group_size`` data fragments."""
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    if not fragments:
        return []
    width = len(fragments[0])
    if any(len(f) != width for f in fragments):
        raise ValueError("fragments must have equal length")
    parities = []
    for start in range(0, len(fragments), group_size):
        acc = np.zeros(width, dtype=np.uint8)
        for frag in fragments[start:start + group_size]:
            acc ^= np.frombuffer(frag, dtype=np.uint8)
        parities.append(acc.tobytes())
    return parities


def xor_recover(
    fragments: Sequence[Optional[bytes]],
    parities: Sequence[Optional[bytes]],
    group_size: int,
    width: int,
) -> tuple[list[bytes], list[int]]:
    """Rebuild single-loss groups; returns (fragments, unrecovered indices).

    Unrecoverable fragments (two or more losses in a group, or a loss whose
    parity also vanished) come back zero-filled and are reported as residual
    loss.
    """
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    restored: list[bytes] = []
    residual: list[int] = []
    zero = bytes(width)
    for gi in range(0, len(fragments), group_size):
        group = list(fragments[gi:gi + group_size])
        missing = [i for i, f in enumerate(group) if f is None]
        parity = parities[gi // group_size] if gi // group_size < len(parities) else None
        if len(missing) == 1 and parity is not None:
            acc = np.frombuffer(parity, dtype=np.uint8).copy()
            for i, frag in enumerate(group):
                if i != missing[0]:
                    acc ^= np.frombuffer(frag, dtype=np.uint8)
            group[missing[0]] = acc.tobytes()
        else:
            for i in missing:
                group[i] = zero
                residual.append(gi + i)
        restored.extend(group)
    return restored, residual
