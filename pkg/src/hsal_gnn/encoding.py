"""Positional encodings for an item's position inside its series."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SINUSOIDAL = "sinusoidal"
ROTARY = "rotary"
KINDS = (SINUSOIDAL, ROTARY)


class EncodingConfigError(ValueError):
    pass


def _check_dim(d: int) -> None:
    if d < 2 or d % 2:
        raise EncodingConfigError(f"embedding dimension must be even and >= 2, got {d}")


def frequencies(d: int) -> np.ndarray:
    """Angular rate 10000^(-2k/d) for k = 0 .. d/2 - 1."""
    _check_dim(d)
    k = np.arange(d // 2, dtype=np.float64)
    return 1.0 / np.power(10000.0, 2.0 * k / d)


def encode_sinusoidal(p, d: int) -> np.ndarray:
    """sin/cos interleaved encoding; a vector of positions gives one row each."""
    freq = frequencies(d)
    pos = np.asarray(p, dtype=np.float64)
    angle = pos[..., None] * freq
    out = np.empty(pos.shape + (d,))
    out[..., 0::2] = np.sin(angle)
    out[..., 1::2] = np.cos(angle)
    return out


def rotary_tables(p, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-column cos and sin multipliers so that rot(h) = h*cos + swap(h)*sin.

    ``swap`` maps each pair (a, b) to (-b, a).
    """
    freq = frequencies(d)
    angle = np.asarray(p, dtype=np.float64)[..., None] * freq
    cos = np.repeat(np.cos(angle), 2, axis=-1)
    sin = np.repeat(np.sin(angle), 2, axis=-1)
    return cos, sin


def swap_matrix(d: int) -> np.ndarray:
    """Matrix J with h @ J == swap(h)."""
    _check_dim(d)
    J = np.zeros((d, d))
    for k in range(d // 2):
        J[2 * k + 1, 2 * k] = -1.0
        J[2 * k, 2 * k + 1] = 1.0
    return J


def encode_rotary(h, p) -> np.ndarray:
    """Rotate consecutive pairs of ``h`` by angle p * 10000^(-2k/d)."""
    h = np.asarray(h, dtype=np.float64)
    d = h.shape[-1]
    cos, sin = rotary_tables(p, d)
    return h * cos + (h @ swap_matrix(d)) * sin


@dataclass(frozen=True)
class PositionalEncoder:
    kind: str = SINUSOIDAL
    d: int = 50

    def __post_init__(self):
        if self.kind not in KINDS:
            raise EncodingConfigError(f"positional kind must be one of {KINDS}, got {self.kind!r}")
        _check_dim(self.d)
