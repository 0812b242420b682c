"""Deterministic seed derivation.

A single root seed fans out to per-stage / per-item seeds through splitmix64,
so independent pipeline stages never share RNG streams and every run is
reproducible from one integer.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> int:
    """One splitmix64 step: maps a 64-bit state to a well-mixed 64-bit value."""
    z = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _fnv1a(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def derive_seed(root: int, *labels: int | str) -> int:
    """Derive a child seed from ``root`` and a label path.

    String labels are hashed with FNV-1a; integer labels are used directly.
    Each step is ``splitmix64(state XOR label)``, so the derivation is
    order-sensitive and collision-resistant enough for stream separation.
    """
    state = splitmix64(int(root) & _MASK64)
    for label in labels:
        # int() folds numpy integer scalars, whose & would overflow C long
        key = _fnv1a(label) if isinstance(label, str) else (int(label) & _MASK64)
        state = splitmix64(state ^ key)
    return state
