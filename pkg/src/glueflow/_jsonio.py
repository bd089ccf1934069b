"""Bit-exact float round-tripping for the JSON artifacts.

All real scalars in serialized systems/reports are written as C99 hex float
literals so that a reload reproduces the construction bit-for-bit.
"""

from __future__ import annotations

__all__ = ["fhex", "unfhex"]


def fhex(x: float) -> str:
    return float(x).hex()


def unfhex(s: str | float) -> float:
    # tolerate plain numbers so hand-edited files still load
    if isinstance(s, (int, float)):
        return float(s)
    return float.fromhex(s)
