"""Shared float-to-text rule for all tabular output (17 significant digits)."""

from __future__ import annotations

from typing import Optional


def fmt(value: Optional[float]) -> str:
    """Serialize a float (or None -> empty) with 17 significant digits."""
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return format(value, ".17g")
