"""IPv4 parsing and interval-indexed block lookup (IP -> postal assignment)."""

from __future__ import annotations

import logging
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable, Optional

from .geometry import GeoPoint

log = logging.getLogger(__name__)

_DIGITS = frozenset("0123456789")


class OverlapError(ValueError):
    """Two blocks in the index cover a common address."""


def parse_ipv4(text: str) -> int:
    """Parse a dotted quad into an unsigned 32-bit integer.

    Octets are decimal, 0-255; leading zeros are permitted and read as
    decimal. Whitespace, signs, and anything but digits and dots are
    rejected.
    """
    parts = text.split(".")
    if len(parts) != 4:
        raise ValueError(f"invalid IPv4 address {text!r}: expected 4 octets")
    value = 0
    for part in parts:
        if not part or not set(part) <= _DIGITS:
            raise ValueError(f"invalid IPv4 address {text!r}: bad octet {part!r}")
        octet = int(part)
        if octet > 255:
            raise ValueError(f"invalid IPv4 address {text!r}: octet {octet} > 255")
        value = (value << 8) | octet
    return value


def format_ipv4(value: int) -> str:
    """Inverse of parse_ipv4 for canonical dotted quads."""
    if not 0 <= value <= 0xFFFFFFFF:
        raise ValueError(f"{value} is not a 32-bit address")
    return f"{value >> 24 & 255}.{value >> 16 & 255}.{value >> 8 & 255}.{value & 255}"


def parse_cidr(text: str) -> tuple[int, int]:
    """Expand "a.b.c.d/n" to an inclusive [start, end] address range.

    Host bits set in the base are masked off with a warning (real exports
    contain them).
    """
    base_text, sep, prefix_text = text.partition("/")
    if not sep:
        raise ValueError(f"invalid CIDR {text!r}: missing prefix length")
    if not prefix_text or not set(prefix_text) <= _DIGITS:
        raise ValueError(f"invalid CIDR {text!r}: bad prefix length")
    prefix = int(prefix_text)
    if prefix > 32:
        raise ValueError(f"invalid CIDR {text!r}: prefix length {prefix} > 32")
    base = parse_ipv4(base_text)
    size = 1 << (32 - prefix)
    start = base & ~(size - 1) & 0xFFFFFFFF
    if start != base:
        log.warning("CIDR %s has host bits set; masked to %s/%d", text, format_ipv4(start), prefix)
    return start, start + size - 1


@dataclass(frozen=True, slots=True)
class Block:
    start: int
    end: int
    network: str
    zip: Optional[str]
    point: Optional[GeoPoint]


@dataclass(frozen=True)
class GeoIpIndex:
    """Sorted, non-overlapping address blocks; immutable after build."""

    blocks: tuple[Block, ...]
    _starts: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.blocks)


def build_index(rows: Iterable) -> GeoIpIndex:
    """Build a lookup index from parsed GeoIP block rows.

    Rows need ``network`` (CIDR), optional ``postal_code``, and optional
    ``latitude``/``longitude`` attributes. Overlapping blocks are a hard
    error naming both offending networks: the audit depends on a unique
    assignment per address.
    """
    blocks = []
    for row in rows:
        start, end = parse_cidr(row.network)
        point = None
        if row.latitude is not None and row.longitude is not None:
            point = GeoPoint(row.latitude, row.longitude)
        blocks.append(Block(start, end, row.network, row.postal_code, point))
    blocks.sort(key=lambda b: (b.start, b.end))
    for prev, cur in zip(blocks, blocks[1:]):
        if cur.start <= prev.end:
            raise OverlapError(
                f"blocks {prev.network} and {cur.network} overlap"
            )
    return GeoIpIndex(tuple(blocks), tuple(b.start for b in blocks))


def lookup(index: GeoIpIndex, ip: int) -> Optional[tuple[str, Optional[GeoPoint]]]:
    """Return the covering block's (zip, point), or None.

    None when no block covers ip, or when the covering block carries no
    postal code (such users count as having no geolocated ZIP).
    """
    i = bisect_right(index._starts, ip) - 1
    if i < 0:
        return None
    block = index.blocks[i]
    if ip > block.end or block.zip is None:
        return None
    return block.zip, block.point
