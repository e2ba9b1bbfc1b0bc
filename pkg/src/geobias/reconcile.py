"""Decision rules combining parsed-address and geocode evidence.

A user's parsed mailing-address fields and geocoder output are merged
into a single ground-truth ZIP plus optional coordinates. Coordinates are
only ever kept when the geocode was confident. Absence is a value: a row
with no usable ZIP, or confidently placed outside the U.S., resolves to
None rather than an error.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional

from .geometry import GeoPoint
from .ingest import CONFIDENT_ACCURACIES, UserInputRow

RULES = ("agree", "parsed_only", "geocode_only", "disagree")


@dataclass(frozen=True, slots=True)
class GroundTruth:
    zip: str
    coords: Optional[GeoPoint]
    rule_applied: str


def is_geocodable(row: UserInputRow) -> bool:
    """An address is worth geocoding if it pins down a unique place."""
    return row.parsed_zip is not None or (
        row.parsed_city is not None and row.parsed_state is not None
    )


def is_confident(row: UserInputRow) -> bool:
    return row.geo_accuracy in CONFIDENT_ACCURACIES


def resolve_ground_truth(row: UserInputRow) -> Optional[GroundTruth]:
    """Apply the reconciliation rules to one user row.

    Returns None when the geocoder confidently placed the address outside
    the U.S., or when neither source produced a ZIP. Otherwise the parsed
    ZIP wins any disagreement, and a geocode-only ZIP contributes
    coordinates only for street addresses.
    """
    confident = is_confident(row)
    if row.geo_in_us == "no" and confident:
        return None
    if row.parsed_zip is None and row.geo_zip is None:
        return None
    coords = None
    if confident and row.geo_lat is not None:
        coords = GeoPoint(row.geo_lat, row.geo_lon)
    if row.parsed_zip is not None and row.geo_zip is not None:
        if row.parsed_zip == row.geo_zip:
            return GroundTruth(row.parsed_zip, coords, "agree")
        return GroundTruth(row.parsed_zip, coords, "disagree")
    if row.parsed_zip is not None:
        # geocoding yielded nothing; these are frequently P.O. Boxes, so
        # any stray coordinates are ignored
        return GroundTruth(row.parsed_zip, None, "parsed_only")
    if row.address_type != "street_address":
        coords = None
    return GroundTruth(row.geo_zip, coords, "geocode_only")


def resolve_all(
    rows: Iterable[UserInputRow],
) -> tuple[dict[str, GroundTruth], Counter]:
    """Resolve every row; returns user_id -> GroundTruth plus rule counts.

    The counter includes the two absence categories (excluded_non_us,
    excluded_no_zip) alongside the four rules.
    """
    resolved: dict[str, GroundTruth] = {}
    counts: Counter = Counter({rule: 0 for rule in RULES})
    counts["excluded_non_us"] = 0
    counts["excluded_no_zip"] = 0
    for row in rows:
        gt = resolve_ground_truth(row)
        if gt is None:
            if row.geo_in_us == "no" and is_confident(row):
                counts["excluded_non_us"] += 1
            else:
                counts["excluded_no_zip"] += 1
            continue
        counts[gt.rule_applied] += 1
        resolved[row.user_id] = gt
    return resolved, counts
