"""Composite economic distress index: rank-average-rerank over seven metrics.

Each metric is fractionally ranked (1 = best for that metric's
orientation, ties get the mean of tied positions), the seven ranks are
averaged per ZIP, the averages are re-ranked fractionally, and the final
rank is scaled to [0, 100]. Re-ranking before scaling is what guarantees
the exactly uniform 0-100 distribution whenever the averages are
distinct; scaling raw averaged ranks would not.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .geometry import ZipPolygon
from .ingest import DciInputRow

TIERS = ("Prosperous", "Comfortable", "MidTier", "AtRisk", "Distressed")

# (attribute, higher_is_worse); orientation is fixed by metric meaning
METRIC_ORIENTATIONS: tuple[tuple[str, bool], ...] = (
    ("no_hs_diploma_rate", True),
    ("housing_vacancy_rate", True),
    ("unemployment_rate", True),
    ("poverty_rate", True),
    ("median_income_ratio", False),
    ("employment_change_pct", False),
    ("establishments_change_pct", False),
)

METRIC_NAMES = tuple(name for name, _ in METRIC_ORIENTATIONS)


@dataclass(frozen=True, slots=True)
class DciScore:
    zip: str
    dci: float
    tier: str
    sub_tier: int
    population: int
    density: Optional[float] = None
    density_category: Optional[int] = None


def tier_of(dci: float) -> str:
    """Tier bands are left-closed, with 100 folded into the top band."""
    if not 0.0 <= dci <= 100.0:
        raise ValueError(f"dci {dci} outside [0, 100]")
    if dci == 100.0:
        return TIERS[4]
    return TIERS[int(dci // 20.0)]


def sub_tier_of(dci: float) -> int:
    """Ten bands defined analogously to the tiers; 1 (best) through 10."""
    if not 0.0 <= dci <= 100.0:
        raise ValueError(f"dci {dci} outside [0, 100]")
    return min(int(dci // 10.0) + 1, 10)


def density_of(population: int, poly: ZipPolygon) -> float:
    """People per square mile over the combined land + water area."""
    if poly.total_area <= 0:
        raise ValueError(f"zip {poly.zip} has zero total area")
    return population / poly.total_area


def composite_dci(rows: Sequence[DciInputRow]) -> dict[str, DciScore]:
    """Build composite scores for a table of ZIP metric rows.

    Requires at least two rows and unique ZIPs. Density is left unset
    here: it needs polygon areas, which this table does not carry (see
    attach_density).
    """
    n = len(rows)
    if n < 2:
        raise ValueError(f"need at least 2 rows to rank, got {n}")
    zips = [r.zip for r in rows]
    if len(set(zips)) != n:
        seen: set[str] = set()
        for z in zips:
            if z in seen:
                raise ValueError(f"duplicate ZIP {z!r} in metric table")
            seen.add(z)

    rank_sum = np.zeros(n)
    for name, higher_is_worse in METRIC_ORIENTATIONS:
        values = np.array([getattr(r, name) for r in rows], dtype=float)
        # rankdata ranks ascending; flip sign so rank 1 is always "best"
        rank_sum += rankdata(values if higher_is_worse else -values, method="average")
    final_rank = rankdata(rank_sum / len(METRIC_ORIENTATIONS), method="average")
    dcis = 100.0 * (final_rank - 1.0) / (n - 1.0)

    out: dict[str, DciScore] = {}
    for row, dci in zip(rows, dcis):
        value = float(dci)
        out[row.zip] = DciScore(
            zip=row.zip,
            dci=value,
            tier=tier_of(value),
            sub_tier=sub_tier_of(value),
            population=row.population,
            density_category=row.density_category,
        )
    return out


def attach_density(
    scores: Mapping[str, DciScore], polygons: Mapping[str, ZipPolygon]
) -> dict[str, DciScore]:
    """Fill density for every score whose ZIP has a polygon."""
    out = {}
    for z, score in scores.items():
        poly = polygons.get(z)
        if poly is not None:
            score = replace(score, density=density_of(score.population, poly))
        out[z] = score
    return out
