"""Per-user geolocation error and the aggregate bias statistics.

Error metrics follow two definitions: boundary distance (degrees from the
user's ground-truth coordinates to the nearest point of the geolocated
ZIP's polygon, 0 on exact match) and centroid distance (great-circle
miles between the two ZIPs' internal points). Summaries display boundary
distance in approximate miles (degrees x 50); raw degrees are kept on the
per-user records.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .dci import TIERS, DciScore, sub_tier_of
from .geometry import (
    ZipPolygon,
    boundary_distance_degrees,
    degrees_to_approx_miles,
    haversine_miles,
    point_in_polygon,
)
from .reconcile import GroundTruth

PROPERTIES = ("population", "area", "density", "dci")
SCHEMES = ("deciles", "quintiles", "tiers", "sub_tiers")

_QUANTILE_SCHEMES = {"deciles": 10, "quintiles": 5}
_FIXED_EDGES = {"tiers": (20.0, 40.0, 60.0, 80.0), "sub_tiers": tuple(float(x) for x in range(10, 100, 10))}


class UnresolvableZip(Exception):
    """A ZIP with no polygon or no DCI score; the user is excluded, not an error."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True, slots=True)
class ZipProps:
    dci: float
    tier: str
    population: int
    total_area: float
    density: float

    @property
    def sub_tier(self) -> int:
        return sub_tier_of(self.dci)

    def value(self, prop: str) -> float:
        if prop == "population":
            return float(self.population)
        if prop == "area":
            return self.total_area
        if prop == "density":
            return self.density
        if prop == "dci":
            return self.dci
        raise ValueError(f"unknown property {prop!r}")


@dataclass(frozen=True, slots=True)
class UserAudit:
    user_id: str
    gt_zip: str
    mm_zip: str
    rule: str
    exact_match: bool
    boundary_distance: Optional[float]  # degrees
    centroid_distance: Optional[float]  # miles
    coords_in_gt_zip: Optional[bool]
    gt_props: ZipProps
    mm_props: ZipProps

    def error_miles(self, metric: str) -> Optional[float]:
        """The chosen error in display units (approx miles for boundary)."""
        if metric == "boundary":
            if self.boundary_distance is None:
                return None
            return degrees_to_approx_miles(self.boundary_distance)
        if metric == "centroid":
            return self.centroid_distance
        raise ValueError(f"unknown metric {metric!r}")


def zip_props(
    zip_code: str,
    polygons: Mapping[str, ZipPolygon],
    scores: Mapping[str, DciScore],
    side: str,
) -> ZipProps:
    poly = polygons.get(zip_code)
    if poly is None:
        raise UnresolvableZip(f"{side}_zip_no_polygon")
    score = scores.get(zip_code)
    if score is None:
        raise UnresolvableZip(f"{side}_zip_no_dci")
    return ZipProps(
        dci=score.dci,
        tier=score.tier,
        population=score.population,
        total_area=poly.total_area,
        density=score.population / poly.total_area,
    )


def audit_user(
    user_id: str,
    gt: GroundTruth,
    mm_zip: str,
    polygons: Mapping[str, ZipPolygon],
    scores: Mapping[str, DciScore],
) -> UserAudit:
    """Compute both error metrics for one user.

    Raises UnresolvableZip when either ZIP lacks a polygon or a DCI score;
    callers count these as exclusions.
    """
    gt_props = zip_props(gt.zip, polygons, scores, "gt")
    mm_props = zip_props(mm_zip, polygons, scores, "mm")
    coords_in_gt = (
        point_in_polygon(gt.coords, polygons[gt.zip]) if gt.coords is not None else None
    )
    if gt.zip == mm_zip:
        boundary: Optional[float] = 0.0
        centroid: Optional[float] = 0.0
        exact = True
    else:
        exact = False
        boundary = (
            boundary_distance_degrees(gt.coords, polygons[mm_zip])
            if gt.coords is not None
            else None
        )
        centroid = haversine_miles(
            polygons[gt.zip].internal_point, polygons[mm_zip].internal_point
        )
    return UserAudit(
        user_id=user_id,
        gt_zip=gt.zip,
        mm_zip=mm_zip,
        rule=gt.rule_applied,
        exact_match=exact,
        boundary_distance=boundary,
        centroid_distance=centroid,
        coords_in_gt_zip=coords_in_gt,
        gt_props=gt_props,
        mm_props=mm_props,
    )


@dataclass(frozen=True)
class BinSpec:
    property: str
    scheme: str
    edges: tuple[float, ...]  # interior edges, ascending; membership left-closed
    top_label: float  # display upper bound of the last bin

    def __post_init__(self) -> None:
        if self.property not in PROPERTIES:
            raise ValueError(f"unknown property {self.property!r}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.scheme in _FIXED_EDGES and self.property != "dci":
            raise ValueError(f"scheme {self.scheme!r} is only valid for dci")
        if any(a >= b for a, b in zip(self.edges, self.edges[1:])):
            raise ValueError("bin edges must be strictly ascending")

    @property
    def n_bins(self) -> int:
        return len(self.edges) + 1

    def bin_index(self, value: float) -> int:
        return bisect_right(self.edges, value)

    def labels(self) -> tuple[str, ...]:
        if self.scheme == "tiers":
            return TIERS
        if self.scheme == "sub_tiers":
            return tuple(str(i) for i in range(1, 11))
        uppers = self.edges + (self.top_label,)
        return tuple(format(u, "g") for u in uppers)

    def upper_bounds(self) -> tuple[float, ...]:
        return self.edges + (self.top_label,)


def make_bin_edges(values: Sequence[float], property: str, scheme: str) -> BinSpec:
    """Build a BinSpec over a value universe.

    Quantile schemes cut at linearly interpolated order statistics
    (10%..90% or 20%..80%); tier schemes use the fixed DCI bands and take
    values only for the top display label.
    """
    if len(values) == 0:
        raise ValueError("no values to bin")
    arr = np.asarray(values, dtype=float)
    top = float(arr.max())
    if scheme in _FIXED_EDGES:
        return BinSpec(property, scheme, _FIXED_EDGES[scheme], 100.0)
    n_bins = _QUANTILE_SCHEMES[scheme]
    distinct = np.unique(arr)
    if distinct.size < n_bins:
        raise ValueError(
            f"{scheme} need at least {n_bins} distinct values, got {distinct.size}"
        )
    probs = np.arange(1, n_bins) / n_bins
    edges = np.quantile(arr, probs, method="linear")
    return BinSpec(property, scheme, tuple(float(e) for e in edges), top)


@dataclass(frozen=True, slots=True)
class BinSummary:
    label: str
    upper_bound: float
    n_users: int
    pct_exact_match: Optional[float]
    geo_mean_error: Optional[float]
    geo_sd_error: Optional[float]


def _binned_errors(
    audits: Iterable[UserAudit], spec: BinSpec, metric: str
) -> list[list[float]]:
    """Bucket display-unit errors by the ground-truth ZIP's property value."""
    bins: list[list[float]] = [[] for _ in range(spec.n_bins)]
    for audit in audits:
        err = audit.error_miles(metric)
        if err is None:
            continue
        bins[spec.bin_index(audit.gt_props.value(spec.property))].append(err)
    return bins


def summarize_bins(
    audits: Iterable[UserAudit], spec: BinSpec, metric: str = "boundary"
) -> list[BinSummary]:
    """Per-bin exact-match rate and log-space error summary (Table-3 shape).

    The geometric mean and spread are taken over strictly positive errors
    only; an all-match bin reports 100% and no geo fields. Users without
    the chosen error metric are excluded (callers can count them as the
    difference against the audit total).
    """
    out = []
    labels = spec.labels()
    uppers = spec.upper_bounds()
    for i, errors in enumerate(_binned_errors(audits, spec, metric)):
        if not errors:
            out.append(BinSummary(labels[i], uppers[i], 0, None, None, None))
            continue
        n = len(errors)
        positives = np.log([e for e in errors if e > 0.0])
        pct = 100.0 * (n - positives.size) / n
        geo_mean = float(np.exp(positives.mean())) if positives.size else None
        geo_sd = (
            float(np.exp(positives.std(ddof=1))) if positives.size >= 2 else None
        )
        out.append(BinSummary(labels[i], uppers[i], n, pct, geo_mean, geo_sd))
    return out


@dataclass(frozen=True, slots=True)
class QuantileRow:
    label: str
    upper_bound: float
    n_users: int
    quantiles: tuple[float, ...]


DEFAULT_QUANTILE_PROBS = tuple(p / 100.0 for p in range(10, 100, 10))


def error_quantiles(
    audits: Iterable[UserAudit],
    spec: BinSpec,
    probs: Sequence[float] = DEFAULT_QUANTILE_PROBS,
    metric: str = "boundary",
) -> list[QuantileRow]:
    """Linear-interpolation error quantiles per bin; zeros included."""
    out = []
    labels = spec.labels()
    uppers = spec.upper_bounds()
    for i, errors in enumerate(_binned_errors(audits, spec, metric)):
        if not errors:
            continue
        qs = np.quantile(np.asarray(errors), probs, method="linear")
        out.append(QuantileRow(labels[i], uppers[i], len(errors), tuple(float(q) for q in qs)))
    return out


@dataclass(frozen=True)
class TransitionMatrix:
    property: str
    scheme: str
    labels: tuple[str, ...]
    cells: tuple[tuple[float, ...], ...]  # rows: ground-truth level, cols: geolocated
    normalization: str

    @property
    def total(self) -> float:
        return float(sum(sum(row) for row in self.cells))


def transition_matrix(
    audits: Iterable[UserAudit], spec: BinSpec, normalization: str = "none"
) -> TransitionMatrix:
    """Count users by (ground-truth level, geolocated level).

    Row normalization divides each row by its sum; all-zero rows are left
    as zeros.
    """
    if normalization not in ("none", "row"):
        raise ValueError(f"unknown normalization {normalization!r}")
    counts = np.zeros((spec.n_bins, spec.n_bins))
    for audit in audits:
        i = spec.bin_index(audit.gt_props.value(spec.property))
        j = spec.bin_index(audit.mm_props.value(spec.property))
        counts[i, j] += 1
    if normalization == "row":
        sums = counts.sum(axis=1, keepdims=True)
        counts = np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)
    return TransitionMatrix(
        property=spec.property,
        scheme=spec.scheme,
        labels=spec.labels(),
        cells=tuple(tuple(float(x) for x in row) for row in counts),
        normalization=normalization,
    )


@dataclass(frozen=True, slots=True)
class DciDifferenceRow:
    tier: str
    n_users: int
    median_abs_delta: float
    rms_delta: float


def dci_difference_stats(audits: Sequence[UserAudit]) -> list[DciDifferenceRow]:
    """Median |delta DCI| and RMS delta DCI per ground-truth tier, plus All."""
    deltas_by_tier: dict[str, list[float]] = {t: [] for t in TIERS}
    all_deltas: list[float] = []
    for audit in audits:
        d = audit.mm_props.dci - audit.gt_props.dci
        deltas_by_tier[audit.gt_props.tier].append(d)
        all_deltas.append(d)
    out = []
    for tier in TIERS + ("All",):
        deltas = all_deltas if tier == "All" else deltas_by_tier[tier]
        if not deltas:
            out.append(DciDifferenceRow(tier, 0, math.nan, math.nan))
            continue
        arr = np.asarray(deltas)
        out.append(
            DciDifferenceRow(
                tier,
                len(deltas),
                float(np.median(np.abs(arr))),
                float(np.sqrt(np.mean(arr**2))),
            )
        )
    return out


@dataclass(frozen=True, slots=True)
class TierRateRow:
    level: str
    population: int
    gt_users: int
    mm_users: int
    gt_rate: float  # users per 100,000 population
    mm_rate: float


@dataclass(frozen=True)
class TierRates:
    rows: tuple[TierRateRow, ...]
    gap_ratio_gt: Optional[float]
    gap_ratio_mm: Optional[float]
    gap_ratio_rel_change: Optional[float]
    gap_diff_gt: float
    gap_diff_mm: float
    gap_diff_rel_change: Optional[float]


def per_capita_rates(
    gt_counts: Mapping[str, int],
    mm_counts: Mapping[str, int],
    scores: Mapping[str, DciScore],
    level: str = "tier",
) -> list[TierRateRow]:
    """Users per 100,000 population at each DCI level, for both sources.

    The denominator is the total population of every scored ZIP in the
    level, whether or not it has users; count keys must all be scored.
    """
    if level == "tier":
        labels: tuple[str, ...] = TIERS
        of = lambda s: s.tier
    elif level == "sub_tier":
        labels = tuple(str(i) for i in range(1, 11))
        of = lambda s: str(s.sub_tier)
    else:
        raise ValueError(f"unknown level {level!r}")
    for source, counts in (("gt", gt_counts), ("mm", mm_counts)):
        missing = [z for z in counts if z not in scores]
        if missing:
            raise ValueError(f"{source} counts reference unscored ZIPs, e.g. {missing[0]!r}")
    population = {label: 0 for label in labels}
    gt_users = {label: 0 for label in labels}
    mm_users = {label: 0 for label in labels}
    for z, score in scores.items():
        population[of(score)] += score.population
    for z, c in gt_counts.items():
        gt_users[of(scores[z])] += c
    for z, c in mm_counts.items():
        mm_users[of(scores[z])] += c
    rows = []
    for label in labels:
        pop = population[label]
        if pop <= 0:
            raise ValueError(f"level {label!r} has zero population")
        rows.append(
            TierRateRow(
                level=label,
                population=pop,
                gt_users=gt_users[label],
                mm_users=mm_users[label],
                gt_rate=100_000.0 * gt_users[label] / pop,
                mm_rate=100_000.0 * mm_users[label] / pop,
            )
        )
    return rows


def per_capita_by_tier(
    gt_counts: Mapping[str, int],
    mm_counts: Mapping[str, int],
    scores: Mapping[str, DciScore],
) -> TierRates:
    """Tier rates plus the Prosperous/Distressed gap, two ways.

    The gap is computed both as a ratio of rates and as a difference of
    rates; the relative change compares ground-truth against geolocated
    (positive means geolocation understates the gap).
    """
    rows = per_capita_rates(gt_counts, mm_counts, scores, level="tier")
    prosperous = rows[0]
    distressed = rows[-1]

    def ratio(a: float, b: float) -> Optional[float]:
        return a / b if b > 0 else None

    gap_ratio_gt = ratio(prosperous.gt_rate, distressed.gt_rate)
    gap_ratio_mm = ratio(prosperous.mm_rate, distressed.mm_rate)
    gap_diff_gt = prosperous.gt_rate - distressed.gt_rate
    gap_diff_mm = prosperous.mm_rate - distressed.mm_rate
    return TierRates(
        rows=tuple(rows),
        gap_ratio_gt=gap_ratio_gt,
        gap_ratio_mm=gap_ratio_mm,
        gap_ratio_rel_change=(
            gap_ratio_gt / gap_ratio_mm - 1.0
            if gap_ratio_gt is not None and gap_ratio_mm not in (None, 0.0)
            else None
        ),
        gap_diff_gt=gap_diff_gt,
        gap_diff_mm=gap_diff_mm,
        gap_diff_rel_change=(gap_diff_gt / gap_diff_mm - 1.0 if gap_diff_mm != 0 else None),
    )


def run_audits(
    ground_truths: Mapping[str, GroundTruth],
    mm_zips: Mapping[str, str],
    polygons: Mapping[str, ZipPolygon],
    scores: Mapping[str, DciScore],
) -> tuple[list[UserAudit], Counter]:
    """Audit every user with both a ground truth and a geolocated ZIP.

    Returns the audits in sorted user order (bit-stable regardless of the
    mapping's iteration order) plus exclusion counts by reason.
    """
    audits = []
    exclusions: Counter = Counter()
    for user_id in sorted(ground_truths):
        gt = ground_truths[user_id]
        mm_zip = mm_zips.get(user_id)
        if mm_zip is None:
            exclusions["no_mm_zip"] += 1
            continue
        try:
            audits.append(audit_user(user_id, gt, mm_zip, polygons, scores))
        except UnresolvableZip as exc:
            exclusions[exc.reason] += 1
    return audits, exclusions
