"""Deterministic synthetic world with planted bias parameters.

A grid of square ZIP cells gets smoothly varying economic metrics, one
/24 address block per cell, and users whose observed IP either resolves
to their true cell (with a DCI-dependent probability) or to a decoy cell
drawn near their true location, preferring dense and prosperous cells.
Every latent draw lands in a truth sidecar so the whole pipeline can be
checked against planted parameters.

Randomness: numpy PCG64 seeded through SeedSequence((seed, stream)),
stream 0 for the world and 1 + user_index per user, so parallel
generation is reproducible for any thread count.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from ._fmt import fmt
from ._parallel import parallel_map_indexed
from .dci import DciScore, composite_dci
from .geolocate import format_ipv4
from .geometry import GeoPoint, ZipPolygon
from .ingest import DciInputRow, GeoIpBlockRow, RegistrationRow, UserInputRow

PRNG_DESCRIPTION = "numpy PCG64 via SeedSequence((seed, stream)); stream 0 = world, 1+i = user i"

GRID_ORIGIN_LAT = 32.0
GRID_ORIGIN_LON = -105.0
NOMINAL_SQMI_PER_CELL_DEG = 50.0  # display-consistent area scale for cell sides

SCENARIOS = (
    "agree_confident",
    "agree_unconfident",
    "parsed_only",
    "geocode_street",
    "geocode_nonstreet",
    "disagree",
    "excluded_non_us",
    "excluded_no_zip",
)

DEFAULT_RULE_MIX = {
    "agree_confident": 0.72,
    "agree_unconfident": 0.05,
    "parsed_only": 0.06,
    "geocode_street": 0.04,
    "geocode_nonstreet": 0.02,
    "disagree": 0.03,
    "excluded_non_us": 0.03,
    "excluded_no_zip": 0.05,
}


@dataclass(frozen=True)
class SynthConfig:
    grid_rows: int = 20
    grid_cols: int = 20
    cell_side_degrees: float = 0.1
    n_users: int = 10_000
    usage_beta: float = 0.01  # per-DCI-point log decrease in registration propensity
    match_base: float = 0.4
    match_dci_slope: float = 0.0  # per-DCI-point additive change to match probability
    error_sigma0: float = 0.3  # degrees
    error_dci_gamma: float = 0.0  # per-DCI-point log increase of error scale
    snap_prosperity_weight: float = 0.0  # misassignment preference toward low-DCI cells
    seed: int = 0
    rule_mix: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_RULE_MIX))
    n_courses: int = 25

    def __post_init__(self) -> None:
        if self.grid_rows * self.grid_cols < 2:
            raise ValueError("grid must have at least 2 cells")
        if self.cell_side_degrees <= 0:
            raise ValueError("cell side must be positive")
        if self.n_users < 0:
            raise ValueError("n_users must be nonnegative")
        if self.error_sigma0 <= 0:
            raise ValueError("error_sigma0 must be positive")
        if self.snap_prosperity_weight < 0:
            raise ValueError("snap_prosperity_weight must be nonnegative")
        unknown = set(self.rule_mix) - set(SCENARIOS)
        if unknown:
            raise ValueError(f"unknown rule-mix scenarios {sorted(unknown)}")
        total = sum(self.rule_mix.values())
        if total <= 0 or any(v < 0 for v in self.rule_mix.values()):
            raise ValueError("rule-mix weights must be nonnegative with a positive sum")


@dataclass(frozen=True)
class SynthWorld:
    config: SynthConfig
    polygons: dict[str, ZipPolygon]
    dci_rows: list[DciInputRow]
    geoip_rows: list[GeoIpBlockRow]
    scores: dict[str, DciScore]
    # per-cell arrays in cell-index order
    zips: tuple[str, ...]
    center_lat: np.ndarray
    center_lon: np.ndarray
    dci: np.ndarray
    population: np.ndarray
    density: np.ndarray
    block_base: np.ndarray  # first address of each cell's /24


@dataclass(frozen=True, slots=True)
class TruthRow:
    user_id: str
    scenario: str
    true_zip: str
    true_lat: float
    true_lon: float
    true_dci: float
    matched: bool
    observed_zip: str
    observed_ip: str
    sigma_degrees: float


def _cell_zip(idx: int) -> str:
    return f"{10000 + idx:05d}"


def generate_world(config: SynthConfig) -> SynthWorld:
    """Build the grid world: polygons, DCI metric rows, GeoIP blocks."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((config.seed, 0))))
    rows, cols, side = config.grid_rows, config.grid_cols, config.cell_side_degrees
    n = rows * cols
    r_idx, c_idx = np.divmod(np.arange(n), cols)
    # smooth diagonal prosperity gradient; 0 = most prosperous corner
    g = (r_idx + c_idx) / max(rows - 1 + cols - 1, 1)

    def noisy(base, scale, noise, lo=None, hi=None):
        x = base + scale * g + noise * rng.standard_normal(n)
        return np.clip(x, lo, hi)

    no_hs = noisy(0.05, 0.40, 0.03, 0.001, 0.999)
    vacancy = noisy(0.03, 0.30, 0.03, 0.001, 0.999)
    unemployment = noisy(0.02, 0.25, 0.02, 0.001, 0.999)
    poverty = noisy(0.05, 0.45, 0.03, 0.001, 0.999)
    income_ratio = noisy(1.60, -1.10, 0.06, 0.05)
    employment_change = 10.0 - 18.0 * g + 1.5 * rng.standard_normal(n)
    establishments_change = 8.0 - 14.0 * g + 1.2 * rng.standard_normal(n)
    population = np.exp(rng.uniform(np.log(2_000.0), np.log(60_000.0), n)).astype(int)

    cell_area = NOMINAL_SQMI_PER_CELL_DEG**2 * side**2
    density = population / cell_area
    quartiles = np.quantile(density, [0.25, 0.5, 0.75])

    dci_rows = []
    polygons = {}
    geoip_rows = []
    center_lat = GRID_ORIGIN_LAT + (r_idx + 0.5) * side
    center_lon = GRID_ORIGIN_LON + (c_idx + 0.5) * side
    block_base = (10 << 24) | (np.arange(n) << 8)
    for i in range(n):
        z = _cell_zip(i)
        dci_rows.append(
            DciInputRow(
                zip=z,
                population=int(population[i]),
                no_hs_diploma_rate=float(no_hs[i]),
                housing_vacancy_rate=float(vacancy[i]),
                unemployment_rate=float(unemployment[i]),
                poverty_rate=float(poverty[i]),
                median_income_ratio=float(income_ratio[i]),
                employment_change_pct=float(employment_change[i]),
                establishments_change_pct=float(establishments_change[i]),
                density_category=int(1 + np.searchsorted(quartiles, density[i])),
            )
        )
        lat_lo = GRID_ORIGIN_LAT + r_idx[i] * side
        lon_lo = GRID_ORIGIN_LON + c_idx[i] * side
        ring = (
            GeoPoint(lat_lo, lon_lo),
            GeoPoint(lat_lo, lon_lo + side),
            GeoPoint(lat_lo + side, lon_lo + side),
            GeoPoint(lat_lo + side, lon_lo),
            GeoPoint(lat_lo, lon_lo),
        )
        polygons[z] = ZipPolygon(
            zip=z,
            rings=(ring,),
            internal_point=GeoPoint(float(center_lat[i]), float(center_lon[i])),
            land_area=0.9 * cell_area,
            water_area=0.1 * cell_area,
        )
        geoip_rows.append(
            GeoIpBlockRow(
                network=f"{format_ipv4(int(block_base[i]))}/24",
                postal_code=z,
                latitude=float(center_lat[i]),
                longitude=float(center_lon[i]),
            )
        )
    scores = composite_dci(dci_rows)
    zips = tuple(_cell_zip(i) for i in range(n))
    return SynthWorld(
        config=config,
        polygons=polygons,
        dci_rows=dci_rows,
        geoip_rows=geoip_rows,
        scores=scores,
        zips=zips,
        center_lat=center_lat,
        center_lon=center_lon,
        dci=np.array([scores[z].dci for z in zips]),
        population=population.astype(float),
        density=np.asarray(density, dtype=float),
        block_base=block_base.astype(np.int64),
    )


def _stream_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, stream, index))))


def _pick(rng: np.random.Generator, cumulative: np.ndarray) -> int:
    return int(np.searchsorted(cumulative, rng.random(), side="right"))


def generate_users(
    world: SynthWorld, config: Optional[SynthConfig] = None
) -> tuple[list[UserInputRow], list[TruthRow]]:
    """Draw users: true location, survey scenario, observed IP.

    The observed IP comes from the true cell's block with probability
    clamp(match_base + match_dci_slope * DCI), else from a decoy cell
    weighted by density * exp(-snap_weight * DCI) * a Gaussian kernel of
    scale sigma0 * exp(gamma * DCI) around the true point.
    """
    config = config or world.config
    n_cells = len(world.zips)
    usage = world.population * np.exp(-config.usage_beta * world.dci)
    usage_cum = np.cumsum(usage / usage.sum())
    scenario_names = tuple(s for s in SCENARIOS if config.rule_mix.get(s, 0.0) > 0)
    weights = np.array([config.rule_mix[s] for s in scenario_names])
    scenario_cum = np.cumsum(weights / weights.sum())
    static_decoy = world.density * np.exp(-config.snap_prosperity_weight * world.dci)
    side = config.cell_side_degrees
    rows, cols = config.grid_rows, config.grid_cols

    def one(i: int) -> tuple[UserInputRow, TruthRow]:
        rng = _user_rng(config.seed, i)
        cell = _pick(rng, usage_cum)
        true_zip = world.zips[cell]
        r, c = divmod(cell, cols)
        lat = GRID_ORIGIN_LAT + (r + rng.random()) * side
        lon = GRID_ORIGIN_LON + (c + rng.random()) * side
        dci = float(world.dci[cell])
        scenario = scenario_names[_pick(rng, scenario_cum)]

        p_match = float(np.clip(config.match_base + config.match_dci_slope * dci, 0.0, 1.0))
        matched = bool(rng.random() < p_match)
        sigma = config.error_sigma0 * float(np.exp(config.error_dci_gamma * dci))
        if matched:
            observed = cell
        else:
            d2 = (world.center_lat - lat) ** 2 + (world.center_lon - lon) ** 2
            w = static_decoy * np.exp(-d2 / (2.0 * sigma * sigma))
            w[cell] = 0.0
            total = w.sum()
            if total <= 0:  # kernel underflow far from everything; fall back flat
                w = static_decoy.copy()
                w[cell] = 0.0
                total = w.sum()
            observed = _pick(rng, np.cumsum(w / total))
        observed_ip = format_ipv4(int(world.block_base[observed]) + int(rng.integers(0, 256)))
        observed_zip = world.zips[observed]

        neighbor = world.zips[(cell + 1) % n_cells]
        parsed_zip = city = state = geo_zip = None
        geo_lat = geo_lon = None
        address_type = "unknown"
        accuracy = "none"
        in_us = "yes"
        if scenario == "agree_confident":
            parsed_zip = geo_zip = true_zip
            address_type = "street_address"
            accuracy = "rooftop"
            geo_lat, geo_lon = lat, lon
        elif scenario == "agree_unconfident":
            parsed_zip = geo_zip = true_zip
            address_type = "street_address"
            accuracy = "approximate"
            geo_lat, geo_lon = lat, lon
        elif scenario == "parsed_only":
            parsed_zip = true_zip
            address_type = "po_box"
        elif scenario == "geocode_street":
            city, state = "Gridtown", "TS"
            geo_zip = true_zip
            address_type = "street_address"
            accuracy = "range_interpolated"
            geo_lat, geo_lon = lat, lon
        elif scenario == "geocode_nonstreet":
            city, state = "Gridtown", "TS"
            geo_zip = true_zip
            address_type = "city_only"
            accuracy = "rooftop"
            geo_lat, geo_lon = lat, lon
        elif scenario == "disagree":
            parsed_zip = true_zip
            geo_zip = neighbor
            address_type = "street_address"
            accuracy = "rooftop"
            geo_lat, geo_lon = lat, lon
        elif scenario == "excluded_non_us":
            parsed_zip = true_zip
            address_type = "street_address"
            accuracy = "rooftop"
            geo_lat, geo_lon = 51.5, -0.12
            in_us = "no"
        else:  # excluded_no_zip
            city = "Gridtown"
            address_type = "city_only"
        user = UserInputRow(
            user_id=f"u{i:07d}",
            modal_ip=observed_ip,
            parsed_zip=parsed_zip,
            parsed_city=city,
            parsed_state=state,
            address_type=address_type,
            geo_zip=geo_zip,
            geo_lat=geo_lat,
            geo_lon=geo_lon,
            geo_accuracy=accuracy,
            geo_in_us=in_us,
        )
        truth = TruthRow(
            user_id=user.user_id,
            scenario=scenario,
            true_zip=true_zip,
            true_lat=lat,
            true_lon=lon,
            true_dci=dci,
            matched=matched,
            observed_zip=observed_zip,
            observed_ip=observed_ip,
            sigma_degrees=sigma,
        )
        return user, truth

    pairs = parallel_map_indexed(one, config.n_users)
    return [u for u, _ in pairs], [t for _, t in pairs]


def generate_registrations(
    world: SynthWorld, truths: Sequence[TruthRow], config: Optional[SynthConfig] = None
) -> list[RegistrationRow]:
    """Derive course registrations from generated users.

    Course choice follows a fixed popularity curve independent of ZIP, so
    the expected ZIP x course matrix is rank one: a planted
    unidimensional signal for the psychometrics path. The ZIP recorded on
    a registration is the observed (geolocated) one.
    """
    config = config or world.config
    popularity = 1.0 / np.arange(1, config.n_courses + 1)  # Zipf-ish curve
    course_cum = np.cumsum(popularity / popularity.sum())

    def one(i: int) -> list[RegistrationRow]:
        rng = _user_rng(-config.seed - 1, i)  # separate stream family from users
        truth = truths[i]
        n_regs = 1 + int(rng.integers(0, 3))
        courses = {f"course{_pick(rng, course_cum):03d}" for _ in range(n_regs)}
        is_staff = bool(rng.random() < 0.005)
        out = []
        for course in sorted(courses):
            completed = bool(rng.random() < 0.07)
            certified = bool(completed and rng.random() < 0.6)
            viewed = bool(rng.random() < 0.8)
            out.append(
                RegistrationRow(
                    user_id=truth.user_id,
                    course_id=course,
                    zip=truth.observed_zip,
                    viewed=viewed,
                    completed=completed,
                    certified=certified,
                    is_staff=is_staff,
                )
            )
        return out

    nested = parallel_map_indexed(one, len(truths))
    return [row for group in nested for row in group]


TRUTH_COLUMNS = (
    "user_id",
    "scenario",
    "true_zip",
    "true_lat",
    "true_lon",
    "true_dci",
    "matched",
    "observed_zip",
    "observed_ip",
    "sigma_degrees",
)


def write_truth_csv(destination: Union[str, IO[str]], rows: Iterable[TruthRow]) -> None:
    owned = isinstance(destination, str)
    stream = open(destination, "w", encoding="utf-8", newline="") if owned else destination
    try:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(TRUTH_COLUMNS)
        for t in rows:
            writer.writerow(
                (
                    t.user_id,
                    t.scenario,
                    t.true_zip,
                    fmt(t.true_lat),
                    fmt(t.true_lon),
                    fmt(t.true_dci),
                    "1" if t.matched else "0",
                    t.observed_zip,
                    t.observed_ip,
                    fmt(t.sigma_degrees),
                )
            )
    finally:
        if owned:
            stream.close()
