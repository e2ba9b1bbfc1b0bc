"""Parsers for the four external data formats.

All loaders take a path or binary stream, transparently un-gzip input
detected by magic bytes, and validate rows into typed records. Tabular
loaders run under one of two policies: "strict" aborts on the first bad
row, "skip_invalid" collects bad rows into a report and keeps going.
Accepted rows are identical under both policies.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Literal, Optional, Sequence, Union

from ._fmt import fmt
from .geolocate import parse_cidr, parse_ipv4
from .geometry import GeoPoint, ZipPolygon

SQ_METERS_PER_SQ_MILE = 2_589_988.110336

Policy = Literal["strict", "skip_invalid"]

ADDRESS_TYPES = ("street_address", "po_box", "city_only", "unknown")
GEO_ACCURACIES = ("rooftop", "range_interpolated", "geometric_center", "approximate", "none")
TRI_STATES = ("yes", "no", "unknown")
CONFIDENT_ACCURACIES = ("rooftop", "range_interpolated")


class IngestError(ValueError):
    """Unrecoverable input problem (bad header, malformed file, strict-mode row)."""


@dataclass(frozen=True, slots=True)
class RowError:
    line: int
    message: str


@dataclass(frozen=True, slots=True)
class GeoIpBlockRow:
    network: str
    postal_code: Optional[str]
    latitude: Optional[float]
    longitude: Optional[float]


@dataclass(frozen=True, slots=True)
class DciInputRow:
    zip: str
    population: int
    no_hs_diploma_rate: float
    housing_vacancy_rate: float
    unemployment_rate: float
    poverty_rate: float
    median_income_ratio: float
    employment_change_pct: float
    establishments_change_pct: float
    density_category: Optional[int] = None


@dataclass(frozen=True, slots=True)
class UserInputRow:
    user_id: str
    modal_ip: str
    parsed_zip: Optional[str]
    parsed_city: Optional[str]
    parsed_state: Optional[str]
    address_type: str
    geo_zip: Optional[str]
    geo_lat: Optional[float]
    geo_lon: Optional[float]
    geo_accuracy: str
    geo_in_us: str


@dataclass(frozen=True, slots=True)
class RegistrationRow:
    user_id: str
    course_id: str
    zip: Optional[str]
    viewed: bool
    completed: bool
    certified: bool
    is_staff: bool


Source = Union[str, Path, IO[bytes]]


def _open_binary(source: Source) -> IO[bytes]:
    if isinstance(source, (str, Path)):
        raw: IO[bytes] = open(source, "rb")
    else:
        raw = source
    buffered = raw if isinstance(raw, io.BufferedReader) else io.BufferedReader(raw)  # type: ignore[arg-type]
    if buffered.peek(2)[:2] == b"\x1f\x8b":
        return gzip.open(buffered, "rb")  # type: ignore[return-value]
    return buffered


def _text_reader(source: Source) -> io.TextIOWrapper:
    return io.TextIOWrapper(_open_binary(source), encoding="utf-8", newline="")


def _zip5(value: str, field: str) -> str:
    if len(value) != 5 or not value.isascii() or not value.isdigit():
        raise ValueError(f"{field} {value!r} is not a 5-digit ZIP")
    return value


def _optional(value: str) -> Optional[str]:
    return value if value != "" else None


def _optional_float(value: str, field: str) -> Optional[float]:
    if value == "":
        return None
    try:
        return float(value)
    except ValueError:
        raise ValueError(f"{field} {value!r} is not numeric") from None


def _fraction(value: str, field: str) -> float:
    x = float(value)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{field} {x} outside [0, 1]")
    return x


def _boolean(value: str, field: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true"):
        return True
    if v in ("0", "false"):
        return False
    raise ValueError(f"{field} {value!r} is not a boolean")


def _check_header(got: Optional[Sequence[str]], want: Sequence[str], optional_tail: Sequence[str] = ()) -> Sequence[str]:
    if got is None:
        raise IngestError(f"missing header row; expected {','.join(want)}")
    got = [c.strip() for c in got]
    if list(got) == list(want):
        return got
    for k in range(1, len(optional_tail) + 1):
        if list(got) == list(want) + list(optional_tail[:k]):
            return got
    raise IngestError(f"header mismatch: expected {','.join(want)}, got {','.join(got)}")


def _run_rows(reader, header, parse_one, policy: Policy):
    rows = []
    errors: list[RowError] = []
    line = 1
    for raw in reader:
        line += 1
        if not raw or (len(raw) == 1 and raw[0].strip() == ""):
            continue
        if len(raw) != len(header):
            err = RowError(line, f"expected {len(header)} fields, got {len(raw)}")
        else:
            try:
                rows.append(parse_one(dict(zip(header, raw))))
                continue
            except ValueError as exc:
                err = RowError(line, str(exc))
        if policy == "strict":
            raise IngestError(f"line {err.line}: {err.message}")
        errors.append(err)
    return rows, errors


GEOIP_COLUMNS = ("network", "postal_code", "latitude", "longitude")


def _parse_geoip(rec: dict) -> GeoIpBlockRow:
    network = rec["network"].strip()
    parse_cidr(network)
    postal = _optional(rec["postal_code"].strip())
    if postal is not None:
        postal = _zip5(postal, "postal_code")
    lat = _optional_float(rec["latitude"].strip(), "latitude")
    lon = _optional_float(rec["longitude"].strip(), "longitude")
    if lat is not None and not -90.0 <= lat <= 90.0:
        raise ValueError(f"latitude {lat} outside [-90, 90]")
    if lon is not None and not -180.0 <= lon <= 180.0:
        raise ValueError(f"longitude {lon} outside [-180, 180]")
    return GeoIpBlockRow(network, postal, lat, lon)


def load_geoip_csv(source: Source, policy: Policy = "strict") -> tuple[list[GeoIpBlockRow], list[RowError]]:
    """Load the GeoIP block CSV (network,postal_code,latitude,longitude)."""
    with _text_reader(source) as text:
        reader = csv.reader(text)
        header = _check_header(next(reader, None), GEOIP_COLUMNS)
        return _run_rows(reader, header, _parse_geoip, policy)


DCI_COLUMNS = (
    "zip",
    "population",
    "no_hs_diploma_rate",
    "housing_vacancy_rate",
    "unemployment_rate",
    "poverty_rate",
    "median_income_ratio",
    "employment_change_pct",
    "establishments_change_pct",
)


def _parse_dci(rec: dict) -> DciInputRow:
    population = int(rec["population"])
    if population <= 0:
        raise ValueError(f"population {population} must be positive")
    ratio = float(rec["median_income_ratio"])
    if ratio < 0:
        raise ValueError(f"median_income_ratio {ratio} must be nonnegative")
    category: Optional[int] = None
    if rec.get("density_category", "") != "":
        category = int(rec["density_category"])
        if not 1 <= category <= 4:
            raise ValueError(f"density_category {category} outside 1-4")
    return DciInputRow(
        zip=_zip5(rec["zip"].strip(), "zip"),
        population=population,
        no_hs_diploma_rate=_fraction(rec["no_hs_diploma_rate"], "no_hs_diploma_rate"),
        housing_vacancy_rate=_fraction(rec["housing_vacancy_rate"], "housing_vacancy_rate"),
        unemployment_rate=_fraction(rec["unemployment_rate"], "unemployment_rate"),
        poverty_rate=_fraction(rec["poverty_rate"], "poverty_rate"),
        median_income_ratio=ratio,
        employment_change_pct=float(rec["employment_change_pct"]),
        establishments_change_pct=float(rec["establishments_change_pct"]),
        density_category=category,
    )


USER_COLUMNS = (
    "user_id",
    "modal_ip",
    "parsed_zip",
    "parsed_city",
    "parsed_state",
    "address_type",
    "geo_zip",
    "geo_lat",
    "geo_lon",
    "geo_accuracy",
    "geo_in_us",
)


def _parse_user(rec: dict) -> UserInputRow:
    user_id = rec["user_id"].strip()
    if not user_id:
        raise ValueError("user_id is empty")
    modal_ip = rec["modal_ip"].strip()
    parse_ipv4(modal_ip)
    parsed_zip = _optional(rec["parsed_zip"].strip())
    if parsed_zip is not None:
        parsed_zip = _zip5(parsed_zip, "parsed_zip")
    geo_zip = _optional(rec["geo_zip"].strip())
    if geo_zip is not None:
        geo_zip = _zip5(geo_zip, "geo_zip")
    address_type = rec["address_type"].strip() or "unknown"
    if address_type not in ADDRESS_TYPES:
        raise ValueError(f"address_type {address_type!r} not one of {ADDRESS_TYPES}")
    accuracy = rec["geo_accuracy"].strip() or "none"
    if accuracy not in GEO_ACCURACIES:
        raise ValueError(f"geo_accuracy {accuracy!r} not one of {GEO_ACCURACIES}")
    in_us = rec["geo_in_us"].strip() or "unknown"
    if in_us not in TRI_STATES:
        raise ValueError(f"geo_in_us {in_us!r} not one of {TRI_STATES}")
    lat = _optional_float(rec["geo_lat"].strip(), "geo_lat")
    lon = _optional_float(rec["geo_lon"].strip(), "geo_lon")
    if (lat is None) != (lon is None):
        raise ValueError("geo_lat and geo_lon must both be present or both absent")
    if lat is not None:
        GeoPoint(lat, lon)  # range check
    if accuracy in CONFIDENT_ACCURACIES and lat is None:
        raise ValueError(f"geo_accuracy {accuracy!r} requires coordinates")
    return UserInputRow(
        user_id=user_id,
        modal_ip=modal_ip,
        parsed_zip=parsed_zip,
        parsed_city=_optional(rec["parsed_city"].strip()),
        parsed_state=_optional(rec["parsed_state"].strip()),
        address_type=address_type,
        geo_zip=geo_zip,
        geo_lat=lat,
        geo_lon=lon,
        geo_accuracy=accuracy,
        geo_in_us=in_us,
    )


REGISTRATION_COLUMNS = ("user_id", "course_id", "zip", "viewed", "completed", "certified", "is_staff")


def _parse_registration(rec: dict) -> RegistrationRow:
    user_id = rec["user_id"].strip()
    course_id = rec["course_id"].strip()
    if not user_id or not course_id:
        raise ValueError("user_id and course_id must be non-empty")
    zip_code = _optional(rec["zip"].strip())
    if zip_code is not None:
        zip_code = _zip5(zip_code, "zip")
    return RegistrationRow(
        user_id=user_id,
        course_id=course_id,
        zip=zip_code,
        viewed=_boolean(rec["viewed"], "viewed"),
        completed=_boolean(rec["completed"], "completed"),
        certified=_boolean(rec["certified"], "certified"),
        is_staff=_boolean(rec["is_staff"], "is_staff"),
    )


_SCHEMAS = {
    "dci": (DCI_COLUMNS, ("density_category",), _parse_dci),
    "users": (USER_COLUMNS, (), _parse_user),
    "registrations": (REGISTRATION_COLUMNS, (), _parse_registration),
}


def load_table(source: Source, schema: str, policy: Policy = "strict"):
    """Load a typed CSV table. schema is one of dci / users / registrations."""
    try:
        columns, optional_tail, parse_one = _SCHEMAS[schema]
    except KeyError:
        raise ValueError(f"unknown schema {schema!r}; expected one of {sorted(_SCHEMAS)}") from None
    with _text_reader(source) as text:
        reader = csv.reader(text)
        header = _check_header(next(reader, None), columns, optional_tail)
        return _run_rows(reader, header, parse_one, policy)


def _ring_from_positions(positions: Sequence[Sequence[float]]) -> tuple[GeoPoint, ...]:
    # GeoJSON positions are [lon, lat]
    return tuple(GeoPoint(lat=p[1], lon=p[0]) for p in positions)


def load_zip_polygons(source: Source) -> dict[str, ZipPolygon]:
    """Load ZCTA polygons from a GeoJSON FeatureCollection.

    Areas arrive in square meters (Census convention) and are converted to
    square miles; the internal point comes from INTPTLAT/INTPTLON. A
    duplicate ZCTA5CE key is an error.
    """
    with _open_binary(source) as stream:
        try:
            doc = json.load(stream)
        except json.JSONDecodeError as exc:
            raise IngestError(f"malformed GeoJSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise IngestError("expected a GeoJSON FeatureCollection")
    out: dict[str, ZipPolygon] = {}
    for i, feature in enumerate(doc.get("features", [])):
        try:
            props = feature["properties"]
            zcta = str(props["ZCTA5CE"])
            geometry = feature["geometry"]
            gtype = geometry["type"]
            coords = geometry["coordinates"]
            if gtype == "Polygon":
                parts = [coords]
            elif gtype == "MultiPolygon":
                parts = coords
            else:
                raise IngestError(f"feature {zcta}: unsupported geometry type {gtype!r}")
            rings: list[tuple[GeoPoint, ...]] = []
            for part in parts:
                rings.extend(_ring_from_positions(ring) for ring in part)
            poly = ZipPolygon(
                zip=zcta,
                rings=tuple(rings),
                internal_point=GeoPoint(lat=float(props["INTPTLAT"]), lon=float(props["INTPTLON"])),
                land_area=float(props["ALAND"]) / SQ_METERS_PER_SQ_MILE,
                water_area=float(props["AWATER"]) / SQ_METERS_PER_SQ_MILE,
            )
        except IngestError:
            raise
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise IngestError(f"feature #{i}: {exc}") from exc
        if zcta in out:
            raise IngestError(f"duplicate ZCTA5CE key {zcta!r}")
        out[zcta] = poly
    return out


# ---------------------------------------------------------------------------
# Writers (round-trip counterparts; also used by the synthetic generator)
# ---------------------------------------------------------------------------


def _open_write(destination: Union[str, Path, IO[str]]):
    if isinstance(destination, (str, Path)):
        return open(destination, "w", encoding="utf-8", newline=""), True
    return destination, False


def _write_csv(destination, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    stream, owned = _open_write(destination)
    try:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if owned:
            stream.close()


def write_geoip_csv(destination, rows: Iterable[GeoIpBlockRow]) -> None:
    _write_csv(
        destination,
        GEOIP_COLUMNS,
        (
            (r.network, r.postal_code or "", fmt(r.latitude), fmt(r.longitude))
            for r in rows
        ),
    )


def write_dci_csv(destination, rows: Iterable[DciInputRow]) -> None:
    def encode(r: DciInputRow):
        return (
            r.zip,
            str(r.population),
            fmt(r.no_hs_diploma_rate),
            fmt(r.housing_vacancy_rate),
            fmt(r.unemployment_rate),
            fmt(r.poverty_rate),
            fmt(r.median_income_ratio),
            fmt(r.employment_change_pct),
            fmt(r.establishments_change_pct),
            "" if r.density_category is None else str(r.density_category),
        )

    _write_csv(destination, DCI_COLUMNS + ("density_category",), (encode(r) for r in rows))


def write_users_csv(destination, rows: Iterable[UserInputRow]) -> None:
    def encode(r: UserInputRow):
        return (
            r.user_id,
            r.modal_ip,
            r.parsed_zip or "",
            r.parsed_city or "",
            r.parsed_state or "",
            r.address_type,
            r.geo_zip or "",
            fmt(r.geo_lat),
            fmt(r.geo_lon),
            r.geo_accuracy,
            r.geo_in_us,
        )

    _write_csv(destination, USER_COLUMNS, (encode(r) for r in rows))


def write_registrations_csv(destination, rows: Iterable[RegistrationRow]) -> None:
    def encode(r: RegistrationRow):
        return (
            r.user_id,
            r.course_id,
            r.zip or "",
            "1" if r.viewed else "0",
            "1" if r.completed else "0",
            "1" if r.certified else "0",
            "1" if r.is_staff else "0",
        )

    _write_csv(destination, REGISTRATION_COLUMNS, (encode(r) for r in rows))


def write_zip_polygons_geojson(destination, polygons: Iterable[ZipPolygon]) -> None:
    """Write polygons back out in the same FeatureCollection layout we read."""
    features = []
    for poly in polygons:
        rings = [[[pt.lon, pt.lat] for pt in ring] for ring in poly.rings]
        features.append(
            {
                "type": "Feature",
                "properties": {
                    "ZCTA5CE": poly.zip,
                    "ALAND": poly.land_area * SQ_METERS_PER_SQ_MILE,
                    "AWATER": poly.water_area * SQ_METERS_PER_SQ_MILE,
                    "INTPTLAT": fmt(poly.internal_point.lat),
                    "INTPTLON": fmt(poly.internal_point.lon),
                },
                "geometry": {"type": "Polygon", "coordinates": rings},
            }
        )
    doc = {"type": "FeatureCollection", "features": features}
    stream, owned = _open_write(destination)
    try:
        json.dump(doc, stream, separators=(",", ":"), sort_keys=True)
    finally:
        if owned:
            stream.close()
