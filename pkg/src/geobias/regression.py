"""Ordinary least squares with standard errors, plus the model recipes.

Fits go through a QR factorization (never an explicit inverse); the
(X'X)^-1 diagonal is recovered from the R factor. Exact fits report zero
standard errors and a degenerate flag instead of infinities. Model
recipes prepare the audit regressions: log error targets with the 0.1
shift, a 0/1 match indicator, and per-ZIP user counts, against DCI,
population in thousands, and log area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from .audit import UserAudit, ZipProps

MODELS = (
    "boundary",
    "boundary-nonzero",
    "centroid",
    "centroid-nonzero",
    "match",
    "gt-count",
    "mm-count",
)

REGRESSOR_ORDER = ("dci", "population", "ln_area")

# regressor kind tags drive semi-elasticity interpretation
REGRESSOR_KINDS = {"const": "const", "dci": "level", "population": "level", "ln_area": "log"}

ERROR_SHIFT = 0.1


class RankDeficiencyError(ValueError):
    """The design matrix has linearly dependent columns."""


@dataclass(frozen=True, slots=True)
class Coefficient:
    name: str
    coef: float
    std_err: float
    t: Optional[float]
    p: Optional[float]
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class OlsFit:
    coefficients: tuple[Coefficient, ...]
    n: int
    residual_variance: float
    degenerate_fit: bool

    def coef(self, name: str) -> Coefficient:
        for c in self.coefficients:
            if c.name == name:
                return c
        raise KeyError(name)


def ols_fit(
    X: np.ndarray,
    y: np.ndarray,
    names: Sequence[str],
    ci_level: float = 0.95,
) -> OlsFit:
    """Fit y = X b by least squares; X must already carry its constant column."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be 2-dimensional")
    n, k = X.shape
    if len(names) != k:
        raise ValueError(f"{k} design columns but {len(names)} names")
    if n <= k:
        raise ValueError(f"need more rows than columns, got n={n}, k={k}")
    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-10 * max(diag.max(), 1.0):
        raise RankDeficiencyError(f"design matrix is rank deficient (columns {list(names)})")
    coefs = np.linalg.solve(r, q.T @ y)
    residuals = y - X @ coefs
    rss = float(residuals @ residuals)
    dof = n - k
    # (X'X)^-1 = R^-1 R^-T, recovered from the factorization
    r_inv = np.linalg.solve(r, np.eye(k))
    xtx_inv_diag = (r_inv * r_inv).sum(axis=1)

    y_scale = float(y @ y)
    degenerate = rss <= 1e-12 * max(y_scale, 1.0)
    s2 = 0.0 if degenerate else rss / dof
    std_errs = np.sqrt(s2 * xtx_inv_diag)
    t_crit = float(stats.t.ppf(0.5 + ci_level / 2.0, dof))

    coefficients = []
    for name, b, se in zip(names, coefs, std_errs):
        if degenerate or se == 0.0:
            coefficients.append(Coefficient(name, float(b), 0.0, None, None, float(b), float(b)))
            continue
        t_stat = float(b / se)
        p = float(2.0 * stats.t.sf(abs(t_stat), dof))
        coefficients.append(
            Coefficient(
                name=name,
                coef=float(b),
                std_err=float(se),
                t=t_stat,
                p=p,
                ci_low=float(b - t_crit * se),
                ci_high=float(b + t_crit * se),
            )
        )
    return OlsFit(tuple(coefficients), n, s2, degenerate)


@dataclass(frozen=True)
class Design:
    names: tuple[str, ...]  # includes "const"
    X: np.ndarray
    y: np.ndarray
    target: str
    target_is_log: bool
    n_source_rows: int


def _user_design(
    audits: Sequence[UserAudit], metric: str, nonzero_only: bool
) -> Design:
    rows = []
    ys = []
    for a in audits:
        err = a.error_miles(metric)
        if err is None:
            continue
        if nonzero_only and err == 0.0:
            continue
        rows.append(_regressors(a.gt_props))
        ys.append(math.log(err + ERROR_SHIFT))
    target = f"ln_{metric}_error_plus_{ERROR_SHIFT}"
    return _assemble(rows, ys, target, True, len(audits))


def _match_design(audits: Sequence[UserAudit]) -> Design:
    rows = [_regressors(a.gt_props) for a in audits]
    ys = [1.0 if a.exact_match else 0.0 for a in audits]
    return _assemble(rows, ys, "exact_match", False, len(audits))


def _count_design(
    audits: Sequence[UserAudit], props_by_zip: Mapping[str, ZipProps], side: str
) -> Design:
    counts: dict[str, int] = {z: 0 for z in props_by_zip}
    for a in audits:
        z = a.gt_zip if side == "gt" else a.mm_zip
        counts[z] += 1
    zips = sorted(props_by_zip)
    rows = [_regressors(props_by_zip[z]) for z in zips]
    ys = [float(counts[z]) for z in zips]
    return _assemble(rows, ys, f"{side}_user_count", False, len(zips))


def _regressors(props: ZipProps) -> list[float]:
    if props.total_area <= 0:
        raise ValueError("nonpositive area")
    return [props.dci, props.population / 1000.0, math.log(props.total_area)]


def _assemble(rows, ys, target, target_is_log, n_source) -> Design:
    X = np.array([[1.0] + r for r in rows]) if rows else np.empty((0, 4))
    return Design(
        names=("const",) + REGRESSOR_ORDER,
        X=X,
        y=np.asarray(ys, dtype=float),
        target=target,
        target_is_log=target_is_log,
        n_source_rows=n_source,
    )


def prepare_regression_vars(
    audits: Sequence[UserAudit],
    model: str,
    props_by_zip: Optional[Mapping[str, ZipProps]] = None,
) -> Design:
    """Build the design for one of the named models.

    Per-user models take the audit records directly; the count models
    additionally need the property table for the ZIP universe (counts are
    zero for ZIPs without users).
    """
    if model == "boundary":
        return _user_design(audits, "boundary", False)
    if model == "boundary-nonzero":
        return _user_design(audits, "boundary", True)
    if model == "centroid":
        return _user_design(audits, "centroid", False)
    if model == "centroid-nonzero":
        return _user_design(audits, "centroid", True)
    if model == "match":
        return _match_design(audits)
    if model in ("gt-count", "mm-count"):
        if props_by_zip is None:
            raise ValueError(f"model {model!r} needs props_by_zip")
        return _count_design(audits, props_by_zip, model.split("-")[0])
    raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")


def nested_fits(design: Design, ci_level: float = 0.95) -> list[tuple[tuple[str, ...], OlsFit]]:
    """Fit const+dci, then add population, then ln_area (table structure).

    Rank-deficient stages are skipped (returned fits carry the regressors
    actually used); at least one stage must succeed.
    """
    out = []
    for upto in range(2, len(design.names) + 1):
        names = design.names[:upto]
        try:
            fit = ols_fit(design.X[:, :upto], design.y, names, ci_level)
        except RankDeficiencyError:
            continue
        out.append((names, fit))
    if not out:
        raise RankDeficiencyError("every nested stage was rank deficient")
    return out


@dataclass(frozen=True, slots=True)
class EffectRow:
    name: str
    kind: str  # level | log
    coef: float
    exact_effect: float
    approx_effect: float
    unit: str


def semielasticity_report(
    fit: OlsFit, target_is_log: bool, kinds: Mapping[str, str] = REGRESSOR_KINDS
) -> list[EffectRow]:
    """Interpret coefficients as percent or unit effects.

    Log target: a level regressor's coefficient b means an (e^b - 1)*100
    percent change per unit (b*100 is the small-coefficient
    approximation); a log regressor's means ((1.01)^b - 1)*100 percent
    per 1% increase. Level targets report effects in target units.
    """
    out = []
    for c in fit.coefficients:
        kind = kinds.get(c.name)
        if kind is None:
            raise ValueError(f"regressor {c.name!r} has no declared kind")
        if kind == "const":
            continue
        b = c.coef
        if target_is_log and kind == "level":
            out.append(
                EffectRow(c.name, kind, b, (math.exp(b) - 1.0) * 100.0, b * 100.0, "% per unit")
            )
        elif target_is_log and kind == "log":
            out.append(
                EffectRow(
                    c.name, kind, b, (math.exp(b * math.log(1.01)) - 1.0) * 100.0,
                    b, "% per 1% increase",
                )
            )
        elif kind == "level":
            out.append(EffectRow(c.name, kind, b, b, b, "target units per unit"))
        else:
            out.append(
                EffectRow(
                    c.name, kind, b, b * math.log(1.01), b / 100.0,
                    "target units per 1% increase",
                )
            )
    return out
