"""ZIP x course engagement matrices, reliability, and principal factors.

The engagement model treats ZIP codes as test-takers and courses as
items; a cell is the per-million-residents count of registrations (or
completions, or certifications). Factor extraction is one-step principal
axis on the item correlation matrix, with optional re-estimation
iterations, regression-method scores, and a deterministic sign
convention.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .dci import DciScore
from .ingest import RegistrationRow

METRICS = ("registrations", "completions", "certifications")
TRANSFORMS = ("raw", "dichotomized", "shifted_log")
SERIES_TRANSFORMS = ("identity", "log", "log_plus_1", "log_plus_0.01")


@dataclass(frozen=True)
class EngagementMatrix:
    zips: tuple[str, ...]
    courses: tuple[str, ...]
    values: np.ndarray  # shape (n_zips, n_courses), subjects x items
    metric: str
    transform: str

    @property
    def n_subjects(self) -> int:
        return len(self.zips)

    @property
    def n_items(self) -> int:
        return len(self.courses)


def build_matrix(
    registrations: Iterable[RegistrationRow],
    scores: Mapping[str, DciScore],
    metric: str = "registrations",
) -> EngagementMatrix:
    """Count engagement per million ZIP residents.

    Staff rows, rows without a ZIP, and rows whose ZIP has no score (no
    population) are skipped. ZIPs with no registrations at all are
    excluded from the subject set regardless of metric, so completion and
    certification matrices share the registration matrix's subjects.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    rows = [
        r
        for r in registrations
        if not r.is_staff and r.zip is not None and r.zip in scores
    ]
    zips = tuple(sorted({r.zip for r in rows}))
    courses = tuple(sorted({r.course_id for r in rows}))
    zip_index = {z: i for i, z in enumerate(zips)}
    course_index = {c: j for j, c in enumerate(courses)}
    counts = np.zeros((len(zips), len(courses)))
    for r in rows:
        if metric == "completions" and not r.completed:
            continue
        if metric == "certifications" and not r.certified:
            continue
        counts[zip_index[r.zip], course_index[r.course_id]] += 1
    populations = np.array([scores[z].population for z in zips], dtype=float)
    values = 1e6 * counts / populations[:, None] if len(zips) else counts
    return EngagementMatrix(zips, courses, values, metric, "raw")


def transform(matrix: EngagementMatrix, kind: str) -> EngagementMatrix:
    """Dichotomize (any engagement -> 1) or take the shifted log ln(r + 1)."""
    if matrix.transform != "raw":
        raise ValueError(f"matrix already transformed ({matrix.transform})")
    if kind == "raw":
        return matrix
    if kind == "dichotomized":
        values = (matrix.values > 0).astype(float)
    elif kind == "shifted_log":
        values = np.log1p(matrix.values)
    else:
        raise ValueError(f"unknown transform {kind!r}; expected one of {TRANSFORMS}")
    return EngagementMatrix(matrix.zips, matrix.courses, values, matrix.metric, kind)


def cronbach_alpha(matrix: EngagementMatrix) -> float:
    """Internal-consistency reliability over items (sample variances)."""
    n, p = matrix.values.shape
    if p < 2:
        raise ValueError(f"need at least 2 items, got {p}")
    if n < 2:
        raise ValueError(f"need at least 2 subjects, got {n}")
    item_vars = matrix.values.var(axis=0, ddof=1)
    total_var = matrix.values.sum(axis=1).var(ddof=1)
    if total_var <= 0:
        raise ValueError("total-score variance is zero; alpha undefined")
    return float(p / (p - 1) * (1.0 - item_vars.sum() / total_var))


def spearman_brown(alpha: float, p_items: int, target_items: int) -> float:
    """Prophesy reliability at a different test length."""
    if p_items < 1 or target_items < 1:
        raise ValueError("item counts must be at least 1")
    denom = p_items - alpha * (p_items - 1)
    if denom <= 0:
        raise ValueError(
            f"alpha {alpha} at or above the p/(p-1) boundary for {p_items} items"
        )
    r1 = alpha / denom
    return target_items * r1 / (1.0 + (target_items - 1) * r1)


@dataclass(frozen=True)
class ReliabilityReport:
    alpha: float
    n_items: int
    prophesied: dict[int, float]


def reliability_report(
    matrix: EngagementMatrix, targets: Sequence[int] = (20,)
) -> ReliabilityReport:
    alpha = cronbach_alpha(matrix)
    prophesied = {t: spearman_brown(alpha, matrix.n_items, t) for t in targets}
    prophesied[matrix.n_items] = alpha
    return ReliabilityReport(alpha, matrix.n_items, prophesied)


def item_test_correlations(
    matrix: EngagementMatrix,
) -> tuple[list[Optional[float]], list[str]]:
    """Pearson r of each item against the total score (item included).

    Zero-variance items get None and are listed in the flags.
    """
    values = matrix.values
    total = values.sum(axis=1)
    total_sd = total.std(ddof=1)
    out: list[Optional[float]] = []
    flagged: list[str] = []
    for j, course in enumerate(matrix.courses):
        item = values[:, j]
        item_sd = item.std(ddof=1)
        if item_sd == 0 or total_sd == 0:
            out.append(None)
            flagged.append(course)
            continue
        cov = np.cov(item, total, ddof=1)[0, 1]
        out.append(float(cov / (item_sd * total_sd)))
    return out, flagged


@dataclass(frozen=True)
class FactorSolution:
    n_factors: int
    items: tuple[str, ...]
    dropped_items: tuple[str, ...]
    item_means: np.ndarray  # per retained item
    item_sds: np.ndarray
    loadings: np.ndarray  # (n_items, n_factors)
    uniqueness: np.ndarray  # (n_items,)
    scores: np.ndarray  # (n_subjects, n_factors)
    eigenvalues: np.ndarray  # full spectrum of the reduced matrix, descending
    variance_explained_first: float  # lambda1 / sum(|lambda|)
    variance_explained_first_by_items: float  # lambda1 / n_items

    def fitted(self) -> np.ndarray:
        """Reconstructed data for the retained items (subjects x items)."""
        return self.item_means + self.item_sds * (self.scores @ self.loadings.T)


def principal_factors(
    matrix: EngagementMatrix, n_factors: int = 1, iterate: int = 0
) -> FactorSolution:
    """Principal-axis factoring of the item correlation matrix.

    Initial communalities are squared multiple correlations when the
    correlation matrix is invertible, else each item's largest absolute
    off-diagonal correlation (the common fallback when items outnumber
    the informative rank). ``iterate`` re-estimates communalities that
    many extra times; 0 is one-step principal axis.
    """
    if n_factors < 1:
        raise ValueError("n_factors must be at least 1")
    if iterate < 0:
        raise ValueError("iterate must be nonnegative")
    values = matrix.values
    sds = values.std(axis=0, ddof=1)
    keep = sds > 0
    dropped = tuple(c for c, k in zip(matrix.courses, keep) if not k)
    items = tuple(c for c, k in zip(matrix.courses, keep) if k)
    p = len(items)
    if p < 2:
        raise ValueError(f"need at least 2 non-degenerate items, got {p}")
    if n_factors > p:
        raise ValueError(f"cannot extract {n_factors} factors from {p} items")
    data = values[:, keep]
    means = data.mean(axis=0)
    sds = data.std(axis=0, ddof=1)
    z = (data - means) / sds
    corr = np.corrcoef(data, rowvar=False)
    corr = np.atleast_2d(corr)

    eigvals_r = np.linalg.eigvalsh(corr)
    if eigvals_r.min() > 1e-8 * max(eigvals_r.max(), 1.0):
        inv_diag = np.diag(np.linalg.inv(corr))
        communalities = 1.0 - 1.0 / inv_diag
    else:
        off = np.abs(corr - np.diag(np.diag(corr)))
        communalities = off.max(axis=0)
    communalities = np.clip(communalities, 0.0, 1.0)

    for _ in range(iterate + 1):
        reduced = corr.copy()
        np.fill_diagonal(reduced, communalities)
        eigvals, eigvecs = np.linalg.eigh(reduced)
        order = np.argsort(eigvals)[::-1]
        eigvals = eigvals[order]
        eigvecs = eigvecs[:, order]
        loadings = eigvecs[:, :n_factors] * np.sqrt(np.clip(eigvals[:n_factors], 0.0, None))
        communalities = np.clip((loadings**2).sum(axis=1), 0.0, 1.0)

    for i in range(n_factors):
        pivot = np.argmax(np.abs(loadings[:, i]))
        if loadings[pivot, i] < 0:
            loadings[:, i] = -loadings[:, i]

    uniqueness = np.clip(1.0 - (loadings**2).sum(axis=1), 0.0, 1.0)
    scores = z @ (np.linalg.pinv(corr) @ loadings)
    abs_total = np.abs(eigvals).sum()
    return FactorSolution(
        n_factors=n_factors,
        items=items,
        dropped_items=dropped,
        item_means=means,
        item_sds=sds,
        loadings=loadings,
        uniqueness=uniqueness,
        scores=scores,
        eigenvalues=eigvals,
        variance_explained_first=float(eigvals[0] / abs_total) if abs_total > 0 else 0.0,
        variance_explained_first_by_items=float(eigvals[0] / p),
    )


@dataclass(frozen=True)
class CorrelationTable:
    names: tuple[str, ...]
    matrix: tuple[tuple[Optional[float], ...], ...]
    notable: tuple[tuple[str, str, float], ...]  # pairs with |r| > 0.2
    insufficient: tuple[tuple[str, str], ...]  # pairs with < 3 overlapping points


def _apply_series_transform(values: Sequence[Optional[float]], kind: str) -> list[Optional[float]]:
    out: list[Optional[float]] = []
    for v in values:
        if v is None:
            out.append(None)
        elif kind == "identity":
            out.append(float(v))
        elif kind == "log":
            out.append(float(np.log(v)) if v > 0 else None)
        elif kind == "log_plus_1":
            out.append(float(np.log(v + 1.0)) if v > -1.0 else None)
        elif kind == "log_plus_0.01":
            out.append(float(np.log(v + 0.01)) if v > -0.01 else None)
        else:
            raise ValueError(f"unknown transform {kind!r}; expected one of {SERIES_TRANSFORMS}")
    return out


def correlate(
    series_table: Mapping[str, Sequence[Optional[float]]],
    transforms: Mapping[str, str],
    notable_threshold: float = 0.2,
) -> CorrelationTable:
    """Pairwise Pearson correlations after per-series transforms.

    Series must be aligned over the same subjects (equal lengths, None
    for absent). Pairs with fewer than 3 overlapping points, or with a
    degenerate variance, get a blank cell and an insufficiency flag.
    """
    names = tuple(series_table)
    lengths = {len(v) for v in series_table.values()}
    if len(lengths) > 1:
        raise ValueError(f"series lengths differ: {sorted(lengths)}")
    n = lengths.pop() if lengths else 0
    if n < 3:
        raise ValueError(f"need at least 3 aligned subjects, got {n}")
    transformed = {
        name: _apply_series_transform(series, transforms.get(name, "identity"))
        for name, series in series_table.items()
    }
    matrix: list[list[Optional[float]]] = [[None] * len(names) for _ in names]
    notable = []
    insufficient = []
    for i, a in enumerate(names):
        matrix[i][i] = 1.0
        for j in range(i + 1, len(names)):
            b = names[j]
            xs, ys = [], []
            for x, y in zip(transformed[a], transformed[b]):
                if x is not None and y is not None:
                    xs.append(x)
                    ys.append(y)
            r: Optional[float] = None
            if len(xs) < 3:
                insufficient.append((a, b))
            else:
                xa = np.asarray(xs)
                ya = np.asarray(ys)
                sx, sy = xa.std(ddof=1), ya.std(ddof=1)
                if sx == 0 or sy == 0:
                    insufficient.append((a, b))
                else:
                    r = float(np.cov(xa, ya, ddof=1)[0, 1] / (sx * sy))
                    if abs(r) > notable_threshold:
                        notable.append((a, b, r))
            matrix[i][j] = matrix[j][i] = r
    return CorrelationTable(
        names=names,
        matrix=tuple(tuple(row) for row in matrix),
        notable=tuple(notable),
        insufficient=tuple(insufficient),
    )
