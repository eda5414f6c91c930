"""Inter-rater reliability: percent agreement, Cohen's and Fleiss' kappa,
mean pairwise Spearman correlation and ICC(2,1).

Ratings are ordinal class codes.  A :class:`RatingsMatrix` is an
items x raters grid in which missing cells are NaN.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .core import ClassLabel
from .errors import (
    DegenerateError,
    EmptyInputError,
    IncompleteMatrixError,
    ShapeError,
    UndefinedCorrelationError,
    ValidationError,
)


def _code(x) -> float:
    if x is None:
        return np.nan
    if isinstance(x, ClassLabel):
        return float(x.value)
    return float(x)


def _codes(xs) -> np.ndarray:
    return np.array([_code(x) for x in xs], dtype=float)


class RatingsMatrix:
    """Items in rows, raters in columns; NaN marks a missing rating."""

    def __init__(self, codes, rater_ids: Optional[Sequence[str]] = None):
        arr = np.array([[_code(x) for x in row] for row in codes], dtype=float) \
            if not isinstance(codes, np.ndarray) else codes.astype(float)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 2:
            raise ShapeError("ratings need at least 1 item and 2 raters")
        self.codes = arr
        self.rater_ids = list(rater_ids) if rater_ids is not None else [str(i) for i in range(arr.shape[1])]

    @classmethod
    def from_columns(cls, *columns, rater_ids=None) -> "RatingsMatrix":
        lens = {len(c) for c in columns}
        if len(lens) != 1:
            raise ShapeError("rater columns have different lengths")
        return cls(np.column_stack([_codes(c) for c in columns]), rater_ids)

    @property
    def n_items(self) -> int:
        return self.codes.shape[0]

    @property
    def n_raters(self) -> int:
        return self.codes.shape[1]

    @property
    def complete(self) -> bool:
        return not np.isnan(self.codes).any()


def _pair(a, b):
    a, b = _codes(a), _codes(b)
    if a.shape != b.shape:
        raise ShapeError(f"label vectors differ in length ({len(a)} vs {len(b)})")
    if len(a) == 0:
        raise EmptyInputError("empty label vectors")
    return a, b


def percent_agreement(a, b) -> float:
    """Fraction of positions where the two label vectors agree."""
    a, b = _pair(a, b)
    return float(np.mean(a == b))


def cohen_kappa(a, b) -> float:
    """Cohen's kappa for two raters, chance agreement from marginal products."""
    a, b = _pair(a, b)
    if len(a) < 2:
        raise ShapeError("kappa needs at least two items")
    cats = np.union1d(a, b)
    p_o = np.mean(a == b)
    p_e = sum(np.mean(a == c) * np.mean(b == c) for c in cats)
    if p_e >= 1.0:
        raise DegenerateError("both raters are constant and equal; kappa undefined")
    return float((p_o - p_e) / (1.0 - p_e))


def cohen_kappa_pairwise_mean(m: RatingsMatrix) -> float:
    """Mean Cohen's kappa over rater pairs, each on its jointly rated items."""
    vals = []
    for i, j in itertools.combinations(range(m.n_raters), 2):
        mask = ~np.isnan(m.codes[:, i]) & ~np.isnan(m.codes[:, j])
        try:
            vals.append(cohen_kappa(m.codes[mask, i], m.codes[mask, j]))
        except (DegenerateError, ShapeError, EmptyInputError):
            warnings.warn(f"kappa undefined for raters {m.rater_ids[i]}/{m.rater_ids[j]}; pair skipped")
    if not vals:
        raise DegenerateError("kappa undefined for every rater pair")
    return float(np.mean(vals))


def fleiss_kappa(m: RatingsMatrix) -> float:
    """Fleiss' kappa over a complete matrix with a fixed number of raters."""
    if not m.complete:
        raise IncompleteMatrixError("Fleiss' kappa needs every item rated by every rater")
    n = m.n_raters
    cats = np.unique(m.codes)
    if len(cats) < 2:
        raise DegenerateError("only one category used; Fleiss' kappa undefined")
    counts = (m.codes[:, :, None] == cats[None, None, :]).sum(axis=1)
    p_j = counts.sum(axis=0) / (m.n_items * n)
    p_i = ((counts * (counts - 1)).sum(axis=1)) / (n * (n - 1))
    p_bar = p_i.mean()
    p_e = float(np.sum(p_j ** 2))
    return float((p_bar - p_e) / (1.0 - p_e))


def _spearman(x: np.ndarray, y: np.ndarray) -> float:
    rx, ry = rankdata(x), rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    den = np.sqrt(np.sum(rx * rx) * np.sum(ry * ry))
    if den == 0:
        raise UndefinedCorrelationError("a rater is constant on the overlap")
    return float(np.sum(rx * ry) / den)


def spearman_rho(a, b) -> float:
    """Spearman rank correlation with average ranks for ties."""
    a, b = _pair(a, b)
    mask = ~np.isnan(a) & ~np.isnan(b)
    if mask.sum() < 3:
        raise UndefinedCorrelationError("Spearman needs at least 3 jointly rated items")
    return _spearman(a[mask], b[mask])


def spearman_rho_mean(m: RatingsMatrix) -> float:
    """Mean pairwise Spearman correlation; undefined pairs are skipped."""
    vals = []
    for i, j in itertools.combinations(range(m.n_raters), 2):
        try:
            vals.append(spearman_rho(m.codes[:, i], m.codes[:, j]))
        except UndefinedCorrelationError as exc:
            warnings.warn(f"raters {m.rater_ids[i]}/{m.rater_ids[j]} skipped: {exc}")
    if not vals:
        raise UndefinedCorrelationError("Spearman correlation undefined for every rater pair")
    return float(np.mean(vals))


def anova_mean_squares(x: np.ndarray) -> tuple:
    """Two-way ANOVA mean squares ``(MSR, MSC, MSE)`` for items x raters."""
    n, k = x.shape
    grand = x.mean()
    ss_rows = k * np.sum((x.mean(axis=1) - grand) ** 2)
    ss_cols = n * np.sum((x.mean(axis=0) - grand) ** 2)
    ss_err = np.sum((x - grand) ** 2) - ss_rows - ss_cols
    return ss_rows / (n - 1), ss_cols / (k - 1), ss_err / ((n - 1) * (k - 1))


def icc(m: RatingsMatrix) -> float:
    """ICC(2,1): two-way random effects, absolute agreement, single rater."""
    if not m.complete:
        raise IncompleteMatrixError("ICC needs a complete matrix")
    x = m.codes
    n, k = x.shape
    if n < 2:
        raise ShapeError("ICC needs at least two items")
    msr, msc, mse = anova_mean_squares(x)
    if np.allclose(x.mean(axis=1), x.mean()):
        raise DegenerateError("no between-item variance; ICC undefined")
    den = msr + (k - 1) * mse + k * (msc - mse) / n
    return float((msr - mse) / den)


@dataclass
class MetricReport:
    percent_agreement: Optional[float] = None
    cohen_kappa_pairwise_mean: Optional[float] = None
    fleiss_kappa: Optional[float] = None
    spearman_rho_mean: Optional[float] = None
    icc: Optional[float] = None

    def as_dict(self) -> dict:
        return asdict(self)


def _try(fn, m):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return fn(m)
    except ValidationError:
        return None


def mean_percent_agreement(m: RatingsMatrix) -> float:
    vals = []
    for i, j in itertools.combinations(range(m.n_raters), 2):
        mask = ~np.isnan(m.codes[:, i]) & ~np.isnan(m.codes[:, j])
        if mask.any():
            vals.append(percent_agreement(m.codes[mask, i], m.codes[mask, j]))
    if not vals:
        raise EmptyInputError("no jointly rated items")
    return float(np.mean(vals))


def metric_report(m: RatingsMatrix) -> MetricReport:
    """Every reliability measure that is defined for ``m``; others are None."""
    return MetricReport(
        percent_agreement=_try(mean_percent_agreement, m),
        cohen_kappa_pairwise_mean=_try(cohen_kappa_pairwise_mean, m),
        fleiss_kappa=_try(fleiss_kappa, m),
        spearman_rho_mean=_try(spearman_rho_mean, m),
        icc=_try(icc, m),
    )
