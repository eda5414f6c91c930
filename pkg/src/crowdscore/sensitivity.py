"""Crowd-size sensitivity analysis.

For every crowd size ``c`` up to ``max_size`` and every size-``c`` subset of
the ``n`` label slots collected per image, each image is aggregated from
only the selected slots and the agreement of the aggregated labels with
ground truth is recorded.  The per-size distribution of agreement shows how
many labels per image are worth paying for.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb
from typing import Iterator, Optional, Sequence

import numpy as np

from .aggregate import DEFAULT_WEIGHTS, N_CLASSES, ClassWeights, aggregate_batch
from .core import ClassLabel, Scheme
from .errors import DomainError, ShapeError, ValidationError


def combinations(n: int, k: int) -> Iterator[tuple]:
    """All ``k``-subsets of ``range(n)`` in lexicographic order."""
    if not 1 <= k <= n:
        raise DomainError(f"need 1 <= k <= n, got k={k}, n={n}")
    return itertools.combinations(range(n), k)


@dataclass
class SensitivityResult:
    crowd_size: int
    patterns: list
    agreement: np.ndarray

    @property
    def pattern_count(self) -> int:
        return len(self.patterns)

    @property
    def mean(self) -> float:
        return float(np.mean(self.agreement))

    @property
    def median(self) -> float:
        return float(np.median(self.agreement))

    @property
    def quartiles(self) -> tuple:
        q1, q3 = np.percentile(self.agreement, [25, 75])
        return float(q1), float(q3)

    @property
    def min(self) -> float:
        return float(np.min(self.agreement))

    @property
    def max(self) -> float:
        return float(np.max(self.agreement))

    def summary(self) -> dict:
        q1, q3 = self.quartiles
        return {
            "crowd_size": self.crowd_size,
            "patterns": self.pattern_count,
            "mean": self.mean,
            "median": self.median,
            "q1": q1,
            "q3": q3,
            "min": self.min,
            "max": self.max,
        }


def _as_codes(grid) -> np.ndarray:
    rows = [[x.value if isinstance(x, ClassLabel) else int(x) for x in row] for row in grid]
    lens = {len(r) for r in rows}
    if len(lens) > 1:
        raise ShapeError("every image needs the same number of labels")
    arr = np.asarray(rows, dtype=np.int64)
    if arr.ndim != 2 or arr.size == 0:
        raise ShapeError("label grid must be images x labels")
    if arr.min() < 0 or arr.max() >= N_CLASSES:
        raise ValidationError("label codes must be four-class codes 0..3")
    return arr


def sensitivity_analysis(
    labels,
    truth: Sequence[ClassLabel],
    aggregator: str = "cv",
    max_size: Optional[int] = None,
    scheme: Optional[Scheme] = None,
    trusts=None,
    weights: ClassWeights = DEFAULT_WEIGHTS,
) -> list:
    """Agreement distribution per crowd size.

    Parameters
    ----------
    labels : images x n grid of four-class labels (ClassLabel or codes)
    truth : per-image ground-truth labels; their scheme is the comparison
        scheme unless ``scheme`` overrides it
    aggregator : ``cv``, ``ct``, ``wcv`` or ``wct``
    max_size : largest crowd size (defaults to ``n``)
    trusts : optional images x n grid of contributor trust per label slot;
        defaults to 1.0 everywhere

    Returns
    -------
    list of SensitivityResult, one per crowd size 1..max_size
    """
    codes = _as_codes(labels)
    n_img, n = codes.shape
    if len(truth) != n_img:
        raise ShapeError(f"{len(truth)} truth labels for {n_img} images")
    if scheme is None:
        schemes = {t.scheme for t in truth}
        if len(schemes) != 1:
            raise ValidationError("truth labels mix schemes")
        scheme = schemes.pop()
    scheme = Scheme.parse(scheme)
    top = scheme.n_classes - 1
    truth_codes = np.minimum(np.array([t.value for t in truth]), top)
    max_size = n if max_size is None else max_size
    if not 1 <= max_size <= n:
        raise DomainError(f"max_size must lie in 1..{n}")
    tr = np.ones(codes.shape) if trusts is None else np.asarray(trusts, dtype=float)
    if tr.shape != codes.shape:
        raise ShapeError("trust grid must match the label grid")

    onehot = codes[:, :, None] == np.arange(N_CLASSES)[None, None, :]
    votes_by_slot = onehot.astype(np.int64)
    trust_by_slot = onehot * tr[:, :, None]

    results = []
    for c in range(1, max_size + 1):
        patterns = list(combinations(n, c))
        agree = np.empty(len(patterns))
        for p, pattern in enumerate(patterns):
            idx = list(pattern)
            v = votes_by_slot[:, idx, :].sum(axis=1)
            t = trust_by_slot[:, idx, :].sum(axis=1)
            agg = np.minimum(aggregate_batch(aggregator, v, t, weights), top)
            agree[p] = np.mean(agg == truth_codes)
        results.append(SensitivityResult(c, patterns, agree))
    return results


def total_patterns(n: int, max_size: Optional[int] = None) -> int:
    max_size = n if max_size is None else max_size
    return sum(comb(n, c) for c in range(1, max_size + 1))
