"""Label aggregation: vote- and trust-based consensus, weighted positivity
scores, nuclei-count medians, positivity index and patient rollup.

Four consensus rules operate on a :class:`VoteTally` (per-class vote counts
``V_k`` and per-class summed contributor trust ``T_k``):

``cv``   class with the most votes
``ct``   class with the largest summed trust
``wcv``  class whose bin contains sum(w_k V_k) / sum(V_k)
``wct``  class whose bin contains sum(w_k T_k) / sum(T_k)

Ties in ``cv`` fall to the larger trust sum and then to the lower class;
ties in ``ct`` fall to the larger vote count and then to the lower class.
Trust sums closer than ``TIE_TOL`` count as tied.
"""

from __future__ import annotations

import enum
import math
import statistics
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .core import (
    DEFAULT_BINS,
    ClassBins,
    ClassLabel,
    Judgment,
    NucleiAnnotation,
    Scheme,
    _exact,
    classify_fraction,
    label,
)
from .errors import (
    DegenerateTrustError,
    DuplicateVoteError,
    EmptyAnnotationsError,
    EmptyInputError,
    EmptyTallyError,
    NoNucleiError,
    SchemeMismatchError,
    ValidationError,
)

TIE_TOL = 1e-9
N_CLASSES = 4


class Basis(str, enum.Enum):
    VOTES = "votes"
    TRUST = "trust"


class VoteTally(NamedTuple):
    """Per-class vote counts and trust sums for one image (classes A..D)."""

    votes: tuple
    trust_sums: tuple

    @classmethod
    def of(cls, votes: Sequence[int], trust_sums: Optional[Sequence[float]] = None) -> "VoteTally":
        votes = tuple(int(v) for v in votes)
        trust_sums = (0.0,) * len(votes) if trust_sums is None else tuple(float(t) for t in trust_sums)
        if len(votes) != N_CLASSES or len(trust_sums) != N_CLASSES:
            raise ValidationError("a tally needs one entry per class A..D")
        if any(v < 0 for v in votes) or any(t < 0 for t in trust_sums):
            raise ValidationError("tally entries must be non-negative")
        if any(t > v + TIE_TOL for v, t in zip(votes, trust_sums)):
            raise ValidationError("trust sum exceeds vote count (trust is at most 1)")
        return cls(votes, trust_sums)

    @property
    def total(self) -> int:
        return sum(self.votes)


@dataclass(frozen=True)
class ClassWeights:
    """Representative positivity fraction per class for the weighted rules."""

    weights: tuple = (0.005, 0.05, 0.3, 0.75)
    bins: ClassBins = DEFAULT_BINS

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        object.__setattr__(self, "weights", w)
        if len(w) != self.bins.scheme.n_classes:
            raise ValidationError("need one weight per class")
        for k, x in enumerate(w):
            lo, hi = self.bins.bounds(k)
            if not ((lo < x or (k == 0 and x == lo)) and x <= hi):
                raise ValidationError(f"weight {x} lies outside class {k} bin ({lo}, {hi}]")
        object.__setattr__(self, "_exact_weights", tuple(_exact(x) for x in w))

    @classmethod
    def midpoints(cls, bins: ClassBins = DEFAULT_BINS) -> "ClassWeights":
        """Weights at the bin midpoints (gives 0.055 for B instead of 0.05)."""
        return cls(bins.midpoints(), bins)


DEFAULT_WEIGHTS = ClassWeights()


def _unpack(j):
    if isinstance(j, Judgment):
        return j.contributor_id, j.payload
    cid, lab = j
    return cid, lab


def tally(judgments: Iterable, trusts: Optional[Mapping[str, float]] = None) -> VoteTally:
    """Count votes and sum trust per class for one image.

    ``judgments`` holds :class:`Judgment` objects or ``(contributor_id, label)``
    pairs.  When ``trusts`` is given every contributor must appear in it.
    """
    votes = [0] * N_CLASSES
    trust_parts = [[] for _ in range(N_CLASSES)]
    seen = set()
    image = None
    for j in judgments:
        if isinstance(j, Judgment):
            if image is None:
                image = j.image_id
            elif j.image_id != image:
                raise ValidationError(f"tally mixes images {image!r} and {j.image_id!r}")
        cid, lab = _unpack(j)
        if cid in seen:
            raise DuplicateVoteError(f"contributor {cid!r} voted twice")
        seen.add(cid)
        if not isinstance(lab, ClassLabel):
            raise ValidationError("tally needs class-label judgments")
        if lab.scheme is not Scheme.FOUR:
            raise SchemeMismatchError("crowd votes are four-class labels")
        votes[lab.value] += 1
        if trusts is not None:
            try:
                trust_parts[lab.value].append(float(trusts[cid]))
            except KeyError:
                raise ValidationError(f"no trust score for contributor {cid!r}") from None
    if not seen:
        raise EmptyTallyError("no judgments to tally")
    return VoteTally(tuple(votes), tuple(math.fsum(p) for p in trust_parts))


def _pick(primary, secondary, tol_primary, tol_secondary):
    best = max(primary)
    cand = [k for k, x in enumerate(primary) if x >= best - tol_primary]
    if len(cand) > 1:
        best2 = max(secondary[k] for k in cand)
        cand = [k for k in cand if secondary[k] >= best2 - tol_secondary]
    return cand[0]


def aggregate_cv(t: VoteTally) -> ClassLabel:
    """Majority vote; ties go to the larger trust sum, then the lower class."""
    if sum(t.votes) == 0:
        raise EmptyTallyError("empty tally")
    return label(_pick(t.votes, t.trust_sums, 0, TIE_TOL))


def aggregate_ct(t: VoteTally) -> ClassLabel:
    """Maximum summed trust; ties go to more votes, then the lower class."""
    if sum(t.votes) == 0:
        raise EmptyTallyError("empty tally")
    if not any(x > 0 for x in t.trust_sums):
        raise DegenerateTrustError("all trust sums are zero")
    return label(_pick(t.trust_sums, t.votes, TIE_TOL, 0))


def _basis_values(t: VoteTally, basis) -> tuple:
    return t.votes if Basis(basis) is Basis.VOTES else t.trust_sums


def weighted_score(t: VoteTally, w: ClassWeights = DEFAULT_WEIGHTS, basis=Basis.VOTES) -> float:
    """Weighted mean of class weights, by vote counts or by trust sums.

    Evaluated in exact rational arithmetic on the decimal values of the
    inputs, so a unanimous tally returns its class weight exactly.
    """
    return float(_exact_score(_basis_values(t, basis), w))


def _exact_score(xs, w: ClassWeights) -> Fraction:
    den = sum(_exact(x) for x in xs)
    if den == 0:
        raise EmptyTallyError("weighted score has a zero denominator")
    num = sum(wk * _exact(x) for wk, x in zip(w._exact_weights, xs) if x)
    return num / den


def aggregate_weighted(t: VoteTally, w: ClassWeights = DEFAULT_WEIGHTS, basis=Basis.VOTES) -> ClassLabel:
    """Class whose bin contains the weighted score."""
    xs = _basis_values(t, basis)
    den = math.fsum(xs)
    if den <= 0:
        raise EmptyTallyError("weighted score has a zero denominator")
    score = math.fsum(wk * x for wk, x in zip(w.weights, xs)) / den
    # float is decisive unless it sits on a bin edge
    if any(abs(score - e) < 1e-9 for e in w.bins.edges[1:-1]):
        return label(w.bins.classify(_exact_score(xs, w)), w.bins.scheme)
    return classify_fraction(min(max(score, 0.0), 1.0), w.bins)


def aggregate_wcv(t: VoteTally, w: ClassWeights = DEFAULT_WEIGHTS) -> ClassLabel:
    return aggregate_weighted(t, w, Basis.VOTES)


def aggregate_wct(t: VoteTally, w: ClassWeights = DEFAULT_WEIGHTS) -> ClassLabel:
    return aggregate_weighted(t, w, Basis.TRUST)


METHODS = ("cv", "ct", "wcv", "wct")


def aggregate(t: VoteTally, method: str, w: ClassWeights = DEFAULT_WEIGHTS) -> ClassLabel:
    """Dispatch to one of ``cv``, ``ct``, ``wcv``, ``wct``."""
    method = method.lower()
    if method == "cv":
        return aggregate_cv(t)
    if method == "ct":
        return aggregate_ct(t)
    if method == "wcv":
        return aggregate_weighted(t, w, Basis.VOTES)
    if method == "wct":
        return aggregate_weighted(t, w, Basis.TRUST)
    raise ValidationError(f"unknown aggregation method {method!r}")


def aggregate_batch(method: str, votes: np.ndarray, trusts: np.ndarray,
                    w: ClassWeights = DEFAULT_WEIGHTS) -> np.ndarray:
    """Vectorised :func:`aggregate` over rows of ``(n, 4)`` vote/trust arrays.

    Returns integer class codes.  Agrees with the scalar rules row by row.
    """
    votes = np.asarray(votes)
    trusts = np.asarray(trusts, dtype=float)
    if votes.ndim != 2 or votes.shape[1] != N_CLASSES or trusts.shape != votes.shape:
        raise ValidationError("batch tallies must be (n, 4) arrays of equal shape")
    if np.any(votes.sum(axis=1) == 0):
        raise EmptyTallyError("empty tally in batch")
    method = method.lower()
    if method in ("cv", "ct"):
        first, second = (votes, trusts) if method == "cv" else (trusts, votes)
        if method == "ct" and np.any(~(trusts > 0).any(axis=1)):
            raise DegenerateTrustError("all trust sums are zero in some row")
        tol1 = 0 if method == "cv" else TIE_TOL
        tol2 = TIE_TOL if method == "cv" else 0
        first = first.astype(float)
        cand = first >= first.max(axis=1, keepdims=True) - tol1
        masked = np.where(cand, second.astype(float), -np.inf)
        cand &= masked >= masked.max(axis=1, keepdims=True) - tol2
        return np.argmax(cand, axis=1)
    if method not in ("wcv", "wct"):
        raise ValidationError(f"unknown aggregation method {method!r}")
    xs = (votes if method == "wcv" else trusts).astype(float)
    den = xs.sum(axis=1)
    if np.any(den <= 0):
        raise EmptyTallyError("weighted score has a zero denominator")
    score = (xs @ np.asarray(w.weights)) / den
    inner = np.asarray(w.bins.edges[1:-1])
    codes = np.searchsorted(inner, score, side="left")
    near = np.any(np.abs(score[:, None] - inner[None, :]) < 1e-9, axis=1)
    for i in np.flatnonzero(near):
        codes[i] = w.bins.classify(_exact_score(tuple(xs[i]), w))
    return codes


# --- nuclei ---------------------------------------------------------------


@dataclass(frozen=True)
class PositivityIndex:
    positive: int
    negative: int

    def __post_init__(self):
        if self.positive < 0 or self.negative < 0:
            raise ValidationError("nuclei counts must be non-negative")
        if self.positive + self.negative == 0:
            raise NoNucleiError("no nuclei counted; positivity index undefined")

    @property
    def total(self) -> int:
        return self.positive + self.negative

    @property
    def value(self) -> float:
        return self.positive / self.total


def _median_count(xs: Sequence[int]) -> int:
    m = statistics.median(xs)
    # counts are non-negative, so half away from zero is half up
    return int(math.floor(m + 0.5))


def nuclei_aggregate(annotations: Sequence[NucleiAnnotation]) -> tuple:
    """Component-wise median of per-contributor (positive, negative) counts."""
    counts = [a.counts if isinstance(a, NucleiAnnotation) else tuple(a) for a in annotations]
    if not counts:
        raise EmptyAnnotationsError("no annotations to aggregate")
    return _median_count([c[0] for c in counts]), _median_count([c[1] for c in counts])


def pindex(positive: int, negative: int) -> PositivityIndex:
    """Positivity index; raises :class:`NoNucleiError` when nothing was counted."""
    return PositivityIndex(int(positive), int(negative))


def nuclei_label(annotations: Sequence[NucleiAnnotation], bins: ClassBins = DEFAULT_BINS) -> tuple:
    """Consensus class for one image from its nuclei annotations.

    Returns ``(label, pindex_value, flagged)``; images with no nuclei are
    class A with ``pindex_value`` None and ``flagged`` True.
    """
    pos, neg = nuclei_aggregate(annotations)
    try:
        p = pindex(pos, neg)
    except NoNucleiError:
        return label(0, bins.scheme), None, True
    return classify_fraction(p.value, bins), p.value, False


def patient_label(image_labels: Sequence[ClassLabel]) -> ClassLabel:
    """Median of a patient's image labels; a half-way median rounds up."""
    labels = list(image_labels)
    if not labels:
        raise EmptyInputError("patient has no image labels")
    schemes = {x.scheme for x in labels}
    if len(schemes) > 1:
        raise SchemeMismatchError("patient labels mix label schemes")
    m = statistics.median([x.value for x in labels])
    return label(int(math.ceil(m)), schemes.pop())
