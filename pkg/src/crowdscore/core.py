"""Domain types and the ordinal label algebra shared by every other module.

Staining classes are ordinal: A (negative) < B (low positive) < C (positive)
< D (high positive).  Three schemes are in use:

* ``FOUR``  -- A, B, C, D, what the crowd reports;
* ``THREE`` -- A, B, C, the pathologist scheme (crowd D merged into C);
* ``TWO``   -- A, B, negative versus any positive.

Positivity fractions map onto classes through :class:`ClassBins`, whose bins
are half-open ``(lower, upper]`` with 0 assigned to the first class.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from typing import Iterable, Sequence, Union

from .errors import ConsistencyError, DomainError, InvalidMergeError, ValidationError

LETTERS = "ABCD"


class Scheme(enum.IntEnum):
    """Label scheme; the integer value is the number of classes."""

    TWO = 2
    THREE = 3
    FOUR = 4

    @property
    def n_classes(self) -> int:
        return int(self)

    @property
    def letters(self) -> str:
        return LETTERS[: int(self)]

    @classmethod
    def parse(cls, token: Union[str, int, "Scheme"]) -> "Scheme":
        if isinstance(token, Scheme):
            return token
        text = str(token).strip().lower()
        aliases = {
            "2": cls.TWO, "two": cls.TWO, "twoclass": cls.TWO,
            "3": cls.THREE, "three": cls.THREE, "threeclass": cls.THREE,
            "4": cls.FOUR, "four": cls.FOUR, "fourclass": cls.FOUR,
        }
        try:
            return aliases[text.replace("-", "").replace("_", "")]
        except KeyError:
            raise ValidationError(f"unknown label scheme {token!r}") from None


class Mode(str, enum.Enum):
    QUIZ = "quiz"
    WORK = "work"


@dataclass(frozen=True, order=False)
class ClassLabel:
    """An ordinal staining class within a scheme."""

    value: int
    scheme: Scheme = Scheme.FOUR

    def __post_init__(self):
        if not 0 <= self.value < self.scheme.n_classes:
            raise DomainError(
                f"class code {self.value} outside {self.scheme.name} range "
                f"0..{self.scheme.n_classes - 1}"
            )

    @classmethod
    def parse(cls, token: str, scheme: Scheme = Scheme.FOUR) -> "ClassLabel":
        text = str(token).strip().upper()
        if len(text) != 1 or text not in scheme.letters:
            raise ValidationError(
                f"unknown label token {token!r} for {scheme.name} scheme "
                f"(expected one of {', '.join(scheme.letters)})"
            )
        return label(LETTERS.index(text), scheme)

    @property
    def letter(self) -> str:
        return LETTERS[self.value]

    def __str__(self) -> str:
        return self.letter

    def _check(self, other):
        if not isinstance(other, ClassLabel):
            return NotImplemented
        if other.scheme != self.scheme:
            raise ValidationError(
                f"cannot compare {self.scheme.name} and {other.scheme.name} labels"
            )
        return None

    def __lt__(self, other):
        bad = self._check(other)
        return bad if bad is not None else self.value < other.value

    def __le__(self, other):
        bad = self._check(other)
        return bad if bad is not None else self.value <= other.value

    def __gt__(self, other):
        bad = self._check(other)
        return bad if bad is not None else self.value > other.value

    def __ge__(self, other):
        bad = self._check(other)
        return bad if bad is not None else self.value >= other.value


_LABELS = {s: tuple(ClassLabel(v, s) for v in range(s.n_classes)) for s in Scheme}


def label(value: int, scheme: Scheme = Scheme.FOUR) -> ClassLabel:
    """Return the shared :class:`ClassLabel` instance for ``value``."""
    try:
        return _LABELS[scheme][value]
    except (IndexError, KeyError):
        return ClassLabel(value, scheme)  # raises DomainError


A, B, C, D = _LABELS[Scheme.FOUR]


def _exact(x) -> Fraction:
    # decimal-intended value of a float: 0.1 -> 1/10
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(repr(float(x)))


@dataclass(frozen=True)
class ClassBins:
    """Contiguous positivity bins; class ``k`` covers ``(edges[k], edges[k+1]]``.

    The first bin also contains its lower edge (0).
    """

    edges: tuple = (0.0, 0.01, 0.1, 0.5, 1.0)

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        if len(edges) - 1 not in (2, 3, 4):
            raise ValidationError("bins must define 2, 3 or 4 classes")
        if edges[0] != 0.0 or edges[-1] != 1.0:
            raise ValidationError("bins must span [0, 1]")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValidationError("bin edges must be strictly increasing")
        object.__setattr__(self, "_exact_edges", tuple(_exact(e) for e in edges))

    @classmethod
    def from_boundaries(cls, boundaries: Sequence[tuple]) -> "ClassBins":
        """Build from explicit ``(lower, upper)`` pairs, checking contiguity."""
        for (_, hi), (lo, _) in zip(boundaries, boundaries[1:]):
            if hi != lo:
                raise ValidationError("bins must be contiguous and non-overlapping")
        return cls((boundaries[0][0],) + tuple(hi for _, hi in boundaries))

    @property
    def scheme(self) -> Scheme:
        return Scheme(len(self.edges) - 1)

    @property
    def boundaries(self) -> list:
        return list(zip(self.edges, self.edges[1:]))

    def bounds(self, k: int) -> tuple:
        return self.edges[k], self.edges[k + 1]

    def midpoints(self) -> tuple:
        return tuple((lo + hi) / 2 for lo, hi in self.boundaries)

    def merged(self, target: Scheme) -> "ClassBins":
        """Bins of the coarser scheme obtained by merging top classes."""
        source = self.scheme
        if target > source:
            raise InvalidMergeError(f"cannot refine {source.name} bins to {target.name}")
        return ClassBins(self.edges[: target.n_classes] + (1.0,))

    def classify(self, p) -> int:
        """Class code for fraction ``p``; exact for decimal inputs."""
        if isinstance(p, Fraction):
            if p < 0 or p > 1:
                raise DomainError(f"fraction {p} outside [0, 1]")
            for k, hi in enumerate(self._exact_edges[1:]):
                if p <= hi:
                    return k
            return len(self.edges) - 2
        p = float(p)
        if math.isnan(p) or p < 0.0 or p > 1.0:
            raise DomainError(f"fraction {p!r} outside [0, 1]")
        for k, hi in enumerate(self.edges[1:]):
            if p <= hi:
                return k
        return len(self.edges) - 2


DEFAULT_BINS = ClassBins()


def classify_fraction(p, bins: ClassBins = DEFAULT_BINS) -> ClassLabel:
    """Return the class whose ``(lower, upper]`` bin contains ``p``.

    >>> classify_fraction(0.05).letter
    'B'
    >>> classify_fraction(0.1).letter
    'B'
    """
    return label(bins.classify(p), bins.scheme)


def merge_classes(lab: ClassLabel, target: Scheme) -> ClassLabel:
    """Collapse ``lab`` into the coarser ``target`` scheme.

    FOUR -> THREE folds D into C; THREE -> TWO folds C into B.  Merging into
    the label's own scheme is the identity.
    """
    target = Scheme.parse(target)
    if target > lab.scheme:
        raise InvalidMergeError(
            f"cannot merge {lab.scheme.name} label into finer {target.name} scheme"
        )
    return label(min(lab.value, target.n_classes - 1), target)


def as_scheme(labels: Iterable[ClassLabel], target: Scheme) -> list:
    return [merge_classes(x, target) for x in labels]


@dataclass(frozen=True)
class NucleiAnnotation:
    has_nuclei: bool
    positive_dots: tuple = ()
    negative_dots: tuple = ()

    def __post_init__(self):
        pos = tuple((float(x), float(y)) for x, y in self.positive_dots)
        neg = tuple((float(x), float(y)) for x, y in self.negative_dots)
        object.__setattr__(self, "positive_dots", pos)
        object.__setattr__(self, "negative_dots", neg)
        if not self.has_nuclei and (pos or neg):
            raise ConsistencyError("has_nuclei is false but dots were supplied")
        if any(x < 0 or y < 0 for x, y in pos + neg):
            raise ValidationError("dot coordinates must be non-negative")

    @property
    def positive(self) -> int:
        return len(self.positive_dots)

    @property
    def negative(self) -> int:
        return len(self.negative_dots)

    @property
    def counts(self) -> tuple:
        return self.positive, self.negative


Payload = Union[ClassLabel, NucleiAnnotation]


@dataclass(frozen=True)
class Judgment:
    image_id: str
    contributor_id: str
    payload: Payload
    elapsed_seconds: float
    mode: Mode = Mode.WORK
    is_test: bool = False
    timestamp: datetime = field(default_factory=lambda: datetime.now(timezone.utc))

    def __post_init__(self):
        if not self.elapsed_seconds > 0:
            raise ValidationError("elapsed_seconds must be positive")
        if self.mode is Mode.QUIZ and not self.is_test:
            raise ValidationError("quiz-mode judgments are always test questions")


@dataclass(frozen=True)
class GroundTruthImage:
    image_id: str
    patient_id: str
    true_label: ClassLabel
    true_pindex: float = None
    nuclei_total: int = None

    def __post_init__(self):
        if self.true_pindex is not None:
            got = classify_fraction(self.true_pindex, DEFAULT_BINS.merged(self.true_label.scheme))
            if got != self.true_label:
                raise ValidationError(
                    f"{self.image_id}: pindex {self.true_pindex} classifies as "
                    f"{got}, not {self.true_label}"
                )
