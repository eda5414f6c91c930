"""Contributor quality control for a crowd labeling job.

A contributor registers and receives a quiz task made only of test
questions.  Passing it (accuracy at or above ``min_test_accuracy``) unlocks
work mode, where every task mixes ``task_real_images`` unlabeled images with
``task_test_images`` hidden test questions.  The running trust score is the
plain ratio of correct test answers over all test answers, quiz included.

Gates applied after each accepted work submission, in order:

1. trust gate -- once ``min_images_before_filter`` work images have been
   reviewed, trust below ``min_test_accuracy`` excludes the contributor and
   invalidates all of their work judgments, re-queueing those images;
2. cap gate -- ``max_judgments_per_contributor`` accepted work judgments
   caps the contributor.

A submission faster than ``min_task_seconds`` is rejected whole; the task
stays open for resubmission and the third such violation excludes the
contributor.

:class:`Job` holds the shared state (registry, open tasks, image queue,
judgment log) behind a re-entrant lock so concurrent sessions stay
linearizable.
"""

from __future__ import annotations

import enum
import hashlib
import threading
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from fractions import Fraction
from typing import Callable, Iterable, List, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import norm

from .core import (
    DEFAULT_BINS,
    ClassLabel,
    Mode,
    NucleiAnnotation,
    Scheme,
    _exact,
    classify_fraction,
    merge_classes,
)
from .errors import (
    AlreadyRegisteredError,
    ConfigurationError,
    MalformedSubmissionError,
    NotEligibleError,
    NotFoundError,
    NoWorkError,
    StaleTaskError,
    UndefinedCorrelationError,
    ValidationError,
)
from .metrics import spearman_rho

MAX_SPEED_VIOLATIONS = 3


@dataclass(frozen=True)
class JobConfig:
    min_test_accuracy: float = 0.60
    min_task_seconds: float = 10.0
    max_judgments_per_contributor: int = 500
    min_images_before_filter: int = 20
    labels_per_image: int = 3
    quiz_size: int = 5
    task_real_images: int = 4
    task_test_images: int = 1

    def __post_init__(self):
        counts = ("max_judgments_per_contributor", "min_images_before_filter",
                  "labels_per_image", "quiz_size", "task_real_images", "task_test_images")
        for name in counts:
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be a positive count")
        if not 0 < self.min_test_accuracy <= 1:
            raise ConfigurationError("min_test_accuracy must lie in (0, 1]")
        if self.min_task_seconds < 0:
            raise ConfigurationError("min_task_seconds must be non-negative")

    @property
    def task_size(self) -> int:
        return self.task_real_images + self.task_test_images


class Status(str, enum.Enum):
    IN_QUIZ = "in_quiz"
    ACTIVE = "active"
    EXCLUDED = "excluded"
    CAPPED = "capped"
    FINISHED = "finished"


TRUSTED = (Status.ACTIVE, Status.CAPPED, Status.FINISHED)


class Verdict(str, enum.Enum):
    SPEED_REJECTED = "speed_rejected"
    QUIZ_PASSED = "quiz_passed"
    QUIZ_FAILED = "quiz_failed"
    ACCEPTED = "accepted"
    EXCLUDED = "excluded"
    CAPPED = "capped"


@dataclass
class ContributorState:
    contributor_id: str
    status: Status = Status.IN_QUIZ
    test_seen: int = 0
    test_correct: int = 0
    work_images_reviewed: int = 0
    judgments_submitted: int = 0
    speed_violations: int = 0
    seconds_spent: float = 0.0
    images_timed: int = 0
    quiz_passed: Optional[bool] = None
    exclusion_reason: Optional[str] = None

    @property
    def trust(self) -> Optional[float]:
        if self.test_seen == 0:
            return None
        return self.test_correct / self.test_seen

    @property
    def trusted(self) -> bool:
        return self.status in TRUSTED


@dataclass(frozen=True)
class Slot:
    image_id: str
    is_test: bool


@dataclass(frozen=True)
class Task:
    task_id: str
    contributor_id: str
    mode: Mode
    slots: tuple
    seq: int

    @property
    def image_ids(self) -> list:
        return [s.image_id for s in self.slots]

    def public(self) -> dict:
        """Contributor-visible view: identical shape for test and real slots."""
        return {
            "task_id": self.task_id,
            "contributor_id": self.contributor_id,
            "mode": self.mode.value,
            "images": [{"image_id": s.image_id} for s in self.slots],
        }


@dataclass(frozen=True)
class LogRecord:
    """One row of the append-only judgment log."""

    image_id: str
    contributor_id: str
    payload: object
    elapsed_seconds: float
    mode: Mode
    is_test: bool
    timestamp: datetime
    valid: bool
    trust_at_submission: Optional[float]


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


class StepClock:
    """Deterministic clock: each call advances by ``step_seconds``."""

    def __init__(self, start: datetime = datetime(2016, 1, 1, tzinfo=timezone.utc),
                 step_seconds: float = 1.0):
        self._t = start
        self._step = timedelta(seconds=step_seconds)
        self._lock = threading.Lock()

    def __call__(self) -> datetime:
        with self._lock:
            t = self._t
            self._t += self._step
            return t


def contributor_seed(master_seed: int, contributor_id: str) -> int:
    """Stable 64-bit seed for one contributor, independent of process hashing."""
    digest = hashlib.sha256(f"{master_seed}:{contributor_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def answer_class(answer, scheme: Scheme = Scheme.FOUR) -> ClassLabel:
    """Class implied by a label answer or by a nuclei annotation's PIndex."""
    if isinstance(answer, ClassLabel):
        return answer
    if isinstance(answer, NucleiAnnotation):
        pos, neg = answer.counts
        if pos + neg == 0:
            return classify_fraction(0.0, DEFAULT_BINS)
        return classify_fraction(pos / (pos + neg), DEFAULT_BINS)
    raise ValidationError(f"cannot grade answer of type {type(answer).__name__}")


def grade(answer, truth: ClassLabel) -> bool:
    """A test answer is correct when it matches truth in truth's scheme."""
    return merge_classes(answer_class(answer), truth.scheme) == truth


def parse_answer(answer, kind: str):
    if kind == "label":
        if isinstance(answer, ClassLabel):
            if answer.scheme is not Scheme.FOUR:
                raise MalformedSubmissionError("answers must be four-class labels")
            return answer
        if isinstance(answer, str):
            try:
                return ClassLabel.parse(answer)
            except ValidationError as exc:
                raise MalformedSubmissionError(str(exc)) from None
        raise MalformedSubmissionError(f"bad label answer {answer!r}")
    if isinstance(answer, NucleiAnnotation):
        return answer
    if isinstance(answer, Mapping):
        try:
            return NucleiAnnotation(
                bool(answer["has_nuclei"]),
                tuple(tuple(p) for p in answer.get("positive", ())),
                tuple(tuple(p) for p in answer.get("negative", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedSubmissionError(f"bad nuclei answer: {exc}") from None
    raise MalformedSubmissionError(f"bad nuclei answer {answer!r}")


class Job:
    """Shared state of one crowd labeling job.

    Parameters
    ----------
    config : gating parameters
    images : ids of the images that need labels, in queue order
    test_pool : test image id -> expert label
    kind : ``"label"`` (class answers) or ``"nuclei"`` (dot annotations)
    clock : callable returning the UTC timestamp for each accepted task
    """

    def __init__(self, config: JobConfig, images: Sequence[str], test_pool: Mapping[str, ClassLabel],
                 kind: str = "label", clock: Callable[[], datetime] = utc_now, grader=grade):
        if kind not in ("label", "nuclei"):
            raise ConfigurationError(f"unknown job kind {kind!r}")
        self.config = config
        self.kind = kind
        self.images = list(dict.fromkeys(images))
        if len(self.images) != len(images):
            raise ConfigurationError("duplicate image ids in the queue")
        self.test_pool = dict(test_pool)
        overlap = set(self.images) & set(self.test_pool)
        if overlap:
            raise ConfigurationError(f"images also used as test questions: {sorted(overlap)[:5]}")
        self._test_ids = sorted(self.test_pool)
        self.clock = clock
        self.grader = grader
        self.states: dict = {}
        self.tasks: dict = {}
        self.log: List[LogRecord] = []
        self.listeners: list = []
        self._lock = threading.RLock()
        self._seeds: dict = {}
        self._seq: dict = {}
        self._open: dict = {}
        self._judged: dict = {}
        self._tests_seen: dict = {}
        self._valid: dict = {img: OrderedDict() for img in self.images}
        self._load = {img: 0 for img in self.images}
        self._buckets = [OrderedDict() for _ in range(config.labels_per_image)]
        for img in self.images:
            self._buckets[0][img] = None

    # -- queue bookkeeping --------------------------------------------------

    def _set_load(self, img: str, new: int) -> None:
        old = self._load[img]
        lpi = self.config.labels_per_image
        if old < lpi:
            del self._buckets[old][img]
        if new < lpi:
            self._buckets[new][img] = None
        self._load[img] = new

    def _append(self, rec: LogRecord) -> None:
        self.log.append(rec)
        for fn in self.listeners:
            fn(rec)

    def _rng(self, cid: str, seq: int, rng_seed=None) -> np.random.Generator:
        seed = self._seeds[cid] if rng_seed is None else rng_seed
        return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(seq,)))

    def _new_task(self, cid: str, mode: Mode, slots: list) -> Task:
        seq = self._seq[cid]
        self._seq[cid] = seq + 1
        task = Task(f"{cid}-{seq}", cid, mode, tuple(slots), seq)
        self.tasks[task.task_id] = task
        self._open[cid] = task.task_id
        return task

    def _state(self, cid: str) -> ContributorState:
        try:
            return self.states[cid]
        except KeyError:
            raise NotFoundError(f"unknown contributor {cid!r}") from None

    # -- operations ----------------------------------------------------------

    def start_session(self, contributor_id: str, rng_seed=0) -> tuple:
        """Register a contributor and issue the quiz task."""
        with self._lock:
            cid = str(contributor_id)
            if cid in self.states:
                raise AlreadyRegisteredError(f"contributor {cid!r} already registered")
            q = self.config.quiz_size
            if len(self._test_ids) < q:
                raise ConfigurationError(f"test pool has {len(self._test_ids)} images; quiz needs {q}")
            state = ContributorState(cid)
            self.states[cid] = state
            self._seeds[cid] = rng_seed
            self._seq[cid] = 0
            self._judged[cid] = set()
            rng = self._rng(cid, 0)
            picks = rng.choice(len(self._test_ids), size=q, replace=False)
            tests = [self._test_ids[i] for i in picks]
            self._tests_seen[cid] = set(tests)
            task = self._new_task(cid, Mode.QUIZ, [Slot(t, True) for t in tests])
            return state, task

    def open_task(self, contributor_id: str) -> Optional[Task]:
        tid = self._open.get(contributor_id)
        return self.tasks[tid] if tid is not None else None

    def next_task(self, contributor_id: str, rng_seed=None) -> Task:
        """Issue a work task, or return the contributor's still-open task."""
        with self._lock:
            cid = str(contributor_id)
            state = self._state(cid)
            current = self.open_task(cid)
            if current is not None and current.mode is Mode.WORK:
                return current
            if state.status is not Status.ACTIVE:
                raise NotEligibleError(f"contributor {cid!r} is {state.status.value}")
            cfg = self.config
            allowed = cfg.max_judgments_per_contributor - state.judgments_submitted
            size = min(cfg.task_size, allowed)
            n_test = min(cfg.task_test_images, size - 1) if size > 1 else 0
            n_real = size - n_test
            judged = self._judged[cid]
            picked = []
            for bucket in self._buckets:
                for img in bucket:
                    if img not in judged:
                        picked.append(img)
                        if len(picked) == n_real:
                            break
                if len(picked) == n_real:
                    break
            if not picked:
                raise NoWorkError(f"no images left for contributor {cid!r}")
            for img in picked:
                judged.add(img)
                self._set_load(img, self._load[img] + 1)
            rng = self._rng(cid, self._seq[cid], rng_seed)
            seen = self._tests_seen[cid]
            slots = [Slot(img, False) for img in picked]
            for _ in range(n_test):
                fresh = [t for t in self._test_ids if t not in seen]
                pool = fresh or self._test_ids
                t = pool[int(rng.integers(len(pool)))]
                seen.add(t)
                slots.insert(int(rng.integers(len(slots) + 1)), Slot(t, True))
            return self._new_task(cid, Mode.WORK, slots)

    def _release(self, task: Task) -> None:
        for s in task.slots:
            if not s.is_test:
                self._set_load(s.image_id, self._load[s.image_id] - 1)
                self._judged[task.contributor_id].discard(s.image_id)

    def _close(self, task: Task) -> None:
        self.tasks.pop(task.task_id, None)
        if self._open.get(task.contributor_id) == task.task_id:
            del self._open[task.contributor_id]

    def _exclude(self, state: ContributorState, reason: str) -> None:
        state.status = Status.EXCLUDED
        state.exclusion_reason = reason
        task = self.open_task(state.contributor_id)
        if task is not None:
            if task.mode is Mode.WORK:
                self._release(task)
            self._close(task)
        self.invalidate_contributor(state.contributor_id)

    def _below_threshold(self, state: ContributorState) -> bool:
        return Fraction(state.test_correct, state.test_seen) < _exact(self.config.min_test_accuracy)

    def submit_task(self, task_id: str, answers: Sequence, elapsed_seconds: float,
                    contributor_id: Optional[str] = None) -> tuple:
        """Grade and record one task submission; returns ``(state, verdict)``."""
        with self._lock:
            task = self.tasks.get(task_id)
            if task is None:
                raise StaleTaskError(f"task {task_id!r} is not open")
            if contributor_id is not None and contributor_id != task.contributor_id:
                raise StaleTaskError(f"task {task_id!r} was not issued to {contributor_id!r}")
            answers = list(answers)
            if len(answers) != len(task.slots):
                raise MalformedSubmissionError(
                    f"task {task_id!r} has {len(task.slots)} slots, got {len(answers)} answers")
            parsed = [parse_answer(a, self.kind) for a in answers]
            try:
                elapsed = float(elapsed_seconds)
            except (TypeError, ValueError):
                raise MalformedSubmissionError("elapsed_seconds must be a number") from None
            if not elapsed > 0:
                raise MalformedSubmissionError("elapsed_seconds must be positive")
            state = self.states[task.contributor_id]
            cfg = self.config

            if elapsed < cfg.min_task_seconds:
                state.speed_violations += 1
                if state.speed_violations >= MAX_SPEED_VIOLATIONS:
                    self._exclude(state, "speed")
                    return state, Verdict.EXCLUDED
                return state, Verdict.SPEED_REJECTED

            for slot, ans in zip(task.slots, parsed):
                if slot.is_test:
                    state.test_seen += 1
                    state.test_correct += bool(self.grader(ans, self.test_pool[slot.image_id]))
            state.seconds_spent += elapsed
            state.images_timed += len(task.slots)
            trust = state.trust
            stamp = self.clock()
            self._close(task)
            for slot, ans in zip(task.slots, parsed):
                self._append(LogRecord(slot.image_id, task.contributor_id, ans, elapsed, task.mode,
                                       slot.is_test, stamp, True, trust))

            if task.mode is Mode.QUIZ:
                state.quiz_passed = not self._below_threshold(state)
                if state.quiz_passed:
                    state.status = Status.ACTIVE
                    return state, Verdict.QUIZ_PASSED
                self._exclude(state, "quiz")
                return state, Verdict.QUIZ_FAILED

            state.work_images_reviewed += len(task.slots)
            state.judgments_submitted += len(task.slots)
            for slot in task.slots:
                if not slot.is_test:
                    self._valid[slot.image_id][task.contributor_id] = len(self.log) - 1
            if state.work_images_reviewed >= cfg.min_images_before_filter and self._below_threshold(state):
                self._exclude(state, "trust")
                return state, Verdict.EXCLUDED
            if state.judgments_submitted >= cfg.max_judgments_per_contributor:
                state.status = Status.CAPPED
                return state, Verdict.CAPPED
            return state, Verdict.ACCEPTED

    def invalidate_contributor(self, contributor_id: str) -> int:
        """Invalidate every valid work judgment of a contributor.

        Appends one invalidation record per judgment and re-queues each image.
        Idempotent; returns the number of judgments invalidated.
        """
        with self._lock:
            cid = str(contributor_id)
            self._state(cid)
            count = 0
            for img in self.images:
                idx = self._valid[img].pop(cid, None)
                if idx is None:
                    continue
                self._append(replace(self.log[idx], valid=False))
                self._set_load(img, self._load[img] - 1)
                count += 1
            return count

    def finish(self, contributor_id: str) -> ContributorState:
        """Mark an active contributor as done, releasing any open task."""
        with self._lock:
            state = self._state(contributor_id)
            if state.status is Status.ACTIVE:
                task = self.open_task(state.contributor_id)
                if task is not None:
                    self._release(task)
                    self._close(task)
                state.status = Status.FINISHED
            return state

    # -- views ---------------------------------------------------------------

    def valid_count(self, image_id: str) -> int:
        return len(self._valid[image_id])

    def incomplete_images(self) -> list:
        lpi = self.config.labels_per_image
        return [img for img in self.images if len(self._valid[img]) < lpi]

    @property
    def complete(self) -> bool:
        return not self.incomplete_images()

    def trusts(self) -> dict:
        return {cid: s.trust for cid, s in self.states.items() if s.trust is not None}

    def valid_judgments(self) -> dict:
        """image id -> list of ``(contributor_id, payload)`` currently valid."""
        with self._lock:
            return {img: [(cid, self.log[i].payload) for cid, i in self._valid[img].items()]
                    for img in self.images}

    def progress(self) -> dict:
        with self._lock:
            lpi = self.config.labels_per_image
            done = sum(1 for img in self.images if len(self._valid[img]) >= lpi)
            by_status = {s.value: 0 for s in Status}
            for st in self.states.values():
                by_status[st.status.value] += 1
            return {
                "images": len(self.images),
                "complete": done,
                "remaining": len(self.images) - done,
                "labels_per_image": lpi,
                "valid_judgments": sum(len(v) for v in self._valid.values()),
                "log_records": len(self.log),
                "open_tasks": len(self.tasks),
                "contributors": by_status,
            }


# -- functional wrappers ------------------------------------------------------


def start_session(job: Job, contributor_id: str, rng_seed=0) -> tuple:
    return job.start_session(contributor_id, rng_seed)


def submit_task(job: Job, task: Task, answers: Sequence, elapsed_seconds: float) -> tuple:
    return job.submit_task(task.task_id, answers, elapsed_seconds, task.contributor_id)


def next_task(job: Job, contributor_id: str, rng_seed=None) -> Task:
    return job.next_task(contributor_id, rng_seed)


def invalidate_contributor(job: Job, contributor_id: str) -> int:
    return job.invalidate_contributor(contributor_id)


# -- reporting -----------------------------------------------------------------


@dataclass
class PopulationStats:
    contributors: int = 0
    mean_test_accuracy: float = 0.0
    mean_seconds_per_image: float = 0.0


@dataclass
class ContributorStatsTable:
    trusted: PopulationStats = field(default_factory=PopulationStats)
    untrusted: PopulationStats = field(default_factory=PopulationStats)
    quiz_passed: int = 0
    quiz_failed: int = 0
    work_passed: int = 0
    work_failed: int = 0
    trust_volume_rho: float = 0.0
    trust_volume_p: float = 1.0
    trust_volume_n: int = 0

    def pass_fail_rows(self) -> list:
        """Rows in quiz/work pass-fail layout."""
        return [
            ("quiz_passed", self.quiz_passed), ("quiz_failed", self.quiz_failed),
            ("work_passed", self.work_passed), ("work_failed", self.work_failed),
        ]

    def rows(self) -> list:
        out = []
        for name, pop in (("trusted", self.trusted), ("untrusted", self.untrusted)):
            out += [
                (f"{name}_contributors", pop.contributors),
                (f"{name}_mean_test_accuracy", pop.mean_test_accuracy),
                (f"{name}_mean_seconds_per_image", pop.mean_seconds_per_image),
            ]
        out += self.pass_fail_rows()
        out += [("trust_volume_rho", self.trust_volume_rho),
                ("trust_volume_p", self.trust_volume_p),
                ("trust_volume_n", self.trust_volume_n)]
        return out


def _population(states: list) -> PopulationStats:
    if not states:
        return PopulationStats()
    accs = [s.trust for s in states if s.trust is not None]
    secs = sum(s.seconds_spent for s in states)
    imgs = sum(s.images_timed for s in states)
    return PopulationStats(
        contributors=len(states),
        mean_test_accuracy=float(np.mean(accs)) if accs else 0.0,
        mean_seconds_per_image=secs / imgs if imgs else 0.0,
    )


def contributor_report(log: Iterable[LogRecord], states: Mapping[str, ContributorState]) -> ContributorStatsTable:
    """Contributor performance summary.

    Trusted contributors end Active, Capped or Finished; untrusted ones end
    Excluded.  Seconds per image are pooled over every accepted task.  The
    trust/volume correlation uses work images labeled per contributor that
    reached work mode, with a normal-approximation p-value.
    """
    states = dict(states)
    decided = [s for s in states.values() if s.status is not Status.IN_QUIZ]
    trusted = [s for s in decided if s.trusted]
    untrusted = [s for s in decided if s.status is Status.EXCLUDED]
    table = ContributorStatsTable(trusted=_population(trusted), untrusted=_population(untrusted))
    table.quiz_passed = sum(1 for s in decided if s.quiz_passed)
    table.quiz_failed = sum(1 for s in decided if s.quiz_passed is False)
    table.work_passed = sum(1 for s in trusted if s.quiz_passed)
    table.work_failed = sum(1 for s in untrusted if s.quiz_passed)

    labeled: dict = {}
    for rec in log:
        if rec.mode is Mode.WORK and not rec.is_test and rec.valid:
            labeled[rec.contributor_id] = labeled.get(rec.contributor_id, 0) + 1
    workers = [s for s in decided if s.quiz_passed and s.trust is not None]
    table.trust_volume_n = len(workers)
    if len(workers) >= 3:
        try:
            rho = spearman_rho([s.trust for s in workers],
                               [labeled.get(s.contributor_id, 0) for s in workers])
        except UndefinedCorrelationError:
            rho = None
        if rho is not None:
            table.trust_volume_rho = rho
            z = abs(rho) * np.sqrt(len(workers) - 1)
            table.trust_volume_p = float(2 * norm.sf(z))
    return table


# -- scripted replay -------------------------------------------------------------


@dataclass(frozen=True)
class ScriptRow:
    contributor_id: str
    task_seq: int
    slot_seq: int
    answer: str
    elapsed_seconds: float


def group_script(rows: Iterable[ScriptRow]) -> list:
    """Group rows into ``(contributor_id, task_seq, answers, elapsed)`` steps.

    Steps keep the file order of each (contributor, task) group's first row.
    """
    groups: "OrderedDict[tuple, list]" = OrderedDict()
    for r in rows:
        groups.setdefault((r.contributor_id, r.task_seq), []).append(r)
    steps = []
    for (cid, seq), rs in groups.items():
        rs = sorted(rs, key=lambda r: r.slot_seq)
        steps.append((cid, seq, [r.answer for r in rs], rs[0].elapsed_seconds))
    return steps


@dataclass
class ReplayEvent:
    contributor_id: str
    task_seq: int
    outcome: str
    status: str
    trust: Optional[float]


def replay(job: Job, rows: Iterable[ScriptRow], master_seed: int = 0) -> list:
    """Drive ``job`` from a scripted answer stream.

    Task sequence 0 is the quiz issued on registration; later sequence
    numbers fetch the contributor's next (or still open) work task.  Errors
    are recorded as events rather than raised.
    """
    events = []
    for cid, seq, answers, elapsed in group_script(rows):
        try:
            if cid not in job.states:
                _, task = job.start_session(cid, contributor_seed(master_seed, cid))
            else:
                task = job.open_task(cid) or job.next_task(cid)
            state, verdict = job.submit_task(task.task_id, answers, elapsed, cid)
            outcome = verdict.value
        except ValidationError as exc:
            state = job.states.get(cid)
            outcome = exc.code
        events.append(ReplayEvent(cid, seq, outcome,
                                  state.status.value if state else "unregistered",
                                  state.trust if state else None))
    return events
