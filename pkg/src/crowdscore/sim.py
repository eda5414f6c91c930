"""Synthetic ground truth and simulated contributors.

Contributors answer through a 4x4 confusion matrix (row = true class,
column = reported class), spend lognormally distributed time per task, and
for nuclei jobs detect, mislabel and hallucinate nuclei independently.

Every random draw comes from a stream derived from ``master_seed``: one
stream per ground-truth image and one per contributor, so results do not
depend on how the work is scheduled between them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .core import (
    DEFAULT_BINS,
    ClassLabel,
    GroundTruthImage,
    NucleiAnnotation,
    label,
)
from .errors import ConfigurationError, DomainError, IncompleteTruthError, NotEligibleError, NoWorkError
from .qc import Job, JobConfig, Status, Verdict, contributor_seed

FRAME = (828, 848)  # nominal image width x height in pixels
_TRUTH, _TESTS, _WORKERS, _DIFFICULTY = 0, 1, 2, 3


def confusion_from_accuracy(accuracy: float, spread: str = "adjacent") -> np.ndarray:
    """Confusion matrix with ``accuracy`` on the diagonal.

    ``adjacent`` sends errors to neighbouring classes only; ``uniform``
    spreads them evenly over the other three classes.
    """
    if not 0 <= accuracy <= 1:
        raise DomainError("accuracy must lie in [0, 1]")
    m = np.zeros((4, 4))
    for i in range(4):
        if spread == "adjacent":
            others = [j for j in (i - 1, i + 1) if 0 <= j < 4]
        elif spread == "uniform":
            others = [j for j in range(4) if j != i]
        else:
            raise ConfigurationError(f"unknown confusion spread {spread!r}")
        m[i, i] = accuracy
        for j in others:
            m[i, j] = (1 - accuracy) / len(others)
    return m


@dataclass
class ContributorProfile:
    confusion: np.ndarray = field(default_factory=lambda: np.eye(4))
    seconds_per_task: tuple = (160.0, 0.5)  # arithmetic mean, log-sigma
    nuclei_detect_prob: float = 1.0
    nuclei_flip_prob: float = 0.0
    nuclei_false_positive_rate: float = 0.0
    quit_after: Optional[int] = None
    name: str = "contributor"

    def __post_init__(self):
        m = np.asarray(self.confusion, dtype=float)
        if m.shape != (4, 4):
            raise ConfigurationError("confusion must be 4x4")
        if np.any(m < 0) or np.any(np.abs(m.sum(axis=1) - 1) > 1e-9):
            raise ConfigurationError("confusion rows must be probability vectors")
        self.confusion = m
        self._cdf = np.cumsum(m, axis=1)
        for p in (self.nuclei_detect_prob, self.nuclei_flip_prob):
            if not 0 <= p <= 1:
                raise ConfigurationError("nuclei probabilities must lie in [0, 1]")
        if self.nuclei_false_positive_rate < 0:
            raise ConfigurationError("false-positive rate must be non-negative")
        mean, sigma = self.seconds_per_task
        if mean <= 0 or sigma < 0:
            raise ConfigurationError("task time needs a positive mean and non-negative sigma")

    @classmethod
    def with_accuracy(cls, accuracy: float, spread: str = "adjacent", **kw) -> "ContributorProfile":
        return cls(confusion=confusion_from_accuracy(accuracy, spread), **kw)

    def draw_seconds(self, rng: np.random.Generator) -> float:
        mean, sigma = self.seconds_per_task
        mu = np.log(mean) - sigma ** 2 / 2
        return float(rng.lognormal(mu, sigma))


@dataclass
class SimConfig:
    n_images: int = 5483
    n_patients: int = 1909
    class_prior: tuple = (0.3, 0.15, 0.35, 0.2)
    nuclei_per_image: float = 149.0
    contributor_pool: list = field(default_factory=list)
    labels_per_image: int = 3
    master_seed: int = 0
    n_test_images: int = 250
    kind: str = "label"
    difficulty_correlation: float = 0.0

    def __post_init__(self):
        prior = np.asarray(self.class_prior, dtype=float)
        if prior.shape != (4,) or np.any(prior < 0) or abs(prior.sum() - 1) > 1e-9:
            raise ConfigurationError("class_prior must be four probabilities summing to 1")
        if self.n_images < 1 or self.n_patients < 1:
            raise DomainError("need at least one image and one patient")
        if not self.n_patients <= self.n_images <= 3 * self.n_patients:
            raise DomainError("every patient contributes 1-3 images")
        if self.labels_per_image < 1 or self.n_test_images < 0 or self.nuclei_per_image <= 0:
            raise ConfigurationError("counts must be positive")
        if not 0 <= self.difficulty_correlation < 1:
            raise ConfigurationError("difficulty_correlation must lie in [0, 1)")
        for profile, count in self.contributor_pool:
            if count < 1:
                raise ConfigurationError("contributor counts must be positive")

    def stream(self, *key) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.master_seed, spawn_key=key))


def _truth_image(rng, image_id, patient_id, cls: int, mean_nuclei: float) -> GroundTruthImage:
    lo, hi = DEFAULT_BINS.bounds(cls)
    target = rng.uniform(lo, hi)
    n = max(int(rng.poisson(mean_nuclei)), 10)
    while True:
        # integer positive counts whose ratio stays inside the class bin
        k_min = 0 if cls == 0 else int(np.floor(lo * n)) + 1
        k_max = int(np.floor(hi * n))
        if k_min <= k_max:
            break
        n += 1
    k = min(max(int(round(target * n)), k_min), k_max)
    return GroundTruthImage(image_id, patient_id, label(cls), k / n, n)


def sample_ground_truth(cfg: SimConfig) -> List[GroundTruthImage]:
    """Four-class ground truth grouped into patients of 1-3 images."""
    rng = cfg.stream(_TRUTH)
    extra = cfg.n_images - cfg.n_patients
    slots = rng.choice(2 * cfg.n_patients, size=extra, replace=False)
    per_patient = 1 + np.bincount(slots // 2, minlength=cfg.n_patients)
    classes = rng.choice(4, size=cfg.n_images, p=np.asarray(cfg.class_prior))
    width = len(str(cfg.n_images))
    pwidth = len(str(cfg.n_patients))
    out = []
    i = 0
    for p, count in enumerate(per_patient):
        pid = f"P{p + 1:0{pwidth}d}"
        for _ in range(count):
            img_rng = cfg.stream(_TRUTH, i)
            out.append(_truth_image(img_rng, f"I{i + 1:0{width}d}", pid, int(classes[i]),
                                    cfg.nuclei_per_image))
            i += 1
    return out


def sample_test_pool(cfg: SimConfig) -> List[GroundTruthImage]:
    """Expert-labeled test questions, disjoint from the work images."""
    rng = cfg.stream(_TESTS)
    classes = rng.choice(4, size=cfg.n_test_images, p=np.asarray(cfg.class_prior))
    width = len(str(max(cfg.n_test_images, 1)))
    return [_truth_image(cfg.stream(_TESTS, i), f"T{i + 1:0{width}d}", "TEST", int(c),
                         cfg.nuclei_per_image)
            for i, c in enumerate(classes)]


def simulate_label(profile: ContributorProfile, truth: ClassLabel, rng: np.random.Generator,
                   difficulty: float = 0.0, correlation: float = 0.0) -> ClassLabel:
    """Draw a reported four-class label from the truth's confusion row.

    With ``correlation`` > 0 the answer is correct when
    ``correlation * difficulty + sqrt(1 - correlation**2) * eps`` falls below
    the normal quantile of the diagonal entry (``eps`` standard normal), so
    contributors tend to fail on the same hard images while each keeps the
    diagonal as marginal accuracy over images with standard-normal
    ``difficulty``.  Errors follow the off-diagonal part of the row.
    """
    k = truth.value
    if correlation == 0.0:
        row = profile._cdf[k]
        j = int(np.searchsorted(row, rng.random() * row[-1], side="right"))
        return label(min(j, 3))
    acc = profile.confusion[k, k]
    eps = rng.standard_normal()
    if acc >= 1.0 or (acc > 0.0 and correlation * difficulty + np.sqrt(1 - correlation ** 2) * eps < ndtri(acc)):
        return truth
    off = profile.confusion[k].copy()
    off[k] = 0.0
    cdf = np.cumsum(off)
    j = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return label(min(j, 3))


def image_difficulty(cfg: SimConfig, test: bool, index: int) -> float:
    """Standard-normal difficulty of one work (``test`` False) or test image."""
    return float(cfg.stream(_DIFFICULTY, int(test), index).standard_normal())


def simulate_nuclei(profile: ContributorProfile, gt: GroundTruthImage, rng: np.random.Generator) -> NucleiAnnotation:
    """Dot annotation produced by one contributor for one image."""
    if gt.nuclei_total is None or gt.true_pindex is None:
        raise IncompleteTruthError(f"{gt.image_id} has no nuclei ground truth")
    n = int(gt.nuclei_total)
    k = int(round(gt.true_pindex * n))
    d, f = profile.nuclei_detect_prob, profile.nuclei_flip_prob
    pos_det = int(rng.binomial(k, d))
    neg_det = int(rng.binomial(n - k, d))
    pos_flip = int(rng.binomial(pos_det, f))
    neg_flip = int(rng.binomial(neg_det, f))
    fp = int(rng.poisson(profile.nuclei_false_positive_rate))
    fp_pos = int(rng.binomial(fp, 0.5))
    n_pos = pos_det - pos_flip + neg_flip + fp_pos
    n_neg = neg_det - neg_flip + pos_flip + (fp - fp_pos)
    pos = rng.integers(0, FRAME, size=(n_pos, 2))
    neg = rng.integers(0, FRAME, size=(n_neg, 2))
    return NucleiAnnotation(n_pos + n_neg > 0, tuple(map(tuple, pos.tolist())), tuple(map(tuple, neg.tolist())))


def expected_positive_count(profile: ContributorProfile, gt: GroundTruthImage) -> float:
    n = gt.nuclei_total
    k = round(gt.true_pindex * n)
    d, f = profile.nuclei_detect_prob, profile.nuclei_flip_prob
    return k * d * (1 - f) + (n - k) * d * f + profile.nuclei_false_positive_rate / 2


class VirtualClock:
    """Clock the simulator sets to the acting contributor's virtual time."""

    def __init__(self, start: datetime = datetime(2016, 1, 1, tzinfo=timezone.utc)):
        self.start = start
        self.now = start

    def __call__(self) -> datetime:
        return self.now


@dataclass
class SimulationResult:
    truth: List[GroundTruthImage]
    test_pool: List[GroundTruthImage]
    job: Job
    profiles: dict
    complete: bool
    incomplete: list

    @property
    def log(self):
        return self.job.log

    @property
    def states(self):
        return self.job.states


def expand_pool(pool: Sequence) -> list:
    """``[(profile, count), ...]`` -> ``[(contributor_id, profile), ...]``."""
    total = sum(c for _, c in pool)
    width = len(str(max(total, 1)))
    out = []
    for profile, count in pool:
        for _ in range(count):
            out.append((f"W{len(out) + 1:0{width}d}", profile))
    return out


def run_simulation(cfg: SimConfig, job_config: Optional[JobConfig] = None) -> SimulationResult:
    """Run a whole crowd job through the quality-control state machine.

    Contributors act round-robin, one task per turn, until every image has
    its labels or no contributor can continue.  An exhausted pool yields a
    result with ``complete`` False instead of an exception.
    """
    if job_config is None:
        job_config = JobConfig(labels_per_image=cfg.labels_per_image)
    if not cfg.contributor_pool:
        raise ConfigurationError("contributor pool is empty")
    truth = sample_ground_truth(cfg)
    tests = sample_test_pool(cfg)
    by_id = {g.image_id: g for g in truth}
    by_id.update({g.image_id: g for g in tests})
    rho = cfg.difficulty_correlation
    difficulty = {}
    if rho:
        difficulty = {g.image_id: image_difficulty(cfg, False, i) for i, g in enumerate(truth)}
        difficulty.update({g.image_id: image_difficulty(cfg, True, i) for i, g in enumerate(tests)})
    clock = VirtualClock()
    job = Job(job_config, [g.image_id for g in truth], {g.image_id: g.true_label for g in tests},
              kind=cfg.kind, clock=clock)

    members = expand_pool(cfg.contributor_pool)
    rngs = {cid: cfg.stream(_WORKERS, i) for i, (cid, _) in enumerate(members)}
    elapsed_total = {cid: 0.0 for cid, _ in members}
    profiles = dict(members)

    def answer(profile, rng, image_id):
        gt = by_id[image_id]
        if cfg.kind == "nuclei":
            return simulate_nuclei(profile, gt, rng)
        return simulate_label(profile, gt.true_label, rng, difficulty.get(image_id, 0.0), rho)

    active = [cid for cid, _ in members]
    while active and not job.complete:
        still = []
        for cid in active:
            if job.complete:
                still.append(cid)
                continue
            profile, rng = profiles[cid], rngs[cid]
            try:
                if cid not in job.states:
                    _, task = job.start_session(cid, contributor_seed(cfg.master_seed, cid))
                else:
                    task = job.open_task(cid) or job.next_task(cid)
            except NoWorkError:
                job.finish(cid)
                continue
            except NotEligibleError:
                continue
            answers = [answer(profile, rng, s.image_id) for s in task.slots]
            secs = profile.draw_seconds(rng)
            elapsed_total[cid] += secs
            clock.now = clock.start + timedelta(seconds=elapsed_total[cid])
            state, verdict = job.submit_task(task.task_id, answers, secs, cid)
            if state.status in (Status.ACTIVE, Status.IN_QUIZ):
                if (profile.quit_after is not None and verdict is not Verdict.SPEED_REJECTED
                        and state.judgments_submitted >= profile.quit_after):
                    job.finish(cid)
                    continue
                still.append(cid)
        active = still
    incomplete = job.incomplete_images()
    return SimulationResult(truth, tests, job, profiles, not incomplete, incomplete)


def mixed_pool(scale: int = 1) -> list:
    """Mixed pool whose trusted members answer test questions at 80 %.

    Reliable members take about 32 s per image; weak members about 149 s.
    A borderline group near the 60 % gate produces work-mode exclusions.
    """
    per_task = 5
    reliable = ContributorProfile.with_accuracy(0.80, seconds_per_task=(32.0 * per_task, 0.4), name="reliable")
    borderline = ContributorProfile.with_accuracy(0.60, seconds_per_task=(60.0 * per_task, 0.5), name="borderline")
    weak = ContributorProfile.with_accuracy(0.40, seconds_per_task=(149.0 * per_task, 0.5), name="weak")
    return [(reliable, 60 * scale), (borderline, 20 * scale), (weak, 40 * scale)]


def perfect_pool(count: int = 20, seconds: float = 60.0) -> list:
    return [(ContributorProfile(seconds_per_task=(seconds, 0.0), name="perfect"), count)]


# Image-level error correlation that reproduces the pilot's spread of
# per-image agreement (median 6 of 10 labels correct, 15 % of images
# unanimous) for contributors near 60 % accuracy.
PILOT_DIFFICULTY_CORRELATION = 0.7


def simulate_label_grid(cfg: SimConfig, profile: ContributorProfile, n_labels: int = 10,
                        n_test_questions: int = 25) -> tuple:
    """Pilot-style data: every image labeled ``n_labels`` times by fresh draws.

    Returns ``(truth, grid, trusts)``.  ``grid[i][j]`` is the four-class code
    of label slot ``j`` on image ``i``; ``trusts[i][j]`` is the trust of the
    contributor behind that slot, their observed accuracy on
    ``n_test_questions`` test questions.  Slot ``j`` of image ``i`` draws
    from stream ``(_WORKERS, j, i)``, so adding slots keeps earlier ones.
    """
    truth = sample_ground_truth(cfg)
    rho = cfg.difficulty_correlation
    accuracy = float(np.dot(cfg.class_prior, np.diag(profile.confusion)))
    grid, trusts = [], []
    for i, g in enumerate(truth):
        z = image_difficulty(cfg, False, i) if rho else 0.0
        row, trow = [], []
        for j in range(n_labels):
            rng = cfg.stream(_WORKERS, j, i)
            row.append(simulate_label(profile, g.true_label, rng, z, rho).value)
            trow.append(rng.binomial(n_test_questions, accuracy) / n_test_questions)
        grid.append(row)
        trusts.append(trow)
    return truth, grid, trusts
