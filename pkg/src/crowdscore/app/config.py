"""INI-style configuration.

Sections::

    [job]                      JobConfig fields
    [weights]                  A, B, C, D class weights, or ``midpoint = true``
    [sim]                      SimConfig scalars; ``pool`` = mixed | perfect | custom
    [contributor.<name>]       custom pool members (count, accuracy, spread,
                               seconds_mean, seconds_sigma, detect_prob,
                               flip_prob, false_positive_rate, quit_after)
    [pipeline]                 judgments, truth, out, method, allow_partial

Unknown keys are rejected so typos do not silently fall back to defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..aggregate import DEFAULT_WEIGHTS, ClassWeights
from ..errors import ConfigurationError
from ..qc import JobConfig
from ..sim import ContributorProfile, SimConfig, mixed_pool, perfect_pool

AGGREGATORS = ("cv", "ct", "wcv", "wct", "nuclei")


@dataclass
class PipelineConfig:
    judgments: Optional[Path] = None
    truth: Optional[Path] = None
    out: Path = Path("out")
    job: JobConfig = field(default_factory=JobConfig)
    weights: ClassWeights = DEFAULT_WEIGHTS
    methods: tuple = ("cv", "ct", "wcv", "wct")
    schemes: tuple = ("three", "two")
    allow_partial: bool = False
    seed: int = 0
    figures: bool = True

    def __post_init__(self):
        self.methods = tuple(m.lower() for m in self.methods)
        for m in self.methods:
            if m not in AGGREGATORS:
                raise ConfigurationError(f"unknown aggregator {m!r}; choose from {', '.join(AGGREGATORS)}")
        if "nuclei" in self.methods and len(self.methods) > 1:
            raise ConfigurationError("the nuclei aggregator cannot be combined with label aggregators")
        paths = [p for p in (self.judgments, self.truth, self.out) if p is not None]
        if len({Path(p).resolve() for p in paths}) != len(paths):
            raise ConfigurationError("input and output paths must be distinct")


def _typed(cls, section: configparser.SectionProxy):
    kwargs = {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key, raw in section.items():
        if key not in fields:
            raise ConfigurationError(f"[{section.name}] unknown key {key!r}")
        default = fields[key].default
        try:
            if isinstance(default, bool):
                kwargs[key] = section.getboolean(key)
            elif isinstance(default, int):
                kwargs[key] = int(raw)
            elif isinstance(default, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw
        except ValueError as exc:
            raise ConfigurationError(f"[{section.name}] {key}: {exc}") from None
    return kwargs


def load(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    return cp


def job_config(cp: Optional[configparser.ConfigParser]) -> JobConfig:
    if cp is None or not cp.has_section("job"):
        return JobConfig()
    return JobConfig(**_typed(JobConfig, cp["job"]))


def class_weights(cp: Optional[configparser.ConfigParser]) -> ClassWeights:
    if cp is None or not cp.has_section("weights"):
        return DEFAULT_WEIGHTS
    sec = cp["weights"]
    if sec.getboolean("midpoint", fallback=False):
        return ClassWeights.midpoints()
    extra = set(sec) - {"a", "b", "c", "d", "midpoint"}
    if extra:
        raise ConfigurationError(f"[weights] unknown key {sorted(extra)[0]!r}")
    w = [sec.getfloat(k, fallback=d) for k, d in zip("abcd", DEFAULT_WEIGHTS.weights)]
    return ClassWeights(tuple(w))


_PROFILE_KEYS = {"count", "accuracy", "spread", "seconds_mean", "seconds_sigma", "detect_prob",
                 "flip_prob", "false_positive_rate", "quit_after"}


def _profile(name: str, sec) -> tuple:
    extra = set(sec) - _PROFILE_KEYS
    if extra:
        raise ConfigurationError(f"[{sec.name}] unknown key {sorted(extra)[0]!r}")
    try:
        quit_after = sec.get("quit_after")
        profile = ContributorProfile.with_accuracy(
            sec.getfloat("accuracy", 0.8),
            sec.get("spread", "adjacent"),
            seconds_per_task=(sec.getfloat("seconds_mean", 160.0), sec.getfloat("seconds_sigma", 0.5)),
            nuclei_detect_prob=sec.getfloat("detect_prob", 1.0),
            nuclei_flip_prob=sec.getfloat("flip_prob", 0.0),
            nuclei_false_positive_rate=sec.getfloat("false_positive_rate", 0.0),
            quit_after=int(quit_after) if quit_after else None,
            name=name,
        )
        return profile, sec.getint("count", 1)
    except ValueError as exc:
        raise ConfigurationError(f"[{sec.name}] {exc}") from None


def sim_config(cp: Optional[configparser.ConfigParser], seed: Optional[int] = None, **overrides) -> SimConfig:
    kwargs = {}
    pool_kind = "mixed"
    if cp is not None and cp.has_section("sim"):
        sec = cp["sim"]
        pool_kind = sec.get("pool", "mixed")
        for key in sec:
            if key == "pool":
                continue
            if key == "class_prior":
                kwargs[key] = tuple(float(x) for x in sec[key].split(","))
                continue
            fields = {f.name: f for f in dataclasses.fields(SimConfig)}
            if key not in fields or key == "contributor_pool":
                raise ConfigurationError(f"[sim] unknown key {key!r}")
            default = fields[key].default
            try:
                kwargs[key] = type(default)(sec[key]) if default is not dataclasses.MISSING else sec[key]
            except ValueError as exc:
                raise ConfigurationError(f"[sim] {key}: {exc}") from None
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    if seed is not None:
        kwargs["master_seed"] = seed
    if pool_kind == "mixed":
        pool = mixed_pool()
    elif pool_kind == "perfect":
        pool = perfect_pool()
    elif pool_kind == "custom":
        pool = [_profile(name.split(".", 1)[1], cp[name])
                for name in cp.sections() if name.startswith("contributor.")]
        if not pool:
            raise ConfigurationError("custom pool needs [contributor.<name>] sections")
    else:
        raise ConfigurationError(f"unknown pool {pool_kind!r}")
    return SimConfig(contributor_pool=pool, **kwargs)


def pipeline_config(cp: Optional[configparser.ConfigParser], **overrides) -> PipelineConfig:
    kwargs = {}
    if cp is not None and cp.has_section("pipeline"):
        sec = cp["pipeline"]
        for key in sec:
            if key in ("judgments", "truth", "out"):
                kwargs[key] = Path(sec[key])
            elif key in ("method", "methods"):
                kwargs["methods"] = tuple(x.strip() for x in sec[key].split(",") if x.strip())
            elif key == "schemes":
                kwargs["schemes"] = tuple(x.strip() for x in sec[key].split(",") if x.strip())
            elif key in ("allow_partial", "figures"):
                kwargs[key] = sec.getboolean(key)
            elif key == "seed":
                kwargs[key] = sec.getint(key)
            else:
                raise ConfigurationError(f"[pipeline] unknown key {key!r}")
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(job=job_config(cp), weights=class_weights(cp), **kwargs)


EXAMPLE = """\
# crowdscore configuration
[job]
min_test_accuracy = 0.6
min_task_seconds = 10
max_judgments_per_contributor = 500
min_images_before_filter = 20
labels_per_image = 3
quiz_size = 5
task_real_images = 4
task_test_images = 1

[weights]
# set midpoint = true to use bin midpoints (B = 0.055)
a = 0.005
b = 0.05
c = 0.3
d = 0.75

[sim]
n_images = 5483
n_patients = 1909
class_prior = 0.3, 0.15, 0.35, 0.2
nuclei_per_image = 149
labels_per_image = 3
n_test_images = 250
kind = label
pool = mixed

[pipeline]
method = cv, ct, wcv, wct
allow_partial = false
"""
