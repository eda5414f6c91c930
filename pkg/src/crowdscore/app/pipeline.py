"""Batch pipeline: ingest -> aggregate per image -> patient rollup ->
scheme merges -> agreement metrics against ground truth -> files."""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..aggregate import (
    DEFAULT_WEIGHTS,
    ClassWeights,
    aggregate,
    nuclei_label,
    patient_label,
    tally,
    weighted_score,
)
from ..core import ClassLabel, GroundTruthImage, NucleiAnnotation, Scheme, merge_classes
from ..errors import ReconciliationError, ValidationError
from ..metrics import MetricReport, RatingsMatrix, metric_report
from ..sensitivity import sensitivity_analysis
from . import io
from .config import PipelineConfig

log = logging.getLogger(__name__)


@dataclass
class ImageResult:
    image_id: str
    label: ClassLabel
    n_judgments: int
    score: Optional[float] = None
    flagged: bool = False


def aggregate_images(judgments: Dict[str, list], method: str, trusts: Optional[dict] = None,
                     weights: ClassWeights = DEFAULT_WEIGHTS) -> "OrderedDict[str, ImageResult]":
    """Aggregate each image's ``[(contributor_id, payload)]`` list."""
    out = OrderedDict()
    for img, votes in judgments.items():
        if method == "nuclei":
            anns = [p for _, p in votes]
            if not all(isinstance(a, NucleiAnnotation) for a in anns):
                raise ValidationError(f"{img}: nuclei aggregation needs dot annotations")
            lab, pidx, flagged = nuclei_label(anns)
            out[img] = ImageResult(img, lab, len(votes), pidx, flagged)
            continue
        t = tally(votes, trusts if method in ("ct", "wct") else None)
        lab = aggregate(t, method, weights)
        score = None
        if method in ("wcv", "wct"):
            score = weighted_score(t, weights, "votes" if method == "wcv" else "trust")
        out[img] = ImageResult(img, lab, len(votes), score)
    return out


def rollup(image_labels: Dict[str, ClassLabel], patient_of: Dict[str, str]) -> "OrderedDict[str, ClassLabel]":
    """Patient label = median of that patient's image labels."""
    groups: "OrderedDict[str, list]" = OrderedDict()
    for img, lab in image_labels.items():
        groups.setdefault(patient_of[img], []).append(lab)
    return OrderedDict((pid, patient_label(labs)) for pid, labs in groups.items())


def compare(pred: Sequence[ClassLabel], truth: Sequence[ClassLabel], scheme: Scheme) -> MetricReport:
    """Reliability metrics of predictions versus truth after merging both to ``scheme``."""
    a = [merge_classes(x, scheme).value for x in pred]
    b = [merge_classes(x, scheme).value for x in truth]
    return metric_report(RatingsMatrix.from_columns(a, b, rater_ids=["crowd", "truth"]))


def reconcile(judged: Sequence[str], truth: Sequence[GroundTruthImage], allow_partial: bool) -> list:
    """Image ids present in both; orphans on either side are an error unless partial runs are allowed."""
    if not judged:
        raise ReconciliationError("no valid judgments to aggregate")
    truth_ids = {g.image_id for g in truth}
    judged_set = set(judged)
    no_truth = [i for i in judged if i not in truth_ids]
    no_labels = [g.image_id for g in truth if g.image_id not in judged_set]
    if (no_truth or no_labels) and not allow_partial:
        parts = []
        if no_truth:
            parts.append(f"{len(no_truth)} judged images without truth (e.g. {', '.join(no_truth[:5])})")
        if no_labels:
            parts.append(f"{len(no_labels)} truth images without judgments (e.g. {', '.join(no_labels[:5])})")
        raise ReconciliationError("; ".join(parts))
    keep = [g.image_id for g in truth if g.image_id in judged_set]
    if not keep:
        raise ReconciliationError("judgments and truth share no images")
    return keep


@dataclass
class PipelineResult:
    metrics: List[dict] = field(default_factory=list)
    image_labels: Dict[str, Dict[str, ImageResult]] = field(default_factory=dict)
    patient_labels: Dict[str, Dict[str, ClassLabel]] = field(default_factory=dict)
    truth: Dict[str, ClassLabel] = field(default_factory=dict)
    files: List[Path] = field(default_factory=list)
    n_judgments: int = 0

    def metric(self, method: str, level: str, scheme: str, name: str) -> Optional[float]:
        for row in self.metrics:
            if (row["method"], row["level"], row["scheme"], row["metric"]) == (method, level, scheme, name):
                return row["value"]
        raise KeyError((method, level, scheme, name))


METRIC_NAMES = ("percent_agreement", "cohen_kappa_pairwise_mean", "fleiss_kappa", "spearman_rho_mean", "icc")


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    """Run the whole batch pipeline and write its outputs under ``cfg.out``.

    Outputs: ``image_labels.csv``, ``patient_labels.csv``, ``metrics.csv``
    and, unless disabled, PNG figures.
    """
    records = io.ingest_judgments(cfg.judgments)
    truth = io.read_truth(cfg.truth)
    judgments = io.effective_judgments(records)
    keep = reconcile(list(judgments), truth, cfg.allow_partial)
    keep_set = set(keep)
    judgments = OrderedDict((img, judgments[img]) for img in keep)
    truth = [g for g in truth if g.image_id in keep_set]
    truth_by = {g.image_id: g.true_label for g in truth}
    patient_of = {g.image_id: g.patient_id for g in truth}
    truth_patients = rollup(truth_by, patient_of)
    trusts = io.trusts_from_log(records)

    result = PipelineResult(truth=truth_by, n_judgments=sum(len(v) for v in judgments.values()))
    schemes = [Scheme.parse(s) for s in cfg.schemes]
    for method in cfg.methods:
        images = aggregate_images(judgments, method, trusts, cfg.weights)
        result.image_labels[method] = images
        crowd = OrderedDict((img, r.label) for img, r in images.items())
        patients = rollup(crowd, patient_of)
        result.patient_labels[method] = patients
        for level, pred, ref in (
            ("image", list(crowd.values()), [truth_by[i] for i in crowd]),
            ("patient", list(patients.values()), [truth_patients[p] for p in patients]),
        ):
            for scheme in schemes:
                rep = compare(pred, ref, scheme).as_dict()
                for name in METRIC_NAMES:
                    result.metrics.append({"method": method, "level": level, "scheme": scheme.name.lower(),
                                           "metric": name, "value": rep[name]})
    _write_outputs(cfg, result, truth, records)
    return result


def _write_outputs(cfg: PipelineConfig, result: PipelineResult, truth, records) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    patient_of = {g.image_id: g.patient_id for g in truth}
    truth_by = {g.image_id: g.true_label for g in truth}

    rows = []
    for method, images in result.image_labels.items():
        for img, r in images.items():
            rows.append([img, patient_of[img], method, r.label.letter,
                         merge_classes(r.label, Scheme.THREE).letter, truth_by[img].letter,
                         r.n_judgments, r.score, "true" if r.flagged else "false"])
    p = out / "image_labels.csv"
    io.write_table(["image_id", "patient_id", "method", "label", "label_3class", "truth",
                    "n_judgments", "score", "flagged"], rows, p)
    result.files.append(p)

    rows = []
    for method, patients in result.patient_labels.items():
        for pid, lab in patients.items():
            rows.append([pid, method, lab.letter, merge_classes(lab, Scheme.THREE).letter])
    p = out / "patient_labels.csv"
    io.write_table(["patient_id", "method", "label", "label_3class"], rows, p)
    result.files.append(p)

    p = out / "metrics.csv"
    io.write_table(["method", "level", "scheme", "metric", "value"],
                   [[m["method"], m["level"], m["scheme"], m["metric"], m["value"]] for m in result.metrics], p)
    result.files.append(p)

    if cfg.figures:
        from . import plotting

        result.files += plotting.pipeline_figures(result, out)


def label_grid(records, truth: Sequence[GroundTruthImage], n: Optional[int] = None) -> tuple:
    """Images x n grid of valid four-class labels for sensitivity analysis.

    Only images with at least ``n`` valid labels (default: the most common
    count) are kept; the first ``n`` in submission order fill the slots.
    Returns ``(image_ids, grid, trust_grid, truth_labels)``.
    """
    judgments = io.effective_judgments(records)
    trusts = io.trusts_from_log(records)
    truth_by = {g.image_id: g.true_label for g in truth}
    counts = [len(v) for img, v in judgments.items() if img in truth_by]
    if not counts:
        raise ReconciliationError("no judged images have ground truth")
    if n is None:
        n = int(np.bincount(counts).argmax())
    ids, grid, tgrid, labels = [], [], [], []
    for img, votes in judgments.items():
        if img not in truth_by or len(votes) < n:
            continue
        votes = votes[:n]
        if not all(isinstance(p, ClassLabel) for _, p in votes):
            raise ValidationError("sensitivity analysis needs class-label judgments")
        ids.append(img)
        grid.append([p.value for _, p in votes])
        tgrid.append([trusts.get(c, 1.0) for c, _ in votes])
        labels.append(truth_by[img])
    skipped = len(counts) - len(ids)
    if skipped:
        log.warning("%d images with fewer than %d labels left out of the sensitivity grid", skipped, n)
    return ids, grid, tgrid, labels


def run_sensitivity(records, truth, method: str = "cv", scheme: Scheme = Scheme.THREE,
                    max_size: Optional[int] = None, weights: ClassWeights = DEFAULT_WEIGHTS,
                    n: Optional[int] = None) -> list:
    ids, grid, tgrid, labels = label_grid(records, truth, n)
    labels = [merge_classes(x, scheme) for x in labels]
    return sensitivity_analysis(grid, labels, method, max_size, scheme, trusts=tgrid, weights=weights)
