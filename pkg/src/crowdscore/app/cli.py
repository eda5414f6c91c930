"""Command-line interface.

Exit status is 0 on success, 1 on validation errors and 2 on I/O errors.
``--seed``, ``--config`` and ``--out`` are accepted before or after the
subcommand; ``--out`` names an output directory.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections import OrderedDict
from dataclasses import replace
from pathlib import Path

from .. import __version__
from ..aggregate import nuclei_label
from ..core import ClassLabel, Scheme
from ..errors import ReconciliationError, SchemaError, ValidationError
from ..metrics import RatingsMatrix, metric_report
from ..qc import Job, StepClock, contributor_report, replay
from . import config as cfgmod
from . import io
from .pipeline import METRIC_NAMES, aggregate_images, compare, rollup, run_pipeline, run_sensitivity

log = logging.getLogger("crowdscore")


def _global_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default if suppress else 0, help="master random seed")
    parser.add_argument("--config", type=Path, default=default, help="INI configuration file")
    parser.add_argument("--out", type=Path, default=default if suppress else Path("out"),
                        help="output directory (default: ./out)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crowdscore", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    _global_options(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate a crowd job end to end")
    p.add_argument("--images", type=int, help="number of images")
    p.add_argument("--patients", type=int, help="number of patients")
    p.add_argument("--kind", choices=("label", "nuclei"), help="job type")
    p.add_argument("--labels-per-image", type=int)
    p.add_argument("--pool", choices=("mixed", "perfect"), help="contributor pool preset")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("aggregate", parents=[common], help="consensus label per image")
    p.add_argument("--judgments", type=Path, required=True, help="label judgment CSV")
    p.add_argument("--method", default="cv", choices=("cv", "ct", "wcv", "wct"))

    p = sub.add_parser("nuclei-aggregate", parents=[common], help="median nuclei counts, PIndex and class")
    p.add_argument("--judgments", type=Path, required=True, help="nuclei judgment JSONL")

    p = sub.add_parser("patient-rollup", parents=[common], help="median image label per patient")
    p.add_argument("--labels", type=Path, required=True, help="CSV with image_id,label")
    p.add_argument("--patients", type=Path, required=True, help="CSV with image_id,patient_id")

    p = sub.add_parser("metrics", parents=[common], help="agreement and reliability metrics")
    p.add_argument("--pred", type=Path, help="CSV with image_id,label")
    p.add_argument("--truth", type=Path, help="ground truth CSV")
    p.add_argument("--ratings", type=Path, help="wide CSV: item id then one column per rater")
    p.add_argument("--scheme", default="three", help="comparison scheme: four, three or two")

    p = sub.add_parser("sensitivity", parents=[common], help="agreement versus crowd size")
    p.add_argument("--judgments", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--method", default="cv", choices=("cv", "ct", "wcv", "wct"))
    p.add_argument("--scheme", default="three")
    p.add_argument("--max-size", type=int)
    p.add_argument("--gnuplot", action="store_true", help="also write a whitespace-delimited .dat table")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("report", parents=[common], help="full pipeline with tables and figures")
    p.add_argument("--judgments", type=Path)
    p.add_argument("--truth", type=Path)
    p.add_argument("--method", help="comma-separated aggregators (cv,ct,wcv,wct or nuclei)")
    p.add_argument("--allow-partial", action="store_true")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("serve", parents=[common], help="run the task-serving HTTP API")
    p.add_argument("--images", type=Path, required=True, help="image ids (list or CSV with image_id)")
    p.add_argument("--tests", type=Path, required=True, help="test pool CSV: image_id,label")
    p.add_argument("--kind", choices=("label", "nuclei"), default="label")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    p = sub.add_parser("replay", parents=[common], help="drive a job from a scripted answer file")
    p.add_argument("--script", type=Path, required=True)
    p.add_argument("--images", type=Path, required=True)
    p.add_argument("--tests", type=Path, required=True)
    return parser


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(args):
    return cfgmod.load(args.config) if getattr(args, "config", None) else None


def _emit(rows) -> None:
    for row in rows:
        print("\t".join("" if x is None else (f"{x:.6g}" if isinstance(x, float) else str(x)) for x in row))


def cmd_simulate(args) -> None:
    from ..sim import perfect_pool, run_simulation
    from . import plotting

    cp = _load_config(args)
    sim = cfgmod.sim_config(cp, seed=args.seed, n_images=args.images, n_patients=args.patients,
                            kind=args.kind, labels_per_image=args.labels_per_image)
    if args.pool == "perfect":
        sim.contributor_pool = perfect_pool()
    job_cfg = cfgmod.job_config(cp)
    if args.labels_per_image:
        job_cfg = replace(job_cfg, labels_per_image=args.labels_per_image)
    result = run_simulation(sim, job_cfg)
    out = _out(args)
    ext = "jsonl" if sim.kind == "nuclei" else "csv"
    io.emit_judgments(result.log, out / f"judgments.{ext}", sim.kind)
    io.write_truth(result.truth, out / "ground_truth.csv")
    io.write_table(["image_id", "patient_id", "label", "pindex", "nuclei_total"],
                   [[g.image_id, g.patient_id, g.true_label.letter, g.true_pindex, g.nuclei_total]
                    for g in result.truth], out / "ground_truth_full.csv")
    io.write_test_pool({g.image_id: g.true_label for g in result.test_pool}, out / "test_pool.csv")
    io.write_table(["contributor_id", "profile", "status", "trust", "test_seen", "test_correct",
                    "work_images_reviewed", "judgments_submitted", "speed_violations", "seconds_spent"],
                   [[s.contributor_id, result.profiles[s.contributor_id].name, s.status.value, s.trust,
                     s.test_seen, s.test_correct, s.work_images_reviewed, s.judgments_submitted,
                     s.speed_violations, s.seconds_spent] for s in result.states.values()],
                   out / "contributors.csv")
    table = contributor_report(result.log, result.states)
    io.write_table(["statistic", "value"], table.rows(), out / "contributor_report.csv")
    if not args.no_figures:
        plotting.plot_trust_distribution([s.trust for s in result.states.values() if s.trust is not None],
                                         out / "trust_distribution.png", job_cfg.min_test_accuracy)
    _emit([("images", len(result.truth)), ("complete", result.complete),
           ("incomplete_images", len(result.incomplete)), ("log_records", len(result.log))])
    _emit(table.rows())
    if not result.complete:
        log.warning("contributor pool exhausted with %d images incomplete", len(result.incomplete))


def cmd_aggregate(args) -> None:
    cp = _load_config(args)
    weights = cfgmod.class_weights(cp)
    records = io.ingest_label_judgments(args.judgments)
    judgments = io.effective_judgments(records)
    if not judgments:
        raise ValidationError("no valid work judgments in the log")
    images = aggregate_images(judgments, args.method, io.trusts_from_log(records), weights)
    rows = [[img, r.label.letter, r.n_judgments, r.score] for img, r in images.items()]
    io.write_table(["image_id", "label", "n_judgments", "score"], rows, _out(args) / f"image_labels_{args.method}.csv")
    _emit([("images", len(rows)), ("method", args.method)])


def cmd_nuclei(args) -> None:
    from ..aggregate import nuclei_aggregate

    records = io.ingest_nuclei_judgments(args.judgments)
    judgments = io.effective_judgments(records)
    if not judgments:
        raise ValidationError("no valid work judgments in the log")
    rows = []
    for img, votes in judgments.items():
        anns = [p for _, p in votes]
        pos, neg = nuclei_aggregate(anns)
        lab, pidx, flagged = nuclei_label(anns)
        rows.append([img, pos, neg, pidx, lab.letter, "true" if flagged else "false"])
    io.write_table(["image_id", "positive", "negative", "pindex", "label", "flagged"], rows,
                   _out(args) / "nuclei_labels.csv")
    _emit([("images", len(rows)), ("flagged", sum(r[-1] == "true" for r in rows))])


def _label_column(rows, path) -> "OrderedDict[str, ClassLabel]":
    out = OrderedDict()
    for i, r in enumerate(rows, start=2):
        if "image_id" not in r or "label" not in r:
            raise SchemaError(f"{path}: needs image_id and label columns")
        try:
            out[r["image_id"]] = ClassLabel.parse(r["label"])
        except ValidationError as exc:
            raise ValidationError(f"{path} row {i}: {exc}") from None
    return out


def cmd_rollup(args) -> None:
    labels = _label_column(io.read_table(args.labels), args.labels)
    patient_of = {r["image_id"]: r["patient_id"] for r in io.read_table(args.patients)}
    missing = [i for i in labels if i not in patient_of]
    if missing:
        raise ReconciliationError(f"images without a patient: {', '.join(missing[:5])}")
    patients = rollup(labels, patient_of)
    io.write_table(["patient_id", "label"], [[p, lab.letter] for p, lab in patients.items()],
                   _out(args) / "patient_labels.csv")
    _emit([("patients", len(patients))])


def cmd_metrics(args) -> None:
    out = _out(args)
    if args.ratings:
        rows = io.read_table(args.ratings)
        if not rows:
            raise ValidationError("ratings file is empty")
        raters = list(rows[0])[1:]
        codes = [[ClassLabel.parse(r[c]).value if r[c].strip() else None for c in raters] for r in rows]
        rep = metric_report(RatingsMatrix(codes, raters)).as_dict()
    else:
        if not (args.pred and args.truth):
            raise ValidationError("metrics needs --ratings, or both --pred and --truth")
        pred = _label_column(io.read_table(args.pred), args.pred)
        truth = {g.image_id: g.true_label for g in io.read_truth(args.truth)}
        common = [i for i in pred if i in truth]
        if not common:
            raise ReconciliationError("predictions and truth share no images")
        rep = compare([pred[i] for i in common], [truth[i] for i in common], Scheme.parse(args.scheme)).as_dict()
    rows = [(name, rep[name]) for name in METRIC_NAMES]
    io.write_table(["metric", "value"], rows, out / "metrics.csv")
    _emit(rows)


def cmd_sensitivity(args) -> None:
    from . import plotting

    cp = _load_config(args)
    scheme = Scheme.parse(args.scheme)
    records = io.ingest_label_judgments(args.judgments)
    truth = io.read_truth(args.truth)
    results = run_sensitivity(records, truth, args.method, scheme, args.max_size, cfgmod.class_weights(cp))
    out = _out(args)
    stem = f"sensitivity_{args.method}_{scheme.name.lower()}"
    header = ["crowd_size", "patterns", "mean", "median", "q1", "q3", "min", "max"]
    rows = [[s[k] for k in header] for s in (r.summary() for r in results)]
    io.write_table(header, rows, out / f"{stem}.csv")
    if args.gnuplot:
        lines = ["# " + " ".join(header)] + [" ".join(f"{x:.6f}" if isinstance(x, float) else str(x) for x in row)
                                               for row in rows]
        (out / f"{stem}.dat").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if not args.no_figures:
        plotting.plot_sensitivity(results, out / f"{stem}.png", f"{args.method.upper()}, {scheme.name.lower()}-class")
    _emit([header] + rows)


def cmd_report(args) -> None:
    cp = _load_config(args)
    methods = tuple(m.strip() for m in args.method.split(",")) if args.method else None
    cfg = cfgmod.pipeline_config(cp, judgments=args.judgments, truth=args.truth, out=args.out,
                                 methods=methods, allow_partial=args.allow_partial or None,
                                 seed=args.seed, figures=False if args.no_figures else None)
    if cfg.judgments is None or cfg.truth is None:
        raise ValidationError("report needs --judgments and --truth (or a [pipeline] config section)")
    result = run_pipeline(cfg)
    _emit([("judgments", result.n_judgments)])
    _emit([(m["method"], m["level"], m["scheme"], m["metric"], m["value"]) for m in result.metrics])


def _job_from_files(args, cp, clock=None) -> Job:
    images = io.read_image_ids(args.images)
    tests = io.read_test_pool(args.tests)
    kind = getattr(args, "kind", "label")
    kw = {"clock": clock} if clock is not None else {}
    return Job(cfgmod.job_config(cp), images, tests, kind=kind, **kw)


def cmd_serve(args) -> None:
    from .service import serve

    cp = _load_config(args)
    job = _job_from_files(args, cp)
    out = _out(args)
    writer = io.LogWriter(out / ("judgments.jsonl" if args.kind == "nuclei" else "judgments.csv"), args.kind)
    serve(job, args.port, args.host, args.seed, writer)


def cmd_replay(args) -> None:
    cp = _load_config(args)
    job = _job_from_files(args, cp, clock=StepClock())
    events = replay(job, io.read_script(args.script), args.seed)
    out = _out(args)
    io.emit_label_judgments(job.log, out / "judgments.csv")
    io.write_table(["contributor_id", "task_seq", "outcome", "status", "trust"],
                   [[e.contributor_id, e.task_seq, e.outcome, e.status, e.trust] for e in events],
                   out / "replay_events.csv")
    _emit([(e.contributor_id, e.task_seq, e.outcome, e.status) for e in events])


COMMANDS = {
    "simulate": cmd_simulate,
    "aggregate": cmd_aggregate,
    "nuclei-aggregate": cmd_nuclei,
    "patient-rollup": cmd_rollup,
    "metrics": cmd_metrics,
    "sensitivity": cmd_sensitivity,
    "report": cmd_report,
    "serve": cmd_serve,
    "replay": cmd_replay,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
