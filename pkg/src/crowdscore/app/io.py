"""File formats: label judgment CSV, nuclei judgment JSONL, ground truth CSV,
test pool CSV, scripted-answer CSV and aggregated label CSV.

Readers validate as they go and report the offending row (CSV, counting the
header as row 1) or line (JSONL).  Writers produce bytes that the matching
reader turns back into equal records, and re-emitting those records gives
the same bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

from ..core import ClassLabel, GroundTruthImage, Mode, NucleiAnnotation, Scheme, merge_classes
from ..errors import ConsistencyError, ParseError, SchemaError, ValidationError
from ..qc import LogRecord, ScriptRow

LABEL_COLUMNS = ("image_id", "contributor_id", "label", "elapsed_seconds", "mode",
                 "is_test", "timestamp", "valid", "trust_at_submission")
NUCLEI_KEYS = ("image_id", "contributor_id", "has_nuclei", "positive", "negative",
               "elapsed_seconds", "mode", "is_test", "timestamp")
TRUTH_COLUMNS = ("image_id", "patient_id", "label")
TEST_POOL_COLUMNS = ("image_id", "label")
SCRIPT_COLUMNS = ("contributor_id", "task_seq", "slot_seq", "answer", "elapsed_seconds")

PathLike = Union[str, Path]


# -- scalar codecs -------------------------------------------------------------


def format_timestamp(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    fmt = "%Y-%m-%dT%H:%M:%S.%fZ" if ts.microsecond else "%Y-%m-%dT%H:%M:%SZ"
    return ts.strftime(fmt)


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        raise ValueError("timestamp lacks a UTC offset")
    return ts.astimezone(timezone.utc)


def format_bool(x: bool) -> str:
    return "true" if x else "false"


def parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def format_float(x: Optional[float]) -> str:
    return "" if x is None else repr(float(x))


def _positive_seconds(value) -> float:
    x = float(value)
    if not math.isfinite(x) or x <= 0:
        raise ValueError(f"elapsed_seconds must be positive, got {value!r}")
    return x


def _mode(text) -> Mode:
    try:
        return Mode(str(text).strip().lower())
    except ValueError:
        raise ValueError(f"mode must be quiz or work, got {text!r}") from None


# -- label judgment CSV ----------------------------------------------------------


def _open_text(path_or_file, mode="r"):
    if hasattr(path_or_file, "read") or hasattr(path_or_file, "write"):
        return path_or_file, False
    return open(path_or_file, mode, newline="", encoding="utf-8"), True


def _reader(fh, required: Sequence[str]) -> csv.DictReader:
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    for col in required:
        if col not in header:
            raise SchemaError(f"missing column {col!r}")
    return reader


def ingest_label_judgments(path) -> List[LogRecord]:
    """Parse a label judgment CSV into log records."""
    fh, close = _open_text(path)
    try:
        reader = _reader(fh, LABEL_COLUMNS)
        out = []
        for row in reader:
            line = reader.line_num
            try:
                trust = row["trust_at_submission"].strip()
                rec = LogRecord(
                    image_id=row["image_id"].strip(),
                    contributor_id=row["contributor_id"].strip(),
                    payload=ClassLabel.parse(row["label"]),
                    elapsed_seconds=_positive_seconds(row["elapsed_seconds"]),
                    mode=_mode(row["mode"]),
                    is_test=parse_bool(row["is_test"]),
                    timestamp=parse_timestamp(row["timestamp"]),
                    valid=parse_bool(row["valid"]),
                    trust_at_submission=float(trust) if trust else None,
                )
            except (ValueError, TypeError, AttributeError) as exc:
                raise ValidationError(f"row {line}: {exc}") from None
            if not rec.image_id or not rec.contributor_id:
                raise ValidationError(f"row {line}: empty identifier")
            if rec.mode is Mode.QUIZ and not rec.is_test:
                raise ValidationError(f"row {line}: quiz judgments must be test questions")
            out.append(rec)
        return out
    finally:
        if close:
            fh.close()


def label_row(rec: LogRecord) -> list:
    return [rec.image_id, rec.contributor_id, str(rec.payload), format_float(rec.elapsed_seconds),
            rec.mode.value, format_bool(rec.is_test), format_timestamp(rec.timestamp),
            format_bool(rec.valid), format_float(rec.trust_at_submission)]


def emit_label_judgments(records: Iterable[LogRecord], path=None) -> str:
    """Write records as CSV; returns the text (also written to ``path``)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LABEL_COLUMNS)
    for rec in records:
        w.writerow(label_row(rec))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text


# -- nuclei judgment JSONL -------------------------------------------------------


def _dots(value, line, key) -> tuple:
    if not isinstance(value, list):
        raise ParseError(f"line {line}: {key} must be an array of [x, y] pairs")
    out = []
    for p in value:
        if not (isinstance(p, (list, tuple)) and len(p) == 2):
            raise ParseError(f"line {line}: {key} entries must be [x, y]")
        out.append((float(p[0]), float(p[1])))
    return tuple(out)


def ingest_nuclei_judgments(path) -> List[LogRecord]:
    """Parse a nuclei judgment JSONL file into log records."""
    fh, close = _open_text(path)
    try:
        out = []
        for line, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {line}: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise ParseError(f"line {line}: expected a JSON object")
            missing = [k for k in NUCLEI_KEYS if k not in obj]
            if missing:
                raise SchemaError(f"line {line}: missing key {missing[0]!r}")
            pos = _dots(obj["positive"], line, "positive")
            neg = _dots(obj["negative"], line, "negative")
            try:
                has = parse_bool(obj["has_nuclei"])
                if not has and (pos or neg):
                    raise ConsistencyError(f"line {line}: has_nuclei is false but dots were given")
                trust = obj.get("trust_at_submission")
                rec = LogRecord(
                    image_id=str(obj["image_id"]),
                    contributor_id=str(obj["contributor_id"]),
                    payload=NucleiAnnotation(has, pos, neg),
                    elapsed_seconds=_positive_seconds(obj["elapsed_seconds"]),
                    mode=_mode(obj["mode"]),
                    is_test=parse_bool(obj["is_test"]),
                    timestamp=parse_timestamp(str(obj["timestamp"])),
                    valid=parse_bool(obj.get("valid", True)),
                    trust_at_submission=None if trust is None else float(trust),
                )
            except ConsistencyError:
                raise
            except (ValueError, TypeError) as exc:
                raise ValidationError(f"line {line}: {exc}") from None
            out.append(rec)
        return out
    finally:
        if close:
            fh.close()


def _num(x: float):
    return int(x) if float(x).is_integer() else x


def nuclei_line(rec: LogRecord) -> str:
    a: NucleiAnnotation = rec.payload
    obj = {
        "image_id": rec.image_id,
        "contributor_id": rec.contributor_id,
        "has_nuclei": a.has_nuclei,
        "positive": [[_num(x), _num(y)] for x, y in a.positive_dots],
        "negative": [[_num(x), _num(y)] for x, y in a.negative_dots],
        "elapsed_seconds": rec.elapsed_seconds,
        "mode": rec.mode.value,
        "is_test": rec.is_test,
        "timestamp": format_timestamp(rec.timestamp),
        "valid": rec.valid,
        "trust_at_submission": rec.trust_at_submission,
    }
    return json.dumps(obj, separators=(",", ":")) + "\n"


def emit_nuclei_judgments(records: Iterable[LogRecord], path=None) -> str:
    text = "".join(nuclei_line(r) for r in records)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text


def ingest_judgments(path) -> List[LogRecord]:
    """Dispatch on suffix: ``.jsonl`` is nuclei, anything else label CSV."""
    return ingest_nuclei_judgments(path) if str(path).endswith(".jsonl") else ingest_label_judgments(path)


def emit_judgments(records: Sequence[LogRecord], path=None, kind: Optional[str] = None) -> str:
    if kind is None:
        kind = "nuclei" if records and isinstance(records[0].payload, NucleiAnnotation) else "label"
    return emit_nuclei_judgments(records, path) if kind == "nuclei" else emit_label_judgments(records, path)


class LogWriter:
    """Append-only judgment log file, flushed after every record."""

    def __init__(self, path: PathLike, kind: str = "label"):
        self.path = Path(path)
        self.kind = kind
        self._lock = threading.Lock()
        new = not self.path.exists() or self.path.stat().st_size == 0
        self._fh = open(self.path, "a", newline="", encoding="utf-8")
        if new and kind == "label":
            self._fh.write(",".join(LABEL_COLUMNS) + "\n")
            self._fh.flush()

    def __call__(self, rec: LogRecord) -> None:
        with self._lock:
            if self.kind == "label":
                buf = io.StringIO()
                csv.writer(buf, lineterminator="\n").writerow(label_row(rec))
                self._fh.write(buf.getvalue())
            else:
                self._fh.write(nuclei_line(rec))
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            if not self._fh.closed:
                self._fh.flush()
                self._fh.close()


# -- derived views of a log --------------------------------------------------------


def effective_judgments(records: Iterable[LogRecord]) -> dict:
    """image id -> [(contributor_id, payload)] for valid work-mode judgments.

    An invalidation record voids its (image, contributor) pair wherever it
    sits in the file, so the result does not depend on row order.  Images
    keep first-seen order; contributors are ordered by submission time.
    """
    by_image: dict = {}
    void = set()
    for rec in records:
        if rec.mode is not Mode.WORK or rec.is_test:
            continue
        if rec.valid:
            by_image.setdefault(rec.image_id, {}).setdefault(rec.contributor_id, rec)
        else:
            void.add((rec.image_id, rec.contributor_id))
    out = {}
    for img, recs in by_image.items():
        kept = sorted((r for c, r in recs.items() if (img, c) not in void),
                      key=lambda r: (r.timestamp, r.contributor_id))
        if kept:
            out[img] = [(r.contributor_id, r.payload) for r in kept]
    return out


def trusts_from_log(records: Iterable[LogRecord]) -> dict:
    """Trust per contributor from their most recent valid record."""
    latest: dict = {}
    for rec in records:
        if rec.valid and rec.trust_at_submission is not None:
            cur = latest.get(rec.contributor_id)
            if cur is None or rec.timestamp > cur.timestamp:
                latest[rec.contributor_id] = rec
    return {cid: r.trust_at_submission for cid, r in latest.items()}


# -- ground truth and test pool ----------------------------------------------------


def read_truth(path, scheme: Scheme = Scheme.THREE) -> List[GroundTruthImage]:
    fh, close = _open_text(path)
    try:
        reader = _reader(fh, TRUTH_COLUMNS)
        out, seen = [], set()
        for row in reader:
            try:
                lab = ClassLabel.parse(row["label"], scheme)
            except ValidationError as exc:
                raise ValidationError(f"row {reader.line_num}: {exc}") from None
            img = row["image_id"].strip()
            if img in seen:
                raise ValidationError(f"row {reader.line_num}: duplicate image {img!r}")
            seen.add(img)
            out.append(GroundTruthImage(img, row["patient_id"].strip(), lab))
        return out
    finally:
        if close:
            fh.close()


def write_truth(truth: Iterable[GroundTruthImage], path, scheme: Scheme = Scheme.THREE) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRUTH_COLUMNS)
    for g in truth:
        w.writerow([g.image_id, g.patient_id, merge_classes(g.true_label, scheme).letter])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text


def read_test_pool(path, scheme: Scheme = Scheme.FOUR) -> dict:
    fh, close = _open_text(path)
    try:
        reader = _reader(fh, TEST_POOL_COLUMNS)
        out = {}
        for row in reader:
            try:
                out[row["image_id"].strip()] = ClassLabel.parse(row["label"], scheme)
            except ValidationError as exc:
                raise ValidationError(f"row {reader.line_num}: {exc}") from None
        return out
    finally:
        if close:
            fh.close()


def write_test_pool(pool: dict, path) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TEST_POOL_COLUMNS)
    for img, lab in pool.items():
        w.writerow([img, lab.letter])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text


def read_image_ids(path) -> list:
    """Image ids from a truth/test CSV (``image_id`` column) or a plain list."""
    text = Path(path).read_text(encoding="utf-8")
    first = text.splitlines()[0] if text.strip() else ""
    if "image_id" in first.split(","):
        return [row["image_id"].strip() for row in csv.DictReader(io.StringIO(text))]
    return [line.strip() for line in text.splitlines() if line.strip()]


# -- scripted answers ---------------------------------------------------------------


def read_script(path) -> List[ScriptRow]:
    fh, close = _open_text(path)
    try:
        reader = _reader(fh, SCRIPT_COLUMNS)
        out = []
        for row in reader:
            try:
                out.append(ScriptRow(row["contributor_id"].strip(), int(row["task_seq"]),
                                     int(row["slot_seq"]), row["answer"].strip(),
                                     _positive_seconds(row["elapsed_seconds"])))
            except ValueError as exc:
                raise ValidationError(f"row {reader.line_num}: {exc}") from None
        return out
    finally:
        if close:
            fh.close()


def write_script(rows: Iterable[ScriptRow], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCRIPT_COLUMNS)
    for r in rows:
        w.writerow([r.contributor_id, r.task_seq, r.slot_seq, r.answer, format_float(r.elapsed_seconds)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text


# -- generic delimited tables -----------------------------------------------------------


def write_table(header: Sequence[str], rows: Iterable[Sequence], path=None, delimiter: str = ",") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n", delimiter=delimiter)
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(x) if isinstance(x, float) else ("" if x is None else x) for x in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text


def read_table(path) -> list:
    fh, close = _open_text(path)
    try:
        return list(csv.DictReader(fh))
    finally:
        if close:
            fh.close()
