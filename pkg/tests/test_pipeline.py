import random

import pytest

from crowdscore.app import io
from crowdscore.app.config import PipelineConfig
from crowdscore.app.pipeline import aggregate_images, label_grid, reconcile, rollup, run_pipeline
from crowdscore.core import GroundTruthImage, Scheme, label
from crowdscore.errors import ConfigurationError, ReconciliationError
from crowdscore.sim import SimConfig, mixed_pool, run_simulation


@pytest.fixture(scope="module")
def pilot(tmp_path_factory):
    d = tmp_path_factory.mktemp("pilot")
    res = run_simulation(SimConfig(n_images=380, n_patients=190, labels_per_image=10,
                                   contributor_pool=mixed_pool(), master_seed=1))
    io.emit_label_judgments(res.log, d / "judgments.csv")
    io.write_truth(res.truth, d / "truth.csv")
    return d, res


def test_reconcile():
    truth = [GroundTruthImage("I1", "P", label(0)), GroundTruthImage("I2", "P", label(0))]
    assert reconcile(["I1", "I2"], truth, False) == ["I1", "I2"]
    with pytest.raises(ReconciliationError, match="without judgments"):
        reconcile(["I1"], truth, False)
    with pytest.raises(ReconciliationError, match="without truth"):
        reconcile(["I1", "I9"], truth, False)
    assert reconcile(["I1", "I9"], truth, True) == ["I1"]
    with pytest.raises(ReconciliationError):
        reconcile([], truth, True)


def test_rollup_median():
    labs = {"a": label(0), "b": label(2), "c": label(3), "d": label(1)}
    assert rollup(labs, {"a": "P", "b": "P", "c": "P", "d": "Q"}) == {"P": label(2), "Q": label(1)}


def test_config_validation(tmp_path):
    with pytest.raises(ConfigurationError):
        PipelineConfig(methods=("cv", "nuclei"))
    with pytest.raises(ConfigurationError):
        PipelineConfig(methods=("majority",))
    with pytest.raises(ConfigurationError):
        PipelineConfig(judgments=tmp_path / "x", out=tmp_path / "x")


def test_pilot_pipeline(pilot, tmp_path):
    d, res = pilot
    cfg = PipelineConfig(d / "judgments.csv", d / "truth.csv", tmp_path / "out", figures=True)
    result = run_pipeline(cfg)
    assert set(result.image_labels) == {"cv", "ct", "wcv", "wct"}
    assert all(len(v) == len(res.job.valid_judgments()) for v in result.image_labels.values())
    for m in ("cv", "wct"):
        ag = result.metric(m, "patient", "three", "percent_agreement")
        assert 0.3 < ag <= 1.0
    names = {p.name for p in result.files}
    assert {"image_labels.csv", "patient_labels.csv", "metrics.csv"} <= names
    assert any(n.endswith(".png") for n in names)
    ids, grid, trusts, truth = label_grid(io.ingest_judgments(d / "judgments.csv"), res.truth)
    assert len(grid[0]) == 10 and len(ids) == len(grid) == len(truth)


def test_row_order_independence(pilot, tmp_path):
    d, _ = pilot
    records = io.ingest_judgments(d / "judgments.csv")
    assert any(not r.valid for r in records)
    shuffled = list(records)
    random.Random(3).shuffle(shuffled)
    io.emit_label_judgments(shuffled, tmp_path / "shuffled.csv")
    a = run_pipeline(PipelineConfig(d / "judgments.csv", d / "truth.csv", tmp_path / "a", figures=False))
    b = run_pipeline(PipelineConfig(tmp_path / "shuffled.csv", d / "truth.csv", tmp_path / "b", figures=False))
    for m in a.image_labels:
        assert {k: v.label for k, v in a.image_labels[m].items()} == {k: v.label for k, v in b.image_labels[m].items()}
    key = lambda r: (r["method"], r["level"], r["scheme"], r["metric"])
    for x, y in zip(sorted(a.metrics, key=key), sorted(b.metrics, key=key)):
        assert key(x) == key(y) and x["value"] == pytest.approx(y["value"], abs=1e-12)


def test_weighted_scores_reported():
    votes = {"I1": [("a", label(0)), ("b", label(3)), ("c", label(1))]}
    r = aggregate_images(votes, "wcv")["I1"]
    assert r.score == pytest.approx((0.005 + 0.75 + 0.05) / 3)
    assert aggregate_images(votes, "cv")["I1"].score is None


def test_partial_run(pilot, tmp_path):
    d, res = pilot
    truth = res.truth[:100] + [GroundTruthImage("X1", "PX", label(0))]
    io.write_truth(truth, tmp_path / "truth.csv")
    with pytest.raises(ReconciliationError):
        run_pipeline(PipelineConfig(d / "judgments.csv", tmp_path / "truth.csv", tmp_path / "o", figures=False))
    out = run_pipeline(PipelineConfig(d / "judgments.csv", tmp_path / "truth.csv", tmp_path / "o",
                                      allow_partial=True, figures=False, schemes=(Scheme.THREE.name,)))
    assert len(out.image_labels["cv"]) == 100
