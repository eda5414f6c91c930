from collections import Counter

import numpy as np
import pytest

from crowdscore.app.io import emit_label_judgments
from crowdscore.core import DEFAULT_BINS, GroundTruthImage, label
from crowdscore.errors import ConfigurationError, DomainError, IncompleteTruthError
from crowdscore.qc import JobConfig, Status, contributor_report
from crowdscore.sim import (
    FRAME,
    PILOT_DIFFICULTY_CORRELATION,
    ContributorProfile,
    SimConfig,
    confusion_from_accuracy,
    expected_positive_count,
    mixed_pool,
    perfect_pool,
    run_simulation,
    sample_ground_truth,
    sample_test_pool,
    simulate_label,
    simulate_label_grid,
    simulate_nuclei,
)


def small(**kw):
    base = dict(n_images=120, n_patients=60, n_test_images=60, contributor_pool=perfect_pool(8))
    base.update(kw)
    return SimConfig(**base)


class TestGroundTruth:
    def test_full_scale_patients(self):
        truth = sample_ground_truth(SimConfig())
        per = Counter(g.patient_id for g in truth)
        assert len(truth) == 5483 and len(per) == 1909
        assert set(per.values()) <= {1, 2, 3}

    def test_deterministic(self):
        assert sample_ground_truth(small(master_seed=4)) == sample_ground_truth(small(master_seed=4))
        assert sample_ground_truth(small(master_seed=4)) != sample_ground_truth(small(master_seed=5))

    def test_degenerate_prior(self):
        truth = sample_ground_truth(small(class_prior=(1, 0, 0, 0)))
        assert all(g.true_label.value == 0 and g.true_pindex <= 0.01 for g in truth)

    def test_pindex_inside_class_bin(self):
        for g in sample_ground_truth(small(n_images=400, n_patients=200)):
            assert DEFAULT_BINS.classify(g.true_pindex) == g.true_label.value
            assert g.nuclei_total >= 10

    def test_test_pool_disjoint_ids(self):
        cfg = small()
        work = {g.image_id for g in sample_ground_truth(cfg)}
        tests = {g.image_id for g in sample_test_pool(cfg)}
        assert len(tests) == 60 and not work & tests

    @pytest.mark.parametrize("kw", [dict(n_images=0), dict(n_images=10, n_patients=2), dict(n_patients=0)])
    def test_bad_config(self, kw):
        with pytest.raises((DomainError, ConfigurationError)):
            small(**kw)

    def test_prior_must_sum_to_one(self):
        with pytest.raises(ConfigurationError):
            small(class_prior=(0.5, 0.5, 0.5, 0))


class TestLabels:
    def test_identity(self):
        rng = np.random.default_rng(0)
        p = ContributorProfile()
        assert all(simulate_label(p, label(k), rng) == label(k) for k in range(4) for _ in range(50))

    def test_uniform_rows(self):
        p = ContributorProfile(confusion=np.full((4, 4), 0.25))
        rng = np.random.default_rng(1)
        acc = np.mean([simulate_label(p, label(i % 4), rng).value == i % 4 for i in range(10_000)])
        assert abs(acc - 0.25) < 0.02

    @pytest.mark.parametrize("spread", ["adjacent", "uniform"])
    def test_diagonal_accuracy(self, spread):
        p = ContributorProfile.with_accuracy(0.8, spread)
        rng = np.random.default_rng(2)
        acc = np.mean([simulate_label(p, label(i % 4), rng).value == i % 4 for i in range(10_000)])
        assert abs(acc - 0.8) < 0.02

    def test_difficulty_keeps_marginal_accuracy(self):
        p = ContributorProfile.with_accuracy(0.7)
        rng = np.random.default_rng(3)
        z = rng.standard_normal(20_000)
        acc = np.mean([simulate_label(p, label(1), rng, zi, 0.7).value == 1 for zi in z])
        assert abs(acc - 0.7) < 0.015

    def test_difficulty_correlates_errors_within_image(self):
        p = ContributorProfile.with_accuracy(0.7)
        for rho, lo, hi in ((0.0, 0.0, 0.06), (0.7, 0.15, 1.0)):
            _, grid, _ = simulate_label_grid(SimConfig(n_images=300, n_patients=300, difficulty_correlation=rho), p)
            truth = [g.true_label.value for g in sample_ground_truth(SimConfig(n_images=300, n_patients=300))]
            unanimous = np.mean((np.array(grid) == np.array(truth)[:, None]).all(axis=1))
            assert lo <= unanimous <= hi

    def test_pilot_calibration(self):
        # at ~60 % accuracy the pilot saw a median of 6/10 correct labels and 15 % unanimous images
        p = ContributorProfile.with_accuracy(0.6)
        correct = []
        for seed in range(5):
            cfg = SimConfig(n_images=380, n_patients=380, master_seed=seed,
                            difficulty_correlation=PILOT_DIFFICULTY_CORRELATION)
            truth, grid, _ = simulate_label_grid(cfg, p, 10)
            correct += (np.array(grid) == np.array([g.true_label.value for g in truth])[:, None]).sum(axis=1).tolist()
        assert np.median(correct) == 6
        assert 0.12 <= np.mean(np.array(correct) == 10) <= 0.18

    def test_confusion_validation(self):
        with pytest.raises(ConfigurationError):
            ContributorProfile(confusion=np.eye(3))
        with pytest.raises(ConfigurationError):
            ContributorProfile(confusion=np.full((4, 4), 0.3))
        with pytest.raises(ConfigurationError):
            confusion_from_accuracy(0.7, "diagonal")
        assert np.allclose(confusion_from_accuracy(0.6, "uniform").sum(axis=1), 1)


class TestNuclei:
    def _gt(self, n=200, k=40):
        return GroundTruthImage("I1", "P1", label(2), k / n, n)

    def test_noiseless(self):
        a = simulate_nuclei(ContributorProfile(), self._gt(), np.random.default_rng(0))
        assert a.counts == (40, 160)
        assert all(0 <= x < FRAME[0] and 0 <= y < FRAME[1] for x, y in a.positive_dots + a.negative_dots)

    def test_blind(self):
        a = simulate_nuclei(ContributorProfile(nuclei_detect_prob=0.0), self._gt(), np.random.default_rng(0))
        assert not a.has_nuclei and a.counts == (0, 0)

    def test_expected_positive_count(self):
        p = ContributorProfile(nuclei_detect_prob=0.9, nuclei_flip_prob=0.05)
        gt = self._gt()
        rng = np.random.default_rng(7)
        xs = [simulate_nuclei(p, gt, rng).positive for _ in range(1000)]
        want = expected_positive_count(p, gt)
        assert want == pytest.approx(40 * 0.9 * 0.95 + 160 * 0.9 * 0.05)
        assert abs(np.mean(xs) - want) < 4 * np.std(xs) / np.sqrt(len(xs))

    def test_missing_truth(self):
        with pytest.raises(IncompleteTruthError):
            simulate_nuclei(ContributorProfile(), GroundTruthImage("I", "P", label(0)), np.random.default_rng(0))


class TestRun:
    def test_perfect_pool(self):
        res = run_simulation(small())
        assert res.complete and not res.incomplete
        assert all(s.status is not Status.EXCLUDED for s in res.states.values())
        for img, votes in res.job.valid_judgments().items():
            assert len(votes) == 3

    def test_weak_pool_excludes(self):
        pool = [(ContributorProfile.with_accuracy(0.5, seconds_per_task=(100, 0.3)), 30)]
        res = run_simulation(small(contributor_pool=pool, master_seed=1))
        excluded = sum(s.status is Status.EXCLUDED for s in res.states.values())
        assert excluded > 0
        assert len(res.incomplete) == len(res.job.incomplete_images())

    def test_exhausted_pool_is_flagged_not_raised(self):
        res = run_simulation(small(contributor_pool=perfect_pool(2), n_images=300, n_patients=150),
                             JobConfig(max_judgments_per_contributor=20))
        assert not res.complete and res.incomplete

    def test_deterministic_log(self):
        a = run_simulation(small(contributor_pool=mixed_pool(), master_seed=9))
        b = run_simulation(small(contributor_pool=mixed_pool(), master_seed=9))
        assert emit_label_judgments(a.log) == emit_label_judgments(b.log)

    def test_trusted_accuracy_calibration(self):
        pool = [(ContributorProfile.with_accuracy(0.8, seconds_per_task=(160, 0.4)), 60)]
        res = run_simulation(SimConfig(n_images=2000, n_patients=1000, contributor_pool=pool, master_seed=3))
        table = contributor_report(res.log, res.states)
        assert table.trusted.contributors > 30
        assert abs(table.trusted.mean_test_accuracy - 0.80) <= 0.03

    def test_mixed_pool_report_is_not_degenerate(self):
        res = run_simulation(SimConfig(n_images=800, n_patients=400, contributor_pool=mixed_pool(), master_seed=2))
        t = contributor_report(res.log, res.states)
        assert t.quiz_passed and t.quiz_failed and t.work_passed and t.work_failed
        assert t.trusted.mean_seconds_per_image < t.untrusted.mean_seconds_per_image

    def test_nuclei_job(self):
        res = run_simulation(small(kind="nuclei", n_images=40, n_patients=20))
        assert res.complete
        assert all(r.payload.counts[0] + r.payload.counts[1] > 0 for r in res.log)

    def test_quit_after(self):
        quitter = ContributorProfile(seconds_per_task=(60, 0), quit_after=10)
        res = run_simulation(small(contributor_pool=[(quitter, 3)], n_images=60, n_patients=30))
        assert all(s.status is Status.FINISHED and s.judgments_submitted == 10 for s in res.states.values())
        assert not res.complete

    def test_more_accurate_crowds_agree_more(self):
        from crowdscore.sensitivity import sensitivity_analysis

        means = []
        for acc in (0.5, 0.6, 0.7, 0.8, 0.9):
            runs = []
            for seed in range(4):
                cfg = SimConfig(n_images=200, n_patients=200, master_seed=seed)
                truth, grid, trusts = simulate_label_grid(cfg, ContributorProfile.with_accuracy(acc), 3)
                res = sensitivity_analysis(grid, [g.true_label for g in truth], "cv", trusts=trusts)
                runs.append(res[-1].mean)
            means.append(np.mean(runs))
        assert means == sorted(means)
