import itertools
import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from crowdscore.aggregate import (
    DEFAULT_WEIGHTS,
    Basis,
    ClassWeights,
    VoteTally,
    aggregate,
    aggregate_batch,
    aggregate_ct,
    aggregate_cv,
    aggregate_wct,
    aggregate_wcv,
    nuclei_aggregate,
    nuclei_label,
    patient_label,
    pindex,
    tally,
    weighted_score,
)
from crowdscore.core import ClassLabel, NucleiAnnotation, Scheme, label
from crowdscore.errors import (
    DegenerateTrustError,
    DuplicateVoteError,
    EmptyAnnotationsError,
    EmptyInputError,
    EmptyTallyError,
    NoNucleiError,
    SchemeMismatchError,
    ValidationError,
)

A, B, C, D = (label(v) for v in range(4))
METHODS = ("cv", "ct", "wcv", "wct")


def T(votes, trusts=None):
    return VoteTally.of(votes, trusts)


class TestTally:
    def test_sums(self):
        t = tally([("w1", B), ("w2", B), ("w3", C)], {"w1": 0.8, "w2": 0.7, "w3": 0.9})
        assert t.votes == (0, 2, 1, 0)
        assert t.trust_sums == pytest.approx((0, 1.5, 0.9, 0), abs=1e-15)

    def test_singleton(self):
        assert tally([("w", A)], {"w": 1.0}).votes == (1, 0, 0, 0)

    def test_duplicate_vote(self):
        with pytest.raises(DuplicateVoteError):
            tally([("w", A), ("w", B)])

    def test_empty(self):
        with pytest.raises(EmptyTallyError):
            tally([])

    def test_missing_trust(self):
        with pytest.raises(ValidationError):
            tally([("w", A)], {})

    def test_three_class_votes_rejected(self):
        with pytest.raises(SchemeMismatchError):
            tally([("w", ClassLabel(0, Scheme.THREE))])

    def test_tally_validation(self):
        with pytest.raises(ValidationError):
            T((1, 0, 0, 0), (1.5, 0, 0, 0))
        with pytest.raises(ValidationError):
            T((1, 0, 0))


class TestCountAndTrust:
    def test_majority(self):
        assert aggregate_cv(T((0, 2, 1, 0))) == B

    def test_three_way_tie_goes_to_trust(self):
        t = T((1, 1, 1, 0), (0.9, 0.7, 0.8, 0))
        assert aggregate_cv(t) == A
        assert oracles.tie_break_order(t.votes, t.trust_sums)[0] == 0

    def test_unanimity(self):
        assert aggregate_cv(T((0, 0, 0, 3), (0, 0, 0, 2.1))) == D

    def test_tie_on_votes_and_trust_goes_low(self):
        assert aggregate_cv(T((0, 1, 0, 1), (0, 0.7, 0, 0.7))) == B

    def test_trust_beats_count(self):
        t = tally([("a", A), ("b1", B), ("b2", B)], {"a": 0.9, "b1": 0.5, "b2": 0.5})
        assert aggregate_ct(t) == B
        t = tally([("a", A), ("b1", B), ("b2", B)], {"a": 0.9, "b1": 0.4, "b2": 0.4})
        assert aggregate_ct(t) == A and aggregate_cv(t) == B

    def test_ct_ties_go_to_votes(self):
        assert aggregate_ct(T((1, 2, 0, 0), (0.8, 0.8, 0, 0))) == B

    def test_ct_degenerate(self):
        with pytest.raises(DegenerateTrustError):
            aggregate_ct(T((1, 1, 0, 0)))

    def test_empty(self):
        for fn in (aggregate_cv, aggregate_ct):
            with pytest.raises(EmptyTallyError):
                fn(T((0, 0, 0, 0)))

    def test_float_sums_that_tie_exactly_count_as_ties(self):
        # 0.1 + 0.2 != 0.3 in floating point
        t = tally([("a", A), ("b", A), ("c", B)], {"a": 0.1, "b": 0.2, "c": 0.3})
        t2 = VoteTally((1, 1, 0, 0), (t.trust_sums[0], 0.3, 0, 0))
        assert aggregate_ct(t2) == A  # tie on trust, tie on votes, lower class


class TestWeighted:
    def test_three_way_mean(self):
        s = weighted_score(T((1, 1, 1, 0)))
        assert abs(s - (0.005 + 0.05 + 0.3) / 3) < 1e-12
        assert abs(s - 0.1183333333333333) < 1e-12
        assert aggregate_wcv(T((1, 1, 1, 0))) == C

    @pytest.mark.parametrize("k, n", [(0, 3), (1, 1), (2, 5), (3, 2)])
    def test_unanimous_returns_weight_exactly(self, k, n):
        v = [0, 0, 0, 0]
        v[k] = n
        assert weighted_score(T(v)) == DEFAULT_WEIGHTS.weights[k]
        tr = [0.0] * 4
        tr[k] = 0.7 * n
        assert weighted_score(T(v, tr), basis=Basis.TRUST) == DEFAULT_WEIGHTS.weights[k]

    def test_default_constants(self):
        assert weighted_score(T((0, 0, 0, 2))) == 0.75
        assert weighted_score(T((3, 0, 0, 0))) == 0.005

    def test_weighted_vote_can_differ_from_majority(self):
        t = T((0, 2, 1, 0))
        assert abs(weighted_score(t) - 0.4 / 3) < 1e-12
        assert aggregate_cv(t) == B
        assert aggregate_wcv(t) == C

    def test_trust_basis(self):
        t = T((1, 1, 0, 0), (1.0, 0.5, 0, 0))
        assert abs(weighted_score(t, basis="trust") - (0.005 + 0.025) / 1.5) < 1e-12
        assert aggregate_wct(t) == B

    def test_zero_denominator(self):
        with pytest.raises(EmptyTallyError):
            weighted_score(T((1, 0, 0, 0)), basis="trust")
        with pytest.raises(EmptyTallyError):
            aggregate_wct(T((1, 0, 0, 0)))

    def test_score_on_bin_edge_resolved_exactly(self):
        # 0.005 and 0.195 average to exactly 0.1, the B/C edge
        w = ClassWeights((0.005, 0.05, 0.195, 0.75))
        t = T((1, 0, 1, 0))
        assert aggregate_wcv(t, w) == B
        assert aggregate_batch("wcv", np.array([t.votes]), np.zeros((1, 4)), w)[0] == 1

    def test_weights_must_sit_in_their_bins(self):
        with pytest.raises(ValidationError):
            ClassWeights((0.005, 0.2, 0.3, 0.75))
        with pytest.raises(ValidationError):
            ClassWeights((0.005, 0.05, 0.3))

    def test_midpoint_weights(self):
        w = ClassWeights.midpoints()
        assert w.weights == pytest.approx((0.005, 0.055, 0.3, 0.75))


tallies = st.lists(st.tuples(st.integers(0, 3), st.sampled_from([0.2, 0.4, 0.5, 0.6, 0.75, 0.9, 1.0])),
                   min_size=1, max_size=8)


def _build(pairs):
    votes = [(f"w{i}", label(k)) for i, (k, _) in enumerate(pairs)]
    trusts = {f"w{i}": t for i, (_, t) in enumerate(pairs)}
    return votes, trusts


class TestProperties:
    @given(tallies, st.randoms())
    def test_permutation_invariance(self, pairs, rnd):
        votes, trusts = _build(pairs)
        shuffled = list(votes)
        rnd.shuffle(shuffled)
        for m in METHODS:
            assert aggregate(tally(votes, trusts), m) == aggregate(tally(shuffled, trusts), m)

    @given(tallies, st.floats(0.01, 1.0))
    def test_cv_ignores_trust_scale(self, pairs, c):
        votes, trusts = _build(pairs)
        scaled = {k: v * c for k, v in trusts.items()}
        assert aggregate_cv(tally(votes, trusts)) == aggregate_cv(tally(votes, scaled))

    @given(tallies)
    def test_weighted_score_is_convex(self, pairs):
        votes, trusts = _build(pairs)
        t = tally(votes, trusts)
        w = DEFAULT_WEIGHTS.weights
        for basis in ("votes", "trust"):
            s = weighted_score(t, basis=basis)
            assert min(w) <= s <= max(w)
            used = [w[k] for k in range(4) if t.votes[k]]
            unanimous = len(used) == 1
            if s in (min(w), max(w)):
                assert unanimous
            if unanimous:
                assert s == used[0]
            else:
                assert min(used) < s < max(used)

    @given(st.integers(0, 3), st.integers(1, 6), st.floats(0.1, 1.0))
    def test_unanimous_input(self, k, n, trust):
        votes = [(f"w{i}", label(k)) for i in range(n)]
        t = tally(votes, {f"w{i}": trust for i in range(n)})
        for m in METHODS:
            assert aggregate(t, m).value == k

    def test_adding_a_vote_never_moves_away(self):
        # all tallies up to 5 votes with trusts from a 3-value grid, plus one more vote
        grid = (0.5, 0.8, 1.0)
        kinds = [(k, t) for k in range(4) for t in grid]
        seen = 0
        for n in range(1, 6):
            for ms in itertools.combinations_with_replacement(kinds, n):
                base = _tally_of(ms)
                before = {m: aggregate(base, m).value for m in METHODS}
                for extra in kinds:
                    after = _tally_of(ms + (extra,))
                    k = extra[0]
                    for m in METHODS:
                        b, a = before[m], aggregate(after, m).value
                        lo, hi = min(b, k), max(b, k)
                        assert lo <= a <= hi, (m, ms, extra)
                    seen += 1
        assert seen > 70_000

    def test_batch_agrees_with_scalar(self):
        rng = random.Random(5)
        rows = []
        for _ in range(3000):
            pairs = [(rng.randrange(4), rng.choice([0.2, 0.5, 0.6, 0.9, 1.0])) for _ in range(rng.randint(1, 7))]
            rows.append(_tally_of(tuple(pairs)))
        V = np.array([t.votes for t in rows])
        Tr = np.array([t.trust_sums for t in rows])
        for m in METHODS:
            got = aggregate_batch(m, V, Tr)
            assert got.tolist() == [aggregate(t, m).value for t in rows]

    def test_unknown_method(self):
        with pytest.raises(ValidationError):
            aggregate(T((1, 0, 0, 0)), "median")


def _tally_of(pairs):
    votes = [0] * 4
    parts = [[] for _ in range(4)]
    for k, t in pairs:
        votes[k] += 1
        parts[k].append(t)
    return VoteTally(tuple(votes), tuple(math.fsum(p) for p in parts))


def _ann(pos, neg):
    if pos + neg == 0:
        return NucleiAnnotation(False)
    return NucleiAnnotation(True, [(0, 0)] * pos, [(1, 1)] * neg)


class TestNuclei:
    def test_median_of_three(self):
        assert nuclei_aggregate([_ann(10, 90), _ann(12, 88), _ann(11, 91)]) == (11, 90)

    def test_constant(self):
        assert nuclei_aggregate([_ann(5, 5)] * 3) == (5, 5)

    def test_zero_row_counts(self):
        assert nuclei_aggregate([_ann(0, 0), _ann(4, 6), _ann(6, 6)]) == (4, 6)

    def test_even_count_rounds_half_up(self):
        assert nuclei_aggregate([(3, 10), (4, 13)]) == (4, 12)
        assert nuclei_aggregate([(2, 10), (4, 12)]) == (3, 11)

    def test_empty(self):
        with pytest.raises(EmptyAnnotationsError):
            nuclei_aggregate([])

    @given(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50)), min_size=1, max_size=7), st.randoms())
    def test_order_invariant(self, counts, rnd):
        shuffled = list(counts)
        rnd.shuffle(shuffled)
        assert nuclei_aggregate(counts) == nuclei_aggregate(shuffled)

    def test_pindex(self):
        assert pindex(5, 95).value == 0.05
        assert pindex(0, 50).value == 0.0
        with pytest.raises(NoNucleiError):
            pindex(0, 0)

    def test_nuclei_label(self):
        assert nuclei_label([_ann(5, 95)] * 3) == (B, 0.05, False)
        assert nuclei_label([_ann(10, 90)] * 3)[0] == B  # 0.1 is inside B
        assert nuclei_label([_ann(11, 89)] * 3)[0] == C
        lab, p, flagged = nuclei_label([_ann(0, 0)] * 3)
        assert (lab, p, flagged) == (A, None, True)


class TestPatient:
    def test_odd(self):
        assert patient_label([A, B, C]) == B

    def test_half_rounds_up(self):
        assert patient_label([A, B]) == B
        assert patient_label([A, C]) == B
        assert patient_label([B, D]) == C

    def test_singleton(self):
        assert patient_label([C]) == C

    @given(st.integers(0, 3), st.integers(1, 5))
    def test_constant(self, k, n):
        assert patient_label([label(k)] * n) == label(k)

    def test_errors(self):
        with pytest.raises(EmptyInputError):
            patient_label([])
        with pytest.raises(SchemeMismatchError):
            patient_label([A, ClassLabel(0, Scheme.THREE)])
