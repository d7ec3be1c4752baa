import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qpqsim.chang_protocol import (
    ChangParams,
    GroupTranscript,
    alice_measure_group,
    bob_step3_check,
    bob_step4_check,
    build_raw_key,
    chang_prepare,
    honest_disclosure,
    raw_key_arrays,
    run_protocol,
    split_groups,
    step4_pooled_test,
)
from qpqsim.postprocess import INCONCLUSIVE
from qpqsim.quantum import Basis, PreparedSymbol


def honest_groups(count, n, eta, rng):
    sent = rng.integers(0, 4, count * n, dtype=np.int8)
    return [alice_measure_group(g, eta, rng) for g in split_groups(sent, n)]


class TestParams:
    def test_group_count_covers_key(self):
        p = ChangParams()
        count = p.resolved_group_count()
        assert count * p.group_size / 2 > p.key_bits_needed
        assert ChangParams(group_count=3).resolved_group_count() == 3

    def test_invalid(self):
        for kw in ({"eta": 1.5}, {"group_size": 3}, {"significance": 0.0}, {"group_count": -1}):
            with pytest.raises(ValueError):
                ChangParams(**kw)


class TestPrepare:
    def test_zero_groups(self, rng):
        assert len(chang_prepare(ChangParams(group_count=0), rng)) == 0

    def test_uniform(self, rng):
        sent = chang_prepare(ChangParams(group_count=20_000, group_size=5), rng)
        assert len(sent) == 100_000
        freqs = np.bincount(sent, minlength=4) / len(sent)
        np.testing.assert_allclose(freqs, 0.25, atol=0.01)
        assert (sent >> 1).mean() == pytest.approx(0.5, abs=0.01)


class TestMeasure:
    def test_all_z(self, rng):
        sent = rng.integers(0, 4, 60, dtype=np.int8)
        g = alice_measure_group(sent, 1.0, rng)
        assert (g.alice_bases == Basis.Z).all()
        z = (sent >> 1) == 0
        np.testing.assert_array_equal(g.alice_outcomes[z], sent[z])

    def test_x_on_x(self, rng):
        g = alice_measure_group(np.full(10, PreparedSymbol.XPLUS, dtype=np.int8), 0.0, rng)
        assert (g.alice_outcomes == PreparedSymbol.XPLUS).all()

    def test_plus_in_z(self, rng):
        g = alice_measure_group(np.full(100_000, PreparedSymbol.XPLUS, dtype=np.int8), 1.0, rng)
        assert (g.alice_outcomes == PreparedSymbol.Z0).mean() == pytest.approx(0.5, abs=0.01)

    def test_announcement_is_permuted(self, rng):
        g = alice_measure_group(rng.integers(0, 4, 8, dtype=np.int8), 0.5, rng)
        for orig in range(8):
            slot = g.permutation[orig]
            assert g.announced_outcomes[slot] == g.alice_outcomes[orig]
            assert g.order[slot] == orig
        assert ((g.announced_outcomes >> 1) == g.announced_bases).all()


class TestStep3:
    def test_honest_never_mismatches(self, rng):
        groups = honest_groups(2000, 6, 0.5, rng)
        assert bob_step3_check(groups, 0.5, 0.01, rng).mismatches == 0

    def test_honest_pass_rate(self):
        rng = np.random.default_rng(3)
        passes = [bob_step3_check(honest_groups(1000, 10, 0.5, rng), 0.5, 0.01, rng).passed for _ in range(400)]
        assert np.mean(passes) == pytest.approx(0.99, abs=0.015)

    def test_inflated_z_fraction(self, rng):
        groups = honest_groups(1000, 10, 0.9, rng)
        assert not bob_step3_check(groups, 0.5, 0.01, rng).statistical
        assert not bob_step3_check(groups, 0.5, 0.01, rng, one_sided=True).statistical

    def test_one_sided_ignores_deflation(self, rng):
        groups = honest_groups(1000, 10, 0.3, rng)
        assert not bob_step3_check(groups, 0.5, 0.01, rng).statistical
        assert bob_step3_check(groups, 0.5, 0.01, rng, one_sided=True).statistical

    def test_returned_state_mismatch(self, rng):
        groups = honest_groups(50, 6, 0.5, rng)
        g = groups[0]
        # flip a returned Z carrier so it contradicts its announcement
        slot = int(np.flatnonzero(g.announced_bases == Basis.Z)[0])
        g.returned[slot] ^= 1
        verdict = bob_step3_check(groups, 0.5, 0.01, rng)
        assert verdict.mismatches == 1
        assert not verdict.structural

    def test_empty(self, rng):
        assert bob_step3_check([], 0.5, 0.01, rng).passed


class TestStep4:
    def test_honest(self, rng):
        for g in honest_groups(2000, 6, 0.5, rng):
            assert bob_step4_check(g, honest_disclosure(g), 0.5, 0.01).structural

    def test_inconsistent_x_slot(self):
        sent = np.array([PreparedSymbol.XPLUS, PreparedSymbol.Z0], dtype=np.int8)
        g = GroupTranscript(
            sent=sent,
            alice_bases=None,
            alice_outcomes=None,
            permutation=None,
            announced_bases=np.array([1, 0], dtype=np.int8),
            announced_outcomes=np.array([PreparedSymbol.XMINUS, PreparedSymbol.Z0], dtype=np.int8),
            returned=np.array([PreparedSymbol.XMINUS, PreparedSymbol.Z0], dtype=np.int8),
        )
        verdict = bob_step4_check(g, [0], 0.5, 0.01)
        assert not verdict.structural
        assert verdict.mismatches == 1
        # pointing at the Z slot is always acceptable
        assert bob_step4_check(g, [1], 0.5, 0.01).structural

    def test_malformed(self, rng):
        g = next(g for g in honest_groups(100, 6, 0.5, rng) if len(g.x_originals()) >= 2)
        d = honest_disclosure(g)
        dup = d.copy()
        dup[1] = dup[0]
        assert not bob_step4_check(g, dup, 0.5, 0.01).structural
        assert not bob_step4_check(g, d[:-1], 0.5, 0.01).structural
        bad = d.copy()
        bad[0] = 99
        assert not bob_step4_check(g, bad, 0.5, 0.01).structural

    def test_pooled_rate(self, rng):
        groups = honest_groups(2000, 6, 0.5, rng)
        v = step4_pooled_test(groups, [honest_disclosure(g) for g in groups], 0.5, 0.01)
        assert v.p_value > 1e-4

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_verdicts_permutation_invariant(self, seed):
        r = np.random.default_rng(seed)
        sent = r.integers(0, 4, 6, dtype=np.int8)
        g = alice_measure_group(sent, 0.5, r)
        # same measurement results, freshly drawn permutation
        perm = r.permutation(6)
        order = np.argsort(perm)
        h = GroupTranscript(
            sent=g.sent,
            alice_bases=g.alice_bases,
            alice_outcomes=g.alice_outcomes,
            permutation=perm,
            announced_bases=g.alice_bases[order],
            announced_outcomes=g.alice_outcomes[order],
            returned=g.alice_outcomes[order],
        )
        a = bob_step4_check(g, honest_disclosure(g), 0.5, 0.01)
        b = bob_step4_check(h, honest_disclosure(h), 0.5, 0.01)
        assert a == b
        s1 = bob_step3_check([g], 0.5, 0.01, np.random.default_rng(0))
        s2 = bob_step3_check([h], 0.5, 0.01, np.random.default_rng(0))
        assert (s1.structural, s1.statistical, s1.p_value) == (s2.structural, s2.statistical, s2.p_value)


class TestRawKey:
    def test_all_conclusive(self, rng):
        recs = build_raw_key(honest_groups(50, 6, 1.0, rng))
        assert recs and all(r.conclusive and r.alice_value == r.bob_bit for r in recs)

    def test_all_inconclusive(self, rng):
        recs = build_raw_key(honest_groups(50, 6, 0.0, rng))
        assert recs and not any(r.conclusive for r in recs)

    def test_conclusive_fraction(self, rng):
        bob, alice = raw_key_arrays(honest_groups(34_000, 6, 0.5, rng))
        assert len(bob) > 100_000
        known = alice != INCONCLUSIVE
        assert known.mean() == pytest.approx(0.5, abs=0.01)
        np.testing.assert_array_equal(alice[known], bob[known])

    def test_empty(self):
        bob, alice = raw_key_arrays([])
        assert len(bob) == len(alice) == 0


class TestEndToEnd:
    def test_honest_runs(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            params = ChangParams(database_size=200)
            db = rng.integers(0, 2, 200)
            out = run_protocol(params, db, rng)
            if out.aborted:
                # only the statistical tests may reject an honest Alice
                assert out.step3.structural and all(v.structural for v in out.step4)
                continue
            assert out.retrieved_bit == db[out.desired_index]
            assert all(db[t] == v for t, v in out.recovered.items())
            assert all(out.final_key.bits[j] == v for j, v in out.final_key.alice_known.items())

    def test_database_length_checked(self, rng):
        with pytest.raises(ValueError):
            run_protocol(ChangParams(database_size=10), np.zeros(9), rng)
