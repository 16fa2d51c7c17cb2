import numpy as np
import pytest
from scipy import stats

from blackout.corpus import build_vocab
from blackout.sampler import (
    AliasTable,
    SamplerError,
    build_proposal,
    draw,
    draw_batch,
    draw_iid,
    shared_draw,
)


class TestBuildProposal:
    def test_unigram_limit(self):
        p = build_proposal(np.array([4, 2, 1, 1]), 1.0)
        np.testing.assert_allclose(p.probs, [0.5, 0.25, 0.125, 0.125], atol=1e-15)

    def test_uniform_limit(self):
        p = build_proposal(np.array([4, 2, 1, 1]), 0.0)
        np.testing.assert_allclose(p.probs, [0.25] * 4, atol=1e-15)

    def test_uniform_limit_includes_zero_counts(self):
        p = build_proposal(np.array([4, 0, 1]), 0.0)
        np.testing.assert_allclose(p.probs, [1 / 3] * 3, atol=1e-15)

    def test_half_power(self):
        # frozen from a 50-digit mpmath normalization of counts**0.5
        p = build_proposal(np.array([4, 2, 1, 1]), 0.5)
        expected = [
            0.36939806251812928,
            0.26120387496374144,
            0.18469903125906464,
            0.18469903125906464,
        ]
        np.testing.assert_allclose(p.probs, expected, atol=1e-14)

    def test_probs_sum_to_one(self):
        rng = np.random.default_rng(0)
        counts = rng.integers(1, 10_000, size=3720)
        for alpha in (0.0, 0.3, 0.7, 1.0):
            p = build_proposal(counts, alpha)
            assert abs(p.probs.sum() - 1.0) < 1e-12

    def test_rank_order_preserved(self):
        rng = np.random.default_rng(1)
        counts = rng.integers(0, 500, size=64)
        for alpha in (0.25, 0.5, 1.0):
            p = build_proposal(counts, alpha)
            order_counts = np.argsort(counts, kind="stable")
            assert np.all(np.diff(p.probs[order_counts]) >= -1e-18)

    def test_max_prob_monotone_in_alpha(self):
        counts = np.array([50, 13, 7, 2, 1, 1])
        maxima = [
            build_proposal(counts, a).probs.max()
            for a in np.linspace(0.0, 1.0, 11)
        ]
        assert all(b >= a - 1e-15 for a, b in zip(maxima, maxima[1:]))

    def test_alpha_out_of_range(self):
        for alpha in (-0.1, 1.5):
            with pytest.raises(SamplerError):
                build_proposal(np.array([1, 2]), alpha)

    def test_all_zero_counts_degenerate(self):
        with pytest.raises(SamplerError, match="degenerate unigram"):
            build_proposal(np.array([0, 0, 0]), 1.0)

    def test_positive_probs_for_positive_counts(self):
        counts = np.array([0, 3, 0, 1, 900])
        for alpha in (0.1, 0.5, 1.0):
            p = build_proposal(counts, alpha)
            assert np.all(p.probs[counts > 0] > 0)


class TestAliasTable:
    def test_cell_probabilities_match_input(self):
        rng = np.random.default_rng(7)
        for size in (2, 3, 17, 256, 4096):
            w = rng.random(size) + 1e-3
            probs = w / w.sum()
            table = AliasTable(probs)
            np.testing.assert_allclose(table.cell_probabilities(), probs, atol=1e-12)

    def test_skewed_distribution_fidelity(self):
        ranks = np.arange(1, 3721, dtype=np.float64)
        probs = (1 / ranks) / (1 / ranks).sum()
        table = AliasTable(probs)
        np.testing.assert_allclose(table.cell_probabilities(), probs, atol=1e-12)

    def test_empirical_frequencies(self):
        probs = np.array([0.5, 0.3, 0.15, 0.05])
        table = AliasTable(probs)
        rng = np.random.default_rng(11)
        ids = table.draw(rng, 200_000)
        observed = np.bincount(ids, minlength=4)
        _, p_value = stats.chisquare(observed, probs * ids.size)
        assert p_value > 0.01


class TestDraw:
    def test_uniform_weights(self):
        p = build_proposal(np.ones(4), 1.0)
        rng = np.random.default_rng(5)
        ss = draw(p, K=2, target=0, rng=rng)
        assert ss.target == 0
        assert set(ss.samples.tolist()) <= {1, 2, 3}
        np.testing.assert_allclose(ss.weights, 4.0)

    def test_forced_choice(self):
        p = build_proposal(np.array([5, 3]), 1.0)
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert draw(p, K=1, target=0, rng=rng).samples.tolist() == [1]

    def test_target_never_sampled(self):
        p = build_proposal(np.array([100, 1, 1, 1]), 1.0)
        rng = np.random.default_rng(2)
        for _ in range(50):
            ss = draw(p, K=8, target=0, rng=rng)
            assert 0 not in ss.samples

    def test_weights_are_inverse_probabilities(self):
        counts = np.array([8, 4, 2, 2])
        p = build_proposal(counts, 1.0)
        ss = draw(p, K=3, target=1, rng=np.random.default_rng(9))
        ids = np.concatenate(([1], ss.samples))
        np.testing.assert_allclose(ss.weights, 1.0 / p.probs[ids], rtol=0)
        assert np.all(np.isfinite(ss.weights)) and np.all(ss.weights > 0)

    def test_singleton_support_rejected(self):
        p = build_proposal(np.array([7, 0, 0]), 1.0)
        with pytest.raises(SamplerError, match="singleton support"):
            draw(p, K=1, target=0, rng=np.random.default_rng(0))

    def test_deterministic_given_seed(self):
        p = build_proposal(np.array([4, 3, 2, 1]), 0.5)
        a = draw(p, K=5, target=2, rng=np.random.default_rng(123))
        b = draw(p, K=5, target=2, rng=np.random.default_rng(123))
        assert np.array_equal(a.samples, b.samples)

    def test_marginal_matches_renormalized_proposal(self):
        """Empirical sample frequency vs proposal conditioned on != target."""
        counts = np.array([6, 3, 2, 1])
        p = build_proposal(counts, 1.0)
        rng = np.random.default_rng(31)
        target = 0
        n = 250_000
        ids = draw_batch(p, 4, np.full(n // 4, target), rng).ravel()
        observed = np.bincount(ids, minlength=4)[1:]
        conditional = p.probs[1:] / p.probs[1:].sum()
        _, p_value = stats.chisquare(observed, conditional * ids.size)
        assert p_value > 0.01


def test_draw_batch_consistent_with_single_draw():
    p = build_proposal(np.array([5, 4, 3, 2, 1]), 0.7)
    targets = np.array([[0, 1], [2, 3]])
    batch = draw_batch(p, 6, targets, np.random.default_rng(77))
    assert batch.shape == (2, 2, 6)
    assert not np.any(batch == targets[..., None])


def test_draw_iid_allows_target_collisions():
    p = build_proposal(np.array([1000, 1, 1]), 1.0)
    ids = draw_iid(p, 1000, np.random.default_rng(4))
    assert (ids == 0).sum() > 900  # dominant word keeps its mass


def test_shared_draw_excludes_each_steps_targets():
    p = build_proposal(np.arange(1, 30), 0.5)
    block_targets = np.array([[3, 4, 5], [6, 7, 8]])
    for seed in range(10):
        s = shared_draw(p, 12, block_targets, np.random.default_rng(seed))
        assert s.shape == (2, 3, 12)
        for t in range(3):
            # one set per step, replicated across lanes, avoiding that
            # step's targets in every lane
            assert np.array_equal(s[0, t], s[1, t])
            assert not np.isin(s[:, t], block_targets[:, t]).any()
