"""Monte-Carlo harness for the estimator-level claims behind the sampled
objectives, kept to vocabularies small enough that the exact softmax is
cheap to enumerate.

Two checks live here:

* the sample-estimated context-dependent noise density averages out, over
  repeated sample sets, to the proposal probability of the word it is
  evaluated at (and its total over the vocabulary averages to one);
* the weighted-softmax gradient estimator's bias and variance as a function
  of the proposal smoothing power, measured against the exactly enumerated
  softmax expectation.

Every pass/fail decision is made with fixed draw counts and seeds and a
3-4 standard-error band.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .sampler import ProposalDistribution, build_proposal, draw_batch

MAX_LAB_VOCAB = 64


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = np.asarray(scores, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass(frozen=True)
class NoiseTheoremReport:
    """Outcome of the noise-density expectation check for one sample size."""

    num_samples: int
    draws: int
    passed: bool
    worst_word_sigmas: float   # max_i |mean p_n(w_i) - Q(w_i)| / SE_i
    total_sigmas: float        # |mean sum_i p_n(w_i) - 1| / SE
    max_abs_word_error: float

    def as_dict(self) -> dict:
        return asdict(self)


def verify_noise_theorem(
    proposal: ProposalDistribution,
    scores: np.ndarray,
    num_samples: int,
    draws: int,
    rng: np.random.Generator,
    sigmas: float = 4.0,
) -> NoiseTheoremReport:
    """Check that the sample-estimated noise density is unbiased for Q.

    For each of ``draws`` independent sample sets (i.i.d. from the proposal,
    no exclusions), the noise density at word i factors as Q(i) times the
    importance-sampling estimate of the softmax total,
    ``R = (1/K) * sum_j p(w_j) / Q(w_j)``.  Passing means every word's
    estimate sits within ``sigmas`` standard errors of Q(i) and the total
    sits within ``sigmas`` standard errors of 1.
    """
    V = proposal.size
    if V > MAX_LAB_VOCAB:
        raise ValueError(f"lab checks require V <= {MAX_LAB_VOCAB}")
    p_model = _softmax(scores)
    samples = proposal.table.draw(rng, (draws, num_samples))
    ratios = p_model[samples] / proposal.probs[samples]
    totals = ratios.mean(axis=1)                       # R per draw
    densities = proposal.probs[None, :] * totals[:, None]   # p_n per draw per word

    mean_d = densities.mean(axis=0)
    se_d = densities.std(axis=0, ddof=1) / np.sqrt(draws)
    word_err = np.abs(mean_d - proposal.probs)
    with np.errstate(divide="ignore", invalid="ignore"):
        word_sigmas = np.where(se_d > 0, word_err / se_d, np.where(word_err > 0, np.inf, 0.0))

    total_err = abs(totals.mean() - 1.0)
    se_total = totals.std(ddof=1) / np.sqrt(draws)
    total_sigmas = total_err / se_total if se_total > 0 else (np.inf if total_err > 0 else 0.0)

    passed = bool(word_sigmas.max() <= sigmas and total_sigmas <= sigmas)
    return NoiseTheoremReport(
        num_samples=num_samples,
        draws=draws,
        passed=passed,
        worst_word_sigmas=float(word_sigmas.max()),
        total_sigmas=float(total_sigmas),
        max_abs_word_error=float(word_err.max()),
    )


@dataclass(frozen=True)
class EstimatorStats:
    """Bias/variance of the sampled softmax-gradient estimator at one alpha."""

    alpha: float
    num_samples: int
    draws: int
    replicates: int
    bias_l1: float        # ||E[estimate] - exact||_1, averaged over replicates
    bias_l1_se: float
    variance: float       # summed per-word variance, averaged over replicates
    variance_se: float

    def as_dict(self) -> dict:
        return asdict(self)


def gradient_weight_estimate(
    scores: np.ndarray,
    proposal: ProposalDistribution,
    target: int,
    num_samples: int,
    draws: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Scatter the weighted-softmax posterior onto the vocabulary.

    Each row is one draw's estimate of the exact softmax probabilities,
    which are the weights multiplying the per-word score gradients in the
    full maximum-likelihood gradient.  Samples are drawn as in training:
    i.i.d. from the proposal, target excluded by redraw.
    """
    V = scores.shape[0]
    samples = draw_batch(proposal, num_samples, np.full(draws, target, dtype=np.int64), rng)
    rows = np.concatenate(
        [np.full((draws, 1), target, dtype=np.int64), samples], axis=1
    )
    logits = scores[rows] + np.log(1.0 / proposal.probs[rows])
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    posterior = e / e.sum(axis=1, keepdims=True)
    estimate = np.zeros((draws, V), dtype=np.float64)
    np.add.at(estimate, (np.arange(draws)[:, None], rows), posterior)
    return estimate


def estimator_sweep(
    scores: np.ndarray,
    counts: np.ndarray,
    target: int,
    alphas,
    num_samples: int,
    draws: int,
    replicates: int,
    seed: int,
) -> list[EstimatorStats]:
    """Measure estimator bias and variance across proposal smoothing powers.

    The exact reference is the fully enumerated softmax of ``scores``.  For
    each alpha, ``replicates`` independent batches of ``draws`` sample sets
    are taken; bias and variance statistics are averaged over replicates and
    their spread provides the standard errors used in qualitative ordering
    tests.
    """
    scores = np.asarray(scores, dtype=np.float64)
    V = scores.shape[0]
    if V > MAX_LAB_VOCAB:
        raise ValueError(f"lab checks require V <= {MAX_LAB_VOCAB}")
    exact = _softmax(scores)
    results = []
    for a_index, alpha in enumerate(alphas):
        proposal = build_proposal(counts, alpha)
        bias_vals = np.empty(replicates)
        var_vals = np.empty(replicates)
        for rep in range(replicates):
            rng = np.random.default_rng([seed, a_index, rep])
            est = gradient_weight_estimate(
                scores, proposal, target, num_samples, draws, rng
            )
            bias_vals[rep] = np.abs(est.mean(axis=0) - exact).sum()
            var_vals[rep] = est.var(axis=0, ddof=1).sum()
        results.append(
            EstimatorStats(
                alpha=float(alpha),
                num_samples=num_samples,
                draws=draws,
                replicates=replicates,
                bias_l1=float(bias_vals.mean()),
                bias_l1_se=float(bias_vals.std(ddof=1) / np.sqrt(replicates)),
                variance=float(var_vals.mean()),
                variance_se=float(var_vals.std(ddof=1) / np.sqrt(replicates)),
            )
        )
    return results


def default_lab_instance(vocab_size: int = 32, seed: int = 99) -> tuple[np.ndarray, np.ndarray]:
    """A fixed skewed instance: Zipf-like counts and scores aligned with a
    tempered version of them, so intermediate smoothing powers match the
    model distribution better than either endpoint."""
    ranks = np.arange(1, vocab_size + 1, dtype=np.float64)
    counts = np.round(10000.0 / ranks**1.2).astype(np.int64)
    counts = np.maximum(counts, 1)
    rng = np.random.default_rng(seed)
    scores = 0.5 * np.log(counts.astype(np.float64)) + 0.1 * rng.standard_normal(vocab_size)
    return scores, counts


def run_lab(
    seed: int = 2024,
    draws_theorem: int = 100_000,
    draws_sweep: int = 4000,
    replicates: int = 12,
) -> dict:
    """The full diagnostic battery as one JSON-friendly report."""
    theorem_scores, theorem_counts = default_lab_instance(vocab_size=8, seed=seed)
    proposal = build_proposal(theorem_counts, 0.7)
    theorem = []
    for i, k in enumerate((1, 4, 16)):
        rng = np.random.default_rng([seed, 31, i])
        theorem.append(
            verify_noise_theorem(proposal, theorem_scores, k, draws_theorem, rng).as_dict()
        )

    sweep_scores, sweep_counts = default_lab_instance(vocab_size=32, seed=seed + 1)
    sweep = estimator_sweep(
        sweep_scores, sweep_counts, target=2, alphas=(0.0, 0.5, 1.0),
        num_samples=8, draws=draws_sweep, replicates=replicates, seed=seed,
    )
    return {
        "noise_theorem": theorem,
        "estimator_sweep": [s.as_dict() for s in sweep],
    }
