"""Power-smoothed unigram proposal distribution and O(1) weighted sampling.

The proposal raises unigram counts to a power ``alpha`` in [0, 1] and
renormalizes, interpolating between the uniform distribution (alpha = 0)
and the raw unigram distribution (alpha = 1).  Draws use a Walker/Vose
alias table, so each sample costs one uniform integer, one uniform float
and two array lookups regardless of vocabulary size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Vocabulary


class SamplerError(ValueError):
    pass


class AliasTable:
    """Constant-time sampler for a fixed discrete distribution (Vose's method)."""

    def __init__(self, probs: np.ndarray):
        probs = np.asarray(probs, dtype=np.float64)
        n = probs.shape[0]
        scaled = probs * n
        alias = np.zeros(n, dtype=np.int64)
        accept = np.ones(n, dtype=np.float64)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s = small.pop()
            g = large.pop()
            accept[s] = scaled[s]
            alias[s] = g
            scaled[g] = (scaled[g] + scaled[s]) - 1.0
            if scaled[g] < 1.0:
                small.append(g)
            else:
                large.append(g)
        # Leftovers are exactly 1 up to rounding.
        for i in large + small:
            accept[i] = 1.0
            alias[i] = i
        self.accept = accept
        self.alias = alias
        self.size = n

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        slots = rng.integers(0, self.size, size=size)
        takes = rng.random(size=size) < self.accept[slots]
        return np.where(takes, slots, self.alias[slots])

    def cell_probabilities(self) -> np.ndarray:
        """Exact per-id probability realized by the table (for fidelity checks)."""
        p = self.accept.copy()
        np.add.at(p, self.alias, 1.0 - self.accept)
        return p / self.size


@dataclass(frozen=True)
class ProposalDistribution:
    """Normalized proposal probabilities plus the alias table built from them."""

    alpha: float
    probs: np.ndarray
    table: AliasTable

    @property
    def size(self) -> int:
        return self.probs.shape[0]

    def weight_of(self, word_id) -> np.ndarray:
        """Importance weight 1 / Q(w) for the given id(s)."""
        return 1.0 / self.probs[word_id]


@dataclass(frozen=True)
class SampleSet:
    """A target id, K negative sample ids drawn from the proposal, and the
    importance weights 1/Q(w) for the target followed by each sample.

    Duplicates among the samples are kept; the target never appears.
    """

    target: int
    samples: np.ndarray   # (K,) int64
    weights: np.ndarray   # (K+1,) float64, target first

    def __post_init__(self):
        if np.any(self.samples == self.target):
            raise SamplerError("target must not appear among its samples")


def build_proposal(vocab_or_counts, alpha: float) -> ProposalDistribution:
    """Raise unigram counts to ``alpha`` and renormalize.

    ``0 ** 0`` is taken as 1 so alpha = 0 is exactly uniform over the whole
    vocabulary; for alpha > 0 a zero-count word keeps zero probability.
    """
    if isinstance(vocab_or_counts, Vocabulary):
        counts = vocab_or_counts.counts
    else:
        counts = np.asarray(vocab_or_counts)
    counts = counts.astype(np.float64)
    if not 0.0 <= alpha <= 1.0:
        raise SamplerError(f"alpha must lie in [0, 1], got {alpha}")
    if np.any(counts < 0):
        raise SamplerError("negative counts")
    if alpha == 0.0:
        weights = np.ones_like(counts)
    else:
        weights = counts**alpha
    total = weights.sum()
    if total <= 0.0:
        raise SamplerError("degenerate unigram")
    probs = weights / total
    return ProposalDistribution(alpha=float(alpha), probs=probs, table=AliasTable(probs))


def draw_iid(proposal: ProposalDistribution, K: int, rng: np.random.Generator) -> np.ndarray:
    """K independent draws from the proposal, no exclusions."""
    return proposal.table.draw(rng, K)


def draw(
    proposal: ProposalDistribution, K: int, target: int, rng: np.random.Generator
) -> SampleSet:
    """Draw K samples i.i.d. from the proposal, redrawing any that hit the target.

    Rejection keeps the marginal distribution of every non-target id equal to
    the proposal conditioned on "not the target".  Expected retries are O(1)
    as long as the target does not own almost all of the proposal mass.
    """
    if K < 1:
        raise SamplerError("K must be >= 1")
    if proposal.probs[target] >= 1.0 - 1e-12 or np.count_nonzero(proposal.probs) < 2:
        raise SamplerError("cannot exclude target from singleton support")
    samples = proposal.table.draw(rng, K)
    bad = samples == target
    while bad.any():
        samples[bad] = proposal.table.draw(rng, int(bad.sum()))
        bad = samples == target
    ids = np.concatenate(([target], samples))
    return SampleSet(target=int(target), samples=samples, weights=1.0 / proposal.probs[ids])


def draw_batch(
    proposal: ProposalDistribution,
    K: int,
    targets: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Vectorized `draw` for many positions at once.

    Returns an int64 array of shape ``targets.shape + (K,)``; entry
    ``[..., k]`` is the k-th sample for the corresponding target, excluded
    from colliding with that target by redraw.
    """
    targets = np.asarray(targets, dtype=np.int64)
    samples = proposal.table.draw(rng, targets.shape + (K,))
    bad = samples == targets[..., None]
    while bad.any():
        samples[bad] = proposal.table.draw(rng, int(bad.sum()))
        bad = samples == targets[..., None]
    return samples


def shared_draw(
    proposal: ProposalDistribution,
    K: int,
    block_targets: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """One sample set per time step, shared across the batch lanes.

    This is the throughput-oriented sampling mode: K draws per step instead
    of K per position, giving per-word sample-touch rates of about
    ``Q(w) * K * T`` per block, which is exactly what the lazy optimizer's
    update-probability model assumes.  A step's shared set must avoid every
    lane's target at that step, so collisions with any of them are redrawn.

    ``block_targets`` is (B, T); the result is (B, T, K) with the same
    samples replicated down each column.
    """
    B, T = block_targets.shape
    if np.count_nonzero(proposal.probs) <= B + 1:
        raise SamplerError("proposal support too small to exclude a step's targets")
    samples = proposal.table.draw(rng, (T, K))
    bad = (samples[:, None, :] == block_targets.T[:, :, None]).any(axis=1)
    while bad.any():
        samples[bad] = proposal.table.draw(rng, int(bad.sum()))
        bad = (samples[:, None, :] == block_targets.T[:, :, None]).any(axis=1)
    return np.broadcast_to(samples[None, :, :], (B, T, K)).copy()
