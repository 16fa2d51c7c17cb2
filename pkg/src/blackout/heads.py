"""Output-layer objectives and their gradients with respect to word scores.

Four interchangeable heads over the score ``u_w = <output_row_w, state>``:

* ``exact_ml``:   log-likelihood under the full softmax, all V scores.
* ``blackout``:   discriminative objective over the target plus K weighted
                  samples; one positive against K negatives under the
                  weighted softmax posterior.
* ``is_ml``:      the maximum-likelihood term of ``blackout`` alone, i.e. a
                  self-normalized importance-sampling estimate of the full
                  softmax log-likelihood.
* ``nce``:        noise contrastive estimation against the proposal as a
                  context-independent noise distribution, with a constant
                  partition value Z.

Sign convention: every head returns an objective that training *maximizes*,
together with its partial derivatives d(objective)/d(score).

Single-slate functions define the contract and are the reference used by
the tests; the ``*_batch`` variants vectorize the identical arithmetic over
many positions and are the ones used in the training loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diagnostics import Diagnostics

# A sample posterior this close to 1 is clamped before log / divide so a
# pathological slate costs a bounded gradient instead of an abort.
POSTERIOR_CLAMP = 1e-12

# sigmoid(x) rounds to exactly 1.0 in float64 above this point.
_SATURATION_CUTOFF = 36.74


@dataclass(frozen=True)
class ScoreSlate:
    """Scores and importance weights for one target and its K samples.

    ``weights[0]`` belongs to the target, ``weights[1:]`` to the samples,
    each weight being 1/Q(w) under the proposal the samples were drawn from.
    Repeated sample ids occupy separate entries and are treated as distinct
    occurrences throughout.
    """

    target_score: float
    sample_scores: np.ndarray  # (K,)
    weights: np.ndarray        # (K+1,)

    @property
    def K(self) -> int:
        return self.sample_scores.shape[0]

    def stacked_scores(self) -> np.ndarray:
        return np.concatenate(([self.target_score], self.sample_scores))


@dataclass(frozen=True)
class HeadOutput:
    """Objective value plus d(objective)/d(score) per slate entry."""

    loss: float
    grads: np.ndarray


@dataclass(frozen=True)
class NceConfig:
    """Partition constant and noise source for the NCE baseline head.

    ``z`` is the fixed softmax normalizer guess (1.0 is the customary
    choice).  ``learned_z`` is declared for interface completeness but not
    supported as a training mode.
    """

    z: float = 1.0
    learned_z: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.z) and self.z > 0):
            raise ValueError("partition constant z must be finite and positive")
        if self.learned_z:
            raise NotImplementedError("learned partition mode is not supported")


# ---------------------------------------------------------------------------
# weighted softmax
# ---------------------------------------------------------------------------


def weighted_softmax_batch(scores: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior ``p_k = q_k exp(u_k) / sum_j q_j exp(u_j)`` row-wise.

    Computed in the log domain with a max shift, so uniformly shifting a
    row's scores cannot overflow and leaves the posterior unchanged.
    Returns ``(probs, log_probs)``, both shaped like ``scores``.
    """
    logits = np.asarray(scores, dtype=np.float64) + np.log(weights)
    shift = logits.max(axis=-1, keepdims=True)
    expd = np.exp(logits - shift)
    norm = expd.sum(axis=-1, keepdims=True)
    probs = expd / norm
    log_probs = (logits - shift) - np.log(norm)
    return probs, log_probs


def weighted_softmax(slate: ScoreSlate) -> np.ndarray:
    """Weighted-softmax posterior over the target (index 0) and samples."""
    probs, _ = weighted_softmax_batch(slate.stacked_scores()[None, :], slate.weights[None, :])
    return probs[0]


# ---------------------------------------------------------------------------
# BlackOut discriminative head
# ---------------------------------------------------------------------------


def blackout_batch(
    scores: np.ndarray, weights: np.ndarray, diag: Diagnostics | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Discriminative objective and score gradients, vectorized over rows.

    Row layout: column 0 is the target, columns 1.. are sample occurrences.
    Objective per row: ``log p_0 + sum_j log(1 - p_j)`` under the weighted
    softmax posterior ``p``.
    """
    probs, log_probs = weighted_softmax_batch(scores, weights)
    K = scores.shape[-1] - 1
    p_target = probs[..., 0]
    p_samples = probs[..., 1:]

    headroom = 1.0 - p_samples
    clamped = headroom < POSTERIOR_CLAMP
    if clamped.any():
        if diag is not None:
            diag.wsoftmax_clamps += int(clamped.sum())
        headroom = np.maximum(headroom, POSTERIOR_CLAMP)

    loss = log_probs[..., 0] + np.sum(np.log(headroom), axis=-1)

    inv = 1.0 / headroom
    inv_sum = inv.sum(axis=-1)
    grads = np.empty_like(probs)
    grads[..., 0] = 1.0 - (K + 1 - inv_sum) * p_target
    grads[..., 1:] = -((K + 1) - (inv_sum[..., None] - inv)) * p_samples
    return loss, grads


def blackout_head(slate: ScoreSlate, diag: Diagnostics | None = None) -> HeadOutput:
    loss, grads = blackout_batch(
        slate.stacked_scores()[None, :], slate.weights[None, :], diag
    )
    return HeadOutput(loss=float(loss[0]), grads=grads[0])


# ---------------------------------------------------------------------------
# importance-sampled maximum likelihood head
# ---------------------------------------------------------------------------


def is_ml_batch(scores: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Maximum-likelihood term alone: ``log p_0`` and its gradients.

    The gradient is ``1{k = target} - p_k``: the sampled counterpart of the
    exact softmax gradient, with the model expectation estimated by
    self-normalized importance sampling over the slate.
    """
    probs, log_probs = weighted_softmax_batch(scores, weights)
    grads = -probs
    grads[..., 0] += 1.0
    return log_probs[..., 0].copy(), grads


def is_ml_head(slate: ScoreSlate) -> HeadOutput:
    loss, grads = is_ml_batch(slate.stacked_scores()[None, :], slate.weights[None, :])
    return HeadOutput(loss=float(loss[0]), grads=grads[0])


# ---------------------------------------------------------------------------
# NCE baseline head
# ---------------------------------------------------------------------------


def nce_posterior_batch(
    scores: np.ndarray, noise_probs: np.ndarray, z: float, K: int
) -> np.ndarray:
    """P(data | w) = p / (p + K * p_n(w)) with p = exp(u)/Z, as a stable sigmoid."""
    a = np.asarray(scores, dtype=np.float64) - math.log(z) - np.log(K * noise_probs)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def nce_batch(
    scores: np.ndarray,
    weights: np.ndarray,
    z: float,
    noise_probs: np.ndarray | None = None,
    diag: Diagnostics | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """NCE objective and score gradients, vectorized over rows.

    ``noise_probs`` defaults to the proposal probabilities recovered from the
    slate weights (noise = proposal); passing explicit values supports noise
    distributions other than the proposal.

    Large ``exp(u)/Z`` never overflows here because the posterior is
    evaluated as a sigmoid of ``u - ln Z - ln(K p_n)``; sample posteriors
    that still saturate to 1 in float64 are counted as instability events.
    """
    scores = np.asarray(scores, dtype=np.float64)
    K = scores.shape[-1] - 1
    if noise_probs is None:
        noise_probs = 1.0 / np.asarray(weights, dtype=np.float64)

    a = scores - math.log(z) - np.log(K * noise_probs)
    # log sigmoid(a) = -log1p(exp(-a)), computed without overflow either side.
    log_sig = -np.logaddexp(0.0, -a)
    log_one_minus = -np.logaddexp(0.0, a)
    posterior = np.exp(log_sig)

    if diag is not None:
        diag.nce_saturations += int(np.count_nonzero(a[..., 1:] > _SATURATION_CUTOFF))

    loss = log_sig[..., 0] + log_one_minus[..., 1:].sum(axis=-1)
    grads = np.empty_like(posterior)
    grads[..., 0] = 1.0 - posterior[..., 0]
    grads[..., 1:] = -posterior[..., 1:]
    return loss, grads


def nce_head(
    slate: ScoreSlate,
    cfg: NceConfig,
    noise_probs: np.ndarray | None = None,
    diag: Diagnostics | None = None,
) -> HeadOutput:
    if slate.K < 1:
        raise ValueError("NCE requires at least one noise sample")
    noise = None if noise_probs is None else np.asarray(noise_probs, dtype=np.float64)[None, :]
    loss, grads = nce_batch(
        slate.stacked_scores()[None, :], slate.weights[None, :], cfg.z, noise, diag
    )
    return HeadOutput(loss=float(loss[0]), grads=grads[0])


def noise_density(
    target_weight: float, sample_weights: np.ndarray, sample_probs: np.ndarray
) -> float:
    """Sample-estimated context-dependent noise density for the target word.

    ``p_n(target | s) = (1/K) * sum_j (q_j / q_target) * p(w_j | s)`` where the
    sum runs over the K sample occurrences.  Any common rescaling of
    ``sample_probs`` rescales the result, so unnormalized model scores work
    wherever the normalizer later cancels.
    """
    sample_weights = np.asarray(sample_weights, dtype=np.float64)
    sample_probs = np.asarray(sample_probs, dtype=np.float64)
    K = sample_weights.shape[0]
    return float(np.sum(sample_weights * sample_probs) / (K * target_weight))


# ---------------------------------------------------------------------------
# exact softmax maximum likelihood head
# ---------------------------------------------------------------------------


def exact_ml_batch(full_scores: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Log-likelihood and gradients over the complete score vector per row.

    ``grads = onehot(target) - softmax(scores)``, so each row's gradient sums
    to zero.
    """
    U = np.asarray(full_scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    shift = U.max(axis=-1, keepdims=True)
    expd = np.exp(U - shift)
    norm = expd.sum(axis=-1, keepdims=True)
    probs = expd / norm
    rows = np.arange(U.shape[0])
    loss = (U[rows, targets] - shift[:, 0]) - np.log(norm[:, 0])
    grads = -probs
    grads[rows, targets] += 1.0
    return loss, grads


def exact_ml_head(full_scores: np.ndarray, target: int) -> HeadOutput:
    loss, grads = exact_ml_batch(np.asarray(full_scores, dtype=np.float64)[None, :], [target])
    return HeadOutput(loss=float(loss[0]), grads=grads[0])
