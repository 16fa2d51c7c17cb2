"""RMSProp with a lazy variant for sparsely-touched embedding rows.

Dense mode follows the classic recipe: every squared-gradient average
decays every step, even where the gradient is zero.  That makes each step
O(V*h) regardless of how few rows the block touched.  Lazy-subnet mode
instead folds the missed decays into the next touch of a row, raising the
decay rate to ``beta ** (1 / p_u)`` where ``p_u`` is the probability of the
row's word being touched by a block; untouched rows are never read or
written.  Updates ascend, since the heads produce objectives to maximize.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import BatchConfig, Vocabulary
from .network import Gradients, ModelParams
from .sampler import ProposalDistribution

DENSE = "dense"
LAZY = "lazy-subnet"

# how the lazy decay exponent is chosen at touch time
EXPECTED_LAPSE = "expected"   # 1 / p_u, the mean geometric gap
EXACT_LAPSE = "exact"         # the recorded number of steps since last touch


class OptimError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float
    decay: float = 0.9
    damping: float = 1e-6
    mode: str = DENSE
    lapse: str = EXPECTED_LAPSE

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise OptimError("learning_rate must be positive")
        if not 0.0 < self.decay < 1.0:
            raise OptimError("decay must lie in (0, 1)")
        if self.damping <= 0:
            raise OptimError("damping must be positive")
        if self.mode not in (DENSE, LAZY):
            raise OptimError(f"unknown optimizer mode {self.mode!r}")
        if self.lapse not in (EXPECTED_LAPSE, EXACT_LAPSE):
            raise OptimError(f"unknown lapse mode {self.lapse!r}")


@dataclass
class OptimizerState:
    """Per-parameter moving averages plus the bookkeeping lazy mode needs."""

    v_in: np.ndarray    # (V, h) float64
    v_r: np.ndarray     # (h, h) float64
    v_out: np.ndarray   # (V, h) float64
    last_in: np.ndarray   # (V,) int64, step of last touch
    last_out: np.ndarray  # (V,) int64
    global_step: int = 0
    pu_in: np.ndarray | None = field(default=None, repr=False)
    pu_out: np.ndarray | None = field(default=None, repr=False)
    _decay_in: np.ndarray | None = field(default=None, repr=False)
    _decay_out: np.ndarray | None = field(default=None, repr=False)


def init_optimizer_state(params: ModelParams) -> OptimizerState:
    V, h = params.w_in.shape
    return OptimizerState(
        v_in=np.zeros((V, h), dtype=np.float64),
        v_r=np.zeros((h, h), dtype=np.float64),
        v_out=np.zeros((V, h), dtype=np.float64),
        last_in=np.zeros(V, dtype=np.int64),
        last_out=np.zeros(V, dtype=np.int64),
    )


def compute_update_probs(
    vocab: Vocabulary,
    proposal: ProposalDistribution,
    cfg: BatchConfig,
    num_samples: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-word probability of being touched by one block's update.

    Input rows are touched when the word occurs among the B*T inputs; output
    rows additionally when the word is drawn as one of the K samples at any
    of the T time steps.  Values are capped at 1, where lazy decay
    degenerates to the ordinary per-step decay.
    """
    p_uni = vocab.unigram()
    B, T = cfg.batch_size, cfg.bptt_len
    pu_in = np.minimum(p_uni * B * T, 1.0)
    pu_out = np.minimum(p_uni * B * T + proposal.probs * num_samples * T, 1.0)
    return pu_in, pu_out


def attach_update_probs(
    state: OptimizerState, pu_in: np.ndarray, pu_out: np.ndarray, cfg: OptimConfig
) -> None:
    """Store update probabilities and precompute the per-word decay factors.

    The probabilities depend only on corpus statistics and batch geometry,
    so the powers ``beta ** (1/p_u)`` are computed once, not per step.
    """
    state.pu_in = np.asarray(pu_in, dtype=np.float64)
    state.pu_out = np.asarray(pu_out, dtype=np.float64)
    with np.errstate(divide="ignore"):
        state._decay_in = np.where(
            state.pu_in > 0, cfg.decay ** (1.0 / state.pu_in), np.nan
        )
        state._decay_out = np.where(
            state.pu_out > 0, cfg.decay ** (1.0 / state.pu_out), np.nan
        )


def _apply(param_rows: np.ndarray, grad: np.ndarray, v: np.ndarray, cfg: OptimConfig, where: str):
    update = cfg.learning_rate * grad / np.sqrt(v + cfg.damping)
    if not np.all(np.isfinite(update)):
        bad = np.argwhere(~np.isfinite(update))[0]
        raise OptimError(f"non-finite update in {where} at coordinates {tuple(bad)}")
    return (param_rows.astype(np.float64) + update).astype(param_rows.dtype)


def dense_step(
    params: ModelParams, grads: Gradients, state: OptimizerState, cfg: OptimConfig
) -> None:
    """One RMSProp step; every moving-average entry decays, touched or not."""
    beta = cfg.decay
    state.global_step += 1
    step = state.global_step

    state.v_r = beta * state.v_r + (1.0 - beta) * grads.w_r_grad**2
    params.w_r = _apply(params.w_r, grads.w_r_grad, state.v_r, cfg, "w_r")

    state.v_in *= beta
    rows = grads.w_in_rows
    if rows.size:
        state.v_in[rows] += (1.0 - beta) * grads.w_in_grads**2
        params.w_in[rows] = _apply(
            params.w_in[rows], grads.w_in_grads, state.v_in[rows], cfg, "w_in"
        )
        state.last_in[rows] = step

    state.v_out *= beta
    if grads.w_out_rows is None:
        state.v_out += (1.0 - beta) * grads.w_out_grads**2
        params.w_out = _apply(params.w_out, grads.w_out_grads, state.v_out, cfg, "w_out")
        state.last_out[:] = step
    else:
        rows = grads.w_out_rows
        if rows.size:
            state.v_out[rows] += (1.0 - beta) * grads.w_out_grads**2
            params.w_out[rows] = _apply(
                params.w_out[rows], grads.w_out_grads, state.v_out[rows], cfg, "w_out"
            )
            state.last_out[rows] = step


def _lazy_rows(
    matrix: np.ndarray,
    rows: np.ndarray,
    row_grads: np.ndarray,
    v: np.ndarray,
    last: np.ndarray,
    pu: np.ndarray,
    decay_cache: np.ndarray,
    step: int,
    cfg: OptimConfig,
    where: str,
) -> None:
    if np.any(pu[rows] <= 0.0):
        raise OptimError(f"inconsistent update probability for touched {where} row")
    if cfg.lapse == EXPECTED_LAPSE:
        decay = decay_cache[rows]
    else:
        decay = cfg.decay ** (step - last[rows]).astype(np.float64)
    v[rows] = decay[:, None] * v[rows] + (1.0 - cfg.decay) * row_grads**2
    matrix[rows] = _apply(matrix[rows], row_grads, v[rows], cfg, where)
    last[rows] = step


def lazy_subnet_step(
    params: ModelParams, grads: Gradients, state: OptimizerState, cfg: OptimConfig
) -> None:
    """RMSProp touching only the rows present in the block's gradients.

    The recurrence matrix always updates densely.  A dense output gradient
    (the exact head) means every row is touched each step, so it takes the
    plain per-step decay rather than the approximated one.
    """
    if cfg.mode != LAZY:
        raise OptimError("lazy_subnet_step called with a dense-mode config")
    if state.pu_in is None or state.pu_out is None:
        raise OptimError("update probabilities not attached to optimizer state")
    beta = cfg.decay
    state.global_step += 1
    step = state.global_step

    state.v_r = beta * state.v_r + (1.0 - beta) * grads.w_r_grad**2
    params.w_r = _apply(params.w_r, grads.w_r_grad, state.v_r, cfg, "w_r")

    if grads.w_in_rows.size:
        _lazy_rows(
            params.w_in, grads.w_in_rows, grads.w_in_grads,
            state.v_in, state.last_in, state.pu_in, state._decay_in,
            step, cfg, "w_in",
        )

    if grads.w_out_rows is None:
        state.v_out = beta * state.v_out + (1.0 - beta) * grads.w_out_grads**2
        params.w_out = _apply(params.w_out, grads.w_out_grads, state.v_out, cfg, "w_out")
        state.last_out[:] = step
    elif grads.w_out_rows.size:
        _lazy_rows(
            params.w_out, grads.w_out_rows, grads.w_out_grads,
            state.v_out, state.last_out, state.pu_out, state._decay_out,
            step, cfg, "w_out",
        )


def step(params: ModelParams, grads: Gradients, state: OptimizerState, cfg: OptimConfig) -> None:
    if cfg.mode == LAZY:
        lazy_subnet_step(params, grads, state, cfg)
    else:
        dense_step(params, grads, state, cfg)
