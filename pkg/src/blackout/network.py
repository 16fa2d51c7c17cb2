"""Elman recurrent network core: forward pass, selected-row scores, exact
softmax, and truncated backpropagation through time.

Parameters are stored in float32; every computation upcasts to float64 so
accumulations stay stable.  The one-hot input encoding is exploited
throughout: embedding lookups are row gathers and the output layer is only
ever evaluated on the rows a caller asks for, so sampled objectives never
touch all V rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import BpttBlock
from .diagnostics import Diagnostics


class NumericsError(FloatingPointError):
    """A forward or backward quantity left the finite range."""


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically safe logistic function (no overflow for large |x|)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class ModelParams:
    """The three weight matrices: input embeddings, recurrence, output rows."""

    w_in: np.ndarray   # (V, h)
    w_r: np.ndarray    # (h, h)
    w_out: np.ndarray  # (V, h)

    @property
    def vocab_size(self) -> int:
        return self.w_in.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.w_r.shape[0]

    def __post_init__(self):
        V, h = self.w_in.shape
        if self.w_r.shape != (h, h) or self.w_out.shape != (V, h):
            raise ValueError(
                f"inconsistent shapes: w_in {self.w_in.shape}, "
                f"w_r {self.w_r.shape}, w_out {self.w_out.shape}"
            )

    def copy(self) -> "ModelParams":
        return ModelParams(self.w_in.copy(), self.w_r.copy(), self.w_out.copy())


def init_params(
    vocab_size: int,
    hidden_size: int,
    rng: np.random.Generator,
    scale: float = 0.1,
    dtype=np.float32,
) -> ModelParams:
    """Uniform initialization in [-scale, scale] for all three matrices."""
    def u(*shape):
        return rng.uniform(-scale, scale, size=shape).astype(dtype)

    return ModelParams(
        w_in=u(vocab_size, hidden_size),
        w_r=u(hidden_size, hidden_size),
        w_out=u(vocab_size, hidden_size),
    )


def step_hidden(prev_state: np.ndarray, input_id: int, params: ModelParams) -> np.ndarray:
    """One recurrence step: ``sigmoid(w_in[input] + w_r @ prev_state)``."""
    z = params.w_in[input_id].astype(np.float64) + params.w_r.astype(np.float64) @ np.asarray(
        prev_state, dtype=np.float64
    )
    state = sigmoid(z)
    if not np.all(np.isfinite(state)):
        raise NumericsError("numerical overflow in hidden step")
    return state


def scores(state: np.ndarray, row_ids, params: ModelParams) -> np.ndarray:
    """Scores for the requested output rows only: O(len(row_ids) * h)."""
    rows = params.w_out[np.asarray(row_ids, dtype=np.int64)].astype(np.float64)
    return rows @ np.asarray(state, dtype=np.float64)


def full_softmax(
    state: np.ndarray, params: ModelParams, diag: Diagnostics | None = None
) -> np.ndarray:
    """Probability over the whole vocabulary, max-shifted for stability."""
    if diag is not None:
        diag.full_softmax_calls += 1
    u = params.w_out.astype(np.float64) @ np.asarray(state, dtype=np.float64)
    u -= u.max()
    e = np.exp(u)
    return e / e.sum()


@dataclass
class ForwardTape:
    """Everything the backward pass needs about one block's forward run.

    ``prev_states[t]`` is the state actually fed into step t (already
    re-initialized on lanes whose input was a sentence start, when that
    policy is active), ``states[t]`` the resulting state.
    """

    inputs: np.ndarray        # (B, T)
    targets: np.ndarray       # (B, T)
    prev_states: np.ndarray   # (T, B, h)
    states: np.ndarray        # (T, B, h)
    resets_applied: np.ndarray  # (B, T) bool, True where prev state was replaced

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def forward_block(
    params: ModelParams,
    block: BpttBlock,
    carry_state: np.ndarray | None = None,
    reset_at_sentence: bool = True,
) -> ForwardTape:
    """Run the recurrence over one block, recording states for BPTT.

    ``carry_state`` is the per-lane state left by the previous block (zeros
    at a stream start).  With ``reset_at_sentence``, lanes whose input is a
    sentence-start token restart from the zero state at that position.
    """
    B, T = block.inputs.shape
    h = params.hidden_size
    w_r = params.w_r.astype(np.float64)
    state = (
        np.zeros((B, h), dtype=np.float64)
        if carry_state is None
        else np.asarray(carry_state, dtype=np.float64).copy()
    )
    prev_states = np.empty((T, B, h), dtype=np.float64)
    states = np.empty((T, B, h), dtype=np.float64)
    if reset_at_sentence:
        resets = block.lane_reset.copy()
    else:
        resets = np.zeros((B, T), dtype=bool)
    for t in range(T):
        if resets[:, t].any():
            state[resets[:, t]] = 0.0
        prev_states[t] = state
        z = params.w_in[block.inputs[:, t]].astype(np.float64) + state @ w_r.T
        state = sigmoid(z)
        states[t] = state
    if not np.all(np.isfinite(states)):
        raise NumericsError("numerical overflow in hidden step")
    return ForwardTape(
        inputs=block.inputs,
        targets=block.targets,
        prev_states=prev_states,
        states=states,
        resets_applied=resets,
    )


@dataclass
class SparseOutputGrads:
    """Per-position d(objective)/d(score) on an explicit set of output rows."""

    rows: np.ndarray   # (B, T, M) int64
    grads: np.ndarray  # (B, T, M) float64


@dataclass
class DenseOutputGrads:
    """Per-position d(objective)/d(score) over the whole vocabulary."""

    grads: np.ndarray  # (B, T, V) float64


@dataclass
class Gradients:
    """Block gradients over all parameters: sparse rows for the input and
    output matrices, dense for the recurrence."""

    w_in_rows: np.ndarray          # (n_in,) int64, unique
    w_in_grads: np.ndarray         # (n_in, h) float64
    w_out_rows: np.ndarray | None  # (n_out,) int64 unique, or None when dense
    w_out_grads: np.ndarray        # (n_out, h) or (V, h) float64
    w_r_grad: np.ndarray           # (h, h) float64

    def squared_norm(self) -> float:
        return float(
            np.sum(self.w_in_grads**2)
            + np.sum(self.w_out_grads**2)
            + np.sum(self.w_r_grad**2)
        )

    def global_norm(self) -> float:
        return float(np.sqrt(self.squared_norm()))

    def scale(self, factor: float) -> None:
        self.w_in_grads *= factor
        self.w_out_grads *= factor
        self.w_r_grad *= factor

    def dense_w_in(self, vocab_size: int) -> np.ndarray:
        out = np.zeros((vocab_size, self.w_in_grads.shape[1]))
        out[self.w_in_rows] = self.w_in_grads
        return out

    def dense_w_out(self, vocab_size: int) -> np.ndarray:
        if self.w_out_rows is None:
            return self.w_out_grads.copy()
        out = np.zeros((vocab_size, self.w_out_grads.shape[1]))
        out[self.w_out_rows] = self.w_out_grads
        return out


def coalesce_rows(rows_flat: np.ndarray, grads_flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sum gradient rows that share an id; returns (unique_ids, summed rows)."""
    uniq, inv = np.unique(rows_flat, return_inverse=True)
    width = grads_flat.shape[1]
    acc = np.empty((uniq.shape[0], width), dtype=np.float64)
    for c in range(width):
        acc[:, c] = np.bincount(inv, weights=grads_flat[:, c], minlength=uniq.shape[0])
    return uniq, acc


def bptt_backward(
    tape: ForwardTape,
    output_grads: SparseOutputGrads | DenseOutputGrads,
    params: ModelParams,
    clip: float | None = None,
) -> Gradients:
    """Backpropagate summed per-position objectives through the block.

    The carried-in state is treated as a constant (truncation at the block
    boundary) and error stops flowing backward across positions where the
    forward pass re-initialized a lane.  When ``clip`` is given, the final
    gradients are rescaled so their global norm does not exceed it.
    """
    T, B, h = tape.states.shape
    w_r = params.w_r.astype(np.float64)

    # d(objective)/d(state_t) from the output layer, plus the output-row grads.
    if isinstance(output_grads, SparseOutputGrads):
        rows = output_grads.rows
        g = output_grads.grads
        gathered = params.w_out[rows].astype(np.float64)          # (B, T, M, h)
        dstates = np.einsum("btm,btmh->bth", g, gathered)         # (B, T, h)
        contrib = g[..., None] * tape.states.transpose(1, 0, 2)[:, :, None, :]
        w_out_rows, w_out_grads = coalesce_rows(
            rows.reshape(-1), contrib.reshape(-1, h)
        )
    else:
        V = output_grads.grads.shape[-1]
        flat_g = output_grads.grads.reshape(B * T, V)
        flat_s = tape.states.transpose(1, 0, 2).reshape(B * T, h)
        dstates = (flat_g @ params.w_out.astype(np.float64)).reshape(B, T, h)
        w_out_rows = None
        w_out_grads = flat_g.T @ flat_s                           # (V, h)

    dz_all = np.empty((T, B, h), dtype=np.float64)
    w_r_grad = np.zeros((h, h), dtype=np.float64)
    carry = np.zeros((B, h), dtype=np.float64)
    for t in range(T - 1, -1, -1):
        ds = dstates[:, t, :] + carry
        s = tape.states[t]
        dz = ds * s * (1.0 - s)
        if not np.all(np.isfinite(dz)):
            bad = np.argwhere(~np.isfinite(dz))[0]
            raise NumericsError(
                f"non-finite gradient at lane {int(bad[0])}, step {t}"
            )
        dz_all[t] = dz
        w_r_grad += dz.T @ tape.prev_states[t]
        carry = dz @ w_r
        if tape.resets_applied[:, t].any():
            carry[tape.resets_applied[:, t]] = 0.0

    w_in_rows, w_in_grads = coalesce_rows(
        tape.inputs.T.reshape(-1), dz_all.reshape(-1, h)
    )

    grads = Gradients(
        w_in_rows=w_in_rows,
        w_in_grads=w_in_grads,
        w_out_rows=w_out_rows,
        w_out_grads=w_out_grads,
        w_r_grad=w_r_grad,
    )
    if clip is not None and np.isfinite(clip):
        norm = grads.global_norm()
        if norm > clip:
            grads.scale(clip / norm)
    return grads
