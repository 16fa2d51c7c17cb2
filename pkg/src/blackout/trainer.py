"""Training orchestration: epochs over spliced BPTT blocks, sampled or exact
output objectives, RMSProp updates, periodic exact-softmax validation,
checkpointing and JSONL metrics.

Runs are deterministic for a fixed seed and config: parameter init and each
epoch's sampling use their own seed-derived generators, so a run resumed
from a checkpoint at an epoch boundary continues exactly as the
uninterrupted run would have.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import optim
from .corpus import (
    BatchConfig,
    BpttBlock,
    Vocabulary,
    batch_blocks,
    build_vocab,
    encode,
    splice_stream,
)
from .diagnostics import Diagnostics
from .evaluation import perplexity
from .heads import blackout_batch, exact_ml_batch, is_ml_batch, nce_batch
from .network import (
    DenseOutputGrads,
    ForwardTape,
    Gradients,
    ModelParams,
    SparseOutputGrads,
    bptt_backward,
    forward_block,
    init_params,
)
from .optim import OptimConfig, OptimizerState, init_optimizer_state
from .sampler import ProposalDistribution, build_proposal, draw_batch, shared_draw

HEAD_EXACT = "exact"
HEAD_BLACKOUT = "blackout"
HEAD_NCE = "nce"
HEAD_IS_ML = "is-ml"
HEADS = (HEAD_EXACT, HEAD_BLACKOUT, HEAD_NCE, HEAD_IS_ML)

SAMPLED_HEADS = (HEAD_BLACKOUT, HEAD_NCE, HEAD_IS_ML)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class TrainConfig:
    head: str = HEAD_BLACKOUT
    num_samples: int = 50          # K, ignored by the exact head
    alpha: float = 0.5             # proposal smoothing power
    nce_z: float = 1.0             # NCE partition constant
    batch_size: int = 16
    bptt_len: int = 8
    hidden_size: int = 16
    max_vocab: int | None = None
    learning_rate: float = 0.05
    decay: float = 0.9
    damping: float = 1e-6
    clip_norm: float = 5.0
    epochs: int = 10
    val_interval: int = 1          # epochs between validations
    seed: int = 1234
    reset_at_sentence: bool = True
    optimizer_mode: str = optim.DENSE
    lapse: str = optim.EXPECTED_LAPSE
    init_scale: float = 0.1
    share_samples: bool = False    # one sample set per block instead of per position
    lr_halving: bool = True        # halve lr when validation improves < 1%
    count_boundary: bool = True

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if self.head in SAMPLED_HEADS and self.num_samples < 1:
            raise ValueError("sampled heads need num_samples >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.epochs < 0 or self.val_interval < 1:
            raise ValueError("bad epoch configuration")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class MetricsRecord:
    epoch: int
    tokens_seen: int
    train_loss: float | None      # mean maximized-objective deficit per token
    val_perplexity: float | None
    wall_seconds: float
    learning_rate: float
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "epoch": self.epoch,
                "tokens_seen": self.tokens_seen,
                "train_loss": self.train_loss,
                "val_perplexity": self.val_perplexity,
                "wall_seconds": self.wall_seconds,
                "learning_rate": self.learning_rate,
                "diagnostics": self.diagnostics,
            }
        )


# ---------------------------------------------------------------------------
# block-level objective evaluation
# ---------------------------------------------------------------------------


def sampled_block_scores(
    params: ModelParams, states: np.ndarray, rows: np.ndarray
) -> np.ndarray:
    """Scores for the slate rows at every position: (B, T, M).

    Gathers only the touched output rows; cost O(B*T*M*h), independent of V.
    """
    gathered = params.w_out[rows].astype(np.float64)     # (B, T, M, h)
    return np.einsum("btmh,bth->btm", gathered, states)


def head_losses(
    head: str,
    scores: np.ndarray,
    weights: np.ndarray,
    nce_z: float,
    diag: Diagnostics | None,
) -> tuple[np.ndarray, np.ndarray]:
    """Dispatch to the per-head batched objective: (losses, d/d-score)."""
    if head == HEAD_BLACKOUT:
        return blackout_batch(scores, weights, diag)
    if head == HEAD_IS_ML:
        return is_ml_batch(scores, weights)
    if head == HEAD_NCE:
        return nce_batch(scores, weights, nce_z, diag=diag)
    raise ValueError(f"not a sampled head: {head!r}")


def block_objective(
    params: ModelParams,
    block: BpttBlock,
    head: str,
    samples: np.ndarray | None,
    proposal: ProposalDistribution | None,
    carry: np.ndarray | None = None,
    reset_at_sentence: bool = True,
    nce_z: float = 1.0,
    diag: Diagnostics | None = None,
) -> tuple[float, ForwardTape, SparseOutputGrads | DenseOutputGrads]:
    """Forward a block and evaluate the head on fixed samples.

    Returns the summed objective over positions, the forward tape, and the
    per-position score gradients ready for `bptt_backward`.  Keeping the
    samples an explicit argument makes the whole objective a deterministic
    function of the parameters, which is what finite-difference checks and
    the training loop both want.
    """
    tape = forward_block(params, block, carry, reset_at_sentence)
    states = tape.states.transpose(1, 0, 2)              # (B, T, h)
    B, T = block.inputs.shape
    if head == HEAD_EXACT:
        flat = states.reshape(B * T, -1)
        full = flat @ params.w_out.astype(np.float64).T  # (B*T, V)
        losses, dU = exact_ml_batch(full, block.targets.reshape(-1))
        return float(losses.sum()), tape, DenseOutputGrads(dU.reshape(B, T, -1))
    rows = np.concatenate([block.targets[..., None], samples], axis=-1)
    weights = 1.0 / proposal.probs[rows]
    u = sampled_block_scores(params, states, rows)
    losses, du = head_losses(head, u, weights, nce_z, diag)
    return float(losses.sum()), tape, SparseOutputGrads(rows, du)


def draw_block_samples(
    cfg: TrainConfig,
    block: BpttBlock,
    proposal: ProposalDistribution,
    rng: np.random.Generator,
) -> np.ndarray | None:
    """One fresh sample set per target position, or one per time step shared
    across lanes when ``share_samples`` is on."""
    if cfg.head == HEAD_EXACT:
        return None
    if cfg.share_samples:
        return shared_draw(proposal, cfg.num_samples, block.targets, rng)
    return draw_batch(proposal, cfg.num_samples, block.targets, rng)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"BLKOUTCK"
_VERSION = 1
_FLAG_OPTIM = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(
    params: ModelParams,
    optim_state: OptimizerState | None,
    meta: dict,
    path,
) -> None:
    """Binary container, little-endian throughout:

    magic "BLKOUTCK" | u32 version | u64 V | u64 h | u32 flags |
    u32 meta_len | meta (UTF-8 JSON) |
    w_in, w_r, w_out as row-major float32 |
    if flags & 1: u64 global_step, v_in/v_r/v_out float64,
                  last_in/last_out int64.
    """
    V, h = params.w_in.shape
    flags = _FLAG_OPTIM if optim_state is not None else 0
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<8sIQQII", _MAGIC, _VERSION, V, h, flags, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(np.ascontiguousarray(params.w_in, dtype=np.float32).tobytes())
        fh.write(np.ascontiguousarray(params.w_r, dtype=np.float32).tobytes())
        fh.write(np.ascontiguousarray(params.w_out, dtype=np.float32).tobytes())
        if optim_state is not None:
            fh.write(struct.pack("<Q", optim_state.global_step))
            fh.write(np.ascontiguousarray(optim_state.v_in, dtype=np.float64).tobytes())
            fh.write(np.ascontiguousarray(optim_state.v_r, dtype=np.float64).tobytes())
            fh.write(np.ascontiguousarray(optim_state.v_out, dtype=np.float64).tobytes())
            fh.write(optim_state.last_in.astype("<i8").tobytes())
            fh.write(optim_state.last_out.astype("<i8").tobytes())


def _take(buf: bytes, offset: int, count: int, dtype) -> tuple[np.ndarray, int]:
    nbytes = count * np.dtype(dtype).itemsize
    if offset + nbytes > len(buf):
        raise CheckpointError("truncated checkpoint payload")
    arr = np.frombuffer(buf[offset : offset + nbytes], dtype=dtype).copy()
    return arr, offset + nbytes


def load_checkpoint(
    path, expected_vocab_size: int | None = None
) -> tuple[ModelParams, OptimizerState | None, dict]:
    with open(path, "rb") as fh:
        buf = fh.read()
    header = struct.calcsize("<8sIQQII")
    if len(buf) < header:
        raise CheckpointError("corrupt header")
    magic, version, V, h, flags, meta_len = struct.unpack("<8sIQQII", buf[:header])
    if magic != _MAGIC:
        raise CheckpointError("corrupt header")
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if expected_vocab_size is not None and V != expected_vocab_size:
        raise CheckpointError(
            f"vocabulary size mismatch: checkpoint has {V}, expected {expected_vocab_size}"
        )
    off = header
    if off + meta_len > len(buf):
        raise CheckpointError("truncated checkpoint payload")
    meta = json.loads(buf[off : off + meta_len].decode("utf-8"))
    off += meta_len

    w_in, off = _take(buf, off, V * h, "<f4")
    w_r, off = _take(buf, off, h * h, "<f4")
    w_out, off = _take(buf, off, V * h, "<f4")
    params = ModelParams(
        w_in=w_in.reshape(V, h), w_r=w_r.reshape(h, h), w_out=w_out.reshape(V, h)
    )
    state = None
    if flags & _FLAG_OPTIM:
        if off + 8 > len(buf):
            raise CheckpointError("truncated checkpoint payload")
        (global_step,) = struct.unpack("<Q", buf[off : off + 8])
        off += 8
        v_in, off = _take(buf, off, V * h, "<f8")
        v_r, off = _take(buf, off, h * h, "<f8")
        v_out, off = _take(buf, off, V * h, "<f8")
        last_in, off = _take(buf, off, V, "<i8")
        last_out, off = _take(buf, off, V, "<i8")
        state = OptimizerState(
            v_in=v_in.reshape(V, h),
            v_r=v_r.reshape(h, h),
            v_out=v_out.reshape(V, h),
            last_in=last_in,
            last_out=last_out,
            global_step=int(global_step),
        )
    if off != len(buf):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return params, state, meta


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    vocab: Vocabulary
    params: ModelParams                 # final parameters
    optim_state: OptimizerState
    metrics: list[MetricsRecord]
    best_params: ModelParams            # parameters at the best validation
    best_val_perplexity: float
    diagnostics: Diagnostics


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, 17, epoch])


def _needs_proposal(cfg: TrainConfig) -> bool:
    return cfg.head in SAMPLED_HEADS or cfg.optimizer_mode == optim.LAZY


def train(
    cfg: TrainConfig,
    train_sentences: Sequence[Sequence[str]],
    valid_sentences: Sequence[Sequence[str]],
    out_dir=None,
    vocab: Vocabulary | None = None,
    resume=None,
) -> TrainResult:
    """Train a model from scratch or resume one from a checkpoint.

    Validation always uses the exact softmax over the full vocabulary.  The
    checkpoint with the best validation perplexity is retained (and written
    to ``best.ckpt`` when ``out_dir`` is given, alongside ``final.ckpt``,
    ``metrics.jsonl`` and ``config.echo``).
    """
    if vocab is None:
        vocab = build_vocab(train_sentences, cfg.max_vocab, cfg.count_boundary)
    train_stream = splice_stream(encode(train_sentences, vocab))
    valid_encoded = encode(valid_sentences, vocab)
    batch_cfg = BatchConfig(cfg.batch_size, cfg.bptt_len)

    proposal = build_proposal(vocab, cfg.alpha) if _needs_proposal(cfg) else None

    start_epoch = 0
    current_lr = cfg.learning_rate
    best_val = np.inf
    prev_val = None
    tokens_seen = 0
    if resume is not None:
        params, opt_state, meta = load_checkpoint(resume, expected_vocab_size=vocab.size)
        if opt_state is None:
            raise CheckpointError("cannot resume: checkpoint has no optimizer state")
        progress = meta.get("progress", {})
        start_epoch = int(progress.get("epochs_done", 0))
        current_lr = float(progress.get("learning_rate", cfg.learning_rate))
        best_val = float(progress.get("best_val_perplexity", np.inf))
        prev_val = progress.get("prev_val_perplexity")
        tokens_seen = int(progress.get("tokens_seen", 0))
    else:
        params = init_params(
            vocab.size, cfg.hidden_size, np.random.default_rng([cfg.seed, 7]),
            scale=cfg.init_scale,
        )
        opt_state = init_optimizer_state(params)

    if cfg.optimizer_mode == optim.LAZY:
        pu_in, pu_out = optim.compute_update_probs(
            vocab, proposal, batch_cfg, cfg.num_samples
        )
        opt_cfg_probe = OptimConfig(
            learning_rate=current_lr, decay=cfg.decay, damping=cfg.damping,
            mode=cfg.optimizer_mode, lapse=cfg.lapse,
        )
        optim.attach_update_probs(opt_state, pu_in, pu_out, opt_cfg_probe)

    diag = Diagnostics()
    metrics: list[MetricsRecord] = []
    writer = (
        _MetricsWriter(out_dir, cfg, append=resume is not None)
        if out_dir is not None
        else None
    )

    def validate() -> float:
        return perplexity(
            params, valid_encoded, reset_at_sentence=cfg.reset_at_sentence, diag=diag
        ).perplexity

    baseline_val = validate()
    best_val = min(best_val, baseline_val)
    best_params = params.copy()
    if resume is None:
        record = MetricsRecord(
            epoch=0, tokens_seen=0, train_loss=None,
            val_perplexity=baseline_val, wall_seconds=0.0,
            learning_rate=current_lr, diagnostics=diag.as_dict(),
        )
        metrics.append(record)
        if writer:
            writer.emit(record)
        if prev_val is None:
            prev_val = baseline_val

    meta_progress = {
        "epochs_done": start_epoch,
        "learning_rate": current_lr,
        "best_val_perplexity": float(best_val),
        "prev_val_perplexity": float(prev_val) if prev_val is not None else None,
        "tokens_seen": tokens_seen,
        "seed": cfg.seed,
    }

    def checkpoint_meta() -> dict:
        return {"config": cfg.to_dict(), "progress": dict(meta_progress)}

    if writer and cfg.epochs == start_epoch:
        save_checkpoint(params, opt_state, checkpoint_meta(), writer.dir / "best.ckpt")

    for epoch in range(start_epoch, cfg.epochs):
        opt_cfg = OptimConfig(
            learning_rate=current_lr, decay=cfg.decay, damping=cfg.damping,
            mode=cfg.optimizer_mode, lapse=cfg.lapse,
        )
        rng = _epoch_rng(cfg.seed, epoch)
        carry = np.zeros((cfg.batch_size, cfg.hidden_size), dtype=np.float64)
        t0 = time.perf_counter()
        loss_total = 0.0
        position_total = 0
        for block in batch_blocks(train_stream, batch_cfg, bos_id=vocab.bos_id):
            samples = (
                draw_block_samples(cfg, block, proposal, rng)
                if cfg.head != HEAD_EXACT
                else None
            )
            loss, tape, out_grads = block_objective(
                params, block, cfg.head, samples, proposal,
                carry=carry, reset_at_sentence=cfg.reset_at_sentence,
                nce_z=cfg.nce_z, diag=diag,
            )
            grads = bptt_backward(tape, out_grads, params, clip=cfg.clip_norm)
            optim.step(params, grads, opt_state, opt_cfg)
            carry = tape.final_state
            loss_total += loss
            position_total += block.targets.size
        tokens_seen += position_total
        wall = time.perf_counter() - t0
        epochs_done = epoch + 1

        val_ppl = None
        improved = False
        if epochs_done % cfg.val_interval == 0 or epochs_done == cfg.epochs:
            val_ppl = validate()
            if not np.isfinite(val_ppl) or val_ppl > 10.0 * baseline_val:
                raise TrainingDiverged(
                    f"validation perplexity {val_ppl} diverged "
                    f"(baseline {baseline_val})",
                    {"epoch": epochs_done, "diagnostics": diag.as_dict()},
                )
            if cfg.lr_halving and prev_val is not None and val_ppl > 0.99 * prev_val:
                current_lr *= 0.5
            prev_val = val_ppl
            if val_ppl < best_val:
                best_val = val_ppl
                best_params = params.copy()
                improved = True

        record = MetricsRecord(
            epoch=epochs_done,
            tokens_seen=tokens_seen,
            train_loss=-loss_total / position_total,
            val_perplexity=val_ppl,
            wall_seconds=wall,
            learning_rate=current_lr,
            diagnostics=diag.as_dict(),
        )
        metrics.append(record)
        if writer:
            writer.emit(record)

        meta_progress.update(
            epochs_done=epochs_done, learning_rate=current_lr,
            best_val_perplexity=float(best_val),
            prev_val_perplexity=float(prev_val) if prev_val is not None else None,
            tokens_seen=tokens_seen,
        )
        if writer:
            if improved:
                save_checkpoint(
                    params, opt_state, checkpoint_meta(), writer.dir / "best.ckpt"
                )
            save_checkpoint(params, opt_state, checkpoint_meta(), writer.dir / "final.ckpt")

    if writer:
        if cfg.epochs == start_epoch:
            save_checkpoint(params, opt_state, checkpoint_meta(), writer.dir / "final.ckpt")
        writer.close()
    return TrainResult(
        vocab=vocab,
        params=params,
        optim_state=opt_state,
        metrics=metrics,
        best_params=best_params,
        best_val_perplexity=float(best_val),
        diagnostics=diag,
    )


class _MetricsWriter:
    def __init__(self, out_dir, cfg: TrainConfig, append: bool = False):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        echo = self.dir / "config.echo"
        with open(echo, "w", encoding="utf-8") as fh:
            for key, value in sorted(cfg.to_dict().items()):
                fh.write(f"{key}={value}\n")
        mode = "a" if append else "w"
        self._fh = open(self.dir / "metrics.jsonl", mode, encoding="utf-8")

    def emit(self, record: MetricsRecord) -> None:
        self._fh.write(record.to_json())
        self._fh.write("\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()
