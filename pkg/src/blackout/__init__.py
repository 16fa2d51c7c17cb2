"""Recurrent-network language modeling with sampled softmax training.

The output layer can be trained four ways: the exact softmax, the BlackOut
discriminative objective over weighted negative samples, its
importance-sampled maximum-likelihood reduction, and a constant-partition
NCE baseline.  Evaluation always uses the exact softmax.
"""

from .corpus import (
    BatchConfig,
    BpttBlock,
    Vocabulary,
    batch_blocks,
    build_vocab,
    decode,
    encode,
    load_vocab,
    save_vocab,
    splice_stream,
)
from .diagnostics import Diagnostics
from .evaluation import EvalReport, perplexity, sentence_log_probs
from .heads import (
    HeadOutput,
    NceConfig,
    ScoreSlate,
    blackout_head,
    exact_ml_head,
    is_ml_head,
    nce_head,
    noise_density,
    weighted_softmax,
)
from .network import (
    ForwardTape,
    Gradients,
    ModelParams,
    bptt_backward,
    forward_block,
    full_softmax,
    init_params,
    scores,
    step_hidden,
)
from .optim import (
    OptimConfig,
    OptimizerState,
    compute_update_probs,
    dense_step,
    init_optimizer_state,
    lazy_subnet_step,
)
from .sampler import ProposalDistribution, SampleSet, build_proposal, draw, draw_batch
from .trainer import (
    MetricsRecord,
    TrainConfig,
    TrainResult,
    TrainingDiverged,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BatchConfig",
    "BpttBlock",
    "Diagnostics",
    "EvalReport",
    "ForwardTape",
    "Gradients",
    "HeadOutput",
    "MetricsRecord",
    "ModelParams",
    "NceConfig",
    "OptimConfig",
    "OptimizerState",
    "ProposalDistribution",
    "SampleSet",
    "ScoreSlate",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "Vocabulary",
    "batch_blocks",
    "blackout_head",
    "bptt_backward",
    "build_proposal",
    "build_vocab",
    "compute_update_probs",
    "decode",
    "dense_step",
    "draw",
    "draw_batch",
    "encode",
    "exact_ml_head",
    "forward_block",
    "full_softmax",
    "init_optimizer_state",
    "init_params",
    "is_ml_head",
    "lazy_subnet_step",
    "load_checkpoint",
    "load_vocab",
    "nce_head",
    "noise_density",
    "perplexity",
    "save_checkpoint",
    "save_vocab",
    "scores",
    "sentence_log_probs",
    "splice_stream",
    "step_hidden",
    "train",
    "weighted_softmax",
]
