"""Exact-softmax perplexity and per-sentence log-probability scoring.

Evaluation always normalizes over the whole vocabulary, whatever head the
model was trained with.  Scored targets are the words of each sentence plus
its end token; sentence-start tokens are inputs only and never scored.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .diagnostics import Diagnostics
from .network import ModelParams, sigmoid

_LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class EvalReport:
    log_prob: float          # total natural-log probability of all scored targets
    token_count: int
    perplexity: float
    entropy_bits: float      # mean negative log2 probability per token
    sentence_log_probs: tuple[float, ...] | None = None

    @classmethod
    def from_totals(cls, log_prob, token_count, sentence_log_probs=None):
        mean_nll = -log_prob / token_count
        return cls(
            log_prob=float(log_prob),
            token_count=int(token_count),
            perplexity=float(np.exp(mean_nll)),
            entropy_bits=float(mean_nll / _LN2),
            sentence_log_probs=sentence_log_probs,
        )

    def as_dict(self) -> dict:
        d = {
            "log_prob": self.log_prob,
            "token_count": self.token_count,
            "perplexity": self.perplexity,
            "entropy_bits": self.entropy_bits,
        }
        if self.sentence_log_probs is not None:
            d["sentence_log_probs"] = list(self.sentence_log_probs)
        return d


def _chunk_log_probs(
    params: ModelParams,
    chunk: list[np.ndarray],
    diag: Diagnostics | None,
) -> np.ndarray:
    """Total log-probability per sentence, sentences evaluated in parallel.

    Sentences are padded to the chunk's longest; padded positions are
    computed but masked out of the totals.  Valid only when the hidden
    state does not carry across sentences.
    """
    n = len(chunk)
    max_len = max(len(s) for s in chunk)
    ids = np.zeros((n, max_len), dtype=np.int64)
    for i, s in enumerate(chunk):
        ids[i, : len(s)] = s
    lengths = np.array([len(s) for s in chunk])

    h = params.hidden_size
    w_r = params.w_r.astype(np.float64)
    w_out = params.w_out.astype(np.float64)
    state = np.zeros((n, h), dtype=np.float64)
    totals = np.zeros(n, dtype=np.float64)
    for t in range(max_len - 1):
        state = sigmoid(params.w_in[ids[:, t]].astype(np.float64) + state @ w_r.T)
        active = t + 1 < lengths
        if not active.any():
            break
        u = state @ w_out.T
        if diag is not None:
            diag.full_softmax_calls += int(active.sum())
        shift = u.max(axis=1)
        log_z = np.log(np.exp(u - shift[:, None]).sum(axis=1)) + shift
        log_p = u[np.arange(n), ids[:, t + 1]] - log_z
        totals[active] += log_p[active]
    return totals


def sentence_log_probs(
    params: ModelParams,
    encoded_sentences: Sequence[np.ndarray],
    chunk_size: int = 256,
    diag: Diagnostics | None = None,
) -> np.ndarray:
    """Natural-log probability of each encoded sentence under the model."""
    out = np.empty(len(encoded_sentences), dtype=np.float64)
    for lo in range(0, len(encoded_sentences), chunk_size):
        chunk = list(encoded_sentences[lo : lo + chunk_size])
        out[lo : lo + len(chunk)] = _chunk_log_probs(params, chunk, diag)
    return out


def _stream_log_prob(
    params: ModelParams,
    encoded_sentences: Sequence[np.ndarray],
    diag: Diagnostics | None,
    bos_id: int = 0,
) -> tuple[float, int]:
    """Sequential pass with the hidden state carried across sentences.

    Predictions whose target is a sentence-start token are state
    transitions only and are not scored.
    """
    stream = np.concatenate(list(encoded_sentences))
    w_r = params.w_r.astype(np.float64)
    w_out = params.w_out.astype(np.float64)
    state = np.zeros(params.hidden_size, dtype=np.float64)
    total = 0.0
    count = 0
    for t in range(stream.shape[0] - 1):
        state = sigmoid(params.w_in[stream[t]].astype(np.float64) + w_r @ state)
        target = stream[t + 1]
        if target == bos_id:
            continue
        u = w_out @ state
        if diag is not None:
            diag.full_softmax_calls += 1
        shift = u.max()
        log_z = np.log(np.exp(u - shift).sum()) + shift
        total += u[target] - log_z
        count += 1
    return total, count


def perplexity(
    params: ModelParams,
    encoded_sentences: Sequence[np.ndarray],
    reset_at_sentence: bool = True,
    per_sentence: bool = False,
    chunk_size: int = 256,
    diag: Diagnostics | None = None,
) -> EvalReport:
    """Exact-softmax perplexity of an encoded corpus.

    With ``reset_at_sentence`` (matching training's default state policy),
    sentences are independent and evaluated in parallel chunks; otherwise a
    strictly sequential pass carries the state through the spliced stream.
    """
    if not encoded_sentences:
        raise ValueError("empty evaluation corpus")
    if reset_at_sentence:
        per_sent = sentence_log_probs(params, encoded_sentences, chunk_size, diag)
        total = float(per_sent.sum())
        count = sum(len(s) - 1 for s in encoded_sentences)
        return EvalReport.from_totals(
            total, count, tuple(float(x) for x in per_sent) if per_sentence else None
        )
    total, count = _stream_log_prob(params, encoded_sentences, diag)
    return EvalReport.from_totals(total, count)
