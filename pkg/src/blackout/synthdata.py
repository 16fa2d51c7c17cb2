"""Deterministic synthetic corpus with small-benchmark statistics.

Generates a corpus shaped like the classic small RNNLM benchmark: about ten
thousand short training sentences, a vocabulary of a few thousand types with
a Zipf-Mandelbrot frequency profile, and enough bigram structure that a
small recurrent model beats the unigram baseline while still having room to
overfit.  Every draw comes from seed-derived generators, so the same seed
always produces byte-identical text.

The bigram structure is a mixture: from any word, the next token comes with
probability ``boost_weight`` from that word's private "successor" subset
(itself sampled from the unigram profile, so the corpus marginal stays
Zipf-like) and otherwise from the global unigram distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sampler import AliasTable


@dataclass(frozen=True)
class SynthConfig:
    vocab_size: int = 3720
    train_sentences: int = 10_000
    valid_sentences: int = 1_000
    test_sentences: int = 1_000
    mean_length: float = 7.1
    max_length: int = 30
    zipf_exponent: float = 1.05
    zipf_shift: float = 2.7
    successors_per_word: int = 32
    boost_weight: float = 0.55
    seed: int = 20_16


def _unigram(cfg: SynthConfig) -> np.ndarray:
    ranks = np.arange(1, cfg.vocab_size + 1, dtype=np.float64)
    w = 1.0 / (ranks + cfg.zipf_shift) ** cfg.zipf_exponent
    return w / w.sum()


class _BigramModel:
    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.unigram = _unigram(cfg)
        self.alias = AliasTable(self.unigram)
        rng = np.random.default_rng([cfg.seed, 0])
        succ = self.alias.draw(rng, (cfg.vocab_size, cfg.successors_per_word))
        self.successors = []
        self.successor_cdfs = []
        for w in range(cfg.vocab_size):
            ids = np.unique(succ[w])
            weights = self.unigram[ids]
            self.successors.append(ids)
            self.successor_cdfs.append(np.cumsum(weights / weights.sum()))

    def sentence(self, rng: np.random.Generator) -> np.ndarray:
        cfg = self.cfg
        length = 1 + rng.poisson(cfg.mean_length - 1.0)
        length = min(max(length, 1), cfg.max_length)
        out = np.empty(length, dtype=np.int64)
        out[0] = self.alias.draw(rng, ())
        for j in range(1, length):
            prev = out[j - 1]
            if rng.random() < cfg.boost_weight:
                cdf = self.successor_cdfs[prev]
                out[j] = self.successors[prev][np.searchsorted(cdf, rng.random())]
            else:
                out[j] = self.alias.draw(rng, ())
        return out


def _patch_full_coverage(sentences: list[np.ndarray], vocab_size: int) -> None:
    """Replace a few high-count tokens in place so every type occurs.

    Missing types are almost always deep-tail ranks; giving each exactly one
    occurrence matches the scale the profile intended for them.  Patches are
    spread evenly over the corpus (at most one per sentence) so no region
    becomes unrepresentative.
    """
    counts = np.zeros(vocab_size, dtype=np.int64)
    for s in sentences:
        np.add.at(counts, s, 1)
    missing = [w for w in range(vocab_size) if counts[w] == 0]
    if not missing:
        return
    stride = max(1, len(sentences) // (len(missing) + 1))
    visit_order = [
        i for start in range(stride) for i in range(start, len(sentences), stride)
    ]
    placed = 0
    for i in visit_order:
        if placed == len(missing):
            break
        s = sentences[i]
        for j in range(len(s)):
            if counts[s[j]] > 2:
                counts[s[j]] -= 1
                s[j] = missing[placed]
                counts[missing[placed]] += 1
                placed += 1
                break
    if placed < len(missing):
        raise RuntimeError("could not place every vocabulary type")


def _to_tokens(sentences: list[np.ndarray], width: int) -> list[list[str]]:
    return [[f"w{int(i):0{width}d}" for i in s] for s in sentences]


def generate_benchmark_corpus(
    cfg: SynthConfig = SynthConfig(),
) -> tuple[list[list[str]], list[list[str]], list[list[str]]]:
    """Build (train, valid, test) sentence lists under one fixed bigram model."""
    model = _BigramModel(cfg)
    splits = []
    for split_index, n in enumerate(
        (cfg.train_sentences, cfg.valid_sentences, cfg.test_sentences)
    ):
        rng = np.random.default_rng([cfg.seed, 1 + split_index])
        splits.append([model.sentence(rng) for _ in range(n)])
    _patch_full_coverage(splits[0], cfg.vocab_size)
    width = len(str(cfg.vocab_size - 1))
    return tuple(_to_tokens(s, width) for s in splits)
