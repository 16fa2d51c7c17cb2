"""Corpus ingestion: vocabulary construction, id encoding, and BPTT batching.

A corpus is plain UTF-8 text, one sentence per line, tokens separated by
whitespace.  Sentences are bracketed with ``<s>`` / ``</s>`` when encoded,
out-of-vocabulary tokens are absorbed by ``<unk>``, and the encoded id
streams are spliced into parallel lanes for mini-batch truncated BPTT.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

SPECIAL_TOKENS = (BOS, EOS, UNK)


class CorpusError(ValueError):
    """Raised for malformed corpora, vocabularies or batch geometry."""


@dataclass(frozen=True)
class Vocabulary:
    """Immutable token <-> id mapping with unigram counts.

    Ids are dense in ``0..size-1``.  The special tokens come first
    (``<s>``=0, ``</s>``=1, ``<unk>``=2) and every other word is ordered by
    descending count, ties broken lexicographically, so id order is
    reproducible for identical input streams.
    """

    words: tuple[str, ...]
    counts: np.ndarray  # int64, occurrence counts per id
    id_of: dict[str, int] = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.words)

    @property
    def bos_id(self) -> int:
        return 0

    @property
    def eos_id(self) -> int:
        return 1

    @property
    def unk_id(self) -> int:
        return 2

    @property
    def special_ids(self) -> tuple[int, int, int]:
        return (0, 1, 2)

    def lookup(self, token: str) -> int:
        return self.id_of.get(token, self.unk_id)

    def unigram(self) -> np.ndarray:
        """Empirical unigram distribution over ids (float64, sums to 1)."""
        total = self.counts.sum()
        if total <= 0:
            raise CorpusError("vocabulary has no counted tokens")
        return self.counts.astype(np.float64) / float(total)

    def __post_init__(self):
        if len(self.words) < len(SPECIAL_TOKENS):
            raise CorpusError("vocabulary smaller than the special token set")
        if self.words[:3] != SPECIAL_TOKENS:
            raise CorpusError("special tokens must occupy ids 0..2")


@dataclass(frozen=True)
class BatchConfig:
    """Mini-batch geometry: lane count and BPTT block length."""

    batch_size: int
    bptt_len: int

    def __post_init__(self):
        if self.batch_size < 1:
            raise CorpusError("batch_size must be >= 1")
        if self.bptt_len < 1:
            raise CorpusError("bptt_len must be >= 1")


@dataclass(frozen=True)
class BpttBlock:
    """One truncation block: (input, target) id pairs for every lane.

    ``targets[b, t]`` is the token following ``inputs[b, t]`` in the spliced
    stream.  ``lane_reset[b, t]`` is True where the input is a sentence-start
    token; the hidden state of that lane must be re-initialized before the
    position is consumed.
    """

    inputs: np.ndarray      # (B, T) int64
    targets: np.ndarray     # (B, T) int64
    lane_reset: np.ndarray  # (B, T) bool


def read_sentences(path) -> list[list[str]]:
    """Read a one-sentence-per-line corpus file into token lists."""
    sentences = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            sentences.append(line.split())
    return sentences


def write_sentences(sentences: Iterable[Sequence[str]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sent in sentences:
            fh.write(" ".join(sent))
            fh.write("\n")


def build_vocab(
    sentences: Sequence[Sequence[str]],
    max_size: int | None = None,
    count_boundary: bool = True,
) -> Vocabulary:
    """Build a frequency-ordered vocabulary, truncated to ``max_size`` entries.

    ``max_size`` includes the three special tokens; everything beyond the
    most frequent ``max_size - 3`` ordinary words is absorbed by ``<unk>``
    (its count, too, so the total token count is preserved).

    When ``count_boundary`` is set (the default), each sentence contributes
    one ``<s>`` and one ``</s>`` occurrence, so the counts describe the full
    encoded stream and every token that can appear as an input or a target
    has nonzero unigram mass.
    """
    if not sentences:
        raise CorpusError("empty corpus")
    n_specials = len(SPECIAL_TOKENS)
    if max_size is not None and max_size < n_specials + 1:
        raise CorpusError(
            f"max_size must allow at least one ordinary word ({n_specials + 1})"
        )

    raw = collections.Counter()
    for sent in sentences:
        raw.update(sent)

    special_counts = {tok: raw.pop(tok, 0) for tok in SPECIAL_TOKENS}
    if count_boundary:
        special_counts[BOS] += len(sentences)
        special_counts[EOS] += len(sentences)

    # Descending count, lexicographic tie-break: reproducible id assignment.
    ordered = sorted(raw.items(), key=lambda kv: (-kv[1], kv[0]))
    if max_size is not None:
        keep = max_size - n_specials
        kept, dropped = ordered[:keep], ordered[keep:]
        special_counts[UNK] += sum(c for _, c in dropped)
    else:
        kept = ordered

    words = list(SPECIAL_TOKENS) + [w for w, _ in kept]
    counts = np.array(
        [special_counts[t] for t in SPECIAL_TOKENS] + [c for _, c in kept],
        dtype=np.int64,
    )
    id_of = {w: i for i, w in enumerate(words)}
    return Vocabulary(words=tuple(words), counts=counts, id_of=id_of)


def encode(sentences: Sequence[Sequence[str]], vocab: Vocabulary) -> list[np.ndarray]:
    """Encode sentences as id arrays ``[<s>, w_1 .. w_n, </s>]``.

    Unknown tokens map to ``<unk>``; this never fails.
    """
    bos, eos = vocab.bos_id, vocab.eos_id
    lookup = vocab.id_of
    unk = vocab.unk_id
    out = []
    for sent in sentences:
        ids = [bos] + [lookup.get(tok, unk) for tok in sent] + [eos]
        out.append(np.array(ids, dtype=np.int64))
    return out


def decode(ids: Sequence[int], vocab: Vocabulary) -> list[str]:
    """Map ids back to tokens, dropping sentence boundary markers."""
    skip = (vocab.bos_id, vocab.eos_id)
    return [vocab.words[i] for i in ids if i not in skip]


def splice_stream(encoded: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate encoded sentences into one contiguous id stream."""
    if not encoded:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(encoded)


def batch_blocks(
    stream: np.ndarray, cfg: BatchConfig, bos_id: int = 0
) -> Iterator[BpttBlock]:
    """Split a spliced stream into per-lane BPTT blocks.

    The stream is cut into ``batch_size`` contiguous lanes of equal length
    (the tail that does not fill every lane is dropped).  Lane ``b`` then
    yields blocks of ``bptt_len`` consecutive (input, next-token) pairs; the
    leftover pairs shorter than a full block at the lane end are dropped.
    Iteration order is deterministic.
    """
    stream = np.asarray(stream, dtype=np.int64)
    B, T = cfg.batch_size, cfg.bptt_len
    if stream.shape[0] < B * (T + 1):
        raise CorpusError("insufficient tokens for batch geometry")
    lane_len = stream.shape[0] // B
    lanes = stream[: B * lane_len].reshape(B, lane_len)
    n_blocks = (lane_len - 1) // T
    for k in range(n_blocks):
        lo = k * T
        inputs = lanes[:, lo : lo + T]
        targets = lanes[:, lo + 1 : lo + T + 1]
        yield BpttBlock(
            inputs=inputs.copy(),
            targets=targets.copy(),
            lane_reset=(inputs == bos_id),
        )


def num_blocks(stream_len: int, cfg: BatchConfig) -> int:
    lane_len = stream_len // cfg.batch_size
    return max((lane_len - 1) // cfg.bptt_len, 0)


def save_vocab(vocab: Vocabulary, path) -> None:
    """Write the vocabulary as TSV lines ``token<TAB>count``, line number = id."""
    with open(path, "w", encoding="utf-8") as fh:
        for word, count in zip(vocab.words, vocab.counts):
            fh.write(f"{word}\t{int(count)}\n")


def load_vocab(path) -> Vocabulary:
    words = []
    counts = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusError(f"malformed vocabulary line {lineno}: {line!r}")
            words.append(parts[0])
            counts.append(int(parts[1]))
    if tuple(words[:3]) != SPECIAL_TOKENS:
        raise CorpusError("vocabulary file must list <s>, </s>, <unk> first")
    return Vocabulary(
        words=tuple(words),
        counts=np.array(counts, dtype=np.int64),
        id_of={w: i for i, w in enumerate(words)},
    )
