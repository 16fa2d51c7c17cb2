"""Command line interface: vocab building, training, evaluation, scoring,
and the estimator diagnostics lab.

Training flags mirror the TrainConfig fields.  A ``--config`` file of
``key=value`` lines supplies defaults that explicit flags override; every
run echoes its resolved configuration to ``config.echo`` in the run
directory and appends one JSON object per epoch to ``metrics.jsonl``.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import optim
from .corpus import build_vocab, encode, load_vocab, read_sentences, save_vocab
from .evaluation import perplexity, sentence_log_probs
from .lab import run_lab
from .trainer import HEADS, TrainConfig, load_checkpoint, train

_BOOLS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_value(field: str, raw: str):
    kind = TrainConfig.__dataclass_fields__[field].type
    if raw == "None":
        return None
    if kind == "bool":
        try:
            return _BOOLS[raw.lower()]
        except KeyError:
            raise ValueError(f"bad boolean for {field}: {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "int | None":
        return int(raw)
    return raw


def read_config_file(path) -> dict:
    """key=value lines; blank lines and #-comments ignored."""
    overrides = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in TrainConfig.__dataclass_fields__:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            overrides[key] = _parse_value(key, raw.strip())
    return overrides


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--head", choices=HEADS, default=None)
    p.add_argument("--num-samples", type=int, default=None, help="K, negatives per position")
    p.add_argument("--alpha", type=float, default=None, help="proposal smoothing power in [0,1]")
    p.add_argument("--nce-z", type=float, default=None, help="NCE partition constant")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--bptt-len", type=int, default=None)
    p.add_argument("--hidden-size", type=int, default=None)
    p.add_argument("--max-vocab", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--decay", type=float, default=None, help="RMSProp moving-average decay")
    p.add_argument("--damping", type=float, default=None)
    p.add_argument("--clip-norm", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--val-interval", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-sentence-reset", dest="reset_at_sentence",
                   action="store_false", default=None,
                   help="carry hidden state across sentence boundaries")
    p.add_argument("--optimizer-mode", choices=(optim.DENSE, optim.LAZY), default=None)
    p.add_argument("--lapse", choices=(optim.EXPECTED_LAPSE, optim.EXACT_LAPSE), default=None)
    p.add_argument("--init-scale", type=float, default=None)
    p.add_argument("--share-samples", action="store_true", default=None)
    p.add_argument("--no-lr-halving", dest="lr_halving", action="store_false", default=None)


def _resolve_config(args) -> TrainConfig:
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    for field in TrainConfig.__dataclass_fields__:
        flag = getattr(args, field, None)
        if flag is not None:
            values[field] = flag
    return TrainConfig(**values)


def cmd_vocab(args) -> int:
    sentences = read_sentences(args.corpus)
    vocab = build_vocab(
        sentences, max_size=args.max_size, count_boundary=not args.no_boundary_counts
    )
    save_vocab(vocab, args.out)
    print(f"wrote {vocab.size} entries to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    train_sentences = read_sentences(args.train)
    valid_sentences = read_sentences(args.valid)
    vocab = load_vocab(args.vocab) if args.vocab else None
    result = train(
        cfg,
        train_sentences,
        valid_sentences,
        out_dir=args.out,
        vocab=vocab,
        resume=args.resume,
    )
    if args.vocab is None and args.out:
        save_vocab(result.vocab, f"{args.out}/vocab.tsv")
    print(f"best validation perplexity: {result.best_val_perplexity:.4f}")
    return 0


def _load_model(args):
    vocab = load_vocab(args.vocab)
    params, _, meta = load_checkpoint(args.checkpoint, expected_vocab_size=vocab.size)
    reset = meta.get("config", {}).get("reset_at_sentence", True)
    return vocab, params, reset


def cmd_eval(args) -> int:
    vocab, params, reset = _load_model(args)
    sentences = read_sentences(args.corpus)
    report = perplexity(
        params,
        encode(sentences, vocab),
        reset_at_sentence=reset,
        per_sentence=args.per_sentence,
    )
    print(json.dumps(report.as_dict()))
    return 0


def cmd_score(args) -> int:
    vocab, params, _ = _load_model(args)
    sentences = read_sentences(args.corpus)
    for lp in sentence_log_probs(params, encode(sentences, vocab)):
        print(f"{lp:.6f}")
    return 0


def cmd_lab(args) -> int:
    report = run_lab(seed=args.seed, draws_theorem=args.draws)
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blackout",
        description="RNN language models with sampled-softmax training",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("vocab", help="build a vocabulary file from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-size", type=int, default=None)
    p.add_argument("--no-boundary-counts", action="store_true")
    p.set_defaults(fn=cmd_vocab)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--train", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--out", required=True, help="run directory for metrics and checkpoints")
    p.add_argument("--vocab", default=None, help="existing vocabulary file")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--config", default=None, help="key=value config file")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="exact-softmax perplexity of a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--per-sentence", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("score", help="per-sentence log-probabilities, one per line")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--corpus", required=True)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("lab", help="estimator diagnostics as a JSON report")
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--draws", type=int, default=100_000)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_lab)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
