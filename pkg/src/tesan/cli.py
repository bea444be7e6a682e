"""``tesan`` command line.

Exit codes: 0 success, 1 invalid arguments or configuration, 2 runtime
failure. Diagnostics go to stderr; machine-readable results to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attention import Mode
from .evaluation import GroundTruthError, evaluate, load_ground_truth
from .journeys import JourneyParseError, Vocabulary, build_samples, build_vocabulary, parse_journeys_with_stats
from .synth import SynthConfig, SynthConfigError, write_corpus
from .training.checkpoint import CheckpointError, load_checkpoint
from .training.config import PRESETS, ConfigError, TrainConfig
from .training.embio import EmbeddingFormatError, load_embeddings, save_embeddings
from .training.gradcheck import run_gradcheck
from .training.trainer import Trainer

logger = logging.getLogger("tesan")

JOURNEY_FORMAT = """\
journey file (JSONL), one patient per line:
  {"patient_id": "p1", "visits": [{"day": 0, "codes": ["A", "B"]}, ...]}
  each visit has exactly one of "day" (integer >= 0) or "date" (YYYY-MM-DD);
  a file may not mix the two."""
VOCAB_FORMAT = "vocabulary file (TSV): code<TAB>id<TAB>count, sorted by id."
EMB_FORMAT = """\
embedding file (text): first line "<count> <dim>", then one line per code:
  "<code> <v1> ... <vd>"."""
TRUTH_FORMAT = "ground truth (TSV): code<TAB>group, one code per line."
METRICS_FORMAT = 'stdout: one JSON line {"nmi": float, "p_at_1": float, "n_codes": int, "k": int}.'


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_range(text: str) -> tuple[int, int]:
    try:
        lo, _, hi = text.partition(":")
        return (int(lo), int(hi or lo))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None


def _motif(text: str) -> tuple[str, str, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected CODE_A,CODE_B,GAP, got {text!r}")
    try:
        return parts[0], parts[1], int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"gap must be an integer in {text!r}") from None


def _sub(subparsers, name, help, epilog):
    return subparsers.add_parser(name, help=help, description=help, epilog=epilog,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)


def _add_ingest_flags(p):
    p.add_argument("--input", required=True, type=Path, help="journey JSONL file")
    p.add_argument("--min-count", type=int, default=5, help="drop codes seen fewer times (default: 5)")
    p.add_argument("--min-visits", type=int, default=1,
                   help="drop patients with fewer visits (default: 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tesan", description="Interval-aware attention embeddings for timestamped event codes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = _sub(sub, "synth", "generate a synthetic journey corpus and its ground truth",
             JOURNEY_FORMAT + "\n" + TRUTH_FORMAT)
    p.add_argument("--out-journeys", required=True, type=Path)
    p.add_argument("--out-truth", required=True, type=Path)
    p.add_argument("--groups", type=int, default=4, help="number of concept groups (default: 4)")
    p.add_argument("--concepts-per-group", type=int, default=25, help="(default: 25)")
    p.add_argument("--patients", type=int, default=2000, help="(default: 2000)")
    p.add_argument("--visits", type=_int_range, default=(2, 6), help="visits per patient LO:HI (default: 2:6)")
    p.add_argument("--codes", type=_int_range, default=(2, 4), help="codes per visit LO:HI (default: 2:4)")
    p.add_argument("--gap", type=_int_range, default=(1, 90), help="days between visits LO:HI (default: 1:90)")
    p.add_argument("--motif", type=_motif, action="append", default=[],
                   help="CODE_A,CODE_B,GAP: A schedules B GAP+/-1 days later (repeatable)")
    p.add_argument("--group-gap", type=_int_range, action="append", metavar="LO:HI",
                   help="per-group gap range, once per group in group order; the gap before a visit "
                        "then follows the group of its first code (overrides --gap)")
    p.add_argument("--noise", type=float, default=0.1, help="cross-group code probability (default: 0.1)")
    p.add_argument("--seed", type=int, default=1, help="(default: 1)")

    p = _sub(sub, "vocab", "build a vocabulary from a journey file", JOURNEY_FORMAT + "\n" + VOCAB_FORMAT)
    _add_ingest_flags(p)
    p.add_argument("--out", required=True, type=Path, help="vocabulary TSV to write")

    p = _sub(sub, "train", "train concept embeddings",
             JOURNEY_FORMAT + "\n" + VOCAB_FORMAT + "\n" + EMB_FORMAT + "\n\npresets (negatives, epochs, "
             "window, batch): " + "; ".join(f"{k} = ({v['negatives']}, {v['epochs']}, {v['window']}, "
                                           f"{v['batch_size']})" for k, v in PRESETS.items())
             + "\nexplicit flags override the preset.")
    _add_ingest_flags(p)
    p.add_argument("--out", required=True, type=Path, help="embedding file to write")
    p.add_argument("--vocab", type=Path, help="use this vocabulary instead of building one")
    p.add_argument("--save-vocab", type=Path, help="also write the vocabulary used")
    p.add_argument("--checkpoint", type=Path, help="checkpoint written after every epoch")
    p.add_argument("--resume", type=Path, help="continue from a checkpoint")
    p.add_argument("--preset", choices=sorted(PRESETS), default="mimic-like", help="(default: mimic-like)")
    p.add_argument("--dim", type=int, default=100, help="embedding dimension (default: 100)")
    p.add_argument("--window", type=int, help="skip window per side (preset)")
    p.add_argument("--neg", type=int, help="negative samples per target (preset)")
    p.add_argument("--epochs", type=int, help="(preset)")
    p.add_argument("--batch", type=int, help="samples per optimizer step (preset)")
    p.add_argument("--lr", type=float, default=3e-3, help="learning rate (default: 3e-3)")
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam", help="(default: adam)")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.TESA.value,
                   help="attention variant (default: tesa)")
    p.add_argument("--max-interval", type=int,
                   help="interval table size - 1; longer intervals clamp (default: corpus maximum)")
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32", help="(default: float32)")
    tables = p.add_mutually_exclusive_group()
    tables.add_argument("--dual-tables", dest="dual_tables", action="store_true", default=True,
                        help="score targets with a separate output table (default)")
    tables.add_argument("--single-table", dest="dual_tables", action="store_false",
                        help="score targets with the input concept table")
    p.add_argument("--workers", type=int, default=1, help="gradient worker threads (default: 1)")
    p.add_argument("--seed", type=int, default=0, help="(default: 0)")

    p = _sub(sub, "gradcheck", "compare analytic gradients with central finite differences",
             "prints the worst relative error; exit 0 iff it is below --tol.")
    p.add_argument("--trials", type=int, default=200, help="(default: 200)")
    p.add_argument("--eps", type=float, default=1e-4, help="finite-difference step (default: 1e-4)")
    p.add_argument("--tol", type=float, default=1e-4, help="(default: 1e-4)")
    p.add_argument("--seed", type=int, default=0, help="(default: 0)")

    for name, help in (("eval-cluster", "k-means clustering NMI (and P@1) against ground truth"),
                       ("eval-nns", "nearest-neighbour P@1 against ground truth")):
        p = _sub(sub, name, help, EMB_FORMAT + "\n" + TRUTH_FORMAT + "\n" + METRICS_FORMAT)
        p.add_argument("--emb", required=True, type=Path, help="embedding file")
        p.add_argument("--truth", required=True, type=Path, help="ground-truth TSV")
        p.add_argument("--metric", choices=["cosine", "euclidean"], default="cosine",
                       help="nearest-neighbour similarity (default: cosine)")
        if name == "eval-cluster":
            p.add_argument("--nmi-norm", choices=["geometric", "arithmetic", "max"], default="geometric",
                           help="(default: geometric)")
            p.add_argument("--restarts", type=int, default=10, help="k-means++ restarts (default: 10)")
            p.add_argument("--seed", type=int, default=0, help="(default: 0)")

    p = _sub(sub, "export", "write the embeddings held in a checkpoint",
             VOCAB_FORMAT + "\n" + EMB_FORMAT)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--vocab", required=True, type=Path, help="vocabulary the checkpoint was trained with")
    p.add_argument("--out", required=True, type=Path)
    return parser


def _require_files(*paths):
    for path in paths:
        if path is not None and not Path(path).is_file():
            raise UsageError(f"no such file: {path}")


def _cmd_synth(args) -> int:
    cfg = SynthConfig(n_groups=args.groups, concepts_per_group=args.concepts_per_group,
                      n_patients=args.patients, visits_per_patient=args.visits,
                      codes_per_visit=args.codes, inter_visit_gap=args.gap,
                      motif_pairs=tuple(args.motif), cross_group_noise=args.noise, seed=args.seed,
                      group_gaps=tuple(args.group_gap) if args.group_gap else None)
    write_corpus(cfg, args.out_journeys, args.out_truth)
    return 0


def _ingest(args):
    _require_files(args.input)
    if args.min_count < 1 or args.min_visits < 1:
        raise UsageError("--min-count and --min-visits must be >= 1")
    journeys, stats = parse_journeys_with_stats(args.input, min_visits=args.min_visits)
    logger.info("read %d journeys (%d duplicate codes collapsed, %d short journeys dropped)",
                stats.n_journeys, stats.duplicate_codes, stats.dropped_short)
    return journeys


def _cmd_vocab(args) -> int:
    build_vocabulary(_ingest(args), args.min_count).save(args.out)
    return 0


def _train_config(args) -> TrainConfig:
    overrides = {k: v for k, v in dict(window=args.window, negatives=args.neg, epochs=args.epochs,
                                       batch_size=args.batch).items() if v is not None}
    return TrainConfig.from_preset(
        args.preset, **overrides, dim=args.dim, learning_rate=args.lr, seed=args.seed, mode=args.mode,
        max_interval=args.max_interval, optimizer=args.optimizer, dtype=args.dtype,
        dual_tables=args.dual_tables, workers=args.workers)


def _cmd_train(args) -> int:
    config = _train_config(args)
    _require_files(args.vocab, args.resume)
    if args.resume and args.vocab is None:
        raise UsageError("--resume needs the --vocab the checkpoint was trained with")
    journeys = _ingest(args)
    vocab = Vocabulary.load(args.vocab) if args.vocab else build_vocabulary(journeys, args.min_count)
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        config = resume.config.replace(epochs=config.epochs, workers=config.workers)
    samples = build_samples(journeys, vocab, config.window)
    if len(samples) == 0:
        raise UsageError("corpus yields no context samples")
    if args.save_vocab:
        vocab.save(args.save_vocab)
    logger.info("%d concepts, %d samples, mode %s", len(vocab), len(samples), config.mode)
    trainer = Trainer(samples, vocab, config, resume=resume)
    params = trainer.fit(args.checkpoint)
    save_embeddings(vocab.codes, params.concept_table, args.out)
    return 0


def _cmd_gradcheck(args) -> int:
    if args.trials < 1 or not args.eps > 0:
        raise UsageError("--trials must be >= 1 and --eps > 0")
    worst = run_gradcheck(args.trials, args.eps, args.seed)
    print(json.dumps({"max_relative_error": worst, "trials": args.trials, "eps": args.eps}))
    return 0 if worst < args.tol else 2


def _cmd_eval(args, cluster: bool) -> int:
    _require_files(args.emb, args.truth)
    emb = load_embeddings(args.emb)
    truth = load_ground_truth(args.truth)
    kwargs = dict(metric=args.metric, cluster=cluster)
    if cluster:
        kwargs.update(seed=args.seed, restarts=args.restarts, norm=args.nmi_norm)
    print(json.dumps(evaluate(emb, truth, **kwargs)))
    return 0


def _cmd_export(args) -> int:
    _require_files(args.checkpoint, args.vocab)
    ckpt = load_checkpoint(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    if ckpt.vocab_digest != vocab.digest():
        raise UsageError("vocabulary does not match the checkpoint")
    save_embeddings(vocab.codes, ckpt.params.concept_table, args.out)
    return 0


COMMANDS = {
    "synth": _cmd_synth,
    "vocab": _cmd_vocab,
    "train": _cmd_train,
    "gradcheck": _cmd_gradcheck,
    "eval-cluster": lambda a: _cmd_eval(a, cluster=True),
    "eval-nns": lambda a: _cmd_eval(a, cluster=False),
    "export": _cmd_export,
}

VALIDATION_ERRORS = (UsageError, ConfigError, SynthConfigError)
INPUT_ERRORS = (JourneyParseError, GroundTruthError, EmbeddingFormatError, CheckpointError)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = (logging.INFO if args.command == "train" else logging.WARNING) - 10 * min(args.verbose, 2)
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except VALIDATION_ERRORS as exc:
        print(f"tesan {args.command}: {exc}", file=sys.stderr)
        return 1
    except INPUT_ERRORS as exc:
        print(f"tesan {args.command}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"tesan {args.command}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
