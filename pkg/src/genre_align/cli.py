"""``genre-align`` command line: gen-data, train, eval.

Exit codes: 0 ok, 1 I/O or file format error, 2 configuration error,
3 numeric divergence during training.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Sequence

from . import evaluation, io, trainer
from .core import (ConfigError, DivergenceError, GenreAlignError, SamplingInfeasibleError,
                   TrialConstructionError)
from .losses import DEFAULT_LAMBDA, METHODS, DaConfig
from .sampler import MODES, SamplerConfig

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

LAMBDA_TABLE = "default lambda per method: " + ", ".join(
    f"{m}={DEFAULT_LAMBDA[m]:g}" for m in METHODS if m != "none")


def _csv_list(text: str) -> list[str]:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a comma-separated list")
    return items


def _sigma(text: str):
    return text if text == "median" else float(text)


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise ConfigError("config", f"{path}:{lineno}: expected 'key = value'")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="genre-align", formatter_class=_Formatter,
        description="Multi-genre distribution alignment for speaker embeddings.",
        epilog=LAMBDA_TABLE)
    sub = parser.add_subparsers(dest="command", required=True, metavar="{gen-data,train,eval}")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text,
                           formatter_class=_Formatter, epilog=LAMBDA_TABLE)
        p.add_argument("--config", help="file of 'key = value' lines; flags override it")
        return p

    g = add("gen-data", "Generate a synthetic multi-genre embedding file.")
    g.add_argument("--speakers", type=int, default=50, help="number of speakers")
    g.add_argument("--genres", type=_csv_list, default=["g1", "g2", "g3"], help="comma-separated genre names")
    g.add_argument("--dim", type=int, default=16, help="embedding dimension")
    g.add_argument("--utts", type=int, default=20, help="utterances per speaker per genre")
    g.add_argument("--speaker-spread", type=float, default=1.0, help="std-dev of speaker centers")
    g.add_argument("--within-spread", type=float, default=0.5, help="std-dev around a speaker center")
    g.add_argument("--genre-shift", type=float, default=1.0, help="magnitude of per-genre affine distortion")
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--out", help="output embedding file (required)")

    t = add("train", "Train a projection model with an optional DA regularizer.")
    t.add_argument("--data", help="embedding file (required)")
    t.add_argument("--method", default="none", choices=METHODS)
    t.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="regularizer weight; omitted = per-method default (see below)")
    t.add_argument("--alpha", type=float, default=0.5, help="within-class weight (wbda/wda)")
    t.add_argument("--beta", type=float, default=0.5, help="between-class weight (wbda/bda)")
    t.add_argument("--sigma", type=_sigma, default="median", help="RBF width for mmd, or 'median'")
    t.add_argument("--steps", type=int, default=trainer.TrainConfig.steps)
    t.add_argument("--lr", type=float, default=trainer.TrainConfig.learning_rate, help="learning rate")
    t.add_argument("--loss-kind", default=trainer.TrainConfig.loss_kind, choices=trainer.LOSS_KINDS)
    t.add_argument("--margin", type=float, default=trainer.TrainConfig.margin, help="AAM-softmax margin m")
    t.add_argument("--scale", type=float, default=trainer.TrainConfig.scale, help="AAM-softmax scale s")
    t.add_argument("--hidden", type=int, default=trainer.TrainConfig.hidden, help="hidden width; 0 = one affine layer")
    t.add_argument("--embed-dim", type=int, default=None, help="embedding dimension (default: input dim)")
    t.add_argument("--activation", default="tanh", choices=sorted(trainer.ACTIVATIONS))
    t.add_argument("--speakers-per-genre", dest="S", type=int, default=SamplerConfig.S, help="S")
    t.add_argument("--utts-per-speaker", dest="M", type=int, default=SamplerConfig.M, help="M")
    t.add_argument("--sampler-mode", default="genre_pair", choices=MODES,
                   help="batch mode for method=none (other methods fix their own)")
    t.add_argument("--sampler-seed", type=int, default=0)
    t.add_argument("--seed", type=int, default=0, help="initialization seed")
    t.add_argument("--checkpoint", help="output checkpoint file (required)")
    t.add_argument("--history", help="output per-step history CSV")

    e = add("eval", "Compute the cross-genre EER matrix of a checkpoint.")
    e.add_argument("--data", help="embedding file (required)")
    e.add_argument("--checkpoint", help="checkpoint file; omitted = score raw vectors")
    e.add_argument("--genres", type=_csv_list, default=None, help="genres to include (default: all)")
    e.add_argument("--enroll-k", type=int, default=3, help="enrollment utterances per speaker")
    e.add_argument("--max-nontargets", type=int, default=50, help="non-target cap per enrolled speaker")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="report path prefix; writes <out>.csv and <out>.json (required)")
    e.add_argument("--trials-dir", help="also write every trial list here")
    e.add_argument("--embeddings-out", help="also write model embeddings in the embedding file format")
    return parser


def _parse(parser: argparse.ArgumentParser, argv: Sequence[str] | None) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in subparser._actions if a.dest not in ("help", "config")}
    try:
        values = read_config_file(args.config)
    except OSError as exc:
        parser.exit(EXIT_IO, f"genre-align: cannot read config: {exc}\n")
    except ConfigError as exc:
        parser.error(str(exc))
    aliases = {a.option_strings[0].lstrip("-").replace("-", "_"): a.dest for a in actions.values()}
    defaults = {}
    for key, raw in values.items():
        dest = aliases.get(key, key if key in actions else None)
        if dest is None:
            parser.error(f"unknown config key {key!r}")
        action = actions[dest]
        try:
            value = action.type(raw) if action.type else raw
        except (ValueError, argparse.ArgumentTypeError) as exc:
            parser.error(f"config key {key!r}: {exc}")
        if action.choices is not None and value not in action.choices:
            parser.error(f"config key {key!r}: {value!r} not in {sorted(action.choices)}")
        defaults[dest] = value
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _require(parser, args, *names):
    for name in names:
        if getattr(args, name) in (None, ""):
            parser.error(f"{args.command}: --{name.replace('_', '-')} is required")


def cmd_gen_data(args) -> int:
    cfg = io.SynthConfig(num_speakers=args.speakers, genres=args.genres, dim=args.dim,
                         utts_per_speaker_per_genre=args.utts, speaker_spread=args.speaker_spread,
                         within_spread=args.within_spread, genre_shift=args.genre_shift, seed=args.seed)
    ds = io.generate_dataset(cfg)
    io.save_dataset(ds, args.out)
    print(f"wrote {args.out}: {ds.summary()}")
    return EXIT_OK


def train_config_from_args(args) -> trainer.TrainConfig:
    da = DaConfig(args.method, args.lam, args.alpha, args.beta, args.sigma)
    sampler = SamplerConfig(args.S, args.M, args.sampler_seed, args.sampler_mode)
    return trainer.TrainConfig(da=da, sampler=sampler, steps=args.steps, learning_rate=args.lr,
                               margin=args.margin, scale=args.scale, loss_kind=args.loss_kind,
                               seed=args.seed, embed_dim=args.embed_dim, hidden=args.hidden,
                               activation=args.activation)


def cmd_train(args) -> int:
    cfg = train_config_from_args(args)
    print(f"method={cfg.da.method} lambda={cfg.da.effective_lambda:g}"
          + (" (method default)" if args.lam is None and cfg.da.method != "none" else ""))
    ds = io.load_dataset(args.data)
    model, history = trainer.train(ds, cfg)
    trainer.save_checkpoint(model, args.checkpoint)
    if args.history:
        with open(args.history, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(trainer.format_history(history))
    if history:
        last = history[-1]
        print(f"step {last.step}: ce={last.ce:.4f} da={last.da:.4f} total={last.total:.4f}")
    print(f"wrote {args.checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = io.load_dataset(args.data)
    model = trainer.load_checkpoint(args.checkpoint) if args.checkpoint else None
    genres = args.genres or ds.genres
    matrix = evaluation.cross_genre_matrix(model, ds, genres, args.enroll_k, args.seed, args.max_nontargets)
    evaluation.emit_report(matrix, f"{args.out}.csv", "csv")
    evaluation.emit_report(matrix, f"{args.out}.json", "json")
    if args.trials_dir:
        os.makedirs(args.trials_dir, exist_ok=True)
        for eg in genres:
            for tg in genres:
                trials = evaluation.build_cross_genre_trials(ds, eg, tg, args.enroll_k,
                                                             args.max_nontargets, args.seed)
                with open(os.path.join(args.trials_dir, f"{eg}__{tg}.trials"), "w",
                          encoding="utf-8", newline="\n") as fh:
                    fh.write(evaluation.format_trials(trials))
    if args.embeddings_out:
        io.save_labeled_embeddings(args.embeddings_out, ds.utt_ids, ds.speaker_labels,
                                   ds.genre_labels, evaluation.embed(model, ds.vectors))
    width = max(len(c) for c in matrix.columns + ["enroll"])
    print("enroll".ljust(width), *(c.rjust(width) for c in matrix.columns))
    for genre, row in zip(matrix.genres, matrix.cells):
        print(genre.ljust(width), *(f"{v:.3f}".rjust(width) for v in row))
    if len(genres) > 1:
        print(f"mean same-genre EER {matrix.mean_diagonal():.3f}, "
              f"mean cross-genre EER {matrix.mean_off_diagonal():.3f}")
    print(f"wrote {args.out}.csv, {args.out}.json")
    return EXIT_OK


COMMANDS = {
    "gen-data": (cmd_gen_data, ("out",)),
    "train": (cmd_train, ("data", "checkpoint")),
    "eval": (cmd_eval, ("data", "out")),
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = _parse(parser, argv)
    func, required = COMMANDS[args.command]
    _require(parser, args, *required)
    try:
        return func(args)
    except DivergenceError as exc:
        print(f"genre-align: training diverged at {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, SamplingInfeasibleError, TrialConstructionError) as exc:
        print(f"genre-align: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, io.FormatError) as exc:
        print(f"genre-align: {exc}", file=sys.stderr)
        return EXIT_IO
    except GenreAlignError as exc:
        print(f"genre-align: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
