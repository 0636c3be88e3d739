"""Command-line entry point: ``eventsuffix {synth,train,predict,evaluate}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import yaml

from . import checkpoint as ckpt_io
from .checkpoint import Checkpoint, atomic_write
from .eventlog import (
    SyntheticSpec,
    derive_durations,
    encode_prefix,
    generate_pairs,
    generate_synthetic_log,
    log_to_csv_text,
    read_csv,
    temporal_split,
    TimeScaler,
    Vocabulary,
)
from .evaluation import evaluate, paired_t_test
from .infer import BeamConfig, beam_search, greedy_decode
from .nn import GeneratorModel
from .train import TrainConfig, TrainingDiverged, fit

CONFIG_ENV = "EVENTSUFFIX_CONFIG"
PROFILES = {
    "desk": dict(hidden_size=32, num_layers=1, iterations=50),
    "paper": dict(hidden_size=200, num_layers=5, iterations=500),
}

log = logging.getLogger("eventsuffix")


class CliError(Exception):
    pass


def _json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


def _load_log(path):
    return derive_durations(read_csv(path))


# -- subcommands -------------------------------------------------------------


def cmd_synth(args) -> None:
    spec = SyntheticSpec.load(args.spec)
    log_ = generate_synthetic_log(spec, args.traces, seed=args.seed)
    atomic_write(args.out, log_to_csv_text(log_))


def build_config(args) -> TrainConfig:
    values = dict(PROFILES[args.profile]) if args.profile else {}
    config_path = args.config or os.environ.get(CONFIG_ENV)
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise CliError(f"{config_path}: config must be a flat key/value mapping")
        values.update(doc)
    values["mode"] = args.mode
    for name in ("iterations", "seed"):
        if getattr(args, name) is not None:
            values[name] = getattr(args, name)
    return TrainConfig.from_dict(values)


def cmd_train(args) -> None:
    config = build_config(args)
    full = _load_log(args.log)
    train_log, val_log, _ = temporal_split(full)
    vocab = Vocabulary.from_log(train_log)
    scaler = TimeScaler.fit(train_log)
    train_pairs = generate_pairs(train_log, vocab, scaler)
    val_pairs = generate_pairs(val_log, vocab, scaler)
    if not train_pairs or not val_pairs:
        raise CliError("training and validation splits must each contain a trace with at least 3 events")

    G = GeneratorModel(vocab.size, config.hidden_size, config.num_layers, seed=config.seed)
    progress = (lambda r: log.info("iteration %d: loss %.6g, validation %.6g", r.iteration,
                                   r.supervised_loss, r.validation_loss))
    best, report = fit(G, train_pairs, val_pairs, config, progress=progress)
    max_length = 2 * max(len(p.suffix) for p in train_pairs)
    checkpoint = Checkpoint(best, vocab, scaler, max_length, config.to_dict(), report.summary())
    report_path = args.report or f"{args.out}.losses.csv"
    text = ckpt_io.dumps(checkpoint)
    atomic_write(report_path, report.to_csv())
    try:
        atomic_write(args.out, text)
    except BaseException:
        os.unlink(report_path)
        raise


def _beam(args, checkpoint: Checkpoint) -> BeamConfig:
    return BeamConfig(beam_size=args.beam, max_length=args.max_length or checkpoint.max_length)


def cmd_predict(args) -> None:
    checkpoint = ckpt_io.load_checkpoint(args.ckpt)
    prefixes = _load_log(args.prefix_file)
    beam = _beam(args, checkpoint)
    lines = []
    for trace in prefixes:
        if len(trace) < 2:
            raise CliError(f"prefix {trace.case_id} has fewer than 2 events")
        prefix = encode_prefix(trace, checkpoint.vocab, checkpoint.scaler)
        if beam.beam_size == 1:
            preds = [greedy_decode(checkpoint.model, prefix, beam.max_length, checkpoint.scaler)]
        else:
            preds = beam_search(checkpoint.model, prefix, beam, checkpoint.scaler)
        for rank, p in enumerate(preds, start=1):
            lines.append(json.dumps(p.to_record(checkpoint.vocab, trace.case_id, rank), sort_keys=True))
    _emit("".join(line + "\n" for line in lines), args.out)


def _pairs_for(checkpoint: Checkpoint, path, split: str):
    full = _load_log(path)
    if split == "all":
        part = full
    else:
        part = dict(zip(("train", "validation", "test"), temporal_split(full)))[split]
    pairs = generate_pairs(part, checkpoint.vocab, checkpoint.scaler)
    if not pairs:
        raise CliError(f"the {split} split has no prefix/suffix pairs")
    return pairs


def cmd_evaluate(args) -> None:
    checkpoint = ckpt_io.load_checkpoint(args.ckpt)
    pairs = _pairs_for(checkpoint, args.log, args.split)
    beam = _beam(args, checkpoint)
    result = evaluate(checkpoint.model, pairs, beam, checkpoint.scaler)
    report = {
        "aggregate": result.aggregate(),
        "records": [r.to_dict(checkpoint.vocab) for r in result.records],
    }
    if args.compare:
        other_ckpt = ckpt_io.load_checkpoint(args.compare)
        other = evaluate(other_ckpt.model, _pairs_for(other_ckpt, args.log, args.split),
                         _beam(args, other_ckpt), other_ckpt.scaler)
        if [r.pair_id for r in other.records] != [r.pair_id for r in result.records]:
            raise CliError("the two checkpoints produce different evaluation pairs")
        report["comparison"] = {
            "baseline": {"checkpoint": os.path.basename(args.compare), "aggregate": other.aggregate()},
            "sdl": _ttest([a.sdl - b.sdl for a, b in zip(result.records, other.records)], "upper"),
            "abs_error": _ttest([a.abs_error - b.abs_error for a, b in zip(result.records, other.records)], "lower"),
        }
    _emit(_json(report), args.out)


def _ttest(diffs, direction) -> dict:
    try:
        r = paired_t_test(diffs, direction)
    except ValueError as exc:
        return {"direction": direction, "error": str(exc)}
    return {"direction": r.direction, "mean_difference": r.mean_difference, "t": r.t, "df": r.df,
            "p_value": r.p_value}


# -- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eventsuffix", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic event log CSV")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--traces", type=int, default=100)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a generator on an event log")
    p.add_argument("--log", required=True)
    p.add_argument("--mode", choices=("mle", "mlmme"), default="mlmme")
    p.add_argument("--config")
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="loss report CSV (default: OUT.losses.csv)")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("predict", cmd_predict, "predict suffixes for prefixes"),
                                 ("evaluate", cmd_evaluate, "score a checkpoint on a log")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--ckpt", required=True)
        p.add_argument("--beam", type=int, default=1)
        p.add_argument("--max-length", type=int)
        p.add_argument("--out")
        p.set_defaults(func=func)
        if name == "predict":
            p.add_argument("--prefix-file", required=True)
        else:
            p.add_argument("--log", required=True)
            p.add_argument("--split", choices=("train", "validation", "test", "all"), default="test")
            p.add_argument("--compare", metavar="CKPT2")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (OSError, ValueError, KeyError, ArithmeticError, CliError, TrainingDiverged) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"eventsuffix {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
