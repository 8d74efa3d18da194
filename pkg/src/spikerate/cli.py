"""
Command-line interface: ``spikerate <command> [options]``.

Machine-readable results always go to files under ``--out``; the terminal
only gets progress lines on stderr.  Each run writes ``manifest.yaml`` with
the command, its arguments and the resolved config.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from . import __version__
from .checkpoint import load_checkpoint
from .config import TrainConfig, dump_yaml, from_dict, load_config, parse_overrides, to_dict
from .data import (
    READERS,
    SYNTH_CLASSES,
    Recording,
    assemble_stream,
    load_dataset_dir,
    read_events,
    synth_event_sets,
    write_events,
    write_manifest,
)
from .errors import ConfigError, SpikeRateError
from .evaluation import evaluate_checkpoints, evaluate_stream, export_fields, write_field, write_report_csv
from .net import PREDICTION
from .oracle import ReportRow, run_bernoulli_benchmark, verification_rows, write_report_csv as write_oracle_csv
from .trainer import Trainer, load_data, sensor_mapping

log = logging.getLogger("spikerate")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config file or run manifest")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override a config key, e.g. learn.eps_heads=1e-4 (repeatable)",
    )
    common.add_argument("--out", type=Path, default=Path("spikerate-out"), help="output directory")
    common.add_argument("--seed", type=int, help="training seed (synth: data seed)")
    common.add_argument("-v", "--verbose", action="store_true")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="spikerate", description="Spike-rate learning on event streams.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    formats = sorted(READERS)

    p = sub.add_parser("convert", parents=[common], help="convert an event file to a canonical format")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--from", dest="src_format", choices=formats, help="input format (default: from suffix)")
    p.add_argument("--to", dest="dst_format", choices=("csv", "bin"), help="output format (default: from suffix)")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic moving-pattern dataset")
    p.add_argument("--classes", help=f"comma-separated subset of: {','.join(SYNTH_CLASSES)}")
    p.add_argument("--count", type=int, default=10, help="recordings per class")
    p.add_argument("--length", type=int, help="timesteps per recording")
    p.add_argument("--noise", type=float, help="background events per neuron per timestep")
    p.add_argument("--bar-length", type=int, help="fixed bar length (0: random)")
    p.add_argument("--format", choices=("csv", "bin"), default="bin")

    p = sub.add_parser("train", parents=[common], help="train a network")
    p.add_argument("--resume", type=Path, help="continue from a checkpoint")

    p = sub.add_parser("eval", parents=[common], help="evaluate checkpoints")
    p.add_argument("checkpoints", type=Path, nargs="+")
    p.add_argument("--data", type=Path, help="dataset directory with labels.csv (default: the run's test split)")

    p = sub.add_parser("fields", parents=[common], help="export receptive and predictive fields")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--raw", action="store_true", help="do not normalize each field")

    p = sub.add_parser("verify", parents=[common], help="run the oracle benchmarks")
    p.add_argument("--bernoulli", type=float, action="append", metavar="P", help="only these Bernoulli rates")
    p.add_argument("--steps", type=int, default=50_000)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--tolerance", type=float, default=0.05)
    return parser


# --- helpers --------------------------------------------------------------------


def _config(args) -> TrainConfig:
    return load_config(args.config, parse_overrides(args.overrides), args.seed)


def _plain(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, list):
        return [_plain(v) for v in value]
    return value


def write_run_manifest(out: Path, command: str, args, config: TrainConfig | None = None, extra=None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "version": __version__,
        "args": {k: _plain(v) for k, v in sorted(vars(args).items()) if k not in ("command", "func")},
    }
    if config is not None:
        doc["seed"] = config.seed
        doc["config"] = to_dict(config)
    if extra:
        doc.update(extra)
    path = out / "manifest.yaml"
    path.write_text(dump_yaml(doc))
    return path


# --- commands -------------------------------------------------------------------


def cmd_convert(args) -> int:
    events = read_events(args.input, args.src_format)
    args.out.mkdir(parents=True, exist_ok=True)
    n = write_events(args.output, events, args.dst_format)
    write_run_manifest(args.out, "convert", args, extra={"events": n})
    log.info("wrote %d events to %s", n, args.output)
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _config(args)
    d = cfg.data
    classes = args.classes.split(",") if args.classes else list(d.classes)
    length = args.length if args.length is not None else d.length
    noise = args.noise if args.noise is not None else d.noise_rate
    bar_length = args.bar_length if args.bar_length is not None else d.bar_length
    seed = args.seed if args.seed is not None else d.data_seed
    if args.count < 0:
        raise ConfigError(f"--count must be >= 0, got {args.count}")
    if length < 1 or noise < 0 or bar_length < 0:
        raise ConfigError("length >= 1, noise >= 0 and bar length >= 0 required")
    args.out.mkdir(parents=True, exist_ok=True)
    entries = []
    for label, name, n, events in synth_event_sets(
        classes, args.count, length, noise, seed, sensor_mapping(cfg), cfg.arch.tau_us, bar_length or None
    ):
        rec_id = f"{name}_{n:04d}"
        write_events(args.out / f"{rec_id}.{args.format}", events, args.format)
        entries.append((rec_id, label))
    write_manifest(args.out / "labels.csv", entries)
    if not entries:
        log.warning("no recordings requested; wrote an empty labels.csv")
    write_run_manifest(
        args.out, "synth", args, cfg,
        extra={"synth": {"classes": classes, "length": length, "noise": noise, "bar_length": bar_length, "data_seed": seed}},
    )
    log.info("wrote %d recordings to %s", len(entries), args.out)
    return EXIT_OK


def cmd_train(config: TrainConfig, out: Path, resume: Path | None = None, args=None) -> Path:
    """Train per ``config`` into ``out``; returns the final checkpoint path."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if args is not None:
        write_run_manifest(out, "train", args, config)
    if resume is not None:
        trainer = Trainer.resume(resume, out_dir=out)
        log.info("resuming at pass %d layer %d", trainer.pass_index, trainer.layer)
    else:
        train, test = load_data(config)
        log.info("training on %d recordings, probing on %d", len(train), len(test))
        trainer = Trainer(config, train, test, out)
    model = trainer.run()
    if trainer.test:
        report = model.evaluate(assemble_stream(trainer.test, trainer.config.data.gap, None))
        write_report_csv(out / "report.csv", report)
        log.info(
            "test: per-recording accuracy %s, inference nsse %s, prediction nsse %s",
            report.recording_accuracy, report.inference_nsse, report.prediction_nsse,
        )
    return out / "final.bin"


def _train(args) -> int:
    config = _config(args)
    if args.resume is not None and (args.config or args.overrides):
        raise ConfigError("--resume continues with the checkpoint's own config; drop --config/--set")
    path = cmd_train(config, args.out, args.resume, args)
    log.info("final checkpoint %s", path)
    return EXIT_OK


def _eval_recordings(config: TrainConfig, data_dir: Path | None) -> list[Recording]:
    if data_dir is None:
        _, test = load_data(config)
        return test
    by_label = load_dataset_dir(data_dir, sensor_mapping(config), config.arch.tau_us)
    return [rec for label in sorted(by_label) for rec in by_label[label]]


def cmd_eval(args) -> int:
    _, meta = load_checkpoint(args.checkpoints[0])
    config = _run_config(args, meta)
    recordings = _eval_recordings(config, args.data)
    if not recordings:
        raise ConfigError("no recordings to evaluate")
    stream = assemble_stream(recordings, config.data.gap, None)
    kwargs = dict(horizon=config.learn.horizon, dropout_rate=config.dropout, noise_rate=config.learn.noise_rate)
    args.out.mkdir(parents=True, exist_ok=True)
    write_run_manifest(args.out, "eval", args, config)
    state, _ = load_checkpoint(args.checkpoints[-1])
    report = evaluate_stream(state, stream, **kwargs)
    write_report_csv(args.out / "report.csv", report)
    if len(args.checkpoints) > 1:
        series = evaluate_checkpoints(args.checkpoints, stream, **kwargs)
        with open(args.out / "error_series.csv", "w") as fh:
            fh.write("checkpoint,timestep,class_error\n")
            for path, (t, err) in zip(args.checkpoints, series):
                fh.write(f"{path},{t},{'' if err is None else err}\n")
    log.info("per-recording accuracy %s over %d recordings", report.recording_accuracy, report.recordings)
    return EXIT_OK


def _run_config(args, meta: dict) -> TrainConfig:
    """The checkpoint's own config unless the command line supplies one."""
    if args.config or args.overrides or "config" not in meta:
        return _config(args)
    return from_dict(TrainConfig, meta["config"])


def cmd_fields(args) -> int:
    state, meta = load_checkpoint(args.checkpoint)
    config = _run_config(args, meta)
    mapping = sensor_mapping(config)
    normalize = not args.raw
    written = 0
    rec_dir = args.out / "receptive"
    rec_dir.mkdir(parents=True, exist_ok=True)
    for field in export_fields(state.weights[0], normalize, kind="receptive", mapping=mapping):
        write_field(field, rec_dir, "hidden1")
        written += 1
    for w in state.heads[PREDICTION][1:]:
        pred_dir = args.out / "predictive" / w.pre
        pred_dir.mkdir(parents=True, exist_ok=True)
        for field in export_fields(w, normalize, kind="predictive", mapping=mapping):
            write_field(field, pred_dir, w.pre)
            written += 1
    write_run_manifest(args.out, "fields", args, config)
    log.info("wrote %d field maps under %s", written, args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.steps < 1 or args.eps <= 0:
        raise ConfigError("--steps >= 1 and --eps > 0 required")
    seed = args.seed if args.seed is not None else 0
    if args.bernoulli:
        rows = []
        for i, p in enumerate(args.bernoulli):
            r = run_bernoulli_benchmark(p, args.steps, args.eps, seed + i)
            rows.append(ReportRow(f"bernoulli:p={p}", r.oracle_rate, r.final_q, args.tolerance))
    else:
        rows = verification_rows(seed, steps=args.steps, eps=args.eps, tolerance=args.tolerance)
    args.out.mkdir(parents=True, exist_ok=True)
    write_oracle_csv(args.out / "oracle.csv", rows)
    write_run_manifest(args.out, "verify", args)
    failed = [r for r in rows if not r.ok]
    for r in rows:
        log.info("%-32s oracle %.4f learned %.4f gap %.4f %s", r.context, r.oracle_rate, r.learned_q, r.gap,
                 "" if r.ok else "FAIL")
    return EXIT_FAILURE if failed else EXIT_OK


COMMANDS = {
    "convert": cmd_convert,
    "synth": cmd_synth,
    "train": _train,
    "eval": cmd_eval,
    "fields": cmd_fields,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"spikerate: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"spikerate: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SpikeRateError, OSError, yaml.YAMLError, ValueError, ArithmeticError) as exc:
        print(f"spikerate: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
