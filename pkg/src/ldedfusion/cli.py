"""``lded``: simulate, train, eval, run, serve and inspect from one command.

Settings resolve as flags > ``--config`` file > LDED_SEED (seed only) > defaults.
The resolved settings go to stderr, JSON reports to stdout.

Exit codes: 2 usage, 3 I/O, 4 numeric/training, 5 transport.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

EXIT_USAGE, EXIT_IO, EXIT_NUMERIC, EXIT_TRANSPORT = 2, 3, 4, 5
ARCHS = ("vgg19", "mfcc-cnn", "hybrid")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _log(*args):
    print(*args, file=sys.stderr, flush=True)


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_float(s: str) -> float:
    v = float(s)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {s}")
    return v


def _int_list(s: str) -> List[int]:
    try:
        return [int(v) for v in str(s).replace(" ", "").split(",") if v != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {s!r}")


# --- parser -------------------------------------------------------------------------

def _add(p, *names, default=None, **kw):
    """Every option defaults to SUPPRESS so that explicitly given flags can be told apart."""
    a = p.add_argument(*names, default=argparse.SUPPRESS, **kw)
    p.set_defaults(**{"_default_" + a.dest: default})
    return a


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lded", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value settings file")

    p = sub.add_parser("simulate", help="write a seeded synthetic dataset")
    common(p)
    _add(p, "--out", help="output directory (must be empty or absent)")
    _add(p, "--seed", type=int, default=0)
    _add(p, "--walls", type=_positive_int, help="number of walls (default: length of --dwell, else 3)")
    _add(p, "--dwell", type=_int_list, help="comma-separated dwell seconds per wall", default=None)
    _add(p, "--layers", type=_positive_int, default=50)
    _add(p, "--onset-layer", type=_positive_int, default=20, help="defect onset layer at zero dwell")

    p = sub.add_parser("train", help="train one architecture on a stratified split and save it")
    common(p)
    _add(p, "--dataset")
    _add(p, "--model", choices=ARCHS, default="hybrid")
    _add(p, "--epochs", type=_positive_int, default=15)
    _add(p, "--batch-size", type=_positive_int, default=32)
    _add(p, "--lr", type=float, default=1e-3)
    _add(p, "--train-fraction", type=float, default=0.8)
    _add(p, "--seed", type=int, default=0)
    _add(p, "--out", help="model file to write")

    p = sub.add_parser("eval", help="multi-run evaluation of one or all architectures")
    common(p)
    _add(p, "--dataset")
    _add(p, "--model-arch", "--model", dest="model_arch", choices=ARCHS + ("all",), default="hybrid")
    _add(p, "--runs", type=int, default=5)
    _add(p, "--epochs", type=_positive_int, default=15)
    _add(p, "--train-fraction", type=float, default=0.8)
    _add(p, "--seed", type=int, default=0)
    _add(p, "--jobs", type=_positive_int, default=1)

    p = sub.add_parser("run", help="run the online monitoring pipeline")
    common(p)
    _add(p, "--model", help="trained model file")
    _add(p, "--replay", help="dataset directory to replay")
    _add(p, "--listen", help="host:port of a replay server to consume")
    _add(p, "--map", help="defect map output (.jsonl or .csv)")
    _add(p, "--speed", type=_nonneg_float, default=0.0, help="1.0 = real time, 0 = as fast as possible")
    _add(p, "--jobs", type=_positive_int, default=1, help="1 = sequential scheduler, >1 = threaded")

    p = sub.add_parser("serve", help="stream a dataset over TCP for `run --listen`")
    common(p)
    _add(p, "--dataset")
    _add(p, "--listen", default="127.0.0.1:7700", help="host:port to bind")
    _add(p, "--speed", type=_nonneg_float, default=0.0)

    p = sub.add_parser("inspect", help="dump one audio chunk's log-Mel and MFCC maps")
    common(p)
    _add(p, "--wav")
    _add(p, "--chunk-index", type=int, default=0)
    _add(p, "--out", help="output prefix")
    return parser


REQUIRED = {
    "simulate": ("out",),
    "train": ("dataset", "out"),
    "eval": ("dataset",),
    "run": ("model", "map"),
    "serve": ("dataset",),
    "inspect": ("wav", "out"),
}


def read_config_file(path) -> Dict[str, str]:
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config {path}: {exc}")
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(EXIT_USAGE, f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def resolve(parser: argparse.ArgumentParser, argv: Optional[List[str]] = None,
            environ: Optional[Dict[str, str]] = None) -> argparse.Namespace:
    environ = os.environ if environ is None else environ
    ns = parser.parse_args(argv)
    subparser = parser._subparsers._group_actions[0].choices[ns.command]
    actions = {a.dest: a for a in subparser._actions if a.dest not in ("help", "config")}
    values = {k[len("_default_"):]: v for k, v in vars(ns).items() if k.startswith("_default_")}
    if "seed" in actions and environ.get("LDED_SEED") not in (None, ""):
        try:
            values["seed"] = int(environ["LDED_SEED"])
        except ValueError:
            raise CliError(EXIT_USAGE, f"LDED_SEED must be an integer, got {environ['LDED_SEED']!r}")
    if ns.config:
        for k, raw in read_config_file(ns.config).items():
            if k not in actions:
                raise CliError(EXIT_USAGE, f"unknown config key {k!r} for {ns.command}")
            conv = actions[k].type or str
            try:
                v = conv(raw)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise CliError(EXIT_USAGE, f"config key {k}: {exc}")
            if actions[k].choices is not None and v not in actions[k].choices:
                raise CliError(EXIT_USAGE, f"config key {k}: {v!r} not in {list(actions[k].choices)}")
            values[k] = v
    for k in actions:
        if k in vars(ns):
            values[k] = getattr(ns, k)
    missing = [k for k in REQUIRED[ns.command] if values.get(k) is None]
    if missing:
        raise CliError(EXIT_USAGE, f"{ns.command}: missing required setting(s) "
                                   + ", ".join("--" + m.replace("_", "-") for m in missing))
    return argparse.Namespace(command=ns.command, config=ns.config, **values)


def _print_config(args):
    _log("# resolved config")
    for k, v in sorted(vars(args).items()):
        _log(f"{k} = {v}")


def _emit(report):
    print(json.dumps(report, indent=2, sort_keys=True), flush=True)


# --- subcommands --------------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .sim import DEFAULT_WALLS, DatasetWriteError, DefectOnsetModel, write_dataset

    dwell = args.dwell
    if dwell is not None and args.walls is not None and len(dwell) != args.walls:
        raise CliError(EXIT_USAGE, f"--dwell lists {len(dwell)} values for --walls {args.walls}")
    n = args.walls if args.walls is not None else (len(dwell) if dwell else len(DEFAULT_WALLS))
    specs = []
    for i in range(n):
        base = DEFAULT_WALLS[i % len(DEFAULT_WALLS)]
        kw = {"n_layers": args.layers}
        if dwell:
            kw["dwell_s"] = dwell[i]
        try:
            specs.append(replace(base, **kw))
        except ValueError as exc:
            raise CliError(EXIT_USAGE, str(exc))
    onset = DefectOnsetModel(base_onset_layer=args.onset_layer)
    try:
        manifest = write_dataset(specs, args.out, args.seed, onset)
    except DatasetWriteError as exc:
        raise CliError(EXIT_IO, str(exc))
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc))
    _emit({"out": str(args.out), "seed": manifest["seed"], "counts": manifest["counts"],
           "total_fused_samples": manifest["total_fused_samples"],
           "walls": [{k: w[k] for k in ("dir", "spec", "onset_layer", "n_frames", "counts")} for w in manifest["walls"]]})
    return 0


def _load_features(path):
    from .dataset import build_features, load_dataset

    try:
        _, walls = load_dataset(path)
    except (OSError, KeyError, ValueError) as exc:
        raise CliError(EXIT_IO, f"cannot load dataset {path}: {exc}")
    fs, _ = build_features(walls)
    return fs


def cmd_train(args) -> int:
    from .experiment import train_and_test
    from .nn.serialize import save_model

    fs = _load_features(args.dataset)

    def progress(epoch, loss, acc):
        _log(f"epoch {epoch + 1:3d}  loss {loss:.4f}  train acc {acc:.4f}")

    r = train_and_test(fs, args.model, args.seed, args.epochs, args.train_fraction, args.batch_size, args.lr,
                       progress=progress)
    try:
        save_model(r.model, args.out)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write model {args.out}: {exc}")
    _emit({"model": args.model, "out": str(args.out), "seed": args.seed, "epochs": args.epochs,
           "n_train": r.n_train, "n_test": r.n_test,
           "history": {"loss": r.history.loss, "accuracy": r.history.accuracy},
           "test_accuracy": r.accuracy, "confusion": r.confusion.to_dict()})
    return 0


def cmd_eval(args) -> int:
    from .experiment import evaluate_arch

    if args.runs < 2:
        raise CliError(EXIT_USAGE, "--runs must be >= 2")
    fs = _load_features(args.dataset)
    archs = ARCHS if args.model_arch == "all" else (args.model_arch,)
    report = {"runs": args.runs, "seed": args.seed, "epochs": args.epochs, "models": {}}
    for arch in archs:
        stats = evaluate_arch(fs, arch, args.runs, args.seed, args.epochs, args.train_fraction, args.jobs)
        report["models"][arch] = stats.to_dict()
        _log(f"{arch:9s} mean {stats.mean:.4f} +/- {stats.std:.4f}")
    _emit(report)
    return 0


def cmd_run(args) -> int:
    from .nn.serialize import ModelFormatError, load_model
    from .pipeline import dataset_messages, export_defect_map, replay_connect, run_pipeline
    from .pipeline.sources import dataset_pose_period_us
    from .pipeline.wire import paced, parse_address

    if (args.replay is None) == (args.listen is None):
        raise CliError(EXIT_USAGE, "give exactly one of --replay DIR or --listen HOST:PORT")
    if not Path(args.model).is_file():
        raise CliError(EXIT_USAGE, f"model file not found: {args.model}")
    fmt = Path(args.map).suffix.lstrip(".")
    if fmt not in ("jsonl", "csv"):
        raise CliError(EXIT_USAGE, "--map must end in .jsonl or .csv")
    try:
        model = load_model(args.model)
    except ModelFormatError as exc:
        raise CliError(EXIT_IO, f"{args.model}: {exc}")
    period = 4000
    if args.replay is not None:
        if not (Path(args.replay) / "manifest.json").is_file():
            raise CliError(EXIT_IO, f"not a dataset directory: {args.replay}")
        period = dataset_pose_period_us(args.replay)
        source = paced(dataset_messages(args.replay), args.speed)
    else:
        try:
            source = replay_connect(parse_address(args.listen))
        except ValueError as exc:
            raise CliError(EXIT_USAGE, str(exc))
    records = []
    scheduler = "sequential" if args.jobs == 1 else "threaded"
    report = run_pipeline(source, model, records.append, scheduler=scheduler, pose_period_us=period)
    try:
        export_defect_map(records, args.map, fmt)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {args.map}: {exc}")
    out = report.to_dict()
    out.update({"map": str(args.map), "records": len(records), "scheduler": scheduler})
    _emit(out)
    return 0


def cmd_serve(args) -> int:
    from .pipeline import dataset_messages, replay_serve
    from .pipeline.wire import parse_address

    if not (Path(args.dataset) / "manifest.json").is_file():
        raise CliError(EXIT_IO, f"not a dataset directory: {args.dataset}")
    try:
        addr = parse_address(args.listen)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc))
    sent = replay_serve(dataset_messages(args.dataset), addr, args.speed,
                        on_listen=lambda a: _log(f"listening on {a[0]}:{a[1]}"))
    _emit({"bytes_sent": sent})
    return 0


def cmd_inspect(args) -> int:
    from . import dsp, fileio

    try:
        samples, sr = fileio.read_wav(args.wav)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_IO, f"cannot read {args.wav}: {exc}")
    chunks = dsp.frame_signal(samples, sr)
    if not 0 <= args.chunk_index < len(chunks):
        raise CliError(EXIT_USAGE, f"--chunk-index {args.chunk_index} out of range (0..{len(chunks) - 1})")
    chunk = chunks[args.chunk_index]
    maps = {"logmel": dsp.mel_spectrogram(chunk).values, "mfcc": dsp.mfcc(chunk)}
    written = []
    for name, m in maps.items():
        lo, hi = float(m.min()), float(m.max())
        norm = (m - lo) / (hi - lo) if hi > lo else np.zeros_like(m)
        pgm, csv = Path(f"{args.out}_{name}.pgm"), Path(f"{args.out}_{name}.csv")
        try:
            fileio.write_pgm(pgm, fileio.to_u8(norm))
            fileio.write_csv(csv, [f"c{j}" for j in range(m.shape[1])], ([repr(float(v)) for v in row] for row in m))
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot write {pgm}: {exc}")
        written += [str(pgm), str(csv)]
    _emit({"wav": str(args.wav), "chunk_index": args.chunk_index, "t_start_us": chunk.t_start_us,
           "files": written, "logmel_shape": list(maps["logmel"].shape), "mfcc_shape": list(maps["mfcc"].shape)})
    return 0


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "eval": cmd_eval, "run": cmd_run,
            "serve": cmd_serve, "inspect": cmd_inspect}


def main(argv: Optional[List[str]] = None) -> int:
    from .evalkit import RunFailed
    from .nn.train import NumericalError
    from .pipeline import ModelMismatchError, StreamError, WireError

    parser = build_parser()
    try:
        try:
            args = resolve(parser, argv)
        except SystemExit as exc:  # argparse usage errors and --help
            return int(exc.code or 0)
        _print_config(args)
        return COMMANDS[args.command](args)
    except CliError as exc:
        _log(f"error: {exc}")
        return exc.code
    except (NumericalError, RunFailed, ModelMismatchError, FloatingPointError) as exc:
        _log(f"error: {exc}")
        return EXIT_NUMERIC
    except (WireError, StreamError, ConnectionError, TimeoutError) as exc:
        _log(f"transport error: {exc}")
        return EXIT_TRANSPORT
    except OSError as exc:
        _log(f"I/O error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
