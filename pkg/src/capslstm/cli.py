"""Command line: ``train``, ``evaluate``, ``predict`` and ``inspect``.

Exit codes: 0 success, 2 configuration error, 3 data or checkpoint error,
4 non-finite loss or gradient during training, 5 window/horizon mismatch.

The training config is an INI-style file of ``key = value`` lines in
sections; see ``CONFIG_KEYS`` for the accepted keys. Relative paths are
resolved against the config file's directory. Example::

    [run]
    seed = 7

    [data]
    source = synthetic
    kind = sine
    length = 200
    window = 16
    horizon = 3

    [model]
    kind = capsnet_lstm
    filters = 8
    primary_dim = 4
    high_dim = 8
    hidden = 16

    [train]
    epochs = 50
    lr = 0.01

    [output]
    checkpoint = model.c1dl
    log = train_log.csv
"""

from __future__ import annotations

import argparse
import configparser
import os
import re
import sys
from dataclasses import dataclass

import numpy as np

from .data import DataError, build_dataset, denormalize, load_csv, make_windows, normalize, split_bounds, synth_series
from .metrics import evaluate_model
from .model import ArchSpec, CheckpointError, count_parameters, load_checkpoint, model_forward, save_checkpoint
from .numcore import Prng
from .train import TrainConfig, TrainingError, format_log, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NONFINITE, EXIT_MISMATCH = 0, 2, 3, 4, 5
DATA_STREAM = 3

_INT, _FLOAT, _STR = int, float, str

CONFIG_KEYS = {
    "run": {"seed": _INT},
    "data": {"source": _STR, "path": _STR, "column": _STR, "kind": _STR, "length": _INT,
             "window": _INT, "horizon": _INT, "train_end": _INT, "val_end": _INT},
    "model": {"kind": _STR, "hidden": _INT, "filters": _INT, "kernel_size": _INT,
              "primary_dim": _INT, "high_dim": _INT, "routing_iters": _INT, "pool_size": _INT,
              "gate_variant": _STR},
    "train": {"epochs": _INT, "batch_size": _INT, "lr": _FLOAT, "lr_decay_factor": _FLOAT,
              "plateau_patience": _INT, "min_lr": _FLOAT, "beta1": _FLOAT, "beta2": _FLOAT,
              "adam_eps": _FLOAT, "parallel_groups": _INT, "workers": _INT},
    "output": {"checkpoint": _STR, "log": _STR},
}
REQUIRED = [("run", "seed"), ("model", "kind"), ("output", "checkpoint")]


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


@dataclass
class RunConfig:
    spec: ArchSpec
    train: TrainConfig
    data: dict
    checkpoint: str
    log: str | None


def _line_numbers(text: str) -> dict:
    where, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, None), no)
        elif line and not line.startswith(("#", ";")) and ("=" in line or ":" in line):
            key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
            where.setdefault((section, key), no)
    return where


def parse_config(path) -> RunConfig:
    """Read and validate a training config; raises :class:`ConfigError`."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from None
    cp = configparser.ConfigParser(interpolation=None, strict=True,
                                   inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=str(path))
    except configparser.MissingSectionHeaderError as err:
        raise ConfigError("key outside of any [section]", err.lineno) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as err:
        raise ConfigError(str(err).split(": ", 1)[-1], err.lineno) from None
    except configparser.ParsingError as err:
        line = err.errors[0][0] if getattr(err, "errors", None) else None
        raise ConfigError("malformed line", line) from None
    lines = _line_numbers(text)

    values: dict[tuple[str, str], object] = {}
    for section in cp.sections():
        if section not in CONFIG_KEYS:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, None)))
        for key, raw in cp.items(section):
            if key not in CONFIG_KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", lines.get((section, key)))
            try:
                values[section, key] = CONFIG_KEYS[section][key](raw.strip())
            except ValueError:
                raise ConfigError(f"bad value {raw!r} for {section}.{key}",
                                  lines.get((section, key))) from None
    for section, key in REQUIRED:
        if (section, key) not in values:
            raise ConfigError(f"missing required key {section}.{key}")

    def get(section, key, default=None):
        return values.get((section, key), default)

    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if p is None or os.path.isabs(p) else os.path.join(base, p)

    d, H = get("data", "window", 50), get("data", "horizon", 5)
    model_keys = {k: v for (s, k), v in values.items() if s == "model" and k != "kind"}
    try:
        spec = ArchSpec.create(get("model", "kind"), d, H, **model_keys)
        train_keys = {k: v for (s, k), v in values.items() if s == "train"}
        tcfg = TrainConfig(seed=get("run", "seed"), **train_keys)
        Prng(tcfg.seed)
    except ValueError as err:
        raise ConfigError(str(err)) from None

    source = get("data", "source", "csv")
    data = {"source": source, "train_end": get("data", "train_end"), "val_end": get("data", "val_end")}
    if source == "csv":
        if get("data", "path") is None:
            raise ConfigError("data.path is required for source = csv")
        data.update(path=resolve(get("data", "path")), column=get("data", "column", "Close"))
    elif source == "synthetic":
        data.update(kind=get("data", "kind", "sine"), length=get("data", "length", 500))
    else:
        raise ConfigError(f"unknown data source {source!r}", lines.get(("data", "source")))
    return RunConfig(spec, tcfg, data, resolve(get("output", "checkpoint")),
                     resolve(get("output", "log")))


def _series(cfg: RunConfig):
    if cfg.data["source"] == "csv":
        return load_csv(cfg.data["path"], cfg.data["column"])
    return synth_series(cfg.data["kind"], cfg.data["length"], Prng(cfg.train.seed, DATA_STREAM))


def _err(msg: str):
    print(f"error: {msg}", file=sys.stderr)


def cmd_train(config: str) -> int:
    try:
        cfg = parse_config(config)
    except ConfigError as err:
        _err(f"{config}: {err}")
        return EXIT_CONFIG
    try:
        series = _series(cfg)
        ds = build_dataset(series, cfg.spec.d, cfg.spec.H, cfg.data["train_end"], cfg.data["val_end"])
    except DataError as err:
        _err(str(err))
        return EXIT_DATA
    extras = {k: cfg.data[k] for k in ("train_end", "val_end") if cfg.data[k] is not None}
    extras["column"] = cfg.data.get("column", "Close")
    try:
        ckpt, log = train(cfg.spec, ds, cfg.train, extras=extras)
    except TrainingError as err:
        _err(str(err))
        return EXIT_NONFINITE
    save_checkpoint(cfg.checkpoint, ckpt)
    if cfg.log:
        with open(cfg.log, "w") as fh:
            fh.write(format_log(log))
    if log:
        print(f"final train_mse={log[-1].train_mse!r} val_mse={log[-1].val_mse!r}")
    return EXIT_OK


def _load(path):
    try:
        return load_checkpoint(path)
    except (OSError, CheckpointError) as err:
        _err(f"cannot load checkpoint: {err}")
        return None


def cmd_evaluate(model: str, data: str, out: str | None = None, column: str | None = None,
                 split: str = "test", window: int | None = None, horizon: int | None = None) -> int:
    ckpt = _load(model)
    if ckpt is None:
        return EXIT_DATA
    spec = ckpt.spec
    if (window is not None and window != spec.d) or (horizon is not None and horizon != spec.H):
        _err(f"checkpoint has d={spec.d}, H={spec.H}; requested d={window}, H={horizon}")
        return EXIT_MISMATCH
    try:
        series = load_csv(data, column or ckpt.extras.get("column", "Close"))
        values = series.values
        if split == "test":
            te = ckpt.extras.get("train_end")
            ve = ckpt.extras.get("val_end")
            _, b = split_bounds(len(values), None if te is None else int(te),
                                None if ve is None else int(ve))
            values = values[b:]
        X, Y = make_windows(normalize(values, ckpt.norm), spec.d, spec.H)
    except DataError as err:
        _err(str(err))
        return EXIT_DATA
    report = evaluate_model(spec, ckpt.params, X, Y, ckpt.norm)
    text = report.to_csv()
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_predict(model: str, data: str, column: str | None = None) -> int:
    ckpt = _load(model)
    if ckpt is None:
        return EXIT_DATA
    try:
        series = load_csv(data, column or ckpt.extras.get("column", "Close"))
    except DataError as err:
        _err(str(err))
        return EXIT_DATA
    d = ckpt.spec.d
    if len(series) < d:
        _err(f"need at least {d} points, got {len(series)}")
        return EXIT_DATA
    window = normalize(series.values[-d:], ckpt.norm)
    forecast = denormalize(model_forward(ckpt.spec, ckpt.params, window[:, None]).data, ckpt.norm)
    for v in np.ravel(forecast):
        print(repr(float(v)))
    return EXIT_OK


def format_layer_table(spec: ArchSpec) -> str:
    rows = count_parameters(spec)
    lines = [f"{'Layer':<26}{'Output Shape':<16}{'Param #':>10}"]
    for r in rows:
        lines.append(f"{r.name:<26}{str(r.output_shape):<16}{r.parameters:>10}")
    lines.append(f"{'Total':<42}{sum(r.parameters for r in rows):>10}")
    return "\n".join(lines) + "\n"


def cmd_inspect(model: str) -> int:
    ckpt = _load(model)
    if ckpt is None:
        return EXIT_DATA
    sys.stdout.write(f"model: {ckpt.spec.kind}\n")
    sys.stdout.write(format_layer_table(ckpt.spec))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capslstm", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)

    p = sub.add_parser("evaluate", help="per-horizon RMSE/MAE/MAPE/TIC on a CSV series")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--column")
    p.add_argument("--split", choices=("test", "all"), default="test",
                   help="score the test segment (default) or every window of the file")
    p.add_argument("--window", type=int, help="expected input window length d")
    p.add_argument("--horizon", type=int, help="expected forecast horizon H")

    p = sub.add_parser("predict", help="forecast the next H values from the last d points")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--column")

    p = sub.add_parser("inspect", help="print the layer table of a checkpoint")
    p.add_argument("--model", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "train":
        return cmd_train(args.config)
    if args.command == "evaluate":
        return cmd_evaluate(args.model, args.data, args.out, args.column, args.split,
                            args.window, args.horizon)
    if args.command == "predict":
        return cmd_predict(args.model, args.data, args.column)
    return cmd_inspect(args.model)


if __name__ == "__main__":
    sys.exit(main())
