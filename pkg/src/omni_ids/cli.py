"""``omni-ids`` command line: gen, train, eval, detect.

Exit codes: 0 success, 1 internal error, 2 bad input or configuration.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import itertools
import logging
import sys
import time
from collections import deque
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import features, io, models, traffic

log = logging.getLogger("omni_ids")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT = 0, 1, 2
DETECT_CHUNK = 4096
DETECT_QUEUE = 4  # chunks buffered between generator and classifiers


class InputError(Exception):
    """Bad arguments, files or configuration (exit code 2)."""


INPUT_ERRORS = (InputError, traffic.ConfigError, io.DatasetError, io.WeightsError,
                ev.MissingClassError)


# -- helpers --------------------------------------------------------------------

def _paths(arg: str | None, what: str) -> list[Path]:
    if not arg:
        raise InputError(f"--{what} is required")
    paths = [Path(p) for p in arg.split(",") if p]
    for p in paths:
        if not p.is_file():
            raise InputError(f"{what} file not found: {p}")
    return paths


def _out_dir(out: Path) -> Path:
    return out if out.suffix == "" else out.parent


def _traffic_config(args, default_preset: str) -> traffic.TrafficConfig:
    cfg = traffic.preset(args.preset or default_preset)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        cfg = traffic.load_config(path, cfg)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "packets", None) is not None:
        overrides["n_packets"] = args.packets
    if args.duration is not None:
        overrides["duration"] = args.duration
    return traffic.TrafficConfig(**{**traffic.config_dict(cfg), **overrides}).validate()


def _model_overrides(path) -> dict:
    """``[model]`` section of a config file as estimator parameters."""
    if not path:
        return {}
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise InputError(f"{path}: {exc}") from exc
    if not parser.has_section("model"):
        return {}
    out = {}
    for key, raw in parser.items("model"):
        try:
            out[key] = ast.literal_eval(raw)
        except (ValueError, SyntaxError):
            out[key] = raw
    return out


def build_model(name: str, mode: str, seed: int = 0, overrides: dict | None = None):
    if mode not in models.MODES:
        raise InputError(f"--mode must be one of {models.MODES}")
    if name == "ensemble":
        model = models.EnsembleClassifier(
            fnn=models.FNNClassifier(mode=mode, random_state=seed),
            lstm=models.LSTMClassifier(mode=mode, random_state=seed),
            mode=mode, random_state=seed)
    elif name in models.MODEL_TYPES:
        model = models.make_model(name, mode, random_state=seed)
    else:
        raise InputError(f"--model must be one of {sorted(models.MODEL_TYPES)}")
    if overrides:
        valid = model.get_params(deep=True)
        bad = sorted(set(overrides) - set(valid))
        if bad:
            raise InputError(f"unknown model parameters {bad}")
        model.set_params(**overrides)
    return model


def load_inputs(paths, windowed: bool, window: int = features.DEFAULT_WINDOW):
    """Concatenate datasets; windows never straddle two files."""
    Xs, ys = [], []
    for p in paths:
        X, y = io.read_dataset(p)
        if windowed:
            W, yw = features.make_windows(X, window, y)
            Xs.append(W)
            ys.append(yw)
        else:
            Xs.append(X)
            ys.append(y)
    if not Xs or sum(len(y) for y in ys) == 0:
        raise InputError("no samples in the supplied data")
    X = Xs[0] if len(Xs) == 1 else np.concatenate(Xs)
    return X, np.concatenate(ys)


def model_input(model, X):
    """FNNs take the last packet of each window."""
    return X[:, -1] if isinstance(model, models.FNNClassifier) and X.ndim == 3 else X


def map_labels(y, mode):
    y = np.asarray(y)
    return np.where(y == "Normal", "Normal", "Attack") if mode == "binary" else y


def _check_mode(model, mode, y):
    if mode and mode != model.mode:
        raise InputError(f"mode mismatch: weights are {model.mode!r}, --mode is {mode!r}")
    if model.mode == "multi" and set(np.unique(y)) - set(model.classes_):
        raise InputError("data has labels the model does not know")


# -- commands -------------------------------------------------------------------

def cmd_gen(args) -> int:
    if args.preset and args.preset not in traffic.PRESETS:
        raise InputError(f"unknown preset {args.preset!r}; choose from {sorted(traffic.PRESETS)}")
    if not args.out:
        raise InputError("--out is required")
    t0 = time.perf_counter()
    cfg = _traffic_config(args, "dataset-i")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = io.write_dataset(out, traffic.iter_dataset(cfg))
    log.info("wrote %d packets to %s", n, out)
    io.write_manifest(out.parent, "gen", traffic.config_dict(cfg), cfg.seed, [out],
                      time.perf_counter() - t0)
    return EXIT_OK


def cmd_train(args) -> int:
    if not args.out:
        raise InputError("--out is required")
    seed = 0 if args.seed is None else args.seed
    model = build_model(args.model or "fnn", args.mode or "binary", seed,
                        _model_overrides(args.config))
    paths = _paths(args.data, "data")
    t0 = time.perf_counter()
    X, y = load_inputs(paths, models.needs_windows(model))
    model.fit(model_input(model, X), y)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.save_model(out, model)
    log_path = out.with_suffix(".log.csv")
    _write_train_log(log_path, model)
    config = {"model": args.model or "fnn", "mode": model.mode, "data": [p.name for p in paths],
              "params": {k: v for k, v in io._params(model).items()}}
    io.write_manifest(out.parent, "train", config, seed, [out, log_path],
                      time.perf_counter() - t0)
    log.info("trained %s (%s) on %d samples -> %s", config["model"], model.mode, len(y), out)
    return EXIT_OK


def _write_train_log(path, model):
    parts = [("model", model)]
    if isinstance(model, models.EnsembleClassifier):
        parts = [("fnn", model.fnn_), ("lstm", model.lstm_), ("voter", model)]
    lines = ["component,epoch,train_loss,test_loss"]
    for name, est in parts:
        test = getattr(est, "test_loss_curve_", [])
        for k, loss in enumerate(est.loss_curve_):
            t = repr(float(test[k])) if k < len(test) else ""
            lines.append(f"{name},{k + 1},{float(loss)!r},{t}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_eval(args) -> int:
    if not args.weights:
        raise InputError("--weights is required")
    model = io.load_model(args.weights)
    paths = _paths(args.data, "data")
    X, y = load_inputs(paths, models.needs_windows(model))
    _check_mode(model, args.mode, y)
    protocol = args.protocol or "holdout"
    classes = list(model.classes_)
    truth = map_labels(y, model.mode)
    out_dir = Path(args.out) if args.out else None
    t0 = time.perf_counter()
    seed = 0 if args.seed is None else args.seed
    files = []
    if protocol == "holdout":
        summary = ev.summarize([ev.metrics(cm := ev.confusion_from_names(
            model.predict(model_input(model, X)), truth, classes))], [cm])
        text = ev.format_table(summary, f"holdout evaluation of {Path(args.weights).name}")
    elif protocol == "repeated-split":
        params = model.get_params(deep=False)

        def make(split_seed):
            est = type(model)(**{**params, "random_state": split_seed})
            if isinstance(model, models.EnsembleClassifier):
                est.set_params(fnn=models.FNNClassifier(**model.fnn_.get_params()),
                               lstm=models.LSTMClassifier(**model.lstm_.get_params()))
            return _Adapter(est)

        summary = ev.repeated_split_eval(make, X, y, classes, k=args.splits, seed=seed,
                                         label_map=lambda v: map_labels(v, model.mode))
        text = ev.format_table(summary, f"{args.splits} random 70/30 splits")
    elif protocol == "learning-curve":
        if isinstance(model, models.EnsembleClassifier):
            raise InputError("learning curves are defined for fnn and lstm models")
        tr, te = ev.split_indices(len(y), seed)
        sizes = [int(s) for s in (args.sizes or "").split(",") if s] or \
            [int(f * len(tr)) for f in (0.1, 0.25, 0.5, 1.0)]
        params = model.get_params()
        Xm = model_input(model, X)
        rows = ev.learning_curve(lambda trial: type(model)(**{**params, "random_state": trial}),
                                 Xm[tr], y[tr], sizes, Xm[te], y[te], trials=args.splits, seed=seed)
        text = "size,train_mean,train_std,test_mean,test_std\n" + "\n".join(
            f"{s},{a:.6g},{b:.6g},{c:.6g},{d:.6g}" for s, (a, b, c, d) in ev.curve_summary(rows).items())
        if out_dir:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "learning_curve.csv").write_text(ev.curve_csv(rows), encoding="utf-8")
            files.append(out_dir / "learning_curve.csv")
        summary = None
    else:
        raise InputError(f"unknown protocol {protocol!r}")
    print(text)
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.txt").write_text(text + "\n", encoding="utf-8")
        files.append(out_dir / "report.txt")
        if summary is not None:
            (out_dir / "metrics.csv").write_text(ev.metrics_csv(summary), encoding="utf-8")
            (out_dir / "confusion.csv").write_text(ev.confusion_csv(summary.confusion), encoding="utf-8")
            files += [out_dir / "metrics.csv", out_dir / "confusion.csv"]
        config = {"weights": Path(args.weights).name, "data": [p.name for p in paths],
                  "protocol": protocol, "splits": args.splits}
        io.write_manifest(out_dir, "eval", config, seed, files, time.perf_counter() - t0)
    return EXIT_OK


class _Adapter:
    """Feeds an FNN the last packet of each window inside evaluation protocols."""

    def __init__(self, est):
        self.est = est

    def fit(self, X, y):
        self.est.fit(model_input(self.est, X), y)
        return self

    def predict(self, X):
        return self.est.predict(model_input(self.est, X))


# -- detect ---------------------------------------------------------------------

class StreamClassifier:
    """Per-packet classification with a rolling window for sequence models."""

    def __init__(self, name, model):
        self.name = name
        self.model = model
        self.windowed = models.needs_windows(model)
        self.window = model.window if self.windowed else 1
        self._carry = np.empty((0, features.N_FEATURES))

    def classify(self, X):
        """Labels and scores for the rows of ``X``; warm-up rows get ``None``."""
        if not self.windowed:
            proba = self.model.predict_proba(X)
            return self.model.classes_[models.labels_from_proba(proba)], proba.max(axis=1), 0
        rows = np.concatenate([self._carry, X])
        W = features.make_windows(rows, self.window)
        self._carry = rows[-(self.window - 1):] if self.window > 1 else rows[:0]
        skipped = len(X) - len(W)
        if len(W) == 0:
            return np.array([], dtype=str), np.array([]), skipped
        proba = self.model.predict_proba(W)
        return self.model.classes_[models.labels_from_proba(proba)], proba.max(axis=1), skipped


def _chunks(records, size):
    it = iter(records)
    while chunk := list(itertools.islice(it, size)):
        yield chunk


def cmd_detect(args) -> int:
    paths = _paths(args.weights, "weights")
    detectors = []
    for p in paths:
        m = io.load_model(p)
        if m.mode != "multi":
            raise InputError(f"{p}: detect needs multiclass weights, got {m.mode!r}")
        name = "fnn" if isinstance(m, models.FNNClassifier) else (
            "lstm" if isinstance(m, models.LSTMClassifier) else "ensemble")
        detectors.append(StreamClassifier(name, m))
    cfg = _traffic_config(args, "online")
    t0 = time.perf_counter()
    warm = max(d.window for d in detectors) - 1
    truths = []
    preds = {d.name: [] for d in detectors}
    out = sys.stdout
    seen = 0
    # bounded hand-off: the generator only runs ahead by DETECT_QUEUE chunks
    queue = deque(maxlen=DETECT_QUEUE)
    source = _chunks(traffic.iter_dataset(cfg), DETECT_CHUNK)
    for chunk in source:
        queue.append(chunk)
        while queue:
            batch = queue.popleft()
            X = np.array([r.features() for r in batch], dtype=np.float64)
            ts = [r.timestamp for r in batch]
            for d in detectors:
                labels, scores, skipped = d.classify(X)
                if skipped:
                    log.info("%s: window warm-up, no prediction for packets %d-%d",
                             d.name, seen + 1, seen + skipped)
                for k, (lab, sc) in enumerate(zip(labels, scores)):
                    i = skipped + k
                    if lab != "Normal":
                        out.write(f"ts={ts[i]!r} class={lab} score={float(sc)!r} model={d.name}\n")
                # align every model on packets after the longest warm-up
                start = max(0, warm - seen) - skipped
                preds[d.name].extend(labels[max(0, start):])
            truths.extend(r.label for r in batch[max(0, warm - seen):])
            seen += len(batch)
    if seen <= warm:
        raise InputError(f"stream of {seen} packets is shorter than the {warm + 1}-packet window")
    summaries = {name: ev.portion_eval(np.array(p), np.array(truths), list(traffic.CLASS_NAMES))
                 for name, p in preds.items()}
    report = [f"online detection: {seen} packets, {len(truths)} scored, 10 portions",
              ev.format_comparison(summaries)]
    for name, s in summaries.items():
        report.append("")
        report.append(ev.format_table(s, f"per-class ({name})"))
    text = "\n".join(report)
    out.write(text + "\n")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.txt").write_text(text + "\n", encoding="utf-8")
        files = [out_dir / "report.txt"]
        for name, s in summaries.items():
            (out_dir / f"metrics_{name}.csv").write_text(ev.metrics_csv(s), encoding="utf-8")
            files.append(out_dir / f"metrics_{name}.csv")
        io.write_manifest(out_dir, "detect", traffic.config_dict(cfg), cfg.seed, files,
                          time.perf_counter() - t0)
    return EXIT_OK


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="omni-ids", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=("gen", "train", "eval", "detect"))
    parser.add_argument("--config", help="key = value config file ([traffic], [mix], [model])")
    parser.add_argument("--seed", type=int, help="unsigned 64-bit seed")
    parser.add_argument("--preset", help="traffic preset: dataset-i, dataset-ii, online")
    parser.add_argument("--model", help="fnn, lstm or ensemble")
    parser.add_argument("--mode", help="binary or multi")
    parser.add_argument("--data", help="comma-separated dataset CSV paths")
    parser.add_argument("--weights", help="weights file (detect: comma-separated list)")
    parser.add_argument("--out", help="output file (gen, train) or directory (eval, detect)")
    parser.add_argument("--duration", type=float, help="seconds of simulated traffic")
    parser.add_argument("--packets", type=int, help="packet budget (overrides the preset)")
    parser.add_argument("--protocol", help="holdout, repeated-split or learning-curve")
    parser.add_argument("--splits", type=int, default=10, help="trials for eval protocols")
    parser.add_argument("--sizes", help="comma-separated training sizes for learning curves")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "detect": cmd_detect}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INPUT
    try:
        return COMMANDS[args.command](args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
