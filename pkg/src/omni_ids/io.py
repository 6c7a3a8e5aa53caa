"""Dataset CSV, model weights file and run manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from . import __version__
from . import nn
from .features import ScalerStats
from .models import EnsembleClassifier, FNNClassifier, LSTMClassifier
from .traffic import CLASS_NAMES, FEATURE_NAMES

FORMAT_VERSION = 1
FLOAT_COLUMNS = ("timestamp", "relative_time")
HEADER = (*FEATURE_NAMES, "label")


class DatasetError(ValueError):
    """Dataset file missing, unreadable or malformed."""


class WeightsError(ValueError):
    """Weights file missing, unreadable or incompatible."""


# -- datasets -------------------------------------------------------------------

def _cell(name, value) -> str:
    if name in FLOAT_COLUMNS:
        return format(float(value), ".17g")
    return str(int(value))


def write_dataset(path, records) -> int:
    """Write records as CSV (header, 19 feature columns, label); returns the row count."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for rec in records:
            w.writerow([_cell(name, getattr(rec, name)) for name in FEATURE_NAMES] + [rec.label])
            n += 1
    return n


def read_dataset(path):
    """Load a dataset CSV as ``(X float64 (n, 19), labels str (n,))``."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"dataset not found: {path}")
    rows, labels = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != HEADER:
            raise DatasetError(f"{path}: header does not match the dataset schema")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(HEADER):
                raise DatasetError(f"{path}:{lineno}: expected {len(HEADER)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row[:-1]])
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-numeric feature value") from None
            if row[-1] not in CLASS_NAMES:
                raise DatasetError(f"{path}:{lineno}: unknown label {row[-1]!r}")
            labels.append(row[-1])
    X = np.array(rows, dtype=np.float64).reshape(-1, len(FEATURE_NAMES))
    return X, np.array(labels, dtype=str)


# -- weights --------------------------------------------------------------------

def _arrays(arrays) -> list:
    return [{"shape": list(a.shape), "data": a.ravel().tolist()} for a in arrays]


def _unarrays(items) -> list:
    return [np.array(it["data"], dtype=np.float64).reshape(it["shape"]) for it in items]


def _params(est) -> dict:
    out = {}
    for k, v in est.get_params(deep=False).items():
        if k in ("fnn", "lstm"):
            continue
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def _base_dict(name, est) -> dict:
    return {
        "model": name,
        "mode": est.mode,
        "classes": [str(c) for c in est.classes_],
        "seed": est.random_state,
        "hyperparameters": _params(est),
        "n_features": int(est.n_features_in_),
        "scaler": est.scaler_.to_dict(),
        "arrays": _arrays(est.network_.arrays),
        "loss_curve": [float(v) for v in est.loss_curve_],
    }


def model_to_dict(model) -> dict:
    if isinstance(model, EnsembleClassifier):
        if not hasattr(model, "voter_"):
            raise WeightsError("ensemble is not fitted")
        d = {
            "model": "ensemble",
            "mode": model.mode,
            "classes": [str(c) for c in model.classes_],
            "seed": model.random_state,
            "hyperparameters": _params(model),
            "fnn": _base_dict("fnn", model.fnn_),
            "lstm": _base_dict("lstm", model.lstm_),
            "arrays": _arrays(model.voter_.arrays),
            "loss_curve": [float(v) for v in model.loss_curve_],
        }
    elif isinstance(model, (FNNClassifier, LSTMClassifier)):
        if not hasattr(model, "network_"):
            raise WeightsError("model is not fitted")
        d = _base_dict("fnn" if isinstance(model, FNNClassifier) else "lstm", model)
    else:
        raise WeightsError(f"cannot serialise {type(model).__name__}")
    d["format_version"] = FORMAT_VERSION
    return d


def _hyper(d) -> dict:
    out = {}
    for k, v in d["hyperparameters"].items():
        out[k] = tuple(v) if isinstance(v, list) else v
    return out


def _restore_base(d):
    cls = {"fnn": FNNClassifier, "lstm": LSTMClassifier}[d["model"]]
    est = cls(**_hyper(d))
    est.classes_ = np.array(d["classes"])
    est.n_features_in_ = d["n_features"]
    est.scaler_ = ScalerStats.from_dict(d["scaler"])
    est.network_ = est._build(d["n_features"], np.random.default_rng(0))
    est.network_.set_weights(_unarrays(d["arrays"]))
    est.loss_curve_ = list(d.get("loss_curve", []))
    return est


def model_from_dict(d: dict):
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise WeightsError(f"unsupported weights format version {version!r}")
    try:
        if d["model"] in ("fnn", "lstm"):
            return _restore_base(d)
        if d["model"] != "ensemble":
            raise WeightsError(f"unknown model type {d['model']!r}")
        ens = EnsembleClassifier(**_hyper(d))
        ens.fnn_ = _restore_base(d["fnn"])
        ens.lstm_ = _restore_base(d["lstm"])
        ens.classes_ = np.array(d["classes"])
        ens.n_features_in_ = ens.fnn_.n_features_in_
        n_in = 2 * len(ens.classes_)
        ens.voter_ = nn.MLP(n_in, len(ens.classes_), tuple(ens.voter_hidden), "relu")
        ens.voter_.set_weights(_unarrays(d["arrays"]))
        ens.loss_curve_ = list(d.get("loss_curve", []))
        return ens
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, WeightsError):
            raise
        raise WeightsError(f"malformed weights file: {exc}") from exc


def save_model(path, model) -> None:
    """JSON weights file; floats are written with round-trip precision."""
    text = json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_model(path):
    path = Path(path)
    if not path.is_file():
        raise WeightsError(f"weights file not found: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise WeightsError(f"{path}: not a weights file ({exc})") from exc
    return model_from_dict(d)


# -- manifest -------------------------------------------------------------------

def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def write_manifest(directory, command: str, config: dict, seed, artifacts, duration: float) -> Path:
    """``manifest.json`` in ``directory``; only ``wall_clock_seconds`` varies between reruns."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "artifacts": sorted(os.fspath(Path(a).name) for a in artifacts),
        "tool_version": __version__,
        "wall_clock_seconds": duration,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
