import json

import numpy as np
import pytest

from omni_ids import io, traffic
from omni_ids.features import make_windows
from omni_ids.models import EnsembleClassifier, FNNClassifier, LSTMClassifier


@pytest.fixture(scope="module")
def records():
    return traffic.generate(traffic.preset("online", n_packets=3000, seed=2))


@pytest.fixture(scope="module")
def xy(records):
    X = np.array([r.features() for r in records], dtype=float)
    y = np.array([r.label for r in records])
    return X, y


def test_dataset_roundtrip(tmp_path, records, xy):
    path = tmp_path / "d.csv"
    assert io.write_dataset(path, records) == len(records)
    X, y = io.read_dataset(path)
    np.testing.assert_array_equal(X, xy[0])  # timestamps survive bit-exactly
    np.testing.assert_array_equal(y, xy[1])
    assert path.read_text().splitlines()[0] == ",".join(traffic.FEATURE_NAMES) + ",label"


def test_dataset_bytes_deterministic(tmp_path, records):
    io.write_dataset(tmp_path / "a.csv", records)
    io.write_dataset(tmp_path / "b.csv", records)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


@pytest.mark.parametrize("body,match", [
    ("a,b\n1,2\n", "header"),
    (",".join(io.HEADER) + "\n1,2\n", "expected 20 fields"),
    (",".join(io.HEADER) + "\n" + ",".join(["x"] * 19) + ",Normal\n", "non-numeric"),
    (",".join(io.HEADER) + "\n" + ",".join(["0"] * 19) + ",Bogus\n", "unknown label"),
    ("", "header"),
])
def test_dataset_schema_errors(tmp_path, body, match):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(io.DatasetError, match=match):
        io.read_dataset(path)


def test_dataset_missing(tmp_path):
    with pytest.raises(io.DatasetError, match="not found"):
        io.read_dataset(tmp_path / "nope.csv")


def _fitted(kind, X, y):
    W, yw = make_windows(X, 10, y)
    if kind == "fnn":
        return FNNClassifier(mode="multi", max_epochs=2).fit(X, y), X
    if kind == "lstm":
        return LSTMClassifier(mode="binary", max_epochs=1).fit(W, yw), W
    ens = EnsembleClassifier(fnn=FNNClassifier(mode="multi", max_epochs=2),
                             lstm=LSTMClassifier(mode="multi", max_epochs=1), max_epochs=2)
    return ens.fit(W, yw), W


@pytest.mark.parametrize("kind", ["fnn", "lstm", "ensemble"])
def test_weights_reload_bit_exact(tmp_path, xy, kind):
    model, X = _fitted(kind, *xy)
    path = tmp_path / f"{kind}.json"
    io.save_model(path, model)
    back = io.load_model(path)
    assert type(back) is type(model)
    np.testing.assert_array_equal(back.predict_proba(X), model.predict_proba(X))
    assert back.get_params(deep=False).keys() == model.get_params(deep=False).keys()
    # saving the reloaded model gives the same bytes
    io.save_model(tmp_path / "again.json", back)
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_weights_file_contents(tmp_path, xy):
    model, _ = _fitted("fnn", *xy)
    io.save_model(tmp_path / "w.json", model)
    d = json.loads((tmp_path / "w.json").read_text())
    assert d["format_version"] == io.FORMAT_VERSION
    assert d["model"] == "fnn" and d["mode"] == "multi"
    assert d["classes"] == list(traffic.CLASS_NAMES)
    assert len(d["scaler"]["mean"]) == 19


def test_weights_version_error(tmp_path, xy):
    model, _ = _fitted("fnn", *xy)
    d = io.model_to_dict(model)
    d["format_version"] = 99
    (tmp_path / "w.json").write_text(json.dumps(d))
    with pytest.raises(io.WeightsError, match="version"):
        io.load_model(tmp_path / "w.json")


def test_weights_malformed(tmp_path):
    (tmp_path / "w.json").write_text("{not json")
    with pytest.raises(io.WeightsError):
        io.load_model(tmp_path / "w.json")
    (tmp_path / "w.json").write_text(json.dumps({"format_version": 1, "model": "fnn"}))
    with pytest.raises(io.WeightsError, match="malformed"):
        io.load_model(tmp_path / "w.json")
    with pytest.raises(io.WeightsError, match="not found"):
        io.load_model(tmp_path / "missing.json")


def test_unfitted_model_cannot_be_saved(tmp_path):
    with pytest.raises(io.WeightsError):
        io.save_model(tmp_path / "w.json", FNNClassifier())


def test_manifest(tmp_path):
    cfg = {"b": 1, "a": [1, 2]}
    path = io.write_manifest(tmp_path, "gen", cfg, 7, [tmp_path / "x.csv"], 1.5)
    m = json.loads(path.read_text())
    assert m["config_hash"] == io.config_hash({"a": [1, 2], "b": 1})
    assert m["artifacts"] == ["x.csv"]
    assert m["seed"] == 7 and m["wall_clock_seconds"] == 1.5
    assert io.config_hash(cfg) != io.config_hash({"b": 2, "a": [1, 2]})
