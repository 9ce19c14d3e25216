import csv
import io as stdio
import json

import numpy as np
import pytest

from vortex_kinetics.io import config_hash, csv_text, dumps, emit, file_digest, read_json, to_jsonable


def test_json_roundtrip_and_stable_bytes(tmp_path):
    report = {"b": np.arange(3), "a": 0.1 + 0.2, "z": 1 + 2j, (1, 0): 3.0, ((1, 0), (0, -1)): np.float64(2.5)}
    p1 = emit(report, "json", tmp_path / "r1.json")
    back = read_json(p1)
    assert back["b"] == [0, 1, 2] and back["a"] == 0.1 + 0.2
    assert back["z"] == [1.0, 2.0] and back["1,0"] == 3.0 and back["1,0;0,-1"] == 2.5
    p2 = emit(back, "json", tmp_path / "r2.json")
    assert p1.read_bytes() == p2.read_bytes()
    assert file_digest(p1) == file_digest(p2)


def test_key_order_does_not_change_bytes():
    assert dumps({"x": 1, "y": [1.5]}) == dumps({"y": [1.5], "x": 1})


def test_non_finite_values_become_strings():
    out = to_jsonable([np.nan, np.inf, -np.inf])
    assert out == ["nan", "inf", "-inf"]
    json.loads(dumps({"v": np.nan}))


def test_csv_columns_and_float_repr():
    text = csv_text(["tau", "k1", "value"], [(0.1, 1, 1 / 3), (0.2, -1, 2.0)])
    rows = list(csv.reader(stdio.StringIO(text)))
    assert rows[0] == ["tau", "k1", "value"]
    assert rows[1] == ["0.1", "1", repr(1 / 3)]
    assert float(rows[1][2]) == 1 / 3


def test_emit_validation(tmp_path):
    with pytest.raises(ValueError):
        emit([(1, 2)], "csv", tmp_path / "x.csv")
    with pytest.raises(ValueError):
        emit({}, "xml", tmp_path / "x.xml")


def test_config_hash_is_order_independent():
    a = config_hash({"seed": 1, "kernel": {"modes": [[1, 0, 1.0]]}})
    b = config_hash({"kernel": {"modes": [[1, 0, 1.0]]}, "seed": 1})
    assert a == b and len(a) == 16
    assert a != config_hash({"seed": 2, "kernel": {"modes": [[1, 0, 1.0]]}})
