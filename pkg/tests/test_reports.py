import json

import numpy as np
import pytest

from psdlab.errors import FormatError
from psdlab.reports import (
    format_value,
    read_features,
    summarize_report,
    write_features,
    write_json,
    write_metrics_csv,
)


@pytest.mark.parametrize("value,expected", [
    (None, "n/a"),
    (float("nan"), "n/a"),
    (float("inf"), "n/a"),
    (0.1, "0.1"),
    (1.0, "1.0"),
    (7, "7"),
    ("ss", "ss"),
])
def test_format_value(value, expected):
    assert format_value(value) == expected


def test_metrics_csv(tmp_path):
    rows = [{"attack": "badnets", "detector": "ss", "variant": "sgd_raw",
             "tpr": 0.5, "fpr": 0.125, "f1": None, "auc": None, "seed": 0}]
    write_metrics_csv(tmp_path / "m.csv", rows)
    assert (tmp_path / "m.csv").read_text().splitlines() == [
        "attack,detector,variant,tpr,fpr,f1,auc,seed",
        "badnets,ss,sgd_raw,0.5,0.125,n/a,n/a,0",
    ]


def test_json_is_sorted_and_nan_free(tmp_path):
    write_json(tmp_path / "r.json", {"b": float("nan"), "a": [np.float64(0.5), np.int64(3)]})
    text = (tmp_path / "r.json").read_text()
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": [0.5, 3], "b": None}


def test_features_file(tmp_path, rng):
    features = rng.standard_normal((6, 3))
    write_features(tmp_path / "v.feat", features, np.array([0, 1, 2, 0, 1, 2]),
                   np.array([True, False, False, False, False, False]), "sam_scaled")
    raw = (tmp_path / "v.feat").read_bytes()
    assert raw[:4] == b"FEAT" and len(raw) == 16 + 8 * 18
    loaded, manifest = read_features(tmp_path / "v.feat")
    np.testing.assert_array_equal(loaded, features)
    assert manifest == {"labels": [0, 1, 2, 0, 1, 2],
                        "poison_flags": [True, False, False, False, False, False],
                        "variant": "sam_scaled"}


def test_features_bad_magic(tmp_path, rng):
    write_features(tmp_path / "v.feat", rng.standard_normal((2, 2)), np.zeros(2), np.zeros(2), "x")
    raw = bytearray((tmp_path / "v.feat").read_bytes())
    raw[:4] = b"SCAL"
    (tmp_path / "v.feat").write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        read_features(tmp_path / "v.feat")


def test_summarize_report():
    payload = {
        "schema_version": 1, "seed": 0,
        "attack": {"name": "blend_weak", "poisoning_ratio": 0.01},
        "expected_fraction": {"value": 0.01, "mode": "evaluation"},
        "analysis": {"top2_tac": {"sgd": 0.25, "sam": 0.5}},
        "metrics": [{"detector": "ss", "variant": "sam_scaled", "tpr": 1.0, "fpr": 0.0, "f1": None, "auc": 0.75}],
    }
    text = summarize_report(payload)
    assert "attack=blend_weak" in text
    assert "top2_tac sam=0.5 sgd=0.25" in text
    last = text.splitlines()[-1]
    assert last.split() == ["ss", "sam_scaled", "1.000", "0.000", "n/a", "0.750"]
