"""Tests for config resolution, dataset files, and report/CSV writers."""

import json

import numpy as np
import pytest

from qgbc.persist import (
    DEFAULT_CONFIG,
    ConfigError,
    DatasetFormatError,
    load_config,
    read_dataset,
    read_report,
    resolve_config,
    write_csv,
    write_dataset,
    write_report,
)
from qgbc.simulator import DatasetRecord


def _records(n=3, n_pulses=5):
    rng = np.random.default_rng(0)
    return [
        DatasetRecord(
            amplitudes=rng.uniform(-100, 100, (n_pulses, 2)),
            expectations=rng.uniform(-1, 1, 18),
            g=0.6,
            gamma=0.02,
            omega=0.0,
            seed=int(rng.integers(2**31)),
            index=i,
        )
        for i in range(n)
    ]


class TestConfig:
    def test_defaults_complete(self):
        cfg = resolve_config(None)
        assert cfg == DEFAULT_CONFIG
        assert cfg is not DEFAULT_CONFIG
        assert cfg["sim"]["T_us"] == 3.2
        assert cfg["noise"]["gamma_mhz"] == 0.02
        assert cfg["graybox"]["split"] == 0.9

    def test_partial_override(self):
        cfg = resolve_config({"noise": {"g_mhz": 0.036}, "control": {"iters": 50}})
        assert cfg["noise"]["g_mhz"] == 0.036
        assert cfg["noise"]["gamma_mhz"] == 0.02
        assert cfg["control"]["iters"] == 50

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="section"):
            resolve_config({"simulation": {}})

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="noise.g"):
            resolve_config({"noise": {"g": 0.6}})

    def test_non_numeric_rejected(self):
        with pytest.raises(ConfigError):
            resolve_config({"sim": {"steps": "many"}})
        with pytest.raises(ConfigError):
            resolve_config({"sim": {"steps": True}})

    def test_load_config_default_and_file(self, tmp_path):
        assert load_config("default") == resolve_config(None)
        assert load_config(None) == resolve_config(None)
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"sim": {"realizations": 100}}))
        assert load_config(path)["sim"]["realizations"] == 100
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError, match="JSON"):
            load_config(bad)


class TestDataset:
    def test_round_trip(self, tmp_path):
        records = _records(4)
        path = tmp_path / "d.jsonl"
        config = resolve_config(None)
        write_dataset(path, records, config)
        loaded, header = read_dataset(path)
        assert header["count"] == 4
        assert header["config"] == config
        assert len(loaded) == 4
        for orig, back in zip(records, loaded):
            assert np.array_equal(orig.amplitudes, back.amplitudes)
            assert np.array_equal(orig.expectations, back.expectations)
            assert (back.g, back.gamma, back.omega) == (orig.g, orig.gamma, orig.omega)
            assert (back.seed, back.index) == (orig.seed, orig.index)

    def test_line_count(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_dataset(path, _records(10), resolve_config(None))
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 11   # header + one line per record
        assert json.loads(lines[0])["kind"] == "dataset"

    def test_malformed_line_number(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_dataset(path, _records(3), resolve_config(None))
        lines = path.read_text().strip().split("\n")
        obj = json.loads(lines[2])
        obj["expectations"] = obj["expectations"][:17]
        lines[2] = json.dumps(obj)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError, match="line 3"):
            read_dataset(path)

    def test_ragged_amps_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_dataset(path, _records(2), resolve_config(None))
        lines = path.read_text().strip().split("\n")
        obj = json.loads(lines[1])
        obj["amps"][1] = obj["amps"][1][:-1]
        lines[1] = json.dumps(obj)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError, match="line 2"):
            read_dataset(path)

    def test_invalid_json_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_dataset(path, _records(2), resolve_config(None))
        with path.open("a") as fh:
            fh.write("{broken\n")
        with pytest.raises(DatasetFormatError, match="line 4"):
            read_dataset(path)

    def test_header_mismatch(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_dataset(path, _records(3), resolve_config(None))
        lines = path.read_text().strip().split("\n")
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(DatasetFormatError, match="count"):
            read_dataset(path)

    def test_missing_and_empty(self, tmp_path):
        with pytest.raises(DatasetFormatError, match="not found"):
            read_dataset(tmp_path / "nope.jsonl")
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        with pytest.raises(DatasetFormatError, match="empty"):
            read_dataset(empty)

    def test_wrong_version(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_dataset(path, _records(1), resolve_config(None))
        text = path.read_text().replace('"format_version": 1', '"format_version": 7', 1)
        path.write_text(text)
        with pytest.raises(DatasetFormatError, match="format_version"):
            read_dataset(path)


class TestReportsAndCsv:
    def test_report_round_trip(self, tmp_path):
        path = tmp_path / "report.json"
        payload = {"boundaries": {"weak": 0.11, "strong": np.float64(0.54)},
                   "grid": np.arange(3)}
        write_report(path, "regimes", payload, resolve_config(None))
        doc = read_report(path)
        assert doc["kind"] == "regimes"
        assert doc["boundaries"] == {"weak": 0.11, "strong": 0.54}
        assert doc["grid"] == [0, 1, 2]
        assert doc["config"]["sim"]["T_us"] == 3.2

    def test_report_version_check(self, tmp_path):
        path = tmp_path / "report.json"
        write_report(path, "x", {})
        path.write_text(path.read_text().replace(": 1", ": 9", 1))
        with pytest.raises(ValueError, match="format_version"):
            read_report(path)

    def test_csv_and_sidecar(self, tmp_path):
        path = tmp_path / "fig3.csv"
        rows = [["X", 1.8, "CS-WB", 0.9931], ["X", 28.8, "GB", np.float64(0.9213)]]
        write_csv(path, ["gate", "g_over_gamma", "model", "fidelity"], rows,
                  kind="fig3", config=resolve_config(None))
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "gate,g_over_gamma,model,fidelity"
        assert lines[1] == "X,1.8,CS-WB,0.9931"
        assert len(lines) == 3
        meta = json.loads((tmp_path / "fig3.meta.json").read_text())
        assert meta["kind"] == "fig3"
        assert meta["rows"] == 2
        assert meta["config"]["noise"]["g_mhz"] == 0.6
