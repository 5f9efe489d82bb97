"""End-to-end tests of the command-line subcommands at desk scale."""

import csv
import json

import numpy as np
import pytest

from qgbc.cli import main
from qgbc.graybox import load_checkpoint
from qgbc.persist import read_dataset, read_report


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli")
    config = {
        "sim": {"steps": 600, "realizations": 200, "seed": 7},
        "graybox": {"m_in": 32, "hidden": 16, "epochs": 12, "batch": 16, "lr": 0.005},
        "control": {"iters": 25, "restarts": 1},
    }
    cfg_path = path / "small.json"
    cfg_path.write_text(json.dumps(config))
    return path, str(cfg_path)


@pytest.fixture(scope="module")
def dataset_file(workdir):
    path, cfg = workdir
    out = path / "d.jsonl"
    assert main(["dataset", "--config", cfg, "--n", "40", "--out", str(out)]) == 0
    return str(out)


@pytest.fixture(scope="module")
def model_file(workdir, dataset_file):
    path, cfg = workdir
    out = path / "model.json"
    assert main(["train", "--config", cfg, "--dataset", dataset_file,
                 "--out", str(out)]) == 0
    return str(out)


class TestExitCodes:
    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit) as err:
            main(["not-a-command"])
        assert err.value.code == 2

    def test_unknown_config_key(self, workdir):
        path, _ = workdir
        bad = path / "bad.json"
        bad.write_text(json.dumps({"noise": {"g": 0.6}}))
        assert main(["regimes", "--config", str(bad),
                     "--out", str(path / "r.json")]) == 2

    def test_missing_dataset_file(self, workdir):
        path, cfg = workdir
        assert main(["train", "--config", cfg, "--dataset",
                     str(path / "nope.jsonl"), "--out", str(path / "m.json")]) == 2

    def test_unknown_gate(self, workdir):
        path, cfg = workdir
        assert main(["optimize", "--config", cfg, "--gate", "Q",
                     "--out", str(path / "o.json")]) == 2

    def test_gb_without_checkpoint(self, workdir):
        path, cfg = workdir
        assert main(["optimize", "--config", cfg, "--gate", "X", "--model", "gb",
                     "--out", str(path / "o.json")]) == 2

    def test_nan_dataset_is_numerical_failure(self, workdir, dataset_file):
        path, cfg = workdir
        lines = open(dataset_file).read().strip().split("\n")
        corrupted = []
        for i, line in enumerate(lines):
            if i >= 1:
                obj = json.loads(line)
                obj["expectations"] = [float("nan")] * 18
                line = json.dumps(obj)
            corrupted.append(line)
        bad = path / "nan.jsonl"
        bad.write_text("\n".join(corrupted) + "\n")
        assert main(["train", "--config", cfg, "--dataset", str(bad),
                     "--out", str(path / "m.json")]) == 3


class TestRegimes:
    def test_boundary_echo(self, workdir):
        path, cfg = workdir
        out = path / "regimes.json"
        assert main(["regimes", "--config", cfg, "--out", str(out)]) == 0
        doc = read_report(out)
        # the echo contract: epsilon, gamma, and T all present in the artifact
        assert doc["epsilon"] == 0.01
        assert doc["gamma_mhz"] == 0.02
        assert doc["T_us"] == 3.2
        b = doc["boundaries_over_gamma"]
        assert b["weak_end"] <= b["intermediate_end"] <= b["strong_end"]
        assert doc["config"]["sim"]["seed"] == 7


class TestDataset:
    def test_schema(self, workdir, dataset_file):
        records, header = read_dataset(dataset_file)
        assert len(records) == 40
        assert header["count"] == 40
        assert header["config"]["sim"]["realizations"] == 200
        lines = open(dataset_file).read().strip().split("\n")
        assert len(lines) == 41   # header line + one line per record
        obj = json.loads(lines[1])
        assert set(obj) == {"amps", "expectations", "meta"}
        assert len(obj["amps"]) == 2
        assert len(obj["expectations"]) == 18

    def test_reproducible(self, workdir, dataset_file):
        path, cfg = workdir
        again = path / "d2.jsonl"
        assert main(["dataset", "--config", cfg, "--n", "40",
                     "--out", str(again)]) == 0
        assert open(dataset_file).read() == open(again).read()


class TestCoherenceScan:
    def test_csv_and_sidecar(self, workdir):
        path, cfg = workdir
        out = path / "scan.csv"
        assert main(["coherence-scan", "--config", cfg,
                     "--g-over-gamma", "0,2,5", "--out", str(out)]) == 0
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["g_mhz", "g_over_gamma", "coherence"]
        assert len(rows) == 4
        assert float(rows[1][2]) == 1.0        # g = 0 keeps full coherence
        assert float(rows[3][2]) < float(rows[1][2])
        meta = json.loads((path / "scan.meta.json").read_text())
        assert meta["kind"] == "coherence-scan"
        assert meta["config"]["sim"]["seed"] == 7


class TestCorrelatorCheck:
    def test_agreement_report(self, workdir):
        path, cfg = workdir
        out = path / "corr.json"
        assert main(["correlator-check", "--config", cfg, "--n-traj", "2000",
                     "--lags", "1,50,200", "--out", str(out)]) == 0
        doc = read_report(out)
        assert doc["expected_ratio_2pt"] == 1.0   # unmodulated config
        assert doc["two_point"]["max_z"] < 5.0
        assert doc["four_point"]["max_z"] < 5.0
        assert len(doc["two_point"]["empirical"]) == 3


class TestOptimizeAndTomo:
    def test_optimize_report(self, workdir):
        path, cfg = workdir
        out = path / "optx.json"
        assert main(["optimize", "--config", cfg, "--gate", "X",
                     "--out", str(out)]) == 0
        doc = read_report(out)
        assert doc["gate"] == "X"
        assert doc["model"] == "CS-WB"
        amps = np.asarray(doc["amplitudes"])
        assert amps.shape == (5, 2)
        assert np.max(np.abs(amps)) <= 100.0
        assert doc["cost"] == min(doc["restart_costs"])
        # reproducibility: same config, same result
        again = path / "optx2.json"
        assert main(["optimize", "--config", cfg, "--gate", "X",
                     "--out", str(again)]) == 0
        assert read_report(again)["amplitudes"] == doc["amplitudes"]

    def test_tomo_from_report(self, workdir):
        path, cfg = workdir
        opt = path / "optx.json"
        if not opt.exists():
            assert main(["optimize", "--config", cfg, "--gate", "X",
                         "--out", str(opt)]) == 0
        out = path / "tomo.json"
        assert main(["tomo", "--config", cfg, "--pulses", str(opt),
                     "--gate", "X", "--out", str(out)]) == 0
        doc = read_report(out)
        assert 0.0 <= doc["fidelity"] <= 1.0
        assert doc["vo_distance"] >= 0.0
        chi = np.asarray(doc["chi_real"]) + 1j * np.asarray(doc["chi_imag"])
        assert chi.shape == (4, 4)
        assert abs(np.trace(chi).real - 1.0) < 0.2

    def test_tomo_free_evolution_weak_coupling(self, workdir):
        path, _ = workdir
        weak = path / "weak.json"
        weak.write_text(json.dumps({
            "sim": {"steps": 600, "realizations": 400, "seed": 7},
            "noise": {"g_mhz": 0.04},
        }))
        out = path / "tomo_free.json"
        assert main(["tomo", "--config", str(weak), "--gate", "I",
                     "--out", str(out)]) == 0
        doc = read_report(out)
        assert np.all(np.asarray(doc["amplitudes"]) == 0.0)
        # weak dephasing barely moves the process away from the identity
        assert doc["fidelity"] > 0.9


class TestTrainEvaluate:
    def test_checkpoint_metadata(self, workdir, dataset_file, model_file):
        model = load_checkpoint(model_file)
        assert model.architecture.hidden == 16
        assert model.metadata["config"]["graybox"]["hidden"] == 16
        assert len(model.metadata["train_curve"]) == model.metadata["epochs_run"]
        assert model.metadata["best_val_mse"] > 0.0

    def test_evaluate_report(self, workdir, dataset_file, model_file):
        path, cfg = workdir
        out = path / "eval.json"
        assert main(["evaluate", "--config", cfg, "--dataset", dataset_file,
                     "--model", model_file, "--out", str(out)]) == 0
        doc = read_report(out)
        assert doc["same_dataset"] is True
        stats = doc["stats"]
        for split in ("train", "validation"):
            s = stats[split]
            assert s["count"] > 0
            assert 0.0 <= s["min"] <= s["median"] <= s["max"]


class TestFigures:
    def test_fig3_schema(self, workdir, model_file):
        path, cfg = workdir
        out = path / "fig3.csv"
        assert main(["fig3", "--config", cfg, "--gates", "X",
                     "--g-over-gamma", "2", "--gb-checkpoint", model_file,
                     "--out", str(out)]) == 0
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["gate", "g_over_gamma", "model", "fidelity"]
        models = [r[2] for r in rows[1:]]
        assert models == ["CS-WB", "OS-WB", "GB"]
        for row in rows[1:]:
            assert row[0] == "X"
            assert 0.0 <= float(row[3]) <= 1.0

    def test_fig3_without_checkpoint_has_no_gb_rows(self, workdir):
        path, cfg = workdir
        out = path / "fig3_nogb.csv"
        assert main(["fig3", "--config", cfg, "--gates", "X",
                     "--g-over-gamma", "2", "--out", str(out)]) == 0
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        assert [r[2] for r in rows[1:]] == ["CS-WB", "OS-WB"]

    def test_fig4_outputs(self, workdir, dataset_file, model_file):
        path, cfg = workdir
        prefix = str(path / "fig4")
        assert main(["fig4", "--config", cfg, "--dataset", dataset_file,
                     "--gb-checkpoint", model_file, "--n-unitaries", "2",
                     "--out-prefix", prefix]) == 0
        with open(prefix + "_mse.csv", newline="") as fh:
            mse_rows = list(csv.reader(fh))
        assert mse_rows[0] == ["split", "count", "min", "median", "max", "mean"]
        assert {r[0] for r in mse_rows[1:]} == {"train", "validation"}
        with open(prefix + "_fidelity.csv", newline="") as fh:
            fid_rows = list(csv.reader(fh))
        assert fid_rows[0] == ["unitary_index", "fidelity", "vo_distance"]
        assert len(fid_rows) == 3
        for row in fid_rows[1:]:
            assert 0.0 <= float(row[1]) <= 1.0
