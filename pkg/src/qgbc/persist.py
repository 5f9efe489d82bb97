"""File formats: experiment configs, JSON-Lines datasets, reports, CSV tables.

Everything on disk is JSON or RFC-4180 CSV, versioned with a format_version
field.  Datasets are JSON-Lines (header line + one record per line) so large
runs stream and append cleanly.  CSV tables carry their reproducibility
header in a sidecar `<name>.meta.json`, keeping the CSV itself a plain
one-header-line table.
"""

from __future__ import annotations

import copy
import csv
import json
from pathlib import Path

import numpy as np

from .simulator import DatasetRecord

FORMAT_VERSION = 1


class ConfigError(ValueError):
    """Malformed or unknown configuration content."""


class DatasetFormatError(ValueError):
    """Malformed dataset file; message carries the offending line number."""


# Defaults mirror the experiments: 3.2 us evolution on 3000 steps, RTN at
# gamma = 0.02 MHz with g/gamma = 30, five Gaussian pulses per axis.
DEFAULT_CONFIG = {
    "sim": {"T_us": 3.2, "steps": 3000, "realizations": 2000, "seed": 0},
    "noise": {"gamma_mhz": 0.02, "g_mhz": 0.6, "omega_mhz": 0.0},
    "pulses": {"n": 5, "sigma_us": None, "a_max_mhz": 100.0},
    "graybox": {
        "m_in": 128,
        "layers": 2,
        "hidden": 60,
        "input_mode": "toggling",
        "lr": 1e-3,
        "batch": 256,
        "epochs": 200,
        "split": 0.9,
    },
    "control": {"iters": 1000, "restarts": 10, "fd_step": None},
}


def resolve_config(doc: dict | None) -> dict:
    """Merge a (possibly partial) config document over the defaults.

    Unknown sections or keys are rejected so typos fail loudly instead of
    silently running with defaults.
    """
    resolved = copy.deepcopy(DEFAULT_CONFIG)
    if doc is None:
        return resolved
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    for section, content in doc.items():
        if section not in resolved:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(content, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        for key, value in content.items():
            if key not in resolved[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            default = resolved[section][key]
            if default is not None and value is not None:
                if isinstance(default, (int, float)) and (
                    isinstance(value, bool) or not isinstance(value, (int, float))
                ):
                    raise ConfigError(f"config key {section}.{key} must be a number")
            resolved[section][key] = value
    return resolved


def load_config(source: str | Path | None) -> dict:
    """Resolve a config: None or the literal 'default' means built-in defaults."""
    if source is None or str(source) == "default":
        return resolve_config(None)
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return resolve_config(doc)


# ---------------------------------------------------------------------------
# datasets (JSON-Lines)
# ---------------------------------------------------------------------------


def write_dataset(path, records, config: dict) -> None:
    """Header line then one JSON object per record.

    amps is stored as two rows [x amplitudes, y amplitudes]; expectations as
    the 18 values in the fixed (state, observable) row-major order.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = {
            "format_version": FORMAT_VERSION,
            "kind": "dataset",
            "config": config,
            "count": len(records),
        }
        fh.write(json.dumps(header) + "\n")
        for rec in records:
            amps = np.asarray(rec.amplitudes, dtype=float)
            obj = {
                "amps": [amps[:, 0].tolist(), amps[:, 1].tolist()],
                "expectations": np.asarray(rec.expectations, dtype=float)
                .reshape(18)
                .tolist(),
                "meta": {
                    "g": rec.g,
                    "gamma": rec.gamma,
                    "omega": rec.omega,
                    "seed": rec.seed,
                    "index": rec.index,
                },
            }
            fh.write(json.dumps(obj) + "\n")


def _dataset_record(obj: dict, line_no: int) -> DatasetRecord:
    try:
        amps = obj["amps"]
        expectations = obj["expectations"]
        meta = obj["meta"]
    except (KeyError, TypeError) as exc:
        raise DatasetFormatError(f"line {line_no}: missing dataset key {exc}") from exc
    if (
        not isinstance(amps, list)
        or len(amps) != 2
        or len(amps[0]) != len(amps[1])
        or len(amps[0]) < 1
    ):
        raise DatasetFormatError(f"line {line_no}: amps must be two equal-length rows")
    if not isinstance(expectations, list) or len(expectations) != 18:
        raise DatasetFormatError(f"line {line_no}: expectations must hold 18 values")
    try:
        return DatasetRecord(
            amplitudes=np.array(amps, dtype=float).T,
            expectations=np.array(expectations, dtype=float),
            g=float(meta["g"]),
            gamma=float(meta["gamma"]),
            omega=float(meta["omega"]),
            seed=int(meta["seed"]),
            index=int(meta["index"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"line {line_no}: bad record content: {exc}") from exc


def read_dataset(path):
    """Read a JSON-Lines dataset -> (records, header)."""
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(f"dataset file not found: {path}")
    records = []
    header = None
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"line {line_no}: invalid JSON: {exc}") from exc
            if line_no == 1:
                if not isinstance(obj, dict) or obj.get("kind") != "dataset":
                    raise DatasetFormatError("line 1: missing dataset header")
                if obj.get("format_version") != FORMAT_VERSION:
                    raise DatasetFormatError(
                        f"line 1: unsupported format_version {obj.get('format_version')!r}"
                    )
                header = obj
                continue
            records.append(_dataset_record(obj, line_no))
    if header is None:
        raise DatasetFormatError("dataset file is empty")
    if header.get("count") is not None and header["count"] != len(records):
        raise DatasetFormatError(
            f"header count {header['count']} != {len(records)} records"
        )
    return records, header


# ---------------------------------------------------------------------------
# reports and CSV tables
# ---------------------------------------------------------------------------


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def write_report(path, kind: str, payload: dict, config: dict | None = None) -> None:
    """Single-document JSON artifact with the resolved config embedded."""
    doc = {"format_version": FORMAT_VERSION, "kind": kind}
    if config is not None:
        doc["config"] = config
    doc.update(_jsonable(payload))
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_report(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported format_version {doc.get('format_version')!r}")
    return doc


def write_csv(path, columns, rows, kind: str, config: dict | None = None) -> None:
    """RFC-4180 CSV with a one-line header plus a reproducibility sidecar."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(_jsonable(list(row)))
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "columns": list(columns),
        "rows": len(rows),
    }
    if config is not None:
        meta["config"] = config
    sidecar = path.with_name(path.stem + ".meta.json")
    sidecar.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
