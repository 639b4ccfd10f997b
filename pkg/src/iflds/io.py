"""Series persistence (CSV and raw little-endian float64) and JSON model configs."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any

import numpy as np

from .model import FldsModel, LdsParams, ModelError, ObservationSeries, benchmark_model

_LE_F64 = np.dtype("<f8")


def write_series_csv(series: ObservationSeries, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "p_i", "p_q"])
        for t, (pi, pq) in enumerate(series.samples, start=1):
            # repr() gives the shortest string that round-trips a float64
            writer.writerow([t, repr(float(pi)), repr(float(pq))])


def read_series_csv(path: str | Path) -> ObservationSeries:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["t", "p_i", "p_q"]:
            raise ModelError(f"{path}: expected header t,p_i,p_q, got {header}")
        rows = [(float(r[1]), float(r[2])) for r in reader if r]
    return ObservationSeries(np.array(rows, dtype=float).reshape(-1, 2))


def write_series_bin(series: ObservationSeries, path: str | Path) -> None:
    """Triplets (t, p_i, p_q) as little-endian float64."""
    T = len(series)
    out = np.empty((T, 3), dtype=_LE_F64)
    out[:, 0] = np.arange(1, T + 1)
    out[:, 1:] = series.samples
    out.tofile(path)


def read_series_bin(path: str | Path) -> ObservationSeries:
    raw = np.fromfile(path, dtype=_LE_F64)
    if raw.size % 3:
        raise ModelError(f"{path}: size is not a whole number of (t, p_i, p_q) triplets")
    return ObservationSeries(raw.reshape(-1, 3)[:, 1:].astype(float))


def read_series(path: str | Path) -> ObservationSeries:
    path = Path(path)
    return read_series_bin(path) if path.suffix in (".bin", ".f64") else read_series_csv(path)


def model_from_config(cfg: dict[str, Any]) -> FldsModel:
    """Build a model from a config mapping.

    Either ``{"benchmark_sources": M}`` for the built-in synthetic model or
    ``{"sources": [{"G": ..., "C": ..., "Q": ..., "R": ...}, ...]}``.
    """
    if "benchmark_sources" in cfg:
        return benchmark_model(int(cfg["benchmark_sources"]), noise=float(cfg.get("noise", 0.01)))
    if "sources" not in cfg:
        raise ModelError("model config needs 'benchmark_sources' or 'sources'")
    srcs = []
    for i, s in enumerate(cfg["sources"]):
        try:
            srcs.append(LdsParams(np.array(s["G"]), np.array(s["C"]), np.array(s["Q"]), np.array(s["R"])))
        except KeyError as exc:
            raise ModelError(f"source {i} is missing {exc}") from exc
    return FldsModel(srcs, shared_noise=bool(cfg.get("shared_noise", True)))


def model_to_config(model: FldsModel) -> dict[str, Any]:
    return {
        "shared_noise": model.shared_noise,
        "sources": [{k: getattr(s, k).tolist() for k in ("G", "C", "Q", "R")} for s in model.sources],
    }


def load_json(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"spec file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be an object")
    return data
