"""CSV and JSON input/output.

Numbers are written with Python's shortest round-trip ``repr`` (always '.'
as the decimal separator) and ``\\n`` line endings, so repeated runs produce
byte-identical files and written values read back exactly.  Cluster labels
are written 1-based.
"""
from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import numpy as np

from .gibbs import label_agreement
from .model import Dataset

__all__ = [
    "DataError",
    "read_dataset",
    "write_dataset",
    "read_table",
    "write_json",
    "read_json",
    "write_summaries",
    "write_assignments",
    "write_trace",
    "write_ic_table",
    "write_truth",
    "write_rows",
]


class DataError(ValueError):
    """Malformed or unreadable input data."""


def _fmt(x) -> str:
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def read_dataset(path) -> Dataset:
    """Read a CSV with a header row of variable names and numeric rows.

    Errors name the 1-based data row and column of the offending cell.
    Missing values (empty cells, ``NA``, ``nan``) and infinities are rejected.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        R = len(header)
        rows = []
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != R:
                raise DataError(f"{path}: row {i} has {len(row)} fields, expected {R}")
            vals = []
            for j, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    v = math.nan
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: row {i}, column {j + 1} ({header[j]!r}): "
                        f"{cell!r} is not a finite number"
                    )
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    try:
        return Dataset(np.array(rows), header)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else _fmt(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def write_dataset(path, data: Dataset):
    write_rows(path, data.variable_names, ([float(v) for v in row] for row in data.Y))


def read_table(path) -> dict:
    """Read any CSV written here into ``{column: list}``; numeric cells become floats."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = {h: [] for h in header}
        for row in reader:
            if len(row) != len(header):
                raise DataError(f"{path}: ragged row {row!r}")
            for h, cell in zip(header, row):
                try:
                    cols[h].append(float(cell))
                except ValueError:
                    cols[h].append(cell)
    return cols


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, indent=2)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_summaries(path, chain, record=None, variable_names=None):
    """Posterior means and 95% intervals, keyed by parameter name.

    Arrays are nested lists in row-major order.  ``omega[0]`` is cluster 1.
    """
    doc = {
        "K": int(chain.summaries["p"]["mean"].shape[0]),
        "F": int(chain.summaries["B"]["mean"].shape[1]),
        "n_draws": int(chain.n_draws),
    }
    if variable_names is not None:
        doc["variables"] = list(variable_names)
    for name, s in chain.summaries.items():
        doc[name] = {"mean": s["mean"], "q025": s["q025"], "q975": s["q975"]}
    if record is not None:
        doc["information_criterion"] = {
            "d": record.d, "loglik": record.loglik, "ic": record.ic,
            "min_cluster_size": record.min_cluster_size,
        }
    write_json(path, doc)


def write_assignments(path, assign_prob, map_labels):
    """``subject,p_1..p_K,modal`` with 6-decimal probabilities, 1-based labels."""
    n, K = assign_prob.shape
    header = ["subject"] + [f"p_{k + 1}" for k in range(K)] + ["modal"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(n):
            probs = ",".join(f"{v:.6f}" for v in assign_prob[i])
            fh.write(f"{i + 1},{probs},{int(map_labels[i]) + 1}\n")


def write_trace(path, chain):
    """One row per retained draw: log joint density, label agreement with the
    modal assignment, tau, p and sigma2."""
    d = chain.draws
    D = chain.n_draws
    F, K, R = d["tau"].shape[1], d["p"].shape[1], d["sigma2"].shape[1]
    header = (["draw", "log_joint", "label_agreement"] + [f"tau_{l + 1}" for l in range(F)]
              + [f"p_{k + 1}" for k in range(K)] + [f"sigma2_{r + 1}" for r in range(R)])
    lj = chain.log_joint if chain.log_joint is not None else np.full(D, np.nan)
    agree = label_agreement(chain)
    rows = ([t + 1, float(lj[t]), float(agree[t])] + [float(v) for v in d["tau"][t]] + [float(v) for v in d["p"][t]]
            + [float(v) for v in d["sigma2"][t]] for t in range(D))
    write_rows(path, header, rows)


def write_ic_table(path, records):
    """``K,F,d,loglik,ic`` with ``inf`` for rejected models."""
    write_rows(path, ["K", "F", "d", "loglik", "ic"],
               ([r.K, r.F, float(r.d), float(r.loglik), float(r.ic)] for r in records))


def write_truth(path, truth: dict):
    """Generating values; labels ``z`` are written 1-based."""
    doc = dict(truth)
    doc["z"] = np.asarray(truth["z"]) + 1
    write_json(path, doc)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
