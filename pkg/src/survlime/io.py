"""CSV datasets with one-hot categorical encoding, and model (de)serialization."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .core import Dataset, SurvivalDataError
from .cox import CoxModel
from .forest import SurvivalForest

RESERVED = ("time", "event")


class SchemaError(SurvivalDataError):
    pass


def load_schema(path) -> dict:
    """Schema JSON: ``{"categorical": {"column": ["level", ...]}}``."""
    if path is None:
        return {"categorical": {}}
    data = json.loads(Path(path).read_text())
    cats = data.get("categorical", {})
    if not isinstance(cats, dict) or not all(isinstance(v, list) for v in cats.values()):
        raise SchemaError(f"{path}: 'categorical' must map column names to level lists")
    return {"categorical": {k: [str(x) for x in v] for k, v in cats.items()}}


def read_csv(path, schema: dict | None = None) -> Dataset:
    """Read a dataset CSV; categorical columns are expanded to ``column=level`` indicators."""
    cats = (schema or {}).get("categorical", {})
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = list(reader)
    for col in RESERVED:
        if col not in header:
            raise SchemaError(f"{path}: missing required column '{col}'")
    missing = [c for c in cats if c not in header]
    if missing:
        raise SchemaError(f"{path}: schema column '{missing[0]}' not in header")
    features = [h for h in header if h not in RESERVED]
    names = []
    for f in features:
        names += [f"{f}={lvl}" for lvl in cats[f]] if f in cats else [f]

    X = np.zeros((len(rows), len(names)))
    time = np.zeros(len(rows))
    event = np.zeros(len(rows), dtype=np.int64)
    pos = {h: i for i, h in enumerate(header)}
    for r, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise SchemaError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
        i = r - 2
        time[i] = _number(row[pos["time"]], path, r, "time")
        if not math.isfinite(time[i]) or time[i] < 0:
            raise SchemaError(f"{path}: row {r}, column 'time': must be finite and >= 0")
        ev = row[pos["event"]].strip()
        if ev not in ("0", "1", "0.0", "1.0"):
            raise SchemaError(f"{path}: row {r}, column 'event': expected 0 or 1, got {ev!r}")
        event[i] = int(float(ev))
        c = 0
        for f in features:
            cell = row[pos[f]].strip()
            if f in cats:
                levels = cats[f]
                if cell not in levels:
                    raise SchemaError(
                        f"{path}: row {r}, column '{f}': unknown category {cell!r}")
                X[i, c + levels.index(cell)] = 1.0
                c += len(levels)
            else:
                X[i, c] = _number(cell, path, r, f)
                if not math.isfinite(X[i, c]):
                    raise SchemaError(f"{path}: row {r}, column '{f}': non-finite value")
                c += 1
    return Dataset(X, time, event, tuple(names))


def _number(cell, path, row, col) -> float:
    try:
        return float(cell)
    except ValueError:
        raise SchemaError(f"{path}: row {row}, column '{col}': not a number: {cell!r}") from None


def write_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*dataset.feature_names, "time", "event"])
        for x, t, e in zip(dataset.X, dataset.time, dataset.event):
            w.writerow([*(repr(float(v)) for v in x), repr(float(t)), int(e)])


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def model_to_dict(model, feature_names=()) -> dict:
    data = model.to_dict()
    data["feature_names"] = list(feature_names)
    return data


def model_from_dict(data: dict):
    kind = data.get("kind")
    if kind == "cox":
        return CoxModel.from_dict(data)
    if kind == "rsf":
        return SurvivalForest.from_dict(data)
    raise SchemaError(f"unknown model kind {kind!r}")


def save_model(model, path, feature_names=()) -> None:
    dump_json(model_to_dict(model, feature_names), path)


def load_model(path):
    data = json.loads(Path(path).read_text())
    return model_from_dict(data), tuple(data.get("feature_names", ()))
