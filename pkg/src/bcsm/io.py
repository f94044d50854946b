"""File formats: record CSVs, trace CSVs and JSON documents."""

from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import ValidationError
from .splines import SplineSpec
from .survival import PosteriorDraws

__all__ = ["REQUIRED_COLUMNS", "read_data_csv", "write_data_csv", "write_traces", "read_traces",
           "write_json", "read_json", "to_jsonable"]

REQUIRED_COLUMNS = ("group_id", "subject_id", "event_type", "left", "right")
RUN_FILE = "run.json"


def _parse_float(values, column, allow_inf_blank=False):
    out = np.empty(len(values))
    for r, raw in enumerate(values):
        txt = "" if raw is None or (isinstance(raw, float) and math.isnan(raw)) else str(raw).strip()
        if txt == "" and allow_inf_blank:
            out[r] = np.inf
            continue
        try:
            out[r] = float(txt)
        except ValueError:
            raise ValidationError(f"cannot parse {txt!r} as a number", row=r, column=column) from None
        if math.isnan(out[r]):
            raise ValidationError("missing value", row=r, column=column)
    return out


def read_data_csv(path):
    """Read records in the CSV schema ``group_id,subject_id,event_type,left,right,x1..xp``.

    ``right`` may be empty or ``inf`` for right censoring; an optional
    ``excluded`` column (0/1 or true/false) flags records to treat as
    missing.  Errors report the zero-based data row and the column.

    Raises
    ------
    ValidationError
        Missing columns, unparsable cells or ``right <= left``.
    OSError
        Unreadable file.
    """
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    missing = [c for c in REQUIRED_COLUMNS if c not in raw.columns]
    if missing:
        raise ValidationError(f"missing required columns {missing}", column=missing[0])
    df = pd.DataFrame({"group_id": raw["group_id"], "subject_id": raw["subject_id"]})
    ev = _parse_float(raw["event_type"], "event_type")
    bad = np.flatnonzero(ev != np.round(ev))
    if bad.size:
        raise ValidationError("event_type must be an integer", row=int(bad[0]), column="event_type")
    df["event_type"] = ev.astype(np.int64)
    df["left"] = _parse_float(raw["left"], "left")
    df["right"] = _parse_float(raw["right"], "right", allow_inf_blank=True)
    bad = np.flatnonzero(df["left"].to_numpy() < 0)
    if bad.size:
        raise ValidationError("left must be >= 0", row=int(bad[0]), column="left")
    bad = np.flatnonzero(~(df["right"].to_numpy() > df["left"].to_numpy()))
    if bad.size:
        raise ValidationError("interval has right <= left", row=int(bad[0]), column="right")
    feats = [c for c in raw.columns if c not in REQUIRED_COLUMNS and c != "excluded"]
    for c in feats:
        df[c] = _parse_float(raw[c], c)
    if "excluded" in raw.columns:
        flags = raw["excluded"].str.strip().str.lower()
        ok = flags.isin(["0", "1", "true", "false", ""])
        if not ok.all():
            r = int(np.flatnonzero(~ok.to_numpy())[0])
            raise ValidationError("excluded must be 0/1 or true/false", row=r, column="excluded")
        df["excluded"] = flags.isin(["1", "true"]).to_numpy()
    return df


def write_data_csv(df, path):
    """Write records; infinite right endpoints are written as ``inf``."""
    out = df.copy()
    out["right"] = [("inf" if np.isinf(v) else repr(float(v))) for v in out["right"]]
    out.to_csv(path, index=False)


def to_jsonable(obj):
    """Recursively convert numpy scalars, arrays and tuples to JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(to_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc


def write_traces(draws, out_dir, run_info=None):
    """Write one CSV per chain (``chain_1.csv``, ...) plus ``run.json``.

    ``run.json`` stores the spline specification and the metadata needed to
    rebuild :class:`~bcsm.survival.PosteriorDraws` with :func:`read_traces`.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for c, arr in enumerate(draws.chains, start=1):
        p = out / f"chain_{c}.csv"
        pd.DataFrame(arr, columns=draws.names).to_csv(p, index=False)
        paths.append(p)
    info = dict(run_info or {})
    info["spline"] = draws.spec.to_dict() if draws.spec is not None else None
    info["meta"] = draws.meta
    info["n_chains"] = len(draws.chains)
    write_json(info, out / RUN_FILE)
    return paths


def read_traces(chain_dir):
    """Load the chains written by :func:`write_traces`.

    Raises
    ------
    FileNotFoundError
        No ``chain_*.csv`` in the directory.
    """
    d = Path(chain_dir)
    files = sorted(d.glob("chain_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise FileNotFoundError(f"no chain_*.csv traces in {os.fspath(d)}")
    frames = [pd.read_csv(f, float_precision="round_trip") for f in files]
    names = list(frames[0].columns)
    for f, fr in zip(files, frames):
        if list(fr.columns) != names:
            raise ValidationError(f"{f.name} has different columns from {files[0].name}")
    spec, meta = None, {}
    if (d / RUN_FILE).exists():
        info = read_json(d / RUN_FILE)
        if info.get("spline"):
            spec = SplineSpec(tuple(info["spline"]["knots"]), info["spline"]["degree"])
        meta = info.get("meta", {})
    return PosteriorDraws(names, [fr.to_numpy(dtype=float) for fr in frames], spec, meta)
