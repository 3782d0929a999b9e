"""CSV/JSON writers, table-style number formatting and run manifests."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import math
import os

import numpy as np

from . import __version__
from .estimators import normal_pvalue, stars

CELL_LABELS = ("Y_C0", "Y_C1", "Y_T0", "Y_T1")


def fixed(x, decimals):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return ""
    return f"{x:.{decimals}f}"


def sig3(x):
    """Three significant digits, integers for magnitudes of 100 and above."""
    if x is None or not math.isfinite(x):
        return ""
    if x == 0:
        return "0"
    if abs(x) >= 100:
        return f"{x:.0f}"
    return f"{x:.{max(0, 2 - int(math.floor(math.log10(abs(x)))))}f}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, allow_nan=False) + "\n"


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps(obj))
    return path


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_digest(config: dict, input_files=()) -> str:
    """SHA-256 over the resolved config and the contents of every input file."""
    payload = {"config": _jsonable(config), "inputs": {os.path.basename(p): file_digest(p) for p in input_files}}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _timestamp():
    # SOURCE_DATE_EPOCH pins the clock for byte-reproducible manifests
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    now = (_dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch
           else _dt.datetime.now(_dt.timezone.utc))
    return now.isoformat(timespec="seconds")


def write_manifest(output_path, command, config, seed=None, input_files=()):
    manifest = {
        "command": command,
        "config_digest": config_digest(config, input_files),
        "seed": seed,
        "tool_version": __version__,
        "timestamp": _timestamp(),
        "outputs": [os.path.abspath(output_path)],
        "config": _jsonable(config),
    }
    path = f"{output_path}.manifest.json"
    write_json(path, manifest)
    return path


# --------------------------------------------------------------------------
# table layouts


def dd_fit_table(fits, labels):
    """Rows mirroring the empirical tables: DD row, exp(b4)-1 row, cell means, N."""
    header = [""] + list(labels)
    rows = [
        ["DD estimate"] + [sig3(f.dd_estimate) + stars(f.dd_pvalue) for f in fits],
        [""] + [f"({sig3(f.dd_se)})" for f in fits],
        ["exp(b4)-1"] + [sig3(f.exp_minus_one[0]) + stars(f.exp_minus_one_pvalue) if f.exp_minus_one else ""
                         for f in fits],
        [""] + [f"({sig3(f.exp_minus_one[1])})" if f.exp_minus_one else "" for f in fits],
    ]
    for i, lab in enumerate(CELL_LABELS):
        rows.append([lab] + [sig3(f.cells.as_tuple()[i]) if f.cells else "" for f in fits])
    rows.append(["Observations"] + [str(f.n_obs) for f in fits])
    return header, rows


def simulation_table(results, labels=None):
    """Rows mirroring the simulation tables (means with bootstrap SEs, cell means, growth ratio)."""
    labels = labels or [r.config.name or f"({i + 1})" for i, r in enumerate(results)]
    header = [""] + list(labels)

    def est(key, d):
        return [fixed(r.mean[key], d) + stars(normal_pvalue(r.mean[key], r.bootstrap_se[key])) for r in results]

    def se(key, d):
        return [f"({fixed(r.bootstrap_se[key], d)})" for r in results]

    rows = [
        ["Level DD estimate [alpha4]"] + est("alpha4", 2),
        [""] + se("alpha4", 2),
        ["Log DD estimate [beta4]"] + est("beta4", 3),
        [""] + se("beta4", 3),
        ["exp(beta4)-1"] + est("expb4m1", 3),
        [""] + se("expb4m1", 3),
    ]
    for i, lab in enumerate(CELL_LABELS):
        rows.append([lab] + [fixed(r.config.cell_means[i], 2) for r in results])
    rows.append(["(g_T - g_C)/g_C"] + [fixed(r.target_ratio_minus_one, 3) for r in results])
    rows.append(["Runs"] + [str(r.config.runs) for r in results])
    return header, rows


SWEEP_COLUMNS = ("axis_value", "level_dd_mean", "level_dd_se", "log_dd_mean", "log_dd_se", "expb4m1_mean")


def sweep_table(result):
    rows = [[repr(float(r[c])) for c in SWEEP_COLUMNS] for r in result.rows()]
    return list(SWEEP_COLUMNS), rows


def balance_csv(rows):
    header = ["covariate", "control_pre", "control_post", "p_diff_control", "treat_pre", "treat_post",
              "p_diff_treat", "p_dd"]
    out = []
    for r in rows:
        out.append([r.covariate, sig3(r.control_pre), sig3(r.control_post), f"[{fixed(r.p_diff_control, 3)}]",
                    sig3(r.treat_pre), sig3(r.treat_post), f"[{fixed(r.p_diff_treat, 3)}]",
                    f"[{fixed(r.p_dd, 3)}]"])
    return header, out
