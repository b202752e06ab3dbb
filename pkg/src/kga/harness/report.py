"""Report emission: canonical JSON, flat CSV rows and plot-data series."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import ConfigError
from .runner import ReportBundle

FORMATS = ("json", "csv", "plot")


def write_atomic(path: Path, text: str) -> None:
    """Write to a temp file in the same directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def csv_rows(bundle: ReportBundle) -> list[dict]:
    """One flat row per (seed, method, split); metric columns are the union over rows."""
    return [{"seed": r["seed"], "method": r["method"], "split": r["split"], **r["values"]} for r in bundle.rows]


def to_csv(bundle: ReportBundle) -> str:
    rows = csv_rows(bundle)
    metrics = sorted({k for r in rows for k in r} - {"seed", "method", "split"})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["seed", "method", "split"] + metrics, restval="", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


# ---------------------------------------------------------------- plot-data series


def time_bars(bundle: ReportBundle) -> dict:
    """Mean wall time per method (seconds), with KGA's helper and loop sub-timings."""
    keys = sorted({k for t in bundle.timings.values() for k in t})
    out = {"x": [], "y": [], "std": []}
    for k in keys:
        vals = [t[k] for t in bundle.timings.values() if k in t]
        out["x"].append(k)
        out["y"].append(float(np.mean(vals)))
        out["std"].append(float(np.std(vals)))
    return out


def metric_table(bundle: ReportBundle, metric: str) -> dict:
    """Seed-mean of ``metric`` per method (rows) and split (columns)."""
    methods = list(dict.fromkeys(r["method"] for r in bundle.rows))
    splits = list(dict.fromkeys(r["split"] for r in bundle.rows))
    cells = []
    for m in methods:
        row = []
        for s in splits:
            v = list(bundle.values(m, s, metric).values())
            row.append(float(np.mean(v)) if v else None)
        cells.append(row)
    return {"metric": metric, "rows": methods, "columns": splits, "values": cells}


def gap_trajectories(bundle: ReportBundle) -> dict:
    """Per seed: validation step (x, strictly increasing) against G* (y), plus the stopping threshold."""
    out = {}
    for seed, rep in sorted(bundle.kga.items(), key=lambda kv: int(kv[0])):
        traj = sorted(rep["trajectory"])
        out[seed] = {"x": [s for s, _ in traj], "y": [g for _, g in traj], "threshold": rep["threshold"],
                     "initial_gap": rep["initial_gap"], "termination": rep["termination"]}
    return out


def sweep_curve(bundles: Sequence[ReportBundle], xs: Sequence, metric: str, split: str = "forget",
                methods: Iterable[str] | None = None) -> dict:
    """Seed-mean ``metric`` on ``split`` per method, one point per bundle of a sweep."""
    if len(bundles) != len(xs):
        raise ValueError("one x value per bundle")
    names = list(methods) if methods is not None else list(dict.fromkeys(
        r["method"] for b in bundles for r in b.rows))
    series = {}
    for m in names:
        ys = []
        for b in bundles:
            v = list(b.values(m, split, metric).values())
            ys.append(float(np.mean(v)) if v else None)
        series[m] = ys
    return {"x": list(xs), "metric": metric, "split": split, "series": series}


def plot_data(bundle: ReportBundle) -> dict[str, dict]:
    out = {"time_bars": time_bars(bundle), "gap_trajectory": gap_trajectories(bundle)}
    metrics = sorted({k for r in bundle.rows for k in r["values"]})
    for metric in metrics:
        out[f"table_{metric}"] = metric_table(bundle, metric)
    return out


# ---------------------------------------------------------------- emission


def _check_dir(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK | os.X_OK):
        raise ConfigError(f"output directory is not writable: {out}")


def emit_report(bundle: ReportBundle, out: str | Path, formats: Iterable[str] = FORMATS) -> list[Path]:
    """Write the requested formats under ``out`` and return the written paths.

    The JSON report is canonical (sorted keys, no wall-clock values), so
    identical bundles give identical bytes; timings go to ``timings.json``.
    """
    formats = list(formats)
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise ConfigError(f"unknown report format(s) {bad}")
    out = Path(out)
    _check_dir(out)
    written = []
    if "json" in formats:
        written.append(out / "report.json")
        write_atomic(written[-1], bundle.dumps())
        written.append(out / "timings.json")
        write_atomic(written[-1], _dumps(bundle.timings))
    if "csv" in formats:
        written.append(out / "metrics.csv")
        write_atomic(written[-1], to_csv(bundle))
    if "plot" in formats:
        for name, series in plot_data(bundle).items():
            written.append(out / "plots" / f"{name}.json")
            write_atomic(written[-1], _dumps(series))
    return written


def emit_sweep(bundles: Sequence[ReportBundle], xs: Sequence, out: str | Path, metrics: Iterable[str],
               split: str = "forget") -> list[Path]:
    """Write one sweep-curve file per metric plus each bundle's own report under ``out/<x>``."""
    out = Path(out)
    _check_dir(out)
    written = []
    for b, x in zip(bundles, xs):
        written += emit_report(b, out / str(x))
    for metric in metrics:
        written.append(out / f"sweep_{metric}.json")
        write_atomic(written[-1], _dumps(sweep_curve(bundles, xs, metric, split)))
    return written


def load_bundle(path: str | Path) -> ReportBundle:
    """Read ``report.json`` (and ``timings.json`` beside it, if present)."""
    p = Path(path)
    if p.is_dir():
        p = p / "report.json"
    if not p.is_file():
        raise ConfigError(f"no report at {p}")
    bundle = ReportBundle.from_json(json.loads(p.read_text()))
    t = p.parent / "timings.json"
    if t.is_file():
        bundle.timings = json.loads(t.read_text())
    return bundle
