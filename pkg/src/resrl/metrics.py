"""Evaluation records, area under the learning curve and cross-seed summaries."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_HEADER = ("step", "mean_return", "stderr", "status")
SUMMARY_SCHEMA_VERSION = 1


@dataclass
class EvalRecord:
    step: int
    returns: list
    wall_clock: float = 0.0
    status: str = "OK"
    mean_return: float = field(init=False)

    def __post_init__(self):
        self.returns = [float(r) for r in self.returns]
        self.mean_return = float(np.mean(self.returns)) if self.returns else float("nan")

    @property
    def stderr(self) -> float:
        n = len(self.returns)
        if n < 2:
            return 0.0
        return float(np.std(self.returns, ddof=1) / math.sqrt(n))


def auc(records) -> float:
    """Trapezoidal area under mean return against step.

    Accepts :class:`EvalRecord` objects or ``(step, value)`` pairs; rows with
    a non-finite mean (divergence markers) are skipped.
    """
    pts = [(r.step, r.mean_return) if isinstance(r, EvalRecord) else (r[0], r[1]) for r in records]
    pts = [(float(s), float(v)) for s, v in pts if math.isfinite(v)]
    if len(pts) < 2:
        raise ValueError("AUC needs at least two evaluation records")
    steps = np.array([p[0] for p in pts])
    values = np.array([p[1] for p in pts])
    if np.any(np.diff(steps) <= 0):
        raise ValueError("evaluation steps must be strictly increasing")
    return float(np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(steps)))


def auc_improvement(candidate_auc: float, baseline_auc: float) -> float:
    """Relative AUC gain ``(candidate - baseline) / baseline``.

    The ratio is only sign-meaningful for positive baselines; with negative
    returns a better candidate yields a negative value.
    """
    if baseline_auc == 0:
        raise ZeroDivisionError("baseline AUC is zero; relative improvement is undefined")
    return (candidate_auc - baseline_auc) / baseline_auc


def _fmt(x: float) -> str:
    return repr(float(x))


def write_eval_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(CSV_HEADER)
        for r in records:
            out.writerow([r.step, _fmt(r.mean_return), _fmt(r.stderr), r.status])


def read_eval_csv(path) -> list:
    """Read back ``(step, mean_return, stderr, status)`` rows."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    return [(int(s), float(m), float(e), st) for s, m, e, st in rows[1:]]


def summarize(seed_curves: dict, statuses: dict | None = None) -> dict:
    """Cross-seed mean and standard error of evaluation curves.

    ``seed_curves`` maps seed to a list of ``(step, mean_return)`` pairs.
    Only steps present (with finite values) for every seed enter the mean
    curve.  Per-seed AUCs use each seed's own curve.
    """
    if not seed_curves:
        raise ValueError("need at least one seed result")
    seeds = sorted(seed_curves)
    per_seed = {s: {int(st): float(v) for st, v in seed_curves[s] if math.isfinite(v)} for s in seeds}
    common = sorted(set.intersection(*(set(c) for c in per_seed.values())))
    values = np.array([[per_seed[s][st] for st in common] for s in seeds]).reshape(len(seeds), len(common))
    mean = values.mean(axis=0)
    if len(seeds) > 1:
        stderr = values.std(axis=0, ddof=1) / math.sqrt(len(seeds))
    else:
        stderr = np.zeros(len(common))
    aucs = {}
    for s in seeds:
        curve = sorted(per_seed[s].items())
        aucs[str(s)] = auc(curve) if len(curve) >= 2 else None
    finite = [a for a in aucs.values() if a is not None]
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "seeds": seeds,
        "steps": common,
        "mean_return": mean.tolist(),
        "stderr": stderr.tolist(),
        "auc": {
            "per_seed": aucs,
            "mean": float(np.mean(finite)) if finite else None,
            "of_mean_curve": auc(list(zip(common, mean))) if len(common) >= 2 else None,
        },
        "status": {str(s): (statuses or {}).get(s, "OK") for s in seeds},
    }
    return summary


def add_improvement(summary: dict, baseline: dict) -> dict:
    """Attach AUC improvements of ``summary`` over ``baseline``."""
    out = {"of_mean": auc_improvement(summary["auc"]["mean"], baseline["auc"]["mean"])}
    per_seed = {}
    for seed, value in summary["auc"]["per_seed"].items():
        base = baseline["auc"]["per_seed"].get(seed)
        if value is not None and base is not None:
            per_seed[seed] = auc_improvement(value, base)
    out["per_seed"] = per_seed
    summary["auc_improvement"] = out
    return summary


def summarize_dir(directory, baseline_dir=None) -> dict:
    """Rebuild a summary from per-seed CSV files in ``directory``."""
    directory = Path(directory)
    curves, statuses = {}, {}
    for path in sorted(directory.glob("seed_*.csv")):
        seed = int(path.stem.split("_", 1)[1])
        rows = read_eval_csv(path)
        curves[seed] = [(s, m) for s, m, _, _ in rows]
        statuses[seed] = rows[-1][3] if rows else "EMPTY"
    if not curves:
        raise FileNotFoundError(f"no seed_*.csv files in {directory}")
    summary = summarize(curves, statuses)
    if baseline_dir is not None:
        add_improvement(summary, summarize_dir(baseline_dir))
    return summary
