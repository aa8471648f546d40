"""Accuracy metrics and deterministic result rendering."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .problem import ParameterVector
from .simulator import ExtrinsicSet, GroundTruthLog
from .so3 import Array, geodesic_angle

FORMAT_VERSION = 1

RAD_TO_DEG = 180.0 / np.pi


def _pairs(truths, estimates) -> list:
    truths = list(truths)
    estimates = list(estimates)
    if len(truths) != len(estimates):
        raise ValueError("truth/estimate count mismatch")
    if not truths:
        raise ValueError("no trials to pool")
    return list(zip(truths, estimates))


def rmse_positions_mm(truths, estimates) -> float:
    """Root mean square lever-arm error, pooled over trials and IMUs, in mm."""
    sq = []
    for truth, est in _pairs(truths, estimates):
        d = est.p - truth.p
        sq.append(np.sum(d * d, axis=1))
    return float(np.sqrt(np.mean(np.concatenate(sq)))) * 1000.0


def rmse_orientations_deg(truths, estimates) -> float:
    """Root mean square mounting-rotation geodesic angle, in degrees."""
    ang = [geodesic_angle(truth.q, est.q) for truth, est in _pairs(truths, estimates)]
    return float(np.sqrt(np.mean(np.concatenate(ang) ** 2))) * RAD_TO_DEG


def rmse_misalignments_deg(truths, estimates) -> float:
    """Root mean square gyroscope-misalignment geodesic angle, in degrees."""
    ang = [geodesic_angle(truth.mis, est.mis) for truth, est in _pairs(truths, estimates)]
    return float(np.sqrt(np.mean(np.concatenate(ang) ** 2))) * RAD_TO_DEG


def extrinsic_rmse(truths, estimates) -> dict:
    return {
        "position_mm": rmse_positions_mm(truths, estimates),
        "orientation_deg": rmse_orientations_deg(truths, estimates),
        "misalignment_deg": rmse_misalignments_deg(truths, estimates),
    }


def aux_rmse_from_arrays(alpha: Array, ba: Array, bg: Array, truth: GroundTruthLog) -> dict:
    return {
        "alpha": float(np.sqrt(np.mean((np.asarray(alpha, float) - truth.alpha) ** 2))),
        "accel_bias": float(np.sqrt(np.mean((np.asarray(ba, float) - truth.accel_bias) ** 2))),
        "gyro_bias": float(np.sqrt(np.mean((np.asarray(bg, float) - truth.gyro_bias) ** 2))),
    }


def aux_rmse(pv: ParameterVector, truth: GroundTruthLog) -> dict:
    """Component-pooled RMSE of the auxiliary states against the simulation log.

    Angular acceleration in rad/s^2, accelerometer bias in m/s^2, gyroscope
    bias in rad/s.
    """
    return aux_rmse_from_arrays(pv.alpha, pv.ba, pv.bg, truth)


@dataclass
class TrialResult:
    """One simulated calibration run, reduced to what the studies report."""

    seed: int
    truth: ExtrinsicSet
    estimate: ExtrinsicSet
    status: str
    iterations: int
    final_cost: float
    wall_time: float
    aux_initial: dict = field(default_factory=dict)
    aux_final: dict = field(default_factory=dict)
    deficient: bool | None = None

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "truth": {
                "p": self.truth.p.tolist(),
                "q": self.truth.q.tolist(),
                "mis": self.truth.mis.tolist(),
            },
            "estimate": {
                "p": self.estimate.p.tolist(),
                "q": self.estimate.q.tolist(),
                "mis": self.estimate.mis.tolist(),
            },
            "status": self.status,
            "iterations": self.iterations,
            "final_cost": self.final_cost,
            "wall_time": self.wall_time,
            "aux_initial": dict(self.aux_initial),
            "aux_final": dict(self.aux_final),
            "deficient": self.deficient,
        }


def pool_trials(results) -> dict:
    """Extrinsic RMSE plus convergence bookkeeping over a list of trials."""
    results = list(results)
    out = extrinsic_rmse([r.truth for r in results], [r.estimate for r in results])
    out["trials"] = len(results)
    out["converged"] = sum(1 for r in results if r.converged)
    out["mean_iterations"] = float(np.mean([r.iterations for r in results]))
    return out


def format_value(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


@dataclass
class Table:
    title: str
    columns: list
    rows: list
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "title": self.title,
            "columns": list(self.columns),
            "rows": [list(row) for row in self.rows],
            "notes": list(self.notes),
        }


def render_table(table: Table, fmt: str = "text") -> str:
    """Render deterministically as text, json, or csv."""
    if fmt == "json":
        return json.dumps(table.to_dict(), indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(table.columns)
        for row in table.rows:
            writer.writerow([format_value(v) for v in row])
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    cells = [[str(c) for c in table.columns]]
    cells += [[format_value(v) for v in row] for row in table.rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(table.columns))]
    lines = [table.title, ""]
    lines.append("  ".join(c.ljust(w) for c, w in zip(cells[0], widths)).rstrip())
    lines.append("  ".join("-" * w for w in widths))
    for row in cells[1:]:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    for note in table.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"


def gnuplot_trace(t: Array, series: dict) -> str:
    """Whitespace-separated columns with a header comment, for gnuplot."""
    t = np.asarray(t, dtype=float)
    names = list(series)
    cols = [np.asarray(series[name], dtype=float) for name in names]
    for name, col in zip(names, cols):
        if col.shape != t.shape:
            raise ValueError(f"series {name!r} does not match the time vector")
    lines = ["# t " + " ".join(names)]
    for i in range(t.size):
        vals = " ".join(f"{c[i]:.10g}" for c in cols)
        lines.append(f"{t[i]:.10g} {vals}")
    return "\n".join(lines) + "\n"
