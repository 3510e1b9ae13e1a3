"""Delimited and JSON output at fixed precision.

Every float is rendered with 17 significant digits, enough for exact
float64 round-trips, and the JSON emitter sorts keys, so identical runs
produce byte-identical artifacts.
"""

from __future__ import annotations

import json as _json
import math

import numpy as np


def fmt(x) -> str:
    return format(float(x), ".17g")


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            cells.append(cell if isinstance(cell, str) else fmt(cell))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def parse_csv(text: str):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty CSV input")
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:]]
    return header, rows


# ---------------------------------------------------------------------------
# concrete schemas


def control_csv(u) -> str:
    header = ["t"] + [f"u{i + 1}" for i in range(u.m)]
    dt = u.T / u.K
    rows = [[k * dt] + list(u.values[k]) for k in range(u.K)]
    return csv_text(header, rows)


def read_control_csv(text: str):
    """Returns (values, dt); dt is the grid spacing implied by the rows."""
    header, rows = parse_csv(text)
    if header[0] != "t" or len(header) < 2:
        raise ValueError("control CSV must have header t,u1,..,um")
    if not rows:
        raise ValueError("control CSV has no rows")
    values = np.array([[float(c) for c in row[1:]] for row in rows])
    times = np.array([float(row[0]) for row in rows])
    if values.shape[1] != len(header) - 1:
        raise ValueError("control CSV row width does not match the header")
    if len(times) > 1:
        dts = np.diff(times)
        dt = float(dts[0])
        if dt <= 0 or not np.allclose(dts, dt, rtol=1e-12, atol=0.0):
            raise ValueError("control CSV grid is not uniform")
    else:
        dt = float("nan")
    return values, dt


def trajectory_csv(traj) -> str:
    n = traj.states.shape[1]
    header = ["t"] + [f"x{i + 1}" for i in range(n)]
    rows = [[traj.times[k]] + list(traj.states[k]) for k in range(len(traj.times))]
    return csv_text(header, rows)


def arc_csv(arc) -> str:
    n = arc.states.shape[1]
    m = arc.controls.shape[1]
    header = (
        ["t"]
        + [f"x{i + 1}" for i in range(n)]
        + [f"p{i + 1}" for i in range(n)]
        + [f"u{i + 1}" for i in range(m)]
    )
    rows = [
        [arc.times[k]] + list(arc.states[k]) + list(arc.covectors[k]) + list(arc.controls[k])
        for k in range(len(arc.times))
    ]
    return csv_text(header, rows)


def endpoint_csv(x) -> str:
    header = [f"x{i + 1}" for i in range(len(x))]
    return csv_text(header, [list(x)])


def jacobian_csv(J, K: int, m: int) -> str:
    n = J.shape[0]
    header = ["k", "i"] + [f"dx{r + 1}" for r in range(n)]
    rows = []
    for k in range(K):
        for i in range(m):
            rows.append([str(k), str(i)] + list(J[:, k * m + i]))
    return csv_text(header, rows)


def shoot_csv(result, n: int) -> str:
    header = [f"p{i + 1}" for i in range(n)] + ["cost", "defect", "pnorm", "p0proj"]
    rows = []
    for sol in result.solutions:
        rows.append(
            list(sol.p0)
            + [sol.cost, sol.defect, float(np.linalg.norm(sol.p0)), sol.p0proj]
        )
    return csv_text(header, rows)


def cloud_csv(cloud) -> str:
    pts = cloud.all_points
    if pts:
        n = len(pts[0].endpoint)
    else:
        n = 0
    header = (
        [f"x{i + 1}" for i in range(n)]
        + [f"p{i + 1}" for i in range(n)]
        + ["cost", "pnorm", "p0proj", "flag"]
    )
    rows = []
    for p in pts:
        rows.append(
            list(p.endpoint) + list(p.p0) + [p.cost, p.pnorm, p.p0proj, p.flag]
        )
    return csv_text(header, rows)


def scan_csv(scan) -> str:
    n = len(scan.A)
    header = ["delta"] + [f"target{i + 1}" for i in range(n)] + ["pnorm", "p0proj"]
    rows = []
    for row in scan.rows:
        rows.append([row.delta] + list(row.target) + [row.pnorm, row.p0proj])
    return csv_text(header, rows)


# ---------------------------------------------------------------------------
# JSON


def _jsonable(obj):
    if obj is None or isinstance(obj, (bool, str, int)):
        return obj
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    raise TypeError(f"cannot serialize {type(obj).__name__} to JSON")


def _emit_json(obj) -> str:
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, str):
        return _json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            return "null"
        return fmt(obj)
    if isinstance(obj, list):
        return "[" + ",".join(_emit_json(v) for v in obj) + "]"
    if isinstance(obj, dict):
        parts = [f"{_json.dumps(k)}:{_emit_json(obj[k])}" for k in sorted(obj)]
        return "{" + ",".join(parts) + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def to_json(obj) -> str:
    return _emit_json(_jsonable(obj)) + "\n"


def json_document(command: str, payload: dict) -> str:
    doc = {"schema_version": "1", "command": command}
    doc.update(payload)
    return to_json(doc)
