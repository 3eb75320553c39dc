"""File formats: raw float64 fields with JSON sidecars, CSV series, manifests.

Everything is byte-reproducible: fields are little-endian row-major float64,
CSV floats are written with repr-roundtrip formatting, manifests hash the
canonicalized scenario document.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time

import numpy as np

from .geometry import Polyline, SetState
from .grid import Grid


def dump_field(path_base: str, values: np.ndarray, grid: Grid, kind: str, **meta):
    """Write values as <base>.f64 plus a JSON sidecar <base>.json."""
    arr = np.ascontiguousarray(values, dtype="<f8")
    with open(path_base + ".f64", "wb") as f:
        f.write(arr.tobytes())
    sidecar = {
        "shape": list(values.shape),
        "dtype": "<f8",
        "order": "row-major",
        "spacing": grid.spacing,
        "origin": list(grid.origin),
        "kind": kind,
    }
    sidecar.update(meta)
    with open(path_base + ".json", "w") as f:
        json.dump(sidecar, f, indent=1, sort_keys=True)
        f.write("\n")


def load_field(path_base: str):
    with open(path_base + ".json") as f:
        meta = json.load(f)
    shape = tuple(meta["shape"])
    data = np.fromfile(path_base + ".f64", dtype="<f8").reshape(shape)
    grid = Grid(shape=shape, spacing=meta["spacing"], origin=tuple(meta["origin"]))
    return data, grid, meta


def write_polylines(path: str, polys: list[Polyline]):
    """x,y rows per vertex; closed loops repeat their first vertex; blank
    line between loops."""
    with open(path, "w") as f:
        f.write("x,y\n")
        for k, p in enumerate(polys):
            if k:
                f.write("\n")
            pts = p.points
            if p.closed and len(pts) > 1:
                pts = np.concatenate([pts, pts[:1]])
            for x, y in pts:
                f.write(f"{x!r},{y!r}\n")


def write_csv(path: str, header: list[str], rows: list[list]):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(v) if isinstance(v, float) else v for v in row])


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def scenario_hash(doc) -> str:
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()


def write_manifest(path: str, scenario_doc, wall_clock: float, extra=None):
    from . import __version__

    manifest = {
        "scenario_sha256": scenario_hash(scenario_doc),
        "version": __version__,
        "wall_clock_seconds": wall_clock,
    }
    if extra:
        manifest.update(extra)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")


def save_trace(out_dir: str, scenario_doc, trace, wall_clock: float):
    """Frames (indicator + interface polylines), diagnostics CSV, manifest."""
    from .flow import StepRecord

    os.makedirs(out_dir, exist_ok=True)
    frames = os.path.join(out_dir, "frames")
    os.makedirs(frames, exist_ok=True)
    for t, state in zip(trace.times, trace.states):
        step = int(round(t / trace.h)) if trace.h else 0
        base = os.path.join(frames, f"indicator_{step:06d}")
        dump_field(base, state.indicator.astype(float), state.grid,
                   kind="indicator", t=t)
        write_polylines(
            os.path.join(frames, f"interface_{step:06d}.csv"), state.interfaces()
        )
    write_csv(
        os.path.join(out_dir, "diagnostics.csv"),
        list(StepRecord.FIELDS),
        [r.row() for r in trace.records],
    )
    with open(os.path.join(out_dir, "scenario.json"), "w") as f:
        json.dump(scenario_doc, f, indent=1, sort_keys=True)
        f.write("\n")
    extra = {
        "steps": len(trace.records),
        "extinction_time": trace.extinction_time,
        "fill_time": trace.fill_time,
        "aborted": trace.aborted,
    }
    write_manifest(os.path.join(out_dir, "manifest.json"), scenario_doc,
                   wall_clock, extra)


def load_trace_states(out_dir: str):
    """Recorded indicators from a saved trace, ordered by time."""
    frames = os.path.join(out_dir, "frames")
    entries = []
    for name in sorted(os.listdir(frames)):
        if name.startswith("indicator_") and name.endswith(".json"):
            base = os.path.join(frames, name[: -len(".json")])
            data, grid, meta = load_field(base)
            entries.append((meta.get("t", 0.0), SetState.from_indicator(grid, data > 0.5)))
    entries.sort(key=lambda e: e[0])
    return [t for t, _ in entries], [s for _, s in entries]


def read_diagnostics(out_dir: str):
    rows = []
    with open(os.path.join(out_dir, "diagnostics.csv")) as f:
        rd = csv.DictReader(f)
        for row in rd:
            rows.append({k: float(v) for k, v in row.items()})
    return rows
