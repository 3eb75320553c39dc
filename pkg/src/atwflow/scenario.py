"""Scenario documents: JSON in, validated simulation setup out."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .anisotropy import Anisotropy, AnisotropyError, from_spec
from .expressions import ExpressionError
from .geometry import SetState, build_shape_level
from .grid import Grid, GridError
from .relax import Forcing, SolverParams, SolverError


class ScenarioError(ValueError):
    """Validation failure; the message carries the path to the bad field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass
class Scenario:
    grid: Grid
    phi: Anisotropy
    psi: Anisotropy
    forcing: Forcing
    initial_spec: dict
    h: float
    horizon: float
    record_stride: int
    params: SolverParams
    ladder: dict | None
    doc: dict = field(repr=False, default_factory=dict)

    def initial_state(self) -> SetState:
        if self.initial_spec.get("type") == "indicator_file":
            from .io import load_field

            data, grid, _ = load_field(self.initial_spec["path"])
            if grid.shape != self.grid.shape:
                raise ScenarioError("initial_set.path", "grid shape mismatch")
            return SetState.from_indicator(self.grid, data > 0.5)
        level = build_shape_level(self.grid, self.initial_spec)
        return SetState.from_level(self.grid, level)

    def initial_function(self) -> np.ndarray:
        """Level-set initial datum: negated level of the initial set."""
        if "function" in self.doc.get("ladder", {}):
            from .expressions import parse

            X, Y = self.grid.centers()
            return np.asarray(parse(self.doc["ladder"]["function"])(X, Y), dtype=float)
        return -build_shape_level(self.grid, self.initial_spec)


def _need(doc, key, path):
    if key not in doc:
        raise ScenarioError(f"{path}.{key}" if path else key, "missing required field")
    return doc[key]


def _positive(value, path):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ScenarioError(path, f"expected a number, got {value!r}")
    if v <= 0:
        raise ScenarioError(path, f"must be positive, got {v}")
    return v


def from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("", "scenario must be a JSON object")
    box = _need(doc, "box", "")
    origin = box.get("origin", [0.0, 0.0])
    extents = _need(box, "extents", "box")
    shape = _need(doc, "grid", "")
    try:
        grid = Grid.from_box(origin, extents, (int(shape[1]), int(shape[0])))
    except (GridError, TypeError, IndexError) as exc:
        raise ScenarioError("grid", str(exc))
    if min(grid.shape) < 16:
        raise ScenarioError("grid", f"needs at least 16 cells per axis, got {grid.shape}")

    def model(key):
        try:
            return from_spec(doc.get(key, "euclidean"))
        except (AnisotropyError, ExpressionError) as exc:
            raise ScenarioError(key, str(exc))

    phi = model("phi")
    psi = model("psi")
    try:
        forcing = Forcing(doc.get("forcing", 0.0))
    except ExpressionError as exc:
        raise ScenarioError("forcing", str(exc))

    initial = _need(doc, "initial_set", "")
    if not isinstance(initial, dict) or "type" not in initial:
        raise ScenarioError("initial_set", "must be an object with a 'type'")
    if initial["type"] not in (
        "disk", "ellipse", "halfplane", "union", "intersection",
        "difference", "complement", "indicator_file",
    ):
        raise ScenarioError("initial_set.type", f"unknown shape {initial['type']!r}")

    h = _positive(_need(doc, "h", ""), "h")
    horizon = _positive(_need(doc, "horizon", ""), "horizon")
    stride = int(doc.get("record_stride", 1))
    if stride < 1:
        raise ScenarioError("record_stride", "must be >= 1")
    try:
        params = SolverParams.from_dict(doc.get("tolerances"))
    except (SolverError, ValueError) as exc:
        raise ScenarioError("tolerances", str(exc))

    ladder = doc.get("ladder")
    if ladder is not None:
        if int(ladder.get("levels", 0)) < 1:
            raise ScenarioError("ladder.levels", "must be >= 1")
        if ladder.get("variant", "minus") not in ("plus", "minus", "both"):
            raise ScenarioError("ladder.variant", "must be plus, minus or both")

    return Scenario(
        grid=grid,
        phi=phi,
        psi=psi,
        forcing=forcing,
        initial_spec=initial,
        h=h,
        horizon=horizon,
        record_stride=stride,
        params=params,
        ladder=ladder,
        doc=doc,
    )


def from_file(path: str) -> Scenario:
    import json

    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ScenarioError("", f"invalid JSON: {exc}")
    return from_dict(doc)
