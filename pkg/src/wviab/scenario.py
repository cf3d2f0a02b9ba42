"""Scenario files: a flat keyed text format with dotted keys.

One `key = value` assignment per line, `#` comments, repeated sections
expressed through numbered key prefixes (``generator.0.`` ...).  The format
is deliberately schema-free and diffable; every key is validated and unknown
keys are rejected with the offending key path in the message.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constraints import (AnchorBallTube, ConstraintTube, MomentCapTube,
                          SampledTube)
from .dynamics import Generator, VelocitySet
from .fields import Affine, Constant, SaturatedRadial, TimeField, VectorField
from .measures import DiscreteMeasure, load_csv
from .steps import StepFunction


class ScenarioError(ValueError):
    """Config validation failure; message names the key path."""


_KEY_RE = re.compile(r"^[A-Za-z0-9_.]+$")

_PARAM_TYPES = {
    "mesh_n": int,
    "epsilon": float,
    "samples": int,
    "grid_points": int,
    "probe_tau": float,
    "pieces": int,
    "slack": float,
    "budget": float,
    "xi": float,
    "zeta": float,
    "s0": float,
    "bad_set": "intervals",
}


@dataclass
class Scenario:
    dimension: int
    horizon: float
    seed: int
    measure: DiscreteMeasure
    velocity_set: VelocitySet
    tube: ConstraintTube
    params: dict
    raw: dict[str, str]
    base_dir: Path


def _parse_lines(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ScenarioError(f"line {lineno}: expected 'key = value'")
        key, value = stripped.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not _KEY_RE.match(key):
            raise ScenarioError(f"line {lineno}: bad key {key!r}")
        if key in out:
            raise ScenarioError(f"duplicate key {key}")
        out[key] = value
    return out


def canonical_text(raw: dict[str, str]) -> str:
    return "".join(f"{k} = {raw[k]}\n" for k in sorted(raw))


class _KeyView:
    """Typed access to the raw map with consumption tracking."""

    def __init__(self, raw: dict[str, str]):
        self.raw = raw
        self.used: set[str] = set()

    def has(self, key: str) -> bool:
        return key in self.raw

    def get(self, key: str, default=None, required: bool = False) -> str | None:
        if key not in self.raw:
            if required:
                raise ScenarioError(f"missing required key {key}")
            return default
        self.used.add(key)
        return self.raw[key]

    def floats(self, key: str, default=None, required=False) -> list[float] | None:
        val = self.get(key, required=required)
        if val is None:
            return default
        try:
            return [float(tok) for tok in val.split()]
        except ValueError as exc:
            raise ScenarioError(f"{key}: {exc}") from None

    def number(self, key: str, typ, default=None, required=False):
        val = self.get(key, required=required)
        if val is None:
            return default
        try:
            return typ(val)
        except ValueError:
            raise ScenarioError(f"{key}: cannot parse {val!r} as {typ.__name__}") from None

    def prefixed(self, prefix: str) -> list[str]:
        return [k for k in self.raw if k.startswith(prefix)]

    def unknown(self) -> list[str]:
        return sorted(set(self.raw) - self.used)


def _parse_points(view: _KeyView, key: str, dim: int) -> np.ndarray:
    val = view.get(key, required=True)
    atoms = []
    for tok in val.split("|"):
        coords = [float(c) for c in tok.split()]
        if len(coords) != dim:
            raise ScenarioError(f"{key}: atom {tok!r} has {len(coords)} "
                                f"coordinates, expected {dim}")
        atoms.append(coords)
    return np.array(atoms)


def _parse_measure(view: _KeyView, prefix: str, dim: int,
                   base_dir: Path) -> DiscreteMeasure:
    if view.has(f"{prefix}.file"):
        rel = view.get(f"{prefix}.file")
        path = base_dir / rel
        if not path.exists():
            raise ScenarioError(f"{prefix}.file: no such file {rel!r}")
        mu = load_csv(path)
    else:
        weights = view.floats(f"{prefix}.weights", required=True)
        points = _parse_points(view, f"{prefix}.points", dim)
        try:
            mu = DiscreteMeasure(points, weights)
        except ValueError as exc:
            raise ScenarioError(f"{prefix}.weights: {exc}") from None
    if mu.dim != dim:
        raise ScenarioError(f"{prefix}: dimension {mu.dim} != scenario {dim}")
    return mu


def _parse_step(view: _KeyView, prefix: str, t0: float, t1: float,
                required: bool = True, default=None) -> StepFunction | None:
    if not view.has(f"{prefix}.values"):
        if required:
            raise ScenarioError(f"missing required key {prefix}.values")
        return default
    values = view.floats(f"{prefix}.values", required=True)
    breaks = view.floats(f"{prefix}.breaks", default=[])
    if len(values) != len(breaks) + 1:
        raise ScenarioError(f"{prefix}.values: need one more value than "
                            f"interior breakpoints")
    if any(not t0 < b < t1 for b in breaks):
        raise ScenarioError(f"{prefix}.breaks: breakpoints must lie inside "
                            f"(0, horizon)")
    try:
        return StepFunction(tuple([t0] + breaks + [t1]), tuple(values))
    except ValueError as exc:
        raise ScenarioError(f"{prefix}: {exc}") from None


def _parse_field(view: _KeyView, prefix: str, dim: int) -> VectorField:
    kind = view.get(f"{prefix}.kind", required=True)
    if kind == "constant":
        offset = view.floats(f"{prefix}.offset", required=True)
        if len(offset) != dim:
            raise ScenarioError(f"{prefix}.offset: expected {dim} components")
        return Constant(np.array(offset))
    if kind == "affine":
        matrix = view.floats(f"{prefix}.matrix", required=True)
        if len(matrix) != dim * dim:
            raise ScenarioError(f"{prefix}.matrix: expected {dim * dim} entries "
                                f"(row major)")
        offset = view.floats(f"{prefix}.offset", default=[0.0] * dim)
        if len(offset) != dim:
            raise ScenarioError(f"{prefix}.offset: expected {dim} components")
        return Affine(np.array(matrix).reshape(dim, dim), np.array(offset))
    if kind == "saturated_radial":
        amplitude = view.number(f"{prefix}.amplitude", float, required=True)
        scale = view.number(f"{prefix}.scale", float, required=True)
        if scale <= 0:
            raise ScenarioError(f"{prefix}.scale: must be positive")
        return SaturatedRadial(amplitude, scale, dim)
    raise ScenarioError(f"{prefix}.kind: unknown field kind {kind!r}")


def _parse_time_field(view: _KeyView, prefix: str, dim: int,
                      t0: float, t1: float) -> TimeField:
    piece_keys = view.prefixed(f"{prefix}.piece.")
    if not piece_keys:
        return TimeField.constant(_parse_field(view, f"{prefix}.field", dim), t0, t1)
    plen = len(f"{prefix}.piece.")
    heads = {k[plen:].split(".")[0] for k in piece_keys}
    indices = sorted(int(h) for h in heads if h.isdigit())
    if indices != list(range(len(indices))):
        raise ScenarioError(f"{prefix}.piece: indices must be 0..k contiguous")
    breaks = [t0]
    fields = []
    for i in indices:
        fields.append(_parse_field(view, f"{prefix}.piece.{i}.field", dim))
        if i < len(indices) - 1:
            until = view.number(f"{prefix}.piece.{i}.until", float, required=True)
            if not breaks[-1] < until < t1:
                raise ScenarioError(f"{prefix}.piece.{i}.until: must increase "
                                    f"and stay below the horizon")
            breaks.append(until)
    breaks.append(t1)
    return TimeField(tuple(breaks), tuple(fields))


def _parse_generators(view: _KeyView, dim: int, t0: float, t1: float
                      ) -> list[Generator]:
    indices = sorted({int(k.split(".")[1]) for k in view.prefixed("generator.")
                      if k.split(".")[1].isdigit()})
    if not indices:
        raise ScenarioError("missing required key generator.0.field.kind")
    if indices != list(range(len(indices))):
        raise ScenarioError("generator indices must be 0..k contiguous")
    out = []
    for i in indices:
        base = _parse_time_field(view, f"generator.{i}", dim, t0, t1)
        mix = view.number(f"generator.{i}.mix", float, default=0.0)
        bary_gain = view.number(f"generator.{i}.bary_gain", float, default=0.0)
        moment_gain = view.number(f"generator.{i}.moment_gain", float, default=0.0)
        mdir = view.floats(f"generator.{i}.moment_dir", default=None)
        if mdir is not None and len(mdir) != dim:
            raise ScenarioError(f"generator.{i}.moment_dir: expected {dim} "
                                f"components")
        try:
            out.append(Generator(base, mix=mix, bary_gain=bary_gain,
                                 moment_gain=moment_gain,
                                 moment_dir=tuple(mdir) if mdir else None))
        except ValueError as exc:
            raise ScenarioError(f"generator.{i}: {exc}") from None
    return out


def _load_sampled_nodes(path: Path, dim: int):
    """Node CSV: header t,k,w,x1..xd; rows grouped by (t, k)."""
    text = path.read_text()
    rows = [ln.strip() for ln in text.splitlines() if ln.strip()]
    expected = "t,k,w," + ",".join(f"x{i + 1}" for i in range(dim))
    if not rows or rows[0] != expected:
        raise ScenarioError(f"tube.nodes.file: header must be {expected!r}")
    data: dict[float, dict[int, list[tuple[float, list[float]]]]] = {}
    for ln in rows[1:]:
        cells = ln.split(",")
        if len(cells) != 3 + dim:
            raise ScenarioError(f"tube.nodes.file: row {ln!r} has wrong arity")
        t, k, w = float(cells[0]), int(cells[1]), float(cells[2])
        data.setdefault(t, {}).setdefault(k, []).append(
            (w, [float(c) for c in cells[3:]]))
    times = sorted(data)
    candidates = []
    for t in times:
        cands = []
        for k in sorted(data[t]):
            ws = [w for w, _ in data[t][k]]
            pts = [p for _, p in data[t][k]]
            cands.append(DiscreteMeasure(pts, ws))
        candidates.append(cands)
    return times, candidates


def _parse_tube(view: _KeyView, dim: int, horizon: float,
                measure: DiscreteMeasure, base_dir: Path) -> ConstraintTube:
    kind = view.get("tube.kind", required=True)
    modulus = _parse_step(view, "tube.modulus", 0.0, horizon, required=True)
    try:
        if kind == "anchor_ball":
            radius = _parse_step(view, "tube.radius", 0.0, horizon,
                                 required=False,
                                 default=StepFunction.constant(0.0, 0.0, horizon))
            anchor_field = _parse_time_field(view, "tube.anchor", dim,
                                             0.0, horizon)
            if view.has("tube.anchor.measure.weights") \
                    or view.has("tube.anchor.measure.file"):
                anchor0 = _parse_measure(view, "tube.anchor.measure", dim,
                                         base_dir)
            else:
                anchor0 = measure
            return AnchorBallTube(anchor0, anchor_field, radius, modulus)
        if kind == "moment_cap":
            cap = _parse_step(view, "tube.cap", 0.0, horizon, required=True)
            return MomentCapTube(cap, dim, modulus)
        if kind == "sampled":
            rel = view.get("tube.nodes.file", required=True)
            path = base_dir / rel
            if not path.exists():
                raise ScenarioError(f"tube.nodes.file: no such file {rel!r}")
            times, candidates = _load_sampled_nodes(path, dim)
            return SampledTube(times, candidates, modulus)
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(f"tube: {exc}") from None
    raise ScenarioError(f"tube.kind: unknown tube kind {kind!r}")


def _parse_intervals(text: str, key: str, horizon: float):
    out = []
    for tok in text.split():
        if ":" not in tok:
            raise ScenarioError(f"{key}: expected lo:hi pairs")
        lo_s, hi_s = tok.split(":", 1)
        lo, hi = float(lo_s), float(hi_s)
        if not 0.0 <= lo < hi <= horizon:
            raise ScenarioError(f"{key}: interval {tok} outside [0, horizon]")
        out.append((lo, hi))
    return out


def _parse_params(view: _KeyView, horizon: float) -> dict:
    params = {}
    for key in view.prefixed("params."):
        name = key[len("params."):]
        if name not in _PARAM_TYPES:
            raise ScenarioError(f"unknown key params.{name}")
        typ = _PARAM_TYPES[name]
        if typ == "intervals":
            params[name] = _parse_intervals(view.get(key), key, horizon)
        else:
            params[name] = view.number(key, typ, required=True)
    for name, bound in (("mesh_n", 1), ("samples", 1), ("grid_points", 2),
                        ("pieces", 1)):
        if name in params and params[name] < bound:
            raise ScenarioError(f"params.{name}: must be >= {bound}")
    for name in ("epsilon", "slack", "budget"):
        if name in params and params[name] <= 0:
            raise ScenarioError(f"params.{name}: must be positive")
    if "s0" in params and abs(params["s0"]) > 1:
        raise ScenarioError("params.s0: must lie in [-1, 1]")
    return params


def parse_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}") from None
    return parse_scenario_text(text, base_dir=path.parent)


def parse_scenario_text(text: str, base_dir=Path(".")) -> Scenario:
    raw = _parse_lines(text)
    view = _KeyView(raw)
    base_dir = Path(base_dir)

    dimension = view.number("dimension", int, required=True)
    if dimension < 1:
        raise ScenarioError("dimension: must be >= 1")
    horizon = view.number("horizon", float, required=True)
    if horizon <= 0:
        raise ScenarioError("horizon: must be positive")
    seed = view.number("seed", int, default=0)

    measure = _parse_measure(view, "measure", dimension, base_dir)
    M = _parse_step(view, "bounds.M", 0.0, horizon, required=True)
    L = _parse_step(view, "bounds.L", 0.0, horizon, required=False,
                    default=StepFunction.constant(0.0, 0.0, horizon))
    generators = _parse_generators(view, dimension, 0.0, horizon)
    try:
        velocity_set = VelocitySet(tuple(generators), M, L)
    except ValueError as exc:
        raise ScenarioError(f"bounds.M: {exc}") from None
    tube = _parse_tube(view, dimension, horizon, measure, base_dir)
    params = _parse_params(view, horizon)

    unknown = view.unknown()
    if unknown:
        raise ScenarioError(f"unknown key {unknown[0]}")
    return Scenario(dimension, horizon, seed, measure, velocity_set, tube,
                    params, raw, base_dir)
