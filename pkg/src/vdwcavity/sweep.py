"""
Parameter sweeps over steady-state observables and the figure presets.

A sweep is a row-major grid over named axes (the last axis varies
fastest). Axis names are free variables; ``rules`` are arithmetic
expressions that derive SystemParams fields (or further variables) from the
axes and fixed parameters, e.g. ``delta_a = x * g0``.
"""
from __future__ import annotations

import ast
import csv
import graphlib
import json
import math
import operator
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .mcwf import TrajSpec
from .model import ConfigError, SystemParams, format_kv, liouvillian, parse_kv
from .steady import G2_FLOOR, SteadyStateError, observables, solve_steady

__all__ = [
    "Axis",
    "SweepSpec",
    "PointResult",
    "SweepResult",
    "evaluate_expression",
    "run_sweep",
    "find_peaks",
    "PRESETS",
    "preset",
    "git_describe",
]

PARAM_FIELDS = tuple(f.name for f in fields(SystemParams))
OBSERVABLES = ("mean_photon", "g2", "g3")

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {"sqrt": math.sqrt, "abs": abs}
_CONSTS = {"pi": math.pi}


def _names(expr: str) -> set[str]:
    tree = ast.parse(expr, mode="eval")
    return {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)} - set(_FUNCS) - set(_CONSTS)


def evaluate_expression(expr: str, env: dict) -> float:
    """Evaluate +-*/** arithmetic with sqrt/abs/pi over names in ``env``."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return _UNARY[type(node.op)](ev(node.operand))
        if isinstance(node, ast.Name):
            if node.id in _CONSTS:
                return _CONSTS[node.id]
            if node.id not in env:
                raise ConfigError(f"unknown name {node.id!r} in expression {expr!r}")
            return float(env[node.id])
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ConfigError(f"unsupported syntax in expression {expr!r}")

    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {expr!r}: {exc.msg}") from None
    return ev(tree)


@dataclass(frozen=True)
class Axis:
    name: str
    min: float
    max: float
    count: int
    scale: str = "linear"

    def values(self) -> np.ndarray:
        return np.linspace(self.min, self.max, self.count)

    def to_dict(self) -> dict:
        return {"name": self.name, "min": self.min, "max": self.max,
                "count": self.count, "scale": self.scale}

    def to_kv(self) -> str:
        return f"{self.name} {self.min!r} {self.max!r} {self.count} {self.scale}"

    @classmethod
    def parse(cls, text: str) -> "Axis":
        parts = str(text).split()
        if len(parts) not in (4, 5):
            raise ConfigError(f"axis needs 'name min max count [linear]', got {text!r}")
        scale = parts[4] if len(parts) == 5 else "linear"
        try:
            return cls(parts[0], float(parts[1]), float(parts[2]), int(parts[3]), scale)
        except ValueError:
            raise ConfigError(f"malformed axis {text!r}") from None


@dataclass
class SweepSpec:
    """Grid definition, derivation rules, fixed parameters and outputs."""

    name: str
    axes: list[Axis]
    rules: dict[str, str] = field(default_factory=dict)
    params: dict[str, float] = field(default_factory=dict)
    observables: list[str] = field(default_factory=lambda: list(OBSERVABLES))
    output: str | None = None
    check_n_max: int | None = None
    check_every: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.axes:
            raise ConfigError("a sweep needs at least one axis")
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate axis names")
        for a in self.axes:
            if a.count < 2:
                raise ConfigError(f"axis {a.name!r}: count must be >= 2")
            if a.scale != "linear":
                raise ConfigError(f"axis {a.name!r}: only linear scale is supported")
        unknown = sorted(set(self.params) - set(PARAM_FIELDS))
        if unknown:
            raise ConfigError(f"unknown parameter keys: {', '.join(unknown)}")
        clash = (set(names) | set(self.params)) & set(self.rules)
        if clash:
            raise ConfigError(f"rule targets already defined as axis/param: {sorted(clash)}")
        bad = sorted(set(self.observables) - set(OBSERVABLES))
        if bad:
            raise ConfigError(f"unknown observables: {bad}")
        if self.check_n_max is not None and self.check_every < 1:
            raise ConfigError("check_every must be >= 1")
        self._rule_order()
        missing = {"g0", "eta", "kappa", "gamma"} - set(self.params) - set(self.rules) - set(names)
        if missing:
            raise ConfigError(f"parameters never set: {sorted(missing)}")

    def _rule_order(self) -> list[str]:
        known = {a.name for a in self.axes} | set(self.params)
        graph = {}
        for target, expr in self.rules.items():
            try:
                deps = _names(expr)
            except SyntaxError:
                raise ConfigError(f"cannot parse rule {target} = {expr!r}") from None
            undefined = deps - known - set(self.rules)
            if undefined:
                raise ConfigError(f"rule {target!r} uses undefined names {sorted(undefined)}")
            graph[target] = deps & set(self.rules)
        try:
            return list(graphlib.TopologicalSorter(graph).static_order())
        except graphlib.CycleError as exc:
            raise ConfigError(f"derived rules form a cycle: {exc.args[1]}") from None

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.count for a in self.axes)

    def grid(self):
        """Axis-value dicts in row-major order."""
        vals = [a.values() for a in self.axes]
        for idx in np.ndindex(*self.shape):
            yield {a.name: float(v[i]) for a, v, i in zip(self.axes, vals, idx)}

    def resolve(self, coords: dict) -> SystemParams:
        env = dict(self.params)
        env.update(coords)
        for target in self._rule_order():
            env[target] = evaluate_expression(self.rules[target], env)
        return SystemParams.from_dict({k: env[k] for k in PARAM_FIELDS if k in env})

    # -- serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "axes": [a.to_dict() for a in self.axes],
            "rules": dict(self.rules),
            "params": dict(self.params),
            "observables": list(self.observables),
            "output": self.output,
            "check_n_max": self.check_n_max,
            "check_every": self.check_every,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SweepSpec":
        allowed = {"name", "axes", "rules", "params", "observables", "output",
                   "check_n_max", "check_every"}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigError(f"unknown sweep keys: {', '.join(unknown)}")
        try:
            axes = [Axis(a["name"], float(a["min"]), float(a["max"]), int(a["count"]),
                         a.get("scale", "linear")) for a in data["axes"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed axes: {exc}") from None
        return cls(
            name=str(data.get("name", "sweep")),
            axes=axes,
            rules={k: str(v) for k, v in data.get("rules", {}).items()},
            params=dict(data.get("params", {})),
            observables=list(data.get("observables", OBSERVABLES)),
            output=data.get("output"),
            check_n_max=data.get("check_n_max"),
            check_every=int(data.get("check_every", 1)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SweepSpec":
        return cls.from_dict(json.loads(text))

    def to_kv(self) -> str:
        flat = {"name": self.name}
        for i, a in enumerate(self.axes, 1):
            flat[f"axis.{i}"] = a.to_kv()
        for k, v in self.rules.items():
            flat[f"rule.{k}"] = v
        for k, v in self.params.items():
            flat[f"param.{k}"] = v
        flat["observables"] = " ".join(self.observables)
        if self.output is not None:
            flat["output"] = self.output
        if self.check_n_max is not None:
            flat["check_n_max"] = self.check_n_max
            flat["check_every"] = self.check_every
        return format_kv(flat)

    @classmethod
    def from_kv(cls, text: str) -> "SweepSpec":
        raw = parse_kv(text)
        data = {"rules": {}, "params": {}}
        axes = {}
        for key, val in raw.items():
            if key.startswith("axis."):
                try:
                    axes[int(key[5:])] = Axis.parse(val)
                except ValueError:
                    raise ConfigError(f"axis keys must be axis.<int>, got {key!r}") from None
            elif key.startswith("rule."):
                data["rules"][key[5:]] = str(val)
            elif key.startswith("param."):
                data["params"][key[6:]] = val
            elif key == "observables":
                data["observables"] = str(val).split()
            elif key in ("name", "output"):
                data[key] = str(val)
            elif key in ("check_n_max", "check_every"):
                data[key] = int(val)
            else:
                raise ConfigError(f"unknown sweep key {key!r}")
        if not axes:
            raise ConfigError("a sweep needs at least one axis")
        return cls(
            name=data.get("name", "sweep"),
            axes=[axes[i] for i in sorted(axes)],
            rules=data["rules"],
            params=data["params"],
            observables=data.get("observables", list(OBSERVABLES)),
            output=data.get("output"),
            check_n_max=data.get("check_n_max"),
            check_every=data.get("check_every", 1),
        )

    @classmethod
    def load(cls, path) -> "SweepSpec":
        text = Path(path).read_text()
        if str(path).endswith(".json"):
            return cls.from_json(text)
        return cls.from_kv(text)

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(self.to_json() + "\n" if path.suffix == ".json" else self.to_kv())


@dataclass
class PointResult:
    coords: dict
    params: SystemParams | None
    mean_photon: float = math.nan
    g2: float = math.nan
    g3: float = math.nan
    residual: float = math.nan
    iterations: int = 0
    converged: bool = False
    truncation_rel_change: float = math.nan
    error: str = ""

    def observable(self, name: str) -> float:
        return getattr(self, name)


@dataclass
class SweepResult:
    spec: SweepSpec
    points: list[PointResult]
    wall_time: float = 0.0

    @property
    def shape(self):
        return self.spec.shape

    def column(self, name: str) -> np.ndarray:
        if name in self.spec.observables or name in OBSERVABLES:
            return np.array([p.observable(name) for p in self.points])
        return np.array([p.coords[name] for p in self.points])

    def grid(self, name: str) -> np.ndarray:
        return self.column(name).reshape(self.shape)

    def split(self, axis: str) -> dict[float, "SweepResult"]:
        """1-D sub-results along the last axis, keyed by the value of ``axis``."""
        if len(self.spec.axes) != 2:
            raise ValueError("split needs a 2-D sweep")
        first, last = self.spec.axes
        if axis != first.name:
            raise ValueError(f"can only split on the outer axis {first.name!r}")
        out = {}
        n = last.count
        for i, v in enumerate(first.values()):
            rules = {first.name: repr(float(v)), **self.spec.rules}
            sub = SweepSpec(f"{self.spec.name}[{first.name}={float(v)!r}]", [last], rules,
                            dict(self.spec.params), list(self.spec.observables))
            out[float(v)] = SweepResult(sub, self.points[i * n:(i + 1) * n])
        return out

    @property
    def failed(self) -> list[PointResult]:
        return [p for p in self.points if not p.converged]

    # -- output ------------------------------------------------------------------

    def columns(self) -> list[str]:
        return ([a.name for a in self.spec.axes] + list(PARAM_FIELDS) + list(self.spec.observables)
                + ["residual", "iterations", "converged", "truncation_rel_change", "error"])

    def rows(self):
        for p in self.points:
            row = [p.coords[a.name] for a in self.spec.axes]
            pd = p.params.to_dict() if p.params is not None else {}
            row += [pd.get(k) for k in PARAM_FIELDS]
            row += [p.observable(o) for o in self.spec.observables]
            row += [p.residual, p.iterations, int(p.converged), p.truncation_rel_change, p.error]
            yield row

    def write_csv(self, out) -> None:
        close = False
        if isinstance(out, (str, Path)):
            out = open(out, "w", newline="")
            close = True
        try:
            w = csv.writer(out, lineterminator="\n")
            w.writerow(self.columns())
            for row in self.rows():
                w.writerow([_fmt(v) for v in row])
        finally:
            if close:
                out.close()

    def metadata(self, timings: bool = True) -> dict:
        res = [p.residual for p in self.points if p.converged]
        meta = {
            "spec": self.spec.to_dict(),
            "build": git_describe(),
            "n_points": len(self.points),
            "n_failed": len(self.failed),
            "max_residual": max(res) if res else None,
            "max_truncation_rel_change": _nanmax([p.truncation_rel_change for p in self.points]),
            "columns": self.columns(),
        }
        if timings:
            meta["wall_time_s"] = self.wall_time
        return meta

    def to_json(self, timings: bool = True) -> str:
        data = self.metadata(timings)
        data["rows"] = [[_json_value(v) for v in row] for row in self.rows()]
        return json.dumps(data, indent=1)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _nanmax(vals):
    vals = [v for v in vals if v is not None and math.isfinite(v)]
    return max(vals) if vals else None


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _solve_point(spec: SweepSpec, index: int, coords: dict, n_max: int | None) -> PointResult:
    try:
        p = spec.resolve(coords)
        if n_max is not None:
            p = p.replace(n_max=n_max)
    except (ConfigError, ValueError) as exc:
        return PointResult(coords, None, error=f"invalid parameters: {exc}")
    pt = PointResult(coords, p)
    try:
        res = solve_steady(liouvillian(p))
    except SteadyStateError as exc:
        pt.residual = exc.residual
        pt.error = str(exc)
        return pt
    obs = observables(res.rho, p.space)
    pt.mean_photon, pt.g2, pt.g3 = obs.mean_photon, obs.g2, obs.g3
    pt.residual, pt.iterations, pt.converged = res.residual, res.iterations, True
    if spec.check_n_max is not None and index % spec.check_every == 0:
        try:
            q = p.replace(n_max=spec.check_n_max)
            big = observables(solve_steady(liouvillian(q)).rho, q.space)
            pt.truncation_rel_change = _rel_change(obs, big, spec.observables)
        except SteadyStateError as exc:
            pt.error = f"truncation check failed: {exc}"
    return pt


def _rel_change(a, b, names) -> float:
    worst = 0.0
    for name in names:
        x, y = getattr(a, name), getattr(b, name)
        if math.isnan(x) or math.isnan(y):
            continue
        scale = max(abs(x), abs(y), G2_FLOOR)
        worst = max(worst, abs(x - y) / scale)
    return worst


def run_sweep(spec: SweepSpec, threads: int = 1, n_max: int | None = None) -> SweepResult:
    """Steady-state observables at every grid point, in row-major order.

    Per-point failures are recorded in the point's flags; nothing is
    dropped. ``n_max`` overrides the truncation of every point.
    """
    spec.validate()
    t0 = time.perf_counter()
    jobs = list(enumerate(spec.grid()))
    if threads <= 1:
        points = [_solve_point(spec, i, c, n_max) for i, c in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            points = list(pool.map(lambda job: _solve_point(spec, job[0], job[1], n_max), jobs))
    return SweepResult(spec, points, time.perf_counter() - t0)


def find_peaks(result: SweepResult, observable: str = "mean_photon"):
    """Strict 3-point local maxima of a 1-D sweep as (coordinate, value).

    A flat-topped maximum is reported once, at its leftmost index.
    """
    if len(result.spec.axes) != 1:
        raise ValueError("find_peaks needs a 1-D sweep")
    x = result.column(result.spec.axes[0].name)
    y = result.column(observable)
    peaks = []
    n = len(y)
    i = 1
    while i < n - 1:
        if y[i] > y[i - 1]:
            j = i
            while j < n - 1 and y[j + 1] == y[i]:
                j += 1
            if j < n - 1 and y[j + 1] < y[i]:
                peaks.append((float(x[i]), float(y[i])))
            i = j + 1
        else:
            i += 1
    return peaks


# -- figure presets ----------------------------------------------------------------

_BASE = {"g0": 5.0, "eta": 1.0, "kappa": 3.0, "gamma": 0.005, "n_max": 10}


def _fig2() -> SweepSpec:
    return SweepSpec(
        name="fig2",
        axes=[Axis("u_over_g0", 0.0, 8.0, 2), Axis("x", -6.0, 3.0, 901)],
        rules={"delta_a": "x * g0", "u_vdw": "u_over_g0 * g0"},
        params=dict(_BASE),
        check_n_max=15, check_every=50,
    )


def _fig4() -> SweepSpec:
    return SweepSpec(
        name="fig4",
        axes=[Axis("g0", 1.0, 15.0, 15), Axis("u_vdw", 0.0, 150.0, 31)],
        rules={"delta_a": "-u_vdw / 3"},
        params={k: v for k, v in _BASE.items() if k != "g0"},
        check_n_max=15, check_every=25,
    )


def _fig4_overlap() -> SweepSpec:
    return SweepSpec(
        name="fig4_overlap",
        axes=[Axis("g0", 1.0, 15.0, 15)],
        rules={"u_vdw": "3 * sqrt(2) * g0", "delta_a": "-u_vdw / 3"},
        params={k: v for k, v in _BASE.items() if k != "g0"},
        check_n_max=15, check_every=1,
    )


def _fig5ab() -> SweepSpec:
    return SweepSpec(
        name="fig5ab",
        axes=[Axis("g0", 1.0, 20.0, 20), Axis("eta", 0.1, 2.0, 20)],
        rules={"u_vdw": "u_over_g0 * g0", "delta_a": "-u_vdw / 2", "u_over_g0": "8"},
        params={k: v for k, v in _BASE.items() if k not in ("g0", "eta")},
        check_n_max=15, check_every=40,
    )


def _fig3cd() -> dict:
    g0 = 5.0
    return {
        "fig3c": TrajSpec("fig3c", SystemParams.from_dict(
            {**_BASE, "u_vdw": 0.0, "delta_a": math.sqrt(2) * g0}), t_max=100.0),
        "fig3d": TrajSpec("fig3d", SystemParams.from_dict(
            {**_BASE, "u_vdw": 8 * g0, "delta_a": -8 * g0 / 3}), t_max=1000.0),
    }


def _fig5cd() -> dict:
    out = {}
    for tag, g0, t_max in (("fig5c", 5.0, 1000.0), ("fig5d", 15.0, 10000.0)):
        u = 8 * g0
        p = SystemParams.from_dict({**_BASE, "g0": g0, "eta": 1.5, "u_vdw": u, "delta_a": -u / 2})
        out[tag] = TrajSpec(tag, p, t_max=t_max)
    return out


PRESETS = {
    "fig2": _fig2,
    "fig3cd": _fig3cd,
    "fig4": _fig4,
    "fig4_overlap": _fig4_overlap,
    "fig5ab": _fig5ab,
    "fig5cd": _fig5cd,
}


def preset(name: str):
    """A SweepSpec, or a dict of trajectory-case configs for fig3cd / fig5cd."""
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
