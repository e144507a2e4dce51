import graphlib
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vdwcavity.model import ConfigError, SystemParams, liouvillian
from vdwcavity.mcwf import TrajSpec
from vdwcavity.steady import observables, steady_state
from vdwcavity.sweep import (PRESETS, Axis, PointResult, SweepResult, SweepSpec, evaluate_expression,
                             find_peaks, preset, run_sweep)

BASE = {"g0": 5.0, "eta": 1.0, "kappa": 3.0, "gamma": 0.005, "n_max": 6}


def small_spec(count=5, **kw):
    args = dict(name="t", axes=[Axis("x", -2.0, 2.0, count)], rules={"delta_a": "x * g0"},
                params=dict(BASE))
    args.update(kw)
    return SweepSpec(**args)


def synthetic(x, y):
    spec = SweepSpec("syn", [Axis("x", float(x[0]), float(x[-1]), len(x))], params=dict(BASE))
    pts = [PointResult({"x": float(a)}, None, mean_photon=float(b), converged=True)
           for a, b in zip(x, y)]
    return SweepResult(spec, pts)


def test_expression_evaluator():
    assert evaluate_expression("-u_vdw / 3", {"u_vdw": 9.0}) == -3.0
    assert evaluate_expression("3 * sqrt(2) * g0", {"g0": 1.0}) == pytest.approx(3 * math.sqrt(2))
    assert evaluate_expression("2 ** 3 + abs(-1) - pi", {}) == pytest.approx(9 - math.pi)
    for bad in ("__import__('os')", "x.y", "[1]", "f(2)", "1 +"):
        with pytest.raises(ConfigError):
            evaluate_expression(bad, {"x": 1.0})
    with pytest.raises(ConfigError):
        evaluate_expression("y + 1", {})


@pytest.mark.parametrize("kwargs", [
    dict(axes=[Axis("x", 0.0, 1.0, 1)]),
    dict(params={**BASE, "bogus": 1}),
    dict(rules={"delta_a": "u_vdw", "u_vdw": "delta_a"}),
    dict(rules={"delta_a": "nope * 2"}),
    dict(rules={"g0": "2"}),
    dict(params={"g0": 1.0}),
    dict(observables=["g4"]),
])
def test_validation_errors(kwargs):
    with pytest.raises(ConfigError):
        small_spec(**kwargs)


def test_resolve_applies_rules_in_dependency_order():
    spec = SweepSpec("r", [Axis("g0", 1.0, 2.0, 2)],
                     rules={"delta_a": "-u_vdw / 3", "u_vdw": "k * g0", "k": "8"},
                     params={k: v for k, v in BASE.items() if k != "g0"})
    p = spec.resolve({"g0": 2.0})
    assert p.u_vdw == 16.0 and p.delta_a == pytest.approx(-16 / 3)


def test_grid_is_row_major():
    spec = SweepSpec("g", [Axis("g0", 1.0, 2.0, 2), Axis("eta", 0.1, 0.3, 3)],
                     params={"kappa": 3.0, "gamma": 0.0})
    coords = list(spec.grid())
    assert [(c["g0"], round(c["eta"], 3)) for c in coords][:4] == [
        (1.0, 0.1), (1.0, 0.2), (1.0, 0.3), (2.0, 0.1)]


def test_degenerate_sweep_matches_direct_solve():
    spec = small_spec(axes=[Axis("x", 0.7, 0.7, 2)])
    res = run_sweep(spec)
    p = SystemParams(**BASE, delta_a=3.5)
    obs = observables(steady_state(liouvillian(p)), p.space)
    for pt in res.points:
        assert (pt.mean_photon, pt.g2, pt.g3) == (obs.mean_photon, obs.g2, obs.g3)


def test_threads_give_identical_output():
    spec = small_spec(count=9, check_n_max=8, check_every=3)
    outs = []
    for threads in (1, 4):
        buf = io.StringIO()
        run_sweep(spec, threads=threads).write_csv(buf)
        outs.append(buf.getvalue())
    assert outs[0] == outs[1]
    lines = outs[0].splitlines()
    assert len(lines) == 10 and lines[0].split(",")[0] == "x"


def test_failed_points_are_flagged():
    spec = small_spec(rules={"delta_a": "x * g0", "gamma": "x"}, params={
        k: v for k, v in BASE.items() if k != "gamma"})
    res = run_sweep(spec)
    assert len(res.points) == 5
    bad = res.failed
    assert len(bad) == 2 and all("invalid" in p.error for p in bad)
    assert all(math.isnan(p.g2) for p in bad)


def test_truncation_check_recorded():
    res = run_sweep(small_spec(count=3, check_n_max=9, check_every=1))
    assert all(p.truncation_rel_change < 1e-3 for p in res.points)


def test_json_output_and_metadata():
    res = run_sweep(small_spec(count=3))
    data = json.loads(res.to_json())
    assert data["n_points"] == 3 and len(data["rows"]) == 3
    assert data["columns"][:2] == ["x", "g0"] and "wall_time_s" in data
    assert "wall_time_s" not in json.loads(res.to_json(timings=False))


def test_peaks_monotone_and_synthetic():
    x = np.linspace(-3, 4, 71)
    assert find_peaks(synthetic(x, x)) == []
    y = np.exp(-(x + 1.0) ** 2) + 2 * np.exp(-(x - 2.5) ** 2 / 0.5)
    peaks = find_peaks(synthetic(x, y))
    assert [round(c, 10) for c, _ in peaks] == [-1.0, 2.5]


def test_peaks_plateau_reports_leftmost():
    x = np.arange(7.0)
    y = np.array([0, 1, 3, 3, 3, 1, 0.0])
    assert find_peaks(synthetic(x, y)) == [(2.0, 3.0)]


def test_peaks_need_one_dimension():
    res = run_sweep(SweepSpec("2d", [Axis("g0", 1.0, 2.0, 2), Axis("eta", 0.1, 0.2, 2)],
                              params={"kappa": 3.0, "gamma": 0.0, "n_max": 4}))
    with pytest.raises(ValueError):
        find_peaks(res)
    halves = res.split("g0")
    assert list(halves) == [1.0, 2.0]
    assert len(find_peaks(halves[1.0])) == 0


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_round_trip(name, tmp_path):
    obj = preset(name)
    items = obj.items() if isinstance(obj, dict) else [(name, obj)]
    for tag, spec in items:
        cls = type(spec)
        assert cls.from_kv(spec.to_kv()) == spec
        assert cls.from_json(spec.to_json()) == spec
        for suffix in (".cfg", ".json"):
            path = tmp_path / f"{tag}{suffix}"
            spec.save(path)
            assert cls.load(path) == spec
        if isinstance(spec, TrajSpec):
            assert spec.t_max > 0


def test_preset_parameters():
    fig2 = preset("fig2")
    assert fig2.shape == (2, 901)
    p = fig2.resolve({"u_over_g0": 8.0, "x": -4.0})
    assert (p.g0, p.u_vdw, p.delta_a, p.eta, p.kappa, p.gamma) == (5.0, 40.0, -20.0, 1.0, 3.0, 0.005)
    p = preset("fig5ab").resolve({"g0": 15.0, "eta": 1.5})
    assert p.u_vdw == 120.0 and p.delta_a == -60.0
    p = preset("fig4_overlap").resolve({"g0": 10.0})
    assert p.delta_a == pytest.approx(-math.sqrt(2) * 10)
    with pytest.raises(ConfigError):
        preset("fig9")


@given(st.lists(st.tuples(st.sampled_from(["x", "y", "z", "w"]), st.sampled_from(["x", "y", "z", "w"])),
                max_size=6))
def test_rule_graphs_accept_dags_and_reject_cycles(edges):
    names = {"x", "y", "z", "w"}
    rules = {n: " + ".join(["1"] + sorted({b for a, b in edges if a == n})) for n in names}
    graph = {n: {b for a, b in edges if a == n} for n in names}
    try:
        list(graphlib.TopologicalSorter(graph).static_order())
        cyclic = False
    except graphlib.CycleError:
        cyclic = True
    kw = dict(name="h", axes=[Axis("g0", 1.0, 2.0, 2)], rules=rules,
              params={"eta": 1.0, "kappa": 1.0, "gamma": 0.0})
    if cyclic:
        with pytest.raises(ConfigError):
            SweepSpec(**kw)
    else:
        SweepSpec(**kw)
