import io
import math

import numpy as np
import pytest
from scipy import stats

from vdwcavity.hilbert import basis_state, excitation
from vdwcavity.mcwf import (ClickRecord, EmissionEvent, TrajSpec, classify_bursts,
                            clicks_metadata, default_dt, default_window, emission_stats,
                            mean_photon_from_clicks, run_ensemble, run_trajectory,
                            write_clicks_csv)
from vdwcavity.model import SystemParams, liouvillian
from vdwcavity.steady import observables, steady_state, trace_distance


def record(times, t_max=10.0):
    p = SystemParams.baseline(n_max=3)
    return ClickRecord([(t, "cavity") for t in times], t_max, 0, p, 1e-3, 0)


def test_no_drive_no_clicks():
    p = SystemParams.baseline(eta=0.0, n_max=4)
    for seed in range(5):
        assert run_trajectory(p, 50.0, seed=seed).clicks == []


def test_damped_cavity_single_click():
    p = SystemParams(g0=0.0, eta=0.0, kappa=3.0, gamma=0.005, n_max=3)
    psi0 = basis_state(p.space, "gg", 1)
    times = []
    for i in range(2000):
        rec = run_trajectory(p, 20.0, seed=11, trajectory_id=i, psi0=psi0)
        assert rec.count("cavity") == 1 and len(rec.clicks) == 1
        times.append(rec.clicks[0][0])
    rate = 1 / np.mean(times)
    assert abs(rate - 2 * p.kappa) < 3 * rate / math.sqrt(len(times))
    assert stats.kstest(times, "expon", args=(0, 1 / (2 * p.kappa))).pvalue > 0.01


def test_determinism_and_ordering(ela_params):
    a = run_trajectory(ela_params, 30.0, seed=5, trajectory_id=2)
    b = run_trajectory(ela_params, 30.0, seed=5, trajectory_id=2)
    c = run_trajectory(ela_params, 30.0, seed=6, trajectory_id=2)
    assert a.clicks == b.clicks and a.clicks != c.clicks
    t = a.times(None)
    assert np.all(np.diff(t) > 0) and t[0] >= 0 and t[-1] <= 30.0


def test_threads_do_not_change_results(ela_params):
    serial = run_ensemble(ela_params, 8, 20.0, seed=3)
    parallel = run_ensemble(ela_params, 8, 20.0, seed=3, threads=4)
    assert [r.clicks for r in serial] == [r.clicks for r in parallel]
    assert [r.trajectory_id for r in parallel] == list(range(8))


def test_step_size_guard(ela_params):
    with pytest.raises(ValueError):
        run_trajectory(ela_params, 1.0, dt=1.0)


def test_default_scales(ela_params):
    assert default_dt(ela_params) == pytest.approx(0.001 / 7.0710678118654755)
    assert default_window(ela_params) == pytest.approx(1 / 6)


def test_halving_dt_keeps_click_rate(ela_params):
    dt = default_dt(ela_params)
    a = run_ensemble(ela_params, 40, 60.0, dt=dt, seed=9)
    b = run_ensemble(ela_params, 40, 60.0, dt=dt / 2, seed=9)
    na, ea = mean_photon_from_clicks(a)
    nb, _ = mean_photon_from_clicks(b)
    assert abs(na - nb) < ea


def test_chaining_example():
    events = classify_bursts(record([1.0, 1.01, 5.0]), 0.1)
    assert events == [EmissionEvent(1.0, 2), EmissionEvent(5.0, 1)]


def test_chaining_limits():
    assert classify_bursts(record([]), 0.1) == []
    times = [0.5, 0.6, 0.65, 3.0, 9.9]
    assert [e.multiplicity for e in classify_bursts(record(times), 1e-9)] == [1] * 5
    assert [e.multiplicity for e in classify_bursts(record(times), 10.0)] == [5]
    with pytest.raises(ValueError):
        classify_bursts(record(times), 0.0)


def test_chaining_ignores_atomic_clicks():
    rec = record([1.0, 2.0])
    rec.clicks.insert(1, (1.5, "atom1"))
    assert [e.multiplicity for e in classify_bursts(rec, 0.6)] == [1, 1]


def test_multiplicity_fractions():
    events = [EmissionEvent(float(i), m) for i, m in enumerate([1, 1, 1, 2])]
    s = emission_stats(events, 8.0)
    assert (s.fraction_single, s.fraction_pair, s.fraction_multi) == (0.75, 0.25, 0.0)
    assert s.event_rate == 0.5 and s.cavity_click_rate == 5 / 8
    assert emission_stats([], 1.0).n_events == 0


def test_events_separated_by_window(ela_params):
    rec = run_trajectory(ela_params, 200.0, seed=1)
    w = default_window(ela_params)
    events = classify_bursts(rec, w)
    times = rec.times("cavity")
    assert sum(e.multiplicity for e in events) == len(times)
    starts = np.array([e.start_time for e in events])
    assert np.all(np.diff(starts) > w)


def test_csv_and_metadata(ela_params):
    recs = run_ensemble(ela_params, 3, 20.0, seed=7)
    buf = io.StringIO()
    write_clicks_csv(recs, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "trajectory_id,time_us,channel"
    assert len(lines) == 1 + sum(len(r.clicks) for r in recs)
    tid, t, ch = lines[1].split(",")
    assert float(t) == recs[int(tid)].clicks[0][0] and ch == recs[int(tid)].clicks[0][1]
    meta = clicks_metadata(recs, 0.2)
    assert meta["seed"] == 7 and meta["window"] == 0.2 and "PCG64" in meta["rng"]


def test_traj_spec_round_trip(tmp_path, ela_params):
    spec = TrajSpec("x", ela_params, t_max=12.5, n_traj=3, window=0.2, seed=4)
    assert TrajSpec.from_kv(spec.to_kv()) == spec
    path = tmp_path / "x.json"
    spec.save(path)
    assert TrajSpec.load(path) == spec


@pytest.fixture(scope="module")
def ela_ensemble():
    p = SystemParams.baseline(u_vdw=0.0, delta_a=math.sqrt(2) * 5.0, n_max=10)
    recs = run_ensemble(p, 1000, 200 / p.kappa, seed=2024, snapshot_every=0.25)
    return p, recs


@pytest.mark.slow
def test_ensemble_state_matches_steady_state(ela_ensemble):
    p, recs = ela_ensemble
    rho = sum(r.rho_avg for r in recs) / len(recs)
    assert trace_distance(rho, steady_state(liouvillian(p))) < 0.02


@pytest.mark.slow
def test_channel_bookkeeping(ela_ensemble):
    p, recs = ela_ensemble
    rho = steady_state(liouvillian(p))
    s = p.space
    atom_pop = np.trace((excitation(s, 1) + excitation(s, 2)) @ rho).real
    n = observables(rho, s).mean_photon
    expected = (2 * p.gamma * atom_pop) / (2 * p.kappa * n)
    n_atom = sum(r.count("atom1") + r.count("atom2") for r in recs)
    n_cav = sum(r.count("cavity") for r in recs)
    ratio = n_atom / n_cav
    sigma = ratio * math.sqrt(1 / max(n_atom, 1) + 1 / n_cav)
    assert abs(ratio - expected) < 3 * sigma
