"""
Quantum-jump (Monte Carlo wave function) trajectories and burst statistics.

Between jumps the unnormalized state evolves under the time-independent
H_eff = H - (i/2) Σ c†c. Its squared norm is non-increasing, so the first
grid time t_k = k*dt at which it falls below the drawn threshold r can be
located by doubling plus bisection over k instead of scanning every step.
Propagation between grid points is exact (eigendecomposition of H_eff, or
expm when the eigenbasis is ill-conditioned); the crossing time is linearly
interpolated inside the grid step.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .hilbert import basis_state
from .model import (
    ConfigError,
    SystemParams,
    effective_hamiltonian,
    format_kv,
    jump_labels,
    jump_operators,
    parse_kv,
)

__all__ = [
    "RNG_ALGORITHM",
    "TrajSpec",
    "ClickRecord",
    "EmissionEvent",
    "EmissionStats",
    "NoJumpPropagator",
    "default_dt",
    "default_window",
    "run_trajectory",
    "run_ensemble",
    "classify_bursts",
    "emission_stats",
    "ensemble_emission_stats",
    "mean_photon_from_clicks",
    "write_clicks_csv",
    "clicks_metadata",
]

RNG_ALGORITHM = "numpy PCG64 seeded by SeedSequence([seed, trajectory_id])"
_STABILITY = 0.05
_COND_LIMIT = 1e8


def default_dt(p: SystemParams) -> float:
    return 0.001 / max(p.g0, p.kappa, p.eta, abs(p.delta_a), p.u_vdw)


def default_window(p: SystemParams) -> float:
    """Cavity correlation time 1/(2κ)."""
    return 1.0 / (2 * p.kappa)


def _max_rate(p: SystemParams) -> float:
    return max(p.max_rate(), 2 * p.kappa * p.cavity_dissipator_count, 2 * p.gamma)


@dataclass
class TrajSpec:
    """Trajectory-run configuration: one parameter point plus run settings.

    ``dt`` and ``window`` of None mean :func:`default_dt` and
    :func:`default_window`.
    """

    name: str
    params: SystemParams
    t_max: float
    n_traj: int = 1
    dt: float | None = None
    window: float | None = None
    seed: int = 0

    _RUN_KEYS = ("t_max", "n_traj", "dt", "window", "seed")

    def __post_init__(self):
        if not self.t_max > 0:
            raise ConfigError("t_max must be positive")
        if self.n_traj < 1:
            raise ConfigError("n_traj must be >= 1")
        if self.window is not None and not self.window > 0:
            raise ConfigError("window must be positive")

    @property
    def resolved_dt(self) -> float:
        return default_dt(self.params) if self.dt is None else self.dt

    @property
    def resolved_window(self) -> float:
        return default_window(self.params) if self.window is None else self.window

    def to_dict(self) -> dict:
        return {"name": self.name, "params": self.params.to_dict(), "t_max": self.t_max,
                "n_traj": self.n_traj, "dt": self.dt, "window": self.window, "seed": self.seed}

    @classmethod
    def from_dict(cls, data: dict) -> "TrajSpec":
        unknown = sorted(set(data) - {"name", "params", *cls._RUN_KEYS})
        if unknown:
            raise ConfigError(f"unknown trajectory keys: {', '.join(unknown)}")
        if "params" not in data or "t_max" not in data:
            raise ConfigError("trajectory config needs params and t_max")
        return cls(
            name=str(data.get("name", "traj")),
            params=SystemParams.from_dict(data["params"]),
            t_max=float(data["t_max"]),
            n_traj=int(data.get("n_traj", 1)),
            dt=None if data.get("dt") is None else float(data["dt"]),
            window=None if data.get("window") is None else float(data["window"]),
            seed=int(data.get("seed", 0)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrajSpec":
        return cls.from_dict(json.loads(text))

    def to_kv(self) -> str:
        flat = {"name": self.name}
        flat.update({f"param.{k}": v for k, v in self.params.to_dict().items()})
        flat.update({k: getattr(self, k) for k in self._RUN_KEYS})
        return format_kv(flat)

    @classmethod
    def from_kv(cls, text: str) -> "TrajSpec":
        raw = parse_kv(text)
        data = {"params": {}}
        for key, val in raw.items():
            if key.startswith("param."):
                data["params"][key[6:]] = val
            else:
                data[key] = val
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "TrajSpec":
        text = Path(path).read_text()
        if str(path).endswith(".json"):
            return cls.from_json(text)
        return cls.from_kv(text)

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(self.to_json() + "\n" if path.suffix == ".json" else self.to_kv())


@dataclass
class ClickRecord:
    clicks: list  # (time_us, channel) pairs
    t_max: float
    seed: int
    params: SystemParams
    dt: float
    trajectory_id: int = 0
    rho_avg: np.ndarray | None = None  # time-averaged state over snapshots
    n_snapshots: int = 0

    def times(self, channel: str | None = "cavity") -> np.ndarray:
        return np.array([t for t, ch in self.clicks if channel is None or ch == channel])

    def count(self, channel: str = "cavity") -> int:
        return sum(1 for _, ch in self.clicks if ch == channel)


@dataclass(frozen=True)
class EmissionEvent:
    start_time: float
    multiplicity: int


@dataclass(frozen=True)
class EmissionStats:
    n_events: int
    fraction_single: float
    fraction_pair: float
    fraction_multi: float
    event_rate: float
    cavity_click_rate: float

    @property
    def fraction_nonsingle(self) -> float:
        return self.fraction_pair + self.fraction_multi

    def stderr(self, fraction: float) -> float:
        """Binomial standard error of a fraction over the events."""
        if self.n_events == 0:
            return math.nan
        return math.sqrt(fraction * (1 - fraction) / self.n_events)


class NoJumpPropagator:
    """Exact no-jump evolution exp(-i H_eff t) for one parameter point."""

    def __init__(self, p: SystemParams):
        self.params = p
        self.h_eff = effective_hamiltonian(p)
        self.jumps = jump_operators(p)
        self.labels = jump_labels(p)
        self._jdj = [c.conj().T @ c for c in self.jumps]
        w, v = np.linalg.eig(self.h_eff)
        self.use_eig = bool(np.linalg.cond(v) < _COND_LIMIT)
        if self.use_eig:
            self.w, self.v = w, v
            self._lu = scipy.linalg.lu_factor(v)

    def coefficients(self, psi: np.ndarray):
        if self.use_eig:
            return scipy.linalg.lu_solve(self._lu, psi)
        return psi

    def evolve(self, coef, tau) -> np.ndarray:
        """State(s) at delay ``tau`` (scalar or 1-D array, columns)."""
        tau = np.asarray(tau, dtype=float)
        if self.use_eig:
            phase = np.exp(-1j * np.multiply.outer(self.w, tau))
            return self.v @ (phase * (coef if tau.ndim == 0 else coef[:, None]))
        if tau.ndim == 0:
            return scipy.linalg.expm(-1j * self.h_eff * float(tau)) @ coef
        return np.stack([scipy.linalg.expm(-1j * self.h_eff * t) @ coef for t in tau], axis=1)

    def norm2(self, coef, tau: float) -> float:
        psi = self.evolve(coef, tau)
        return float(np.vdot(psi, psi).real)

    def jump_weights(self, psi: np.ndarray) -> np.ndarray:
        return np.array([np.vdot(psi, m @ psi).real for m in self._jdj])


def _first_crossing(prop, coef, r, dt, t_rem):
    """Delay of the first threshold crossing, or None if none before t_rem."""
    k_end = int(math.ceil(t_rem / dt - 1e-12))
    if k_end <= 0:
        return None

    def tau(k):
        return min(k * dt, t_rem)

    cache = {0: 1.0}

    def norm(k):
        if k not in cache:
            cache[k] = prop.norm2(coef, tau(k))
        return cache[k]

    lo, hi = 0, 1
    while hi < k_end and norm(hi) > r:
        lo, hi = hi, min(2 * hi, k_end)
    if norm(hi) > r:
        return None
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if norm(mid) <= r:
            hi = mid
        else:
            lo = mid
    n_lo, n_hi = norm(lo), norm(hi)
    t_lo, t_hi = tau(lo), tau(hi)
    frac = (n_lo - r) / (n_lo - n_hi) if n_lo > n_hi else 1.0
    return t_lo + frac * (t_hi - t_lo)


def run_trajectory(p: SystemParams, t_max: float, dt: float | None = None, seed: int = 0,
                   trajectory_id: int = 0, psi0: np.ndarray | None = None,
                   snapshot_every: float | None = None, snapshot_start: float = 0.0,
                   propagator: NoJumpPropagator | None = None) -> ClickRecord:
    """Simulate one quantum-jump trajectory starting from |gg,0> (or ``psi0``).

    Requires ``dt * max_rate < 0.05``. With ``snapshot_every`` the
    normalized state is sampled on that time grid from ``snapshot_start``
    on and the averaged projector is stored in ``rho_avg``.
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    if dt is None:
        dt = default_dt(p)
    if dt <= 0 or dt * _max_rate(p) >= _STABILITY:
        raise ValueError(f"dt={dt:g} violates dt*max_rate < {_STABILITY}")
    prop = propagator if propagator is not None else NoJumpPropagator(p)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, trajectory_id])))

    if psi0 is None:
        psi = basis_state(p.space, "gg", 0)
    else:
        psi = np.asarray(psi0, dtype=complex)
        psi = psi / np.linalg.norm(psi)

    snaps = None
    if snapshot_every is not None:
        snaps = np.arange(snapshot_start, t_max + 1e-12, snapshot_every)
        rho_sum = np.zeros((psi.size, psi.size), dtype=complex)
        snap_i = 0

    def take_snapshots(coef, t0, t1):
        nonlocal snap_i, rho_sum
        j = snap_i
        while j < len(snaps) and snaps[j] < t1:
            j += 1
        if j > snap_i:
            states = prop.evolve(coef, snaps[snap_i:j] - t0)
            states = states / np.linalg.norm(states, axis=0)
            rho_sum += states @ states.conj().T
            snap_i = j

    clicks = []
    t = 0.0
    while True:
        r = rng.random()
        coef = prop.coefficients(psi)
        tau = _first_crossing(prop, coef, r, dt, t_max - t)
        if tau is None:
            if snaps is not None:
                take_snapshots(coef, t, t_max + 1e-12)
            break
        if snaps is not None:
            take_snapshots(coef, t, t + tau)
        psi = prop.evolve(coef, tau)
        weights = prop.jump_weights(psi)
        total = weights.sum()
        if not total > 0:
            raise FloatingPointError("jump with zero total rate")
        k = int(np.searchsorted(np.cumsum(weights) / total, rng.random(), side="right"))
        k = min(k, len(weights) - 1)
        psi = prop.jumps[k] @ psi
        nrm = np.linalg.norm(psi)
        if nrm == 0 or not np.isfinite(nrm):
            raise FloatingPointError("state norm underflow after jump")
        psi = psi / nrm
        t = t + tau
        clicks.append((t, prop.labels[k]))

    rec = ClickRecord(clicks, t_max, seed, p, dt, trajectory_id)
    if snaps is not None and len(snaps):
        rec.rho_avg = rho_sum / len(snaps)
        rec.n_snapshots = len(snaps)
    return rec


def run_ensemble(p: SystemParams, n_traj: int, t_max: float, dt: float | None = None,
                 seed: int = 0, threads: int = 1, **kwargs) -> list[ClickRecord]:
    """Independent trajectories 0..n_traj-1, returned in index order."""
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    prop = NoJumpPropagator(p)

    def one(i):
        return run_trajectory(p, t_max, dt, seed=seed, trajectory_id=i,
                              propagator=prop, **kwargs)

    if threads <= 1:
        return [one(i) for i in range(n_traj)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(n_traj)))


def classify_bursts(rec: ClickRecord, window: float) -> list[EmissionEvent]:
    """Group cavity clicks into bursts by chaining gaps shorter than ``window``."""
    if window <= 0:
        raise ValueError("window must be positive")
    events = []
    start = last = None
    mult = 0
    for t in rec.times("cavity"):
        if last is not None and t - last <= window:
            mult += 1
        else:
            if last is not None:
                events.append(EmissionEvent(start, mult))
            start, mult = t, 1
        last = t
    if last is not None:
        events.append(EmissionEvent(start, mult))
    return events


def emission_stats(events: list[EmissionEvent], t_max: float) -> EmissionStats:
    """Multiplicity classes 1 / 2 / >=3 and rates over total time ``t_max``."""
    n = len(events)
    mults = np.array([e.multiplicity for e in events], dtype=int)
    if n == 0:
        return EmissionStats(0, 0.0, 0.0, 0.0, 0.0, 0.0)
    single = int(np.sum(mults == 1))
    pair = int(np.sum(mults == 2))
    multi = n - single - pair
    return EmissionStats(n, single / n, pair / n, multi / n,
                         n / t_max, float(mults.sum()) / t_max)


def ensemble_emission_stats(records: list[ClickRecord], window: float) -> EmissionStats:
    events = [e for rec in records for e in classify_bursts(rec, window)]
    return emission_stats(events, sum(rec.t_max for rec in records))


def mean_photon_from_clicks(records: list[ClickRecord], t_burn: float = 0.0):
    """<a†a> estimated as cavity click rate / field decay rate.

    Returns ``(mean, stderr)`` with the standard error taken from the spread
    of per-trajectory estimates.
    """
    est = []
    for rec in records:
        p = rec.params
        span = rec.t_max - t_burn
        if span <= 0:
            raise ValueError("t_burn must be shorter than t_max")
        n = int(np.sum(rec.times("cavity") >= t_burn))
        est.append(n / span / (2 * p.kappa * p.cavity_dissipator_count))
    est = np.array(est)
    err = est.std(ddof=1) / math.sqrt(len(est)) if len(est) > 1 else math.nan
    return float(est.mean()), float(err)


# -- serialization ---------------------------------------------------------------


def write_clicks_csv(records: list[ClickRecord], out) -> None:
    """One row per click: trajectory_id, time_us, channel."""
    close = False
    if isinstance(out, (str, Path)):
        out = open(out, "w", newline="")
        close = True
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["trajectory_id", "time_us", "channel"])
        for rec in records:
            for t, ch in rec.clicks:
                w.writerow([rec.trajectory_id, repr(float(t)), ch])
    finally:
        if close:
            out.close()


def clicks_metadata(records: list[ClickRecord], window: float) -> dict:
    first = records[0]
    stats = ensemble_emission_stats(records, window)
    return {
        "params": first.params.to_dict(),
        "seed": first.seed,
        "dt": first.dt,
        "t_max": first.t_max,
        "n_traj": len(records),
        "window": window,
        "rng": RNG_ALGORITHM,
        "emission_stats": {
            "n_events": stats.n_events,
            "fraction_single": stats.fraction_single,
            "fraction_pair": stats.fraction_pair,
            "fraction_multi": stats.fraction_multi,
            "event_rate_per_us": stats.event_rate,
            "cavity_click_rate_per_us": stats.cavity_click_rate,
        },
    }
