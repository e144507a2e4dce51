"""
System parameters, Hamiltonians, jump operators and the Liouvillian.

Units: every rate and detuning is a plain frequency in MHz with hbar = 1, so
times are in microseconds. The field decay rate is 2*kappa and the atomic
excited-state decay rate is 2*gamma.

Vectorization is column-stacking: vec(rho) = rho.reshape(-1, order="F"),
so vec(A X B) = (B^T ⊗ A) vec(X).
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .hilbert import (
    SpaceSpec,
    annihilation,
    collective_ops,
    excitation,
    sigma_minus,
)

__all__ = [
    "SystemParams",
    "ConfigError",
    "hamiltonian",
    "collective_hamiltonian",
    "effective_hamiltonian",
    "jump_operators",
    "jump_labels",
    "liouvillian",
    "vec",
    "unvec",
    "lindblad_rhs",
    "parse_kv",
    "format_kv",
]


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass(frozen=True)
class SystemParams:
    """All physical inputs of one simulation point (MHz).

    ``delta_cav=None`` ties the cavity detuning to ``delta_a``
    (ω_cav = ω_A), which is what every figure preset uses.
    """

    g0: float
    eta: float
    kappa: float
    gamma: float
    u_vdw: float = 0.0
    delta_a: float = 0.0
    delta_cav: float | None = None
    n_max: int = 30
    cavity_dissipator_count: int = 1

    def __post_init__(self):
        for name in ("g0", "eta", "kappa", "gamma", "u_vdw", "delta_a"):
            val = getattr(self, name)
            if not isinstance(val, (int, float)) or not math.isfinite(val):
                raise ConfigError(f"{name} must be a finite number, got {val!r}")
        if self.delta_cav is not None and not math.isfinite(self.delta_cav):
            raise ConfigError("delta_cav must be finite or None")
        # g0 = 0 is allowed so that the bare damped cavity can be simulated.
        if self.g0 < 0:
            raise ConfigError("g0 must be >= 0")
        if self.kappa <= 0:
            raise ConfigError("kappa must be > 0")
        if self.gamma < 0 or self.eta < 0 or self.u_vdw < 0:
            raise ConfigError("gamma, eta and u_vdw must be >= 0")
        if int(self.n_max) != self.n_max or self.n_max < 2:
            raise ConfigError("n_max must be an integer >= 2")
        if self.cavity_dissipator_count not in (1, 2):
            raise ConfigError("cavity_dissipator_count must be 1 or 2")

    @classmethod
    def baseline(cls, **overrides) -> "SystemParams":
        """g0=5, eta=1, kappa=3 MHz, gamma=5 kHz, n_max=30, Δ_cav = Δ_A."""
        base = dict(g0=5.0, eta=1.0, kappa=3.0, gamma=0.005, n_max=30)
        base.update(overrides)
        return cls(**base)

    @property
    def space(self) -> SpaceSpec:
        return SpaceSpec(self.n_max)

    @property
    def cavity_detuning(self) -> float:
        return self.delta_a if self.delta_cav is None else self.delta_cav

    def replace(self, **changes) -> "SystemParams":
        return dataclasses.replace(self, **changes)

    def scaled(self, factor: float) -> "SystemParams":
        """All frequencies multiplied by ``factor`` (n_max unchanged)."""
        changes = {k: getattr(self, k) * factor
                   for k in ("g0", "eta", "kappa", "gamma", "u_vdw", "delta_a")}
        if self.delta_cav is not None:
            changes["delta_cav"] = self.delta_cav * factor
        return self.replace(**changes)

    def max_rate(self) -> float:
        """Largest frequency scale entering the dynamics."""
        return max(self.g0, self.kappa, self.eta, abs(self.delta_a),
                   abs(self.cavity_detuning), self.u_vdw, self.gamma)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SystemParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown parameter keys: {', '.join(unknown)}")
        kwargs = {}
        for key, val in data.items():
            if key in ("n_max", "cavity_dissipator_count"):
                if isinstance(val, float) and not val.is_integer():
                    raise ConfigError(f"{key} must be an integer")
                kwargs[key] = int(val)
            elif key == "delta_cav" and val is None:
                kwargs[key] = None
            else:
                kwargs[key] = float(val)
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SystemParams":
        return cls.from_dict(json.loads(text))

    def to_kv(self) -> str:
        return format_kv(self.to_dict())

    @classmethod
    def from_kv(cls, text: str) -> "SystemParams":
        return cls.from_dict(parse_kv(text))

    @classmethod
    def load(cls, path) -> "SystemParams":
        text = Path(path).read_text()
        if str(path).endswith(".json"):
            return cls.from_json(text)
        return cls.from_kv(text)


_NONE_WORDS = {"none", "null", "delta_a"}


def _kv_value(raw: str):
    raw = raw.strip()
    if raw.lower() in _NONE_WORDS:
        return None
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_kv(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Numbers come back as int/float, ``none``/``null``/``delta_a`` as None,
    anything else as a stripped string. Duplicate keys are an error.
    """
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _kv_value(raw)
    return out


def format_kv(data: dict) -> str:
    lines = []
    for key, val in data.items():
        if val is None:
            val = "none"
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


# -- operators -----------------------------------------------------------------


def hamiltonian(p: SystemParams) -> np.ndarray:
    """H = Δ_cav a†a + Δ_A(n₁+n₂) + g0 Σ(a†σ₋ + aσ₊) + U n₁n₂ + η Σ(σ₊+σ₋)."""
    s = p.space
    a = annihilation(s)
    ad = a.conj().T
    n1, n2 = excitation(s, 1), excitation(s, 2)
    h = p.cavity_detuning * (ad @ a) + p.delta_a * (n1 + n2) + p.u_vdw * (n1 @ n2)
    for j in (1, 2):
        sm = sigma_minus(s, j)
        sp_ = sm.conj().T
        h = h + p.g0 * (ad @ sm + a @ sp_) + p.eta * (sp_ + sm)
    return h


def collective_hamiltonian(p: SystemParams) -> np.ndarray:
    """Same dynamics written with collective spin operators.

    Differs from :func:`hamiltonian` by exactly ``-delta_a * I`` because J_z
    counts excitations from -1 rather than 0.
    """
    s = p.space
    a = annihilation(s)
    ad = a.conj().T
    jp, jm, jz = collective_ops(s)
    eye = np.eye(s.dim)
    return (p.cavity_detuning * (ad @ a) + p.delta_a * jz
            + np.sqrt(2) * p.g0 * (a @ jp + ad @ jm)
            + np.sqrt(2) * p.eta * (jp + jm)
            + 0.5 * p.u_vdw * (eye + jz) @ jz)


def jump_labels(p: SystemParams) -> list[str]:
    return ["cavity"] * p.cavity_dissipator_count + ["atom1", "atom2"]


def jump_operators(p: SystemParams) -> list[np.ndarray]:
    """Collapse operators sqrt(2κ) a and sqrt(2γ) σ₋⁽ʲ⁾.

    ``cavity_dissipator_count=2`` repeats the cavity channel, which reproduces
    the literal double sum over the cavity dissipator (field decay 4κ).
    """
    s = p.space
    cav = np.sqrt(2 * p.kappa) * annihilation(s)
    ops = [cav] * p.cavity_dissipator_count
    ops += [np.sqrt(2 * p.gamma) * sigma_minus(s, j) for j in (1, 2)]
    return ops


def effective_hamiltonian(p: SystemParams) -> np.ndarray:
    """Non-Hermitian no-jump generator H - (i/2) Σ c†c."""
    h = hamiltonian(p).astype(complex)
    for c in jump_operators(p):
        h = h - 0.5j * (c.conj().T @ c)
    return h


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray) -> np.ndarray:
    d = math.isqrt(v.shape[0])
    return np.asarray(v).reshape((d, d), order="F")


def liouvillian(p: SystemParams) -> sp.csc_matrix:
    """Sparse generator L with vec(dρ/dt) = L vec(ρ) (column stacking)."""
    h = sp.csr_matrix(hamiltonian(p))
    d = h.shape[0]
    eye = sp.identity(d, dtype=complex, format="csr")
    out = -1j * (sp.kron(eye, h) - sp.kron(h.T, eye))
    for c in jump_operators(p):
        cs = sp.csr_matrix(c)
        if cs.nnz == 0:
            continue
        cdc = (cs.conj().T @ cs).tocsr()
        out = out + sp.kron(cs.conj(), cs) - 0.5 * sp.kron(eye, cdc) - 0.5 * sp.kron(cdc.T, eye)
    out = out.tocsc()
    out.eliminate_zeros()
    return out


def lindblad_rhs(p: SystemParams, rho: np.ndarray) -> np.ndarray:
    """dρ/dt evaluated directly in operator form (no superoperator)."""
    h = hamiltonian(p)
    out = -1j * (h @ rho - rho @ h)
    for c in jump_operators(p):
        cd = c.conj().T
        cdc = cd @ c
        out += c @ rho @ cd - 0.5 * (cdc @ rho + rho @ cdc)
    return out
