"""
Truncated composite Hilbert space: cavity Fock ⊗ atom 1 ⊗ atom 2.

Basis ordering is frozen: composite index = fock * 4 + atom1 * 2 + atom2,
with the single-atom code g = 0, e = 1. Operators are dense complex numpy
arrays of shape (4 * n_max, 4 * n_max).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SpaceSpec",
    "basis_index",
    "basis_state",
    "annihilation",
    "creation",
    "sigma_minus",
    "sigma_plus",
    "excitation",
    "collective_ops",
    "number_operator",
    "excitation_number",
    "is_hermitian",
    "commutator",
]

_ATOM_CODE = {"g": 0, "e": 1}
_SIGMA_MINUS = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)  # |g><e|
_I2 = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class SpaceSpec:
    """Cavity truncation (Fock levels 0..n_max-1) for two two-level atoms."""

    n_max: int
    n_atoms: int = 2

    def __post_init__(self):
        if int(self.n_max) != self.n_max or self.n_max < 2:
            raise ValueError(f"n_max must be an integer >= 2, got {self.n_max!r}")
        if self.n_atoms != 2:
            raise ValueError("only two atoms are supported")

    @property
    def dim(self) -> int:
        return 4 * self.n_max


def basis_index(spec: SpaceSpec, atoms: str, fock: int) -> int:
    """Composite index of |atoms, fock>, e.g. ``basis_index(s, "eg", 0)``."""
    if len(atoms) != 2 or any(c not in _ATOM_CODE for c in atoms):
        raise ValueError(f"atoms must be a two-letter g/e label, got {atoms!r}")
    if not 0 <= fock < spec.n_max:
        raise ValueError(f"fock index {fock} outside 0..{spec.n_max - 1}")
    return 4 * fock + 2 * _ATOM_CODE[atoms[0]] + _ATOM_CODE[atoms[1]]


def basis_state(spec: SpaceSpec, atoms: str, fock: int) -> np.ndarray:
    """State vector for a product basis label.

    Besides ``gg``, ``eg``, ``ge``, ``ee`` the collective labels ``+`` and
    ``-`` give (|eg> ± |ge>)/sqrt(2).
    """
    psi = np.zeros(spec.dim, dtype=complex)
    if atoms in ("+", "-"):
        sign = 1.0 if atoms == "+" else -1.0
        psi[basis_index(spec, "eg", fock)] = 1 / np.sqrt(2)
        psi[basis_index(spec, "ge", fock)] = sign / np.sqrt(2)
    else:
        psi[basis_index(spec, atoms, fock)] = 1.0
    return psi


def annihilation(spec: SpaceSpec) -> np.ndarray:
    """Cavity lowering operator a ⊗ I ⊗ I."""
    a_fock = np.diag(np.sqrt(np.arange(1, spec.n_max)), k=1).astype(complex)
    return np.kron(a_fock, np.eye(4, dtype=complex))


def creation(spec: SpaceSpec) -> np.ndarray:
    return annihilation(spec).conj().T


def sigma_minus(spec: SpaceSpec, j: int) -> np.ndarray:
    """Lowering operator |g><e| of atom ``j`` (1 or 2) on the composite space."""
    if j == 1:
        atomic = np.kron(_SIGMA_MINUS, _I2)
    elif j == 2:
        atomic = np.kron(_I2, _SIGMA_MINUS)
    else:
        raise ValueError(f"atom index must be 1 or 2, got {j!r}")
    return np.kron(np.eye(spec.n_max, dtype=complex), atomic)


def sigma_plus(spec: SpaceSpec, j: int) -> np.ndarray:
    return sigma_minus(spec, j).conj().T


def excitation(spec: SpaceSpec, j: int) -> np.ndarray:
    """Projector n_j = σ₊σ₋ onto the excited state of atom ``j``."""
    sm = sigma_minus(spec, j)
    return sm.conj().T @ sm


def number_operator(spec: SpaceSpec) -> np.ndarray:
    a = annihilation(spec)
    return a.conj().T @ a


def excitation_number(spec: SpaceSpec) -> np.ndarray:
    """Total quanta a†a + n₁ + n₂ (conserved by the undriven coupling)."""
    return number_operator(spec) + excitation(spec, 1) + excitation(spec, 2)


def collective_ops(spec: SpaceSpec):
    """Collective spin operators ``(J_plus, J_minus, J_z)``.

    J_z is half the sum of the single-atom Pauli-z operators, i.e.
    n₁ + n₂ - 1, so that J_z has eigenvalues -1, 0, +1 on gg, (±), ee.
    """
    j_plus = (sigma_plus(spec, 1) + sigma_plus(spec, 2)) / np.sqrt(2)
    j_minus = j_plus.conj().T
    j_z = excitation(spec, 1) + excitation(spec, 2) - np.eye(spec.dim)
    return j_plus, j_minus, j_z


def commutator(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return x @ y - y @ x


def is_hermitian(op: np.ndarray, tol: float = 1e-12) -> bool:
    return bool(np.max(np.abs(op - op.conj().T), initial=0.0) <= tol)
