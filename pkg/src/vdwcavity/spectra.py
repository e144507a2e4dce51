"""
Dressed states of the undriven system in fixed-excitation manifolds, and the
closed-form blockade / antiblockade conditions.

Energies are measured from N times the common atom/cavity frequency, i.e.
the block is diagonalized at zero detuning.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ManifoldSpectrum",
    "manifold_block",
    "manifold_spectrum",
    "magic_detuning",
    "antiblockade_detuning",
    "overlap_vdw",
]

_LABELS = {
    1: ["gg,1", "+,0", "-,0"],
    2: ["gg,2", "+,1", "ee,0", "-,1"],
}


@dataclass
class ManifoldSpectrum:
    excitation_number: int
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, in the order of ``basis``
    basis: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        vecs = []
        for k in range(self.eigenvectors.shape[1]):
            col = self.eigenvectors[:, k]
            vecs.append({"re": col.real.tolist(), "im": col.imag.tolist()})
        return {
            "excitation_number": self.excitation_number,
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "basis": list(self.basis),
            "eigenvectors": vecs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def manifold_block(g0: float, u_vdw: float, n_excitation: int,
                   include_dark: bool = False) -> tuple[np.ndarray, list[str]]:
    """Hamiltonian block in the collective basis of the N-quanta manifold.

    Symmetric sector first ({|gg,N>, |+,N-1>, |ee,N-2>} truncated to what
    exists), then optionally the antisymmetric |-,N-1>, which has no
    coupling to the rest.
    """
    if n_excitation == 1:
        h = np.array([[0.0, math.sqrt(2) * g0],
                      [math.sqrt(2) * g0, 0.0]])
    elif n_excitation == 2:
        h = np.array([[0.0, 2 * g0, 0.0],
                      [2 * g0, 0.0, math.sqrt(2) * g0],
                      [0.0, math.sqrt(2) * g0, u_vdw]])
    else:
        raise ValueError(f"only the one- and two-quanta manifolds are supported, got {n_excitation!r}")
    labels = _LABELS[n_excitation]
    if not include_dark:
        return h, labels[:-1]
    m = h.shape[0]
    full = np.zeros((m + 1, m + 1))
    full[:m, :m] = h
    return full, labels


def _fix_phase(vecs: np.ndarray) -> np.ndarray:
    vecs = vecs.astype(complex)
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        big = col[np.argmax(np.abs(col))]
        vecs[:, k] = col * (abs(big) / big)
    return vecs


def manifold_spectrum(g0: float, u_vdw: float, n_excitation: int,
                      include_dark: bool = False) -> ManifoldSpectrum:
    """Diagonalize the one- or two-quanta block.

    N=1 gives ±sqrt(2) g0; N=2 gives the three levels mixing |gg,2>, |+,1>
    and the vdW-shifted |ee,0>. With ``include_dark`` the decoupled
    antisymmetric level (energy 0) is appended to the block.
    """
    h, labels = manifold_block(g0, u_vdw, n_excitation, include_dark)
    if include_dark and np.any(h[-1, :-1] != 0):
        raise AssertionError("antisymmetric state is not decoupled")
    vals, vecs = np.linalg.eigh(h)
    return ManifoldSpectrum(n_excitation, vals, _fix_phase(vecs), labels)


def magic_detuning(u_vdw: float) -> float:
    """Δ_A = -U/3: the two paths into |gg,2> cancel (U + 2Δ = -Δ)."""
    if u_vdw < 0:
        raise ValueError("u_vdw must be >= 0")
    return -u_vdw / 3


def antiblockade_detuning(u_vdw: float) -> float:
    """Δ_A = -U/2: |ee,0> is two-photon resonant (2Δ + U = 0)."""
    if u_vdw < 0:
        raise ValueError("u_vdw must be >= 0")
    return -u_vdw / 2


def overlap_vdw(g0: float) -> float:
    """U = 3 sqrt(2) g0, where -U/3 coincides with the lower dressed resonance."""
    return 3 * math.sqrt(2) * g0
