"""
Steady state of the Liouvillian by shifted inverse power iteration, photon
statistics of a density matrix, and an explicit RK4 integrator used as an
independent check of the steady-state solver.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .hilbert import SpaceSpec, annihilation
from .model import unvec, vec

__all__ = [
    "SteadyStateError",
    "SteadyResult",
    "Observables",
    "G2_FLOOR",
    "solve_steady",
    "steady_state",
    "observables",
    "liouvillian_norm_bound",
    "liouvillian_gap",
    "time_evolve_oracle",
    "trace_distance",
    "coherent_state",
]

G2_FLOOR = 1e-12


class SteadyStateError(RuntimeError):
    """Inverse iteration failed; ``residual`` holds the last residual."""

    def __init__(self, msg, residual=math.nan):
        super().__init__(msg)
        self.residual = residual


@dataclass
class SteadyResult:
    rho: np.ndarray
    residual: float
    iterations: int
    shift: float


def _finish(x: np.ndarray) -> np.ndarray:
    rho = unvec(x)
    rho = rho / np.trace(rho)
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def solve_steady(L, tol: float = 1e-10, max_iter: int = 200, shift: float = 1e-6,
                 x0: np.ndarray | None = None, max_shift_retries: int = 3) -> SteadyResult:
    """Inverse power iteration on ``L - shift*I`` towards the zero eigenvalue.

    The sparse LU factorization is computed once and reused. Convergence
    requires both ``||L vec(rho)|| / ||vec(rho)|| < tol`` and a change of
    the trace-normalized iterate below ``tol``; a small residual alone lets
    slowly decaying modes (rate ~ gamma) survive at the 1e-8 level.

    If the factorization is exactly singular the shift is multiplied by 10,
    up to ``max_shift_retries`` times.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    L = sp.csc_matrix(L)
    n = L.shape[0]
    d = math.isqrt(n)
    eye = sp.identity(n, dtype=complex, format="csc")

    lu = None
    sigma = shift
    for _ in range(max_shift_retries + 1):
        try:
            lu = spla.splu((L - sigma * eye).tocsc())
            break
        except RuntimeError:
            sigma *= 10
    if lu is None:
        raise SteadyStateError(f"factorization singular up to shift {sigma / 10:g}")

    if x0 is None:
        x = vec(np.eye(d, dtype=complex) / d)
    else:
        x = np.asarray(x0, dtype=complex).ravel().copy()
    x = x / np.linalg.norm(x)

    prev = None
    residual = math.inf
    for it in range(1, max_iter + 1):
        y = lu.solve(x)
        nrm = np.linalg.norm(y)
        if not np.isfinite(nrm) or nrm == 0:
            raise SteadyStateError("inverse iteration produced a non-finite iterate", residual)
        x = y / nrm
        rho = _finish(x)
        v = vec(rho)
        residual = float(np.linalg.norm(L @ v) / np.linalg.norm(v))
        change = math.inf if prev is None else float(np.linalg.norm(v - prev))
        prev = v
        if residual < tol and change < tol:
            return SteadyResult(rho, residual, it, sigma)
    raise SteadyStateError(
        f"no convergence after {max_iter} iterations (residual {residual:.3e})", residual)


def steady_state(L, tol: float = 1e-10, max_iter: int = 200, **kwargs) -> np.ndarray:
    """Steady-state density matrix of ``L`` (see :func:`solve_steady`)."""
    return solve_steady(L, tol=tol, max_iter=max_iter, **kwargs).rho


@dataclass(frozen=True)
class Observables:
    """Photon number and equal-time correlations; NaN marks undefined ratios."""

    mean_photon: float
    g2: float
    g3: float

    @property
    def defined(self) -> bool:
        return not (math.isnan(self.g2) or math.isnan(self.g3))

    def as_dict(self) -> dict:
        return {"mean_photon": self.mean_photon, "g2": self.g2, "g3": self.g3}


def _real_trace(op, rho, name):
    val = np.trace(op @ rho)
    if abs(val.imag) > 1e-9 * max(1.0, abs(val.real)):
        raise ValueError(f"<{name}> has imaginary part {val.imag:.3e}")
    return float(val.real)


def observables(rho: np.ndarray, spec: SpaceSpec, floor: float = G2_FLOOR) -> Observables:
    """<a†a>, g2(0) = <a†²a²>/<a†a>², g3(0) = <a†³a³>/<a†a>³.

    Ratios are NaN when <a†a> < ``floor``; g3 is NaN when the truncation has
    fewer than three Fock levels.
    """
    a = annihilation(spec)
    ad = a.conj().T
    a2 = a @ a
    n = _real_trace(ad @ a, rho, "a†a")
    if n < floor:
        return Observables(max(n, 0.0), math.nan, math.nan)
    g2 = _real_trace(ad @ ad @ a2, rho, "a†²a²") / n**2
    if spec.n_max < 3:
        return Observables(n, g2, math.nan)
    a3 = a2 @ a
    g3 = _real_trace(a3.conj().T @ a3, rho, "a†³a³") / n**3
    return Observables(n, g2, g3)


def coherent_state(spec: SpaceSpec, alpha: complex, atoms: int = 0) -> np.ndarray:
    """Truncated (renormalized) coherent state ⊗ atomic basis state ``atoms``."""
    k = np.arange(spec.n_max)
    logfact = np.array([math.lgamma(i + 1) for i in k])
    amp = np.exp(-abs(alpha) ** 2 / 2 - 0.5 * logfact) * alpha ** k
    amp = amp / np.linalg.norm(amp)
    atom = np.zeros(4)
    atom[atoms] = 1.0
    psi = np.kron(amp, atom)
    return np.outer(psi, psi.conj())


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Half the trace norm of the (Hermitian) difference."""
    diff = rho - sigma
    diff = 0.5 * (diff + diff.conj().T)
    return 0.5 * float(np.abs(np.linalg.eigvalsh(diff)).sum())


def liouvillian_norm_bound(L) -> float:
    """Upper bound sqrt(||L||_1 ||L||_inf) on the spectral norm."""
    L = sp.csr_matrix(L)
    absL = abs(L)
    col = float(absL.sum(axis=0).max())
    row = float(absL.sum(axis=1).max())
    return math.sqrt(col * row)


def liouvillian_gap(L, k: int = 6) -> float:
    """Smallest |Re λ| among the nonzero eigenvalues of L nearest zero."""
    vals = spla.eigs(sp.csc_matrix(L), k=k, sigma=1e-7, return_eigenvectors=False)
    scale = liouvillian_norm_bound(L)
    nonzero = [abs(v.real) for v in vals if abs(v) > 1e-9 * scale]
    if not nonzero:
        raise SteadyStateError("could not locate a nonzero Liouvillian eigenvalue")
    return min(nonzero)


def _hermitian_basis(d: int) -> sp.csc_matrix:
    """Orthonormal Hermitian operator basis as columns acting on vec(rho)."""
    rows, cols, vals = [], [], []
    col = 0
    s = 1 / math.sqrt(2)
    for i in range(d):
        rows.append(i + d * i)
        cols.append(col)
        vals.append(1.0)
        col += 1
    for i in range(d):
        for j in range(i + 1, d):
            ij, ji = i + d * j, j + d * i  # column-stacked positions of E_ij, E_ji
            rows += [ij, ji]
            cols += [col, col]
            vals += [s, s]
            rows += [ij, ji]
            cols += [col + 1, col + 1]
            vals += [1j * s, -1j * s]
            col += 2
    return sp.csc_matrix((vals, (rows, cols)), shape=(d * d, d * d), dtype=complex)


_DENSE_LIMIT = 4096  # largest D² for which the RK4 step is formed as a dense matrix
_LOOP_LIMIT = 256


def time_evolve_oracle(L, rho0: np.ndarray, t_final: float, dt: float) -> np.ndarray:
    """Fixed-step classical RK4 integration of vec(dρ/dt) = L vec(ρ).

    Requires ``dt * ||L|| < 0.1`` (with the Hölder bound on ||L||). The last
    step is shortened so that exactly ``t_final`` is reached.

    Many steps are applied by repeated squaring of the RK4 step matrix,
    written in a real Hermitian-operator basis, which is the same map as
    stepping one at a time up to rounding.
    """
    if t_final < 0:
        raise ValueError("t_final must be >= 0")
    if dt <= 0:
        raise ValueError("dt must be positive")
    L = sp.csc_matrix(L)
    bound = liouvillian_norm_bound(L)
    if dt * bound >= 0.1:
        raise ValueError(f"dt*||L|| = {dt * bound:.3g} violates the stability bound 0.1")
    rho0 = np.asarray(rho0, dtype=complex)
    if t_final == 0:
        return rho0.copy()
    n_steps = int(math.floor(t_final / dt))
    rest = t_final - n_steps * dt
    if rest < 1e-12 * t_final:
        rest = 0.0
    d = rho0.shape[0]
    tr0 = np.trace(rho0)

    if n_steps <= _LOOP_LIMIT or L.shape[0] > _DENSE_LIMIT:
        x = vec(rho0).copy()
        for _ in range(n_steps):
            x = _rk4_step(L, x, dt)
    else:
        B = _hermitian_basis(d)
        A = (B.conj().T @ L @ B).toarray()
        if np.max(np.abs(A.imag)) > 1e-9 * bound:
            raise ValueError("L does not preserve Hermiticity")
        A = A.real
        y = (B.conj().T @ vec(rho0)).real
        y = _power_apply(_rk4_matrix(A, dt), n_steps, y)
        x = B @ y
    if rest:
        x = _rk4_step(L, x, rest)
    rho = unvec(x)
    drift = abs(np.trace(rho) - tr0)
    if drift > 1e-8:
        raise SteadyStateError(f"trace drift {drift:.3e} in RK4 integration")
    return rho


def _rk4_step(L, x, h):
    k1 = L @ x
    k2 = L @ (x + 0.5 * h * k1)
    k3 = L @ (x + 0.5 * h * k2)
    k4 = L @ (x + h * k3)
    return x + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


def _rk4_matrix(A, h):
    # Horner form of I + hA + (hA)²/2 + (hA)³/6 + (hA)⁴/24
    eye = np.eye(A.shape[0])
    hA = h * A
    P = eye + hA / 4
    P = eye + (hA / 3) @ P
    P = eye + (hA / 2) @ P
    return eye + hA @ P


def _power_apply(P, n, y):
    while n:
        if n & 1:
            y = P @ y
        n >>= 1
        if n:
            P = P @ P
    return y
