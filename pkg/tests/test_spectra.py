import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vdwcavity.hilbert import basis_state, excitation_number
from vdwcavity.model import SystemParams, hamiltonian
from vdwcavity.spectra import (antiblockade_detuning, magic_detuning, manifold_block,
                               manifold_spectrum, overlap_vdw)

G0 = 5.0


def test_single_quantum_levels():
    sp = manifold_spectrum(G0, 0.0, 1)
    np.testing.assert_allclose(sp.eigenvalues, [-7.0710678, 7.0710678], atol=1e-6)


def test_two_quanta_levels_without_interaction():
    sp = manifold_spectrum(G0, 0.0, 2)
    r = math.sqrt(6) * G0
    np.testing.assert_allclose(sp.eigenvalues, [-r, 0.0, r], atol=1e-12)


def test_two_quanta_strong_interaction_limit():
    u = 1000 * G0
    vals = manifold_spectrum(G0, u, 2).eigenvalues
    scale = G0 ** 2 / u
    assert abs(vals[-1] - u) < 10 * scale
    np.testing.assert_allclose(vals[:2], [-2 * G0, 2 * G0], atol=10 * scale)


def test_sorted_and_normalized():
    for n in (1, 2):
        sp = manifold_spectrum(G0, 17.0, n, include_dark=True)
        assert np.all(np.diff(sp.eigenvalues) >= 0)
        np.testing.assert_allclose(np.linalg.norm(sp.eigenvectors, axis=0), 1, atol=1e-12)
        assert sp.basis[-1].startswith("-")


def test_phase_convention_and_serialization():
    sp = manifold_spectrum(G0, 40.0, 2)
    for k in range(sp.eigenvectors.shape[1]):
        col = sp.eigenvectors[:, k]
        big = col[np.argmax(np.abs(col))]
        assert big.imag == 0 and big.real > 0
    data = json.loads(sp.to_json())
    assert data["excitation_number"] == 2 and len(data["eigenvectors"]) == 3


def test_unsupported_manifold():
    with pytest.raises(ValueError):
        manifold_block(G0, 0.0, 3)


def test_single_quantum_independent_of_interaction():
    ref = manifold_spectrum(G0, 0.0, 1).eigenvalues
    for u in (0.0, 8 * G0, 100 * G0):
        np.testing.assert_array_equal(manifold_spectrum(G0, u, 1).eigenvalues, ref)
    assert not np.allclose(manifold_spectrum(G0, 0.0, 2).eigenvalues,
                           manifold_spectrum(G0, 8 * G0, 2).eigenvalues)


@pytest.mark.parametrize("u", [0.0, 40.0, 300.0])
def test_matches_full_hamiltonian_sectors(u):
    p = SystemParams(g0=G0, eta=0.0, kappa=3.0, gamma=0.0, u_vdw=u, delta_a=0.0, n_max=4)
    h = hamiltonian(p)
    nexc = np.rint(np.real(np.diag(excitation_number(p.space))))
    for n in (1, 2):
        idx = np.flatnonzero(nexc == n)
        full = np.linalg.eigvalsh(h[np.ix_(idx, idx)])
        block = manifold_spectrum(G0, u, n, include_dark=True).eigenvalues
        np.testing.assert_allclose(np.sort(block), full, atol=1e-10)


def test_antisymmetric_states_decouple():
    p = SystemParams(g0=G0, eta=0.0, kappa=3.0, gamma=0.0, u_vdw=40.0, n_max=4)
    h = hamiltonian(p)
    s = p.space
    for n in range(s.n_max):
        dark = basis_state(s, "-", n)
        for lab, m in (("gg", n + 1), ("+", n), ("ee", n - 1)):
            if 0 <= m < s.n_max:
                assert abs(dark.conj() @ h @ basis_state(s, lab, m)) < 1e-14


def test_condition_values():
    assert magic_detuning(40.0) == pytest.approx(-13.333333333)
    assert magic_detuning(0.0) == 0.0
    assert magic_detuning(3 * math.sqrt(2) * G0) == pytest.approx(-math.sqrt(2) * G0)
    assert antiblockade_detuning(40.0) == -20.0
    assert antiblockade_detuning(0.0) == 0.0
    assert overlap_vdw(G0) == pytest.approx(21.2132034)
    assert overlap_vdw(0.0) == 0.0
    with pytest.raises(ValueError):
        magic_detuning(-1.0)


@given(u=st.floats(0, 1e3))
def test_antiblockade_two_photon_resonance(u):
    assert abs(2 * antiblockade_detuning(u) + u) <= 1e-15 * u + 1e-300  # subnormal halving rounds


@settings(max_examples=20)
@given(g0=st.floats(0.01, 100))
def test_overlap_closure(g0):
    assert abs(magic_detuning(overlap_vdw(g0)) + math.sqrt(2) * g0) < 1e-12 * max(1, g0)
