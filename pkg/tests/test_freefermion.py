import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import fock
from locsense import freefermion as ff
from locsense.model import LatticeSpec, build_hamiltonian, fibonacci_lattice
from locsense.metrology import cdw_observable


def rand_state(seed, L, n):
    return ff.SlaterState(fock.random_orbitals(np.random.default_rng(seed), L, n))


class TestDiagonalize:
    def test_plane_waves(self):
        sd = ff.spectrum(LatticeSpec(3, 1, 2), 0.0)
        assert np.allclose(sd.energies, [-2, 1, 1])

    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError):
            ff.diagonalize(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_propagator_unitary(self):
        sd = ff.spectrum(fibonacci_lattice(21), 1.3)
        U = sd.propagator(0.9)
        assert np.allclose(U @ U.conj().T, np.eye(21), atol=1e-12)

    def test_eigenbasis_vector_and_matrix_agree(self):
        spec = fibonacci_lattice(13)
        sd = ff.spectrum(spec, 0.7)
        assert np.allclose(sd.to_eigenbasis(spec.potential), sd.to_eigenbasis(np.diag(spec.potential)))


class TestGroundState:
    def test_localized_single_particle(self):
        psi = ff.ground_state(fibonacci_lattice(89), 5.0, 1).orbitals[:, 0]
        assert np.sum(np.abs(psi) ** 4) > 0.5

    def test_full_band_identity(self):
        st_ = ff.ground_state(fibonacci_lattice(13), 1.1, 13)
        assert np.allclose(ff.correlation_matrix(st_).C, np.eye(13), atol=1e-12)

    def test_matches_full_spectrum(self):
        spec = fibonacci_lattice(55)
        a = ff.correlation_matrix(ff.ground_state(spec, 2.1, 28)).C
        b = ff.correlation_matrix(ff.lowest_orbitals(ff.spectrum(spec, 2.1), 28)).C
        assert np.allclose(a, b, atol=1e-11)

    def test_half_filling_occupies_negative_levels(self):
        spec = fibonacci_lattice(89)
        sd = ff.spectrum(spec, 2.0)
        assert ff.negative_energy_count(spec, 2.0) == 45
        assert sd.energies[44] < 0 < sd.energies[45]

    def test_degenerate_fermi_level(self):
        with pytest.raises(ff.DegenerateFermiLevel):
            ff.ground_state(LatticeSpec(3, 1, 2), 0.0, 2)

    @pytest.mark.parametrize("n_f", [0, 14])
    def test_bad_filling(self, n_f):
        with pytest.raises(ValueError):
            ff.ground_state(fibonacci_lattice(13), 1.0, n_f)


class TestNegativeEnergyCount:
    def test_small(self):
        assert ff.negative_energy_count(fibonacci_lattice(3), 0.0) == 1

    def test_ambiguous(self):
        # L=4 ring at V=0 has two zero modes
        with pytest.raises(ff.AmbiguousFilling):
            ff.negative_energy_count(LatticeSpec(4, 1, 3), 0.0)


class TestCorrelation:
    def test_localized_orbital(self):
        phi = np.zeros(7)
        phi[3] = 1.0
        C = ff.correlation_matrix(ff.SlaterState(phi)).C
        expected = np.zeros((7, 7))
        expected[3, 3] = 1.0
        assert np.array_equal(C, expected)

    def test_against_fock(self):
        s = rand_state(1, 6, 3)
        ref = fock.correlation(fock.slater_vector(s.orbitals))
        assert np.allclose(ff.correlation_matrix(s).C, ref, atol=1e-12)

    def test_number(self):
        C = ff.correlation_matrix(rand_state(2, 8, 5))
        assert ff.expectation_linear(C, np.ones(8)) == pytest.approx(5.0, abs=1e-12)
        assert ff.variance_linear(C, np.ones(8)) == pytest.approx(0.0, abs=1e-12)

    def test_cdw_perfect_imbalance(self):
        phi = np.eye(9)[:, ::2]
        C = ff.correlation_matrix(ff.SlaterState(phi))
        assert abs(ff.expectation_linear(C, cdw_observable(9, 5))) == pytest.approx(1.0)

    def test_cdw_localized_vs_extended(self):
        spec = fibonacci_lattice(89)
        obs = cdw_observable(89, 1)
        ext = ff.expectation_linear(ff.correlation_matrix(ff.ground_state(spec, 0.5, 1)), obs)
        loc = ff.expectation_linear(ff.correlation_matrix(ff.ground_state(spec, 5.0, 1)), obs)
        assert abs(ext) < 0.05 and abs(loc) > 0.5

    def test_variance_against_fock(self):
        rng = np.random.default_rng(3)
        s = rand_state(3, 6, 3)
        o = rng.normal(size=6)
        v = fock.slater_vector(s.orbitals)
        ref = fock.variance(v, fock.linear(o))
        assert ff.variance_linear(ff.correlation_matrix(s), o) == pytest.approx(ref, abs=1e-10)

    def test_single_particle_variance(self):
        psi = ff.ground_state(fibonacci_lattice(21), 1.9, 1).orbitals[:, 0]
        o = cdw_observable(21, 1).coefficients
        p = np.abs(psi) ** 2
        direct = np.dot(o * o, p) - np.dot(o, p) ** 2
        got = ff.variance_linear(ff.correlation_matrix(ff.SlaterState(psi)), o)
        assert got == pytest.approx(direct, rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ff.expectation_linear(ff.correlation_matrix(rand_state(0, 5, 2)), np.ones(4))

    def test_onebody_against_fock(self):
        rng = np.random.default_rng(4)
        s = rand_state(4, 6, 3)
        A = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
        A = A + A.conj().T
        v = fock.slater_vector(s.orbitals)
        op = fock.one_body(A)
        C = ff.correlation_matrix(s)
        assert ff.expectation_onebody(C, A).real == pytest.approx(fock.expectation(v, op), abs=1e-10)
        assert ff.variance_onebody(C, A) == pytest.approx(fock.variance(v, op), abs=1e-10)


class TestOverlap:
    def test_self(self):
        s = rand_state(5, 8, 4)
        assert abs(ff.slater_overlap(s, s)) == pytest.approx(1.0, abs=1e-13)
        assert ff.slater_infidelity(s, s) == pytest.approx(0.0, abs=1e-15)

    def test_orthogonal(self):
        a = ff.SlaterState(np.eye(6)[:, :3])
        b = ff.SlaterState(np.eye(6)[:, 3:])
        assert ff.slater_overlap(a, b) == 0
        assert ff.slater_infidelity(a, b) == 1.0

    def test_against_fock(self):
        a, b = rand_state(6, 6, 2), rand_state(7, 6, 2)
        ref = np.vdot(fock.slater_vector(a.orbitals), fock.slater_vector(b.orbitals))
        assert ff.slater_overlap(a, b) == pytest.approx(ref, abs=1e-10)
        assert 1 - ff.slater_infidelity(a, b) == pytest.approx(abs(ref), abs=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ff.slater_overlap(rand_state(0, 6, 2), rand_state(0, 6, 3))

    def test_infidelity_resolves_tiny_angles(self):
        spec = fibonacci_lattice(233)
        a = ff.ground_state(spec, 2.0, 1)
        b = ff.ground_state(spec, 2.0 + 1e-7, 1)
        val = ff.slater_infidelity(a, b)
        assert 0 < val < 1e-8


# property checks against the Fock oracle for every L up to 8
sizes = st.integers(2, 8).flatmap(lambda L: st.tuples(st.just(L), st.integers(1, L)))


@settings(max_examples=25, deadline=None)
@given(sizes, st.integers(0, 2 ** 31))
def test_wick_matches_fock(Ln, seed):
    L, n = Ln
    rng = np.random.default_rng(seed)
    s = ff.SlaterState(fock.random_orbitals(rng, L, n))
    o = rng.normal(size=L)
    v = fock.slater_vector(s.orbitals)
    C = ff.correlation_matrix(s)
    assert np.allclose(C.C, fock.correlation(v), atol=1e-9)
    op = fock.linear(o)
    assert abs(ff.expectation_linear(C, o) - fock.expectation(v, op)) < 1e-9
    assert abs(ff.variance_linear(C, o) - fock.variance(v, op)) < 1e-9


@settings(max_examples=25, deadline=None)
@given(sizes, st.integers(0, 2 ** 31))
def test_overlap_matches_fock(Ln, seed):
    L, n = Ln
    rng = np.random.default_rng(seed)
    a = ff.SlaterState(fock.random_orbitals(rng, L, n))
    b = ff.SlaterState(fock.random_orbitals(rng, L, n))
    ref = np.vdot(fock.slater_vector(a.orbitals), fock.slater_vector(b.orbitals))
    assert abs(ff.slater_overlap(a, b) - ref) < 1e-9
    assert abs(abs(ff.slater_overlap(a, b)) - abs(ff.slater_overlap(b, a))) < 1e-12


@settings(max_examples=25, deadline=None)
@given(sizes, st.integers(0, 2 ** 31))
def test_gauge_invariance(Ln, seed):
    L, n = Ln
    rng = np.random.default_rng(seed)
    phi = fock.random_orbitals(rng, L, n)
    U = fock.random_orbitals(rng, n, n)
    a = ff.correlation_matrix(ff.SlaterState(phi)).C
    b = ff.correlation_matrix(ff.SlaterState(phi @ U)).C
    assert np.max(np.abs(a - b)) < 1e-10
