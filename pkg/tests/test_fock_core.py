import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm
from scipy.stats import poisson

from cvqwc.fock import (
    DensityMatrix,
    FockError,
    FockState,
    apply_beam_splitter,
    apply_displacement,
    apply_phase_rotation,
    apply_two_mode_squeeze,
    beam_splitter_matrix,
    displacement_matrix,
    fidelity,
    make_fock,
    make_vacuum,
    mode,
    partial_trace,
    trace_distance,
    two_mode_squeeze_matrix,
)

A, B, C = mode("A", "H"), mode("B", "H"), mode("in", "V")


def ladder(dim):
    return np.diag(np.sqrt(np.arange(1, dim)), 1)


def padded_expm_single(gen_fn, dim, pad):
    big = dim + pad
    return expm(gen_fn(ladder(big)))[:dim, :dim]


def padded_expm_pair(gen_fn, dim, pad):
    big = dim + pad
    a = ladder(big)
    ea, eb = np.kron(a, np.eye(big)), np.kron(np.eye(big), a)
    u = expm(gen_fn(ea, eb)).reshape(big, big, big, big)
    return u[:dim, :dim, :dim, :dim]


def random_state(rng, modes, cutoff):
    amps = rng.normal(size=(cutoff + 1,) * len(modes)) + 1j * rng.normal(size=(cutoff + 1,) * len(modes))
    return FockState(modes, cutoff, amps / np.linalg.norm(amps))


class TestConstruction:
    def test_vacuum_one_mode(self):
        assert np.allclose(make_vacuum([A], 3).amplitudes, [1, 0, 0, 0])

    def test_vacuum_two_modes_normalized(self):
        s = make_vacuum([A, B], 2)
        assert s.norm2() == pytest.approx(1.0)
        assert s.leakage == 0.0

    def test_empty_modes_rejected(self):
        with pytest.raises(FockError):
            make_vacuum([], 3)

    def test_duplicate_modes_rejected(self):
        with pytest.raises(FockError):
            make_vacuum([A, A], 3)

    def test_zero_cutoff_rejected(self):
        with pytest.raises(FockError):
            make_vacuum([A], 0)

    def test_mode_label_roundtrip(self):
        m = mode("B", "sigma_plus", -2)
        assert str(m) == "(B,sigma_plus,-2)"
        assert m.relabel(pol="V") == mode("B", "V", -2)


class TestDisplacement:
    def test_zero_is_identity(self, rng):
        s = random_state(rng, [A, B], 4)
        assert np.allclose(apply_displacement(s, A, 0).amplitudes, s.amplitudes)

    def test_coherent_amplitudes(self):
        s = apply_displacement(make_vacuum([A], 20), A, 1.0)
        assert s.amplitudes[0] == pytest.approx(math.exp(-0.5), abs=1e-12)
        assert s.amplitudes[1] == pytest.approx(math.exp(-0.5), abs=1e-12)

    def test_leakage_is_poisson_tail(self):
        s = apply_displacement(make_vacuum([A], 4), A, 3.0)
        tail = poisson.sf(4, 9.0)
        assert s.leakage == pytest.approx(tail, abs=1e-12)
        assert s.leakage > 0.1

    def test_unknown_mode(self):
        with pytest.raises(FockError):
            apply_displacement(make_vacuum([A], 3), B, 0.5)

    @settings(max_examples=15, deadline=None)
    @given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
    def test_matches_padded_expm(self, re, im):
        alpha = complex(re, im)
        ref = padded_expm_single(lambda a: alpha * a.T - np.conj(alpha) * a, 8, 60)
        assert np.abs(displacement_matrix(alpha, 8) - ref).max() < 1e-10

    def test_rectangular_window(self):
        full = displacement_matrix(0.7 - 0.2j, 9)
        assert np.allclose(displacement_matrix(0.7 - 0.2j, 4, 9), full[:4])

    @settings(max_examples=10, deadline=None)
    @given(st.complex_numbers(max_magnitude=1.0), st.complex_numbers(max_magnitude=1.0))
    def test_composition_up_to_phase(self, a, b):
        vac = make_vacuum([A], 40)
        two = apply_displacement(apply_displacement(vac, A, b), A, a)
        one = apply_displacement(vac, A, a + b)
        assert abs(np.vdot(one.amplitudes, two.amplitudes)) == pytest.approx(1.0, abs=1e-10)


class TestTwoModeSqueeze:
    def test_zero_is_identity(self, rng):
        s = random_state(rng, [A, B], 3)
        assert np.allclose(apply_two_mode_squeeze(s, A, B, 0.0).amplitudes, s.amplitudes)

    def test_schmidt_values(self):
        s = apply_two_mode_squeeze(make_vacuum([A, B], 20), A, B, 0.5)
        assert s.amplitudes[0, 0].real == pytest.approx(0.886819, abs=1e-6)
        q = math.tanh(0.5)
        assert s.amplitudes[1, 1].real == pytest.approx(q / math.cosh(0.5), abs=1e-12)
        assert s.amplitudes[1, 1].real == pytest.approx(0.409814, abs=1e-6)

    @pytest.mark.parametrize("r", [0.3, 0.8, 1.2])
    def test_schmidt_form_when_tail_small(self, r):
        q = math.tanh(r)
        cutoff = next(n for n in range(1, 400) if q ** (n + 1) < 1e-6)
        s = apply_two_mode_squeeze(make_vacuum([A, B], cutoff), A, B, r)
        n = np.arange(cutoff + 1)
        assert np.abs(np.diag(s.amplitudes) - q**n / math.cosh(r)).max() < 1e-10
        assert np.abs(s.amplitudes - np.diag(np.diag(s.amplitudes))).max() < 1e-14

    def test_reversal_recovers_vacuum(self):
        s = apply_two_mode_squeeze(make_vacuum([A, B], 20), A, B, 0.5)
        back = apply_two_mode_squeeze(s, A, B, 0.5, math.pi)
        assert abs(back.amplitudes[0, 0]) == pytest.approx(1.0, abs=1e-8)

    def test_same_mode_rejected(self):
        with pytest.raises(FockError):
            apply_two_mode_squeeze(make_vacuum([A, B], 3), A, A, 0.5)

    @pytest.mark.parametrize("r,theta", [(0.4, 0.0), (0.6, 1.1), (0.2, math.pi)])
    def test_matches_padded_expm(self, r, theta):
        g = r * np.exp(1j * theta)
        ref = padded_expm_pair(lambda a, b: g * a.T @ b.T - np.conj(g) * a @ b, 6, 26)
        assert np.abs(two_mode_squeeze_matrix(r, theta, 6) - ref).max() < 1e-10

    def test_mode_order_is_respected(self, rng):
        s = random_state(rng, [A, C, B], 3)
        direct = apply_two_mode_squeeze(s, A, B, 0.3, 0.4)
        swapped = apply_two_mode_squeeze(s.permute([B, C, A]), B, A, 0.3, 0.4).permute([A, C, B])
        assert np.allclose(direct.amplitudes, swapped.amplitudes, atol=1e-13)


class TestBeamSplitter:
    def test_full_transmission_is_identity(self, rng):
        s = random_state(rng, [A, B], 3)
        assert np.allclose(apply_beam_splitter(s, A, B, 1.0).amplitudes, s.amplitudes)

    def test_single_photon_split(self):
        out = apply_beam_splitter(make_fock([A, B], 2, (1, 0)), A, B, 0.5)
        assert out.amplitudes[1, 0] == pytest.approx(1 / math.sqrt(2))
        assert out.amplitudes[0, 1] == pytest.approx(1j / math.sqrt(2))

    def test_hong_ou_mandel(self):
        out = apply_beam_splitter(make_fock([A, B], 2, (1, 1)), A, B, 0.5)
        assert abs(out.amplitudes[1, 1]) < 1e-14
        assert abs(out.amplitudes[2, 0]) ** 2 == pytest.approx(0.5)

    def test_range_checked(self):
        with pytest.raises(FockError):
            apply_beam_splitter(make_vacuum([A, B], 2), A, B, 1.2)

    @pytest.mark.parametrize("T,phase", [(0.5, 0.0), (0.3, 0.7), (0.9, -1.2)])
    def test_matches_padded_expm(self, T, phase):
        t = math.acos(math.sqrt(T))
        ref = padded_expm_pair(
            lambda a, b: 1j * t * (np.exp(1j * phase) * a.T @ b + np.exp(-1j * phase) * a @ b.T), 5, 4)
        assert np.abs(beam_splitter_matrix(T, phase, 5) - ref).max() < 1e-12

    def test_conserves_total_photon_number(self, rng):
        s = random_state(rng, [A, B], 4)
        out = apply_beam_splitter(s, A, B, 0.37, 0.5)
        tot = np.add.outer(np.arange(5), np.arange(5))

        def dist(state):
            p = np.abs(state.amplitudes) ** 2
            return np.bincount(tot.ravel(), weights=p.ravel())

        # the cutoff window drops states with n_a or n_b above 4 but keeps every total <= 4
        assert np.allclose(dist(out)[:5], dist(s)[:5], atol=1e-12)


class TestPhaseRotation:
    def test_zero_and_two_pi(self, rng):
        s = random_state(rng, [A], 5)
        assert np.allclose(apply_phase_rotation(s, A, 0).amplitudes, s.amplitudes)
        assert np.abs(apply_phase_rotation(s, A, 2 * math.pi).amplitudes - s.amplitudes).max() < 1e-14

    def test_pi_on_one_photon(self):
        out = apply_phase_rotation(make_fock([A], 2, (1,)), A, math.pi)
        assert out.amplitudes[1] == pytest.approx(-1.0)

    def test_unknown_mode(self):
        with pytest.raises(FockError):
            apply_phase_rotation(make_vacuum([A], 2), B, 0.3)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["d", "s", "b", "p"]), st.floats(0.0, 1.0),
                          st.floats(-3.0, 3.0)), min_size=1, max_size=6))
def test_norm_plus_leakage_conserved(ops):
    s = make_vacuum([A, B], 6)
    for kind, x, y in ops:
        before = s.leakage
        if kind == "d":
            s = apply_displacement(s, A, x * np.exp(1j * y))
        elif kind == "s":
            s = apply_two_mode_squeeze(s, A, B, 0.5 * x, y)
        elif kind == "b":
            s = apply_beam_splitter(s, A, B, x, y)
        else:
            s = apply_phase_rotation(s, B, y)
        assert s.leakage >= before
        assert s.norm2() <= 1 + 1e-12
    # a truncated unitary window never raises the norm, so the bookkeeping is exact
    assert s.norm2() + s.leakage == pytest.approx(1.0, abs=1e-12)


class TestPartialTrace:
    def test_keep_everything(self, rng):
        s = random_state(rng, [A, B], 2)
        rho = DensityMatrix.from_state(s)
        assert np.allclose(partial_trace(rho, [A, B]).matrix, rho.matrix)

    def test_tmsv_reduced_state_is_thermal(self):
        s = apply_two_mode_squeeze(make_vacuum([A, B], 40), A, B, 0.5)
        red = partial_trace(s, [A])
        n = np.real(np.diag(red.matrix)) @ np.arange(41)
        assert n == pytest.approx(math.sinh(0.5) ** 2, abs=1e-10)
        assert abs(n - 0.27154) < 1e-5
        assert np.abs(red.matrix - np.diag(np.diag(red.matrix))).max() < 1e-14

    def test_product_state_factor(self, rng):
        a = random_state(rng, [A], 3)
        b = random_state(rng, [B], 3)
        joint = DensityMatrix.from_state(a.tensor(b))
        red = partial_trace(joint, [B])
        assert np.abs(red.matrix - DensityMatrix.from_state(b).matrix).max() < 1e-12

    def test_mode_order_of_kept_modes(self, rng):
        s = random_state(rng, [A, B, C], 2)
        red = partial_trace(DensityMatrix.from_state(s), [C, A])
        ref = partial_trace(s.permute([C, A, B]), [C, A])
        assert np.allclose(red.matrix, ref.matrix)

    def test_empty_keep_rejected(self, rng):
        with pytest.raises(FockError):
            partial_trace(random_state(rng, [A], 2), [])

    def test_trace_preserved(self, rng):
        s = random_state(rng, [A, B, C], 2)
        assert partial_trace(s, [B]).trace() == pytest.approx(1.0)


class TestFidelity:
    def test_pure_self(self, rng):
        s = random_state(rng, [A, B], 3)
        assert fidelity(DensityMatrix.from_state(s), s) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert fidelity(make_fock([A], 2, (1,)), make_fock([A], 2, (0,))) == pytest.approx(0.0)

    def test_maximally_mixed_qubit(self):
        m = np.zeros((4, 4))
        m[0, 0] = m[1, 1] = 0.5
        rho = DensityMatrix([A], 3, m)
        psi = FockState([A], 3, np.array([0.6, 0.8j, 0, 0]))
        assert fidelity(rho, psi) == pytest.approx(0.5)

    def test_symmetric_and_phase_invariant(self, rng):
        a, b = random_state(rng, [A, B], 2), random_state(rng, [A, B], 2)
        assert fidelity(a, b) == pytest.approx(fidelity(b, a))
        rotated = FockState(b.modes, b.cutoff, b.amplitudes * np.exp(0.7j))
        assert fidelity(a, rotated) == pytest.approx(fidelity(a, b))

    def test_mismatched_modes(self, rng):
        with pytest.raises(FockError):
            fidelity(random_state(rng, [A], 2), random_state(rng, [B], 2))

    def test_trace_deficit_counts_against_fidelity(self):
        rho = DensityMatrix([A], 1, np.diag([0.0, 0.9]), trace_deficit=0.1)
        assert fidelity(rho, make_fock([A], 1, (1,))) == pytest.approx(0.9)

    def test_trace_distance_bounds(self, rng):
        a = DensityMatrix.from_state(random_state(rng, [A], 3))
        assert trace_distance(a, a) == pytest.approx(0.0, abs=1e-12)
        b = DensityMatrix.from_state(make_fock([A], 3, (0,)))
        c = DensityMatrix.from_state(make_fock([A], 3, (1,)))
        assert trace_distance(b, c) == pytest.approx(1.0)


def test_density_matrix_invariants(rng):
    states = [random_state(rng, [A, B], 2) for _ in range(3)]
    w = rng.dirichlet(np.ones(3))
    m = sum(wi * DensityMatrix.from_state(s).matrix for wi, s in zip(w, states))
    rho = DensityMatrix([A, B], 2, m)
    assert np.abs(rho.matrix - rho.matrix.conj().T).max() < 1e-12
    assert rho.eigenvalues().min() > -1e-10
    assert rho.trace() <= 1 + 1e-12
    assert rho.with_cutoff(4).with_cutoff(2).matrix == pytest.approx(rho.matrix)
