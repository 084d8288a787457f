import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.stats import binom

from cvqwc.channels import (
    FIBER_MODES, LossParams, PipelineKind, PipelineSpec, StageSpec, loss_channel, run_pipeline,
)
from cvqwc.fock import DensityMatrix, FockError, make_fock, mode
from cvqwc.sources import InputQubit, SourceParams
from cvqwc.teleport import OUTPUT_MODES, GainRule, qubit_metrics, teleport_average

BH = mode("B", "H")
ONE = (BH,)


def random_density(modes, cutoff, rng, rank=3):
    dim = (cutoff + 1) ** len(modes)
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    m = g @ g.conj().T
    return DensityMatrix(tuple(modes), cutoff, m / np.trace(m).real)


def kraus_loss(rho_1mode: np.ndarray, eta: float) -> np.ndarray:
    """Single-mode loss via its Kraus operators E_k|n> = sqrt(C(n,k) eta^(n-k) (1-eta)^k)|n-k>."""
    d = rho_1mode.shape[0]
    out = np.zeros_like(rho_1mode)
    for k in range(d):
        e = np.zeros((d, d))
        for n in range(k, d):
            e[n - k, n] = math.sqrt(binom.pmf(k, n, 1 - eta))
        out += e @ rho_1mode @ e.T
    return out


def gaussian_chain_fidelity(noise: float) -> float:
    f1 = quad(lambda x: math.exp(-x * (1 + 1 / noise)) * (1 - x) ** 2 / noise, 0, np.inf)[0]
    return f1 / (1 + noise)


def spec(kind, eta, r1=0.5, r2=0.5, gain=GainRule.unit(), inp=InputQubit(1, 0), targets=()):
    return PipelineSpec(kind, StageSpec(SourceParams(r1), gain), StageSpec(SourceParams(r2), gain),
                        LossParams(eta, targets), inp)


class TestLossChannel:
    def test_identity(self, rng):
        rho = random_density((BH, mode("B", "V")), 3, rng)
        out = loss_channel(rho, LossParams(1.0, FIBER_MODES))
        assert np.array_equal(out.matrix, rho.matrix)

    def test_full_loss_gives_vacuum(self):
        out = loss_channel(DensityMatrix.from_state(make_fock(ONE, 3, (1,))), LossParams(0.0, ONE))
        expect = np.zeros((4, 4))
        expect[0, 0] = 1
        assert np.abs(out.matrix - expect).max() < 1e-14

    def test_single_photon(self):
        out = loss_channel(DensityMatrix.from_state(make_fock(ONE, 1, (1,))), LossParams(0.7, ONE))
        assert np.abs(out.matrix - np.diag([0.3, 0.7])).max() < 1e-14

    def test_range(self):
        with pytest.raises(FockError):
            LossParams(1.2)

    def test_missing_target(self):
        with pytest.raises(FockError):
            loss_channel(DensityMatrix.from_state(make_fock(ONE, 1, (1,))), LossParams(0.5, (mode("A", "H"),)))

    def test_matches_kraus_form(self, rng):
        rho = random_density(ONE, 6, rng)
        out = loss_channel(rho, LossParams(0.37, ONE))
        assert np.abs(out.matrix - kraus_loss(rho.matrix, 0.37)).max() < 1e-13

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**32 - 1))
    def test_composition(self, e1, e2, seed):
        rho = random_density(FIBER_MODES, 3, np.random.default_rng(seed))
        lp = lambda e: LossParams(e, FIBER_MODES)
        two = loss_channel(loss_channel(rho, lp(e1)), lp(e2))
        one = loss_channel(rho, lp(e1 * e2))
        assert np.abs(two.matrix - one.matrix).max() < 1e-12

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0, 1), st.integers(0, 2**32 - 1))
    def test_cptp(self, eta, seed):
        rho = random_density(FIBER_MODES, 3, np.random.default_rng(seed), rank=2)
        out = loss_channel(rho, LossParams(eta, (FIBER_MODES[1],)))
        assert out.trace() == pytest.approx(rho.trace(), abs=1e-12)
        assert out.eigenvalues().min() >= -1e-10
        assert np.abs(out.matrix - out.matrix.conj().T).max() < 1e-13


class TestPipelineSpec:
    def test_fiber_must_target_arm_b(self):
        with pytest.raises(FockError):
            spec("fig1_chain", 0.9, targets=(mode("A", "H"),))

    def test_kind_coerced(self):
        assert spec("predistributed", 1.0).kind is PipelineKind.PREDISTRIBUTED


class TestPipelines:
    def test_chain_is_sequential_application(self):
        p = spec("fig1_chain", 0.8, r1=0.5, r2=0.7, inp=InputQubit(0.6, 0.8j))
        res = run_pipeline(p)
        s1 = teleport_average(p.input, SourceParams(0.5), GainRule.unit(), output_cutoff=p.intermediate_cutoff)
        mid = loss_channel(s1.rho, LossParams(0.8, FIBER_MODES))
        mid = mid.relabel({m: m.relabel(arm="in") for m in mid.modes})
        s2 = teleport_average(mid, SourceParams(0.7), GainRule.unit(), output_cutoff=p.output_cutoff)
        assert np.abs(res.rho.matrix - s2.rho.matrix).max() < 1e-14
        assert [s.name for s in res.stages] == ["stage1", "stage2"]

    @pytest.mark.parametrize("r", [0.5, 1.0])
    def test_chain_is_gaussian_channel(self, r):
        # two unit-gain stages add their displacement noise
        p = spec("fig1_chain", 1.0, r1=r, r2=r)
        p = PipelineSpec(p.kind, p.stage1, p.stage2, p.fiber, p.input, intermediate_cutoff=10, output_cutoff=6)
        res = run_pipeline(p)
        assert res.end_to_end_fidelity == pytest.approx(gaussian_chain_fidelity(2 * math.exp(-2 * r)), abs=1e-5)

    def test_strong_squeezing_chain(self):
        # two-stage chain at r = 2 sits at the Gaussian-channel value 0.867
        f = run_pipeline(spec("fig1_chain", 1.0, r1=2.0, r2=2.0)).end_to_end_fidelity
        assert f >= 0.96

    def test_matched_product_law(self):
        r1, r2 = 0.5, 1.0
        p = spec("fig1_chain", 1.0, r1, r2, GainRule.matched(), InputQubit(0.6, 0.8j))
        res = run_pipeline(p)
        assert res.conditional_fidelity == pytest.approx(1.0, abs=1e-5)
        assert res.one_photon_weight == pytest.approx(math.tanh(r1) ** 2 * math.tanh(r2) ** 2, abs=2e-3)

    @pytest.mark.parametrize("eta", [0.9, 0.5, 0.1])
    def test_bloch_direction_invariant_under_loss(self, eta):
        q_in = InputQubit(0.6, 0.8j)
        ref = run_pipeline(spec("fig1_chain", 1.0, 0.8, 0.6, GainRule.matched(), q_in)).metrics
        lossy = run_pipeline(spec("fig1_chain", eta, 0.8, 0.6, GainRule.matched(), q_in)).metrics
        assert np.abs(lossy.bloch_vector - ref.bloch_vector).max() < 1e-6
        assert lossy.one_photon_weight == pytest.approx(eta * ref.one_photon_weight, abs=1e-9)

    @pytest.mark.parametrize("kind", ["fig1_chain", "predistributed"])
    def test_fidelity_monotone_in_loss(self, kind):
        fs = [run_pipeline(spec(kind, eta, 0.8, 0.8)).end_to_end_fidelity for eta in (1.0, 0.9, 0.7, 0.4, 0.0)]
        assert all(b <= a + 1e-12 for a, b in zip(fs, fs[1:]))

    @pytest.mark.parametrize("gain", [GainRule.unit(), GainRule.matched(), GainRule.fixed(0.7)])
    def test_predistributed_without_loss_is_chain(self, gain):
        q_in = InputQubit(1 / math.sqrt(2), 1j / math.sqrt(2))
        a = run_pipeline(spec("fig1_chain", 1.0, 0.6, 0.9, gain, q_in))
        b = run_pipeline(spec("predistributed", 1.0, 0.6, 0.9, gain, q_in))
        assert np.abs(a.rho.matrix - b.rho.matrix).max() < 1e-8

    def test_predistributed_stage1_oracle(self):
        # lossy source arm at gain g equals loss after a lossless run at gain g / sqrt(eta)
        eta, g = 0.6, 0.5
        q_in = InputQubit(0.6, 0.8)
        lossy = teleport_average(q_in, SourceParams(0.5), g, source_eta=(eta, eta), output_cutoff=4)
        clean = teleport_average(q_in, SourceParams(0.5), g / math.sqrt(eta), output_cutoff=16)
        ref = loss_channel(clean.rho, LossParams(eta, OUTPUT_MODES)).with_cutoff(4)
        assert np.abs(lossy.rho.matrix - ref.matrix).max() < 1e-8

    def test_report_fields(self):
        res = run_pipeline(spec("predistributed", 0.8))
        assert res.captured_mass > 0.99 and res.source_leakage < 1e-5
        assert set(res.rho.modes) == {mode("out", "H"), mode("out", "V")}
        assert qubit_metrics(res.rho, InputQubit(1, 0)).fidelity == res.end_to_end_fidelity
