import math
import warnings
from types import SimpleNamespace

import numpy as np
import pytest

from gravcollapse import kernels, master, sse
from gravcollapse.errors import ConfigurationError, NumericalError
from gravcollapse.master import DensityMatrixGrid, Grid1D, KineticOperator
from gravcollapse.rates import DecoherenceKernel

GRID = Grid1D(16, 1.25)
DP = DecoherenceKernel("dp", 1.0, 1.0)
CSL = DecoherenceKernel("csl", 1.0, 1.0)


def _noise(kernel, grid=GRID):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return sse.build_noise_covariance(kernel, grid)


def _test_state(grid=GRID):
    base = sse.two_site_superposition(grid, 5, 10, 0.5).psi
    return sse.WaveFunctionLattice(grid, base + 0.3j * np.roll(base, 1))


def _reference_step(psi, C, L, U, dt, xi):
    """Direct transcription of one Ito step (unitary, noise, drift, renormalize)."""
    if U is not None:
        psi = U @ psi
    P = np.abs(psi) ** 2
    dW = L @ xi * math.sqrt(dt)
    g = 1 + dW - P @ dW - 0.5 * dt * (np.diag(C) - 2 * C @ P + P @ C @ P)
    psi = g * psi
    pre = np.linalg.norm(psi)
    return psi / pre, pre


class TestCovariance:
    @pytest.mark.parametrize("kernel", [DP, CSL], ids=["dp", "csl"])
    def test_structure(self, kernel):
        nm = _noise(kernel)
        C = nm.covariance
        assert np.all(np.diag(C) == 1.0)
        assert np.array_equal(C, C.T)
        assert np.linalg.eigvalsh(C)[0] >= -1e-12
        assert np.allclose(nm.factor @ nm.factor.T, C, atol=1e-10)

    def test_asymptotes(self):
        g = Grid1D(256, 0.5)
        c_dp = _noise(DP, g).covariance[0]
        c_csl = _noise(CSL, g).covariance[0]
        far = g.separations()[0, -1]
        assert c_csl[-1] < 1e-300
        assert math.isclose(c_dp[-1] * far, math.sqrt(math.pi), rel_tol=1e-10)

    def test_resolution_warning(self):
        with pytest.warns(RuntimeWarning):
            sse.build_noise_covariance(DP, GRID)

    def test_factorization_failure(self):
        bad = SimpleNamespace(length=1.0, rate=1.0,
                              correlation=lambda d: np.where(d > 0, -1.0, 1.0))
        with pytest.raises(ConfigurationError):
            sse.build_noise_covariance(bad, Grid1D(16, 0.25))


class TestStep:
    def test_against_direct_transcription(self):
        nm = _noise(DP)
        kin = KineticOperator(1.0)
        state = _test_state().normalized()
        rng = np.random.default_rng(0)
        out = sse.sse_step(state, nm, kin, 1e-3, rng)
        xi = np.random.default_rng(0).standard_normal((1, 1, 16))[0, 0]
        ref, pre = _reference_step(state.psi, nm.covariance, nm.factor,
                                   kin.unitary(GRID, 1e-3), 1e-3, xi)
        assert np.allclose(out.psi, ref, atol=1e-13)
        assert abs(np.linalg.norm(out.psi) - 1) <= 1e-8

    def test_norm_drift_bound(self):
        nm = _noise(CSL)
        dt = 1e-3
        rng = np.random.default_rng(5)
        psi = _test_state().normalized().psi
        for _ in range(2000):
            psi, pre = _reference_step(psi, nm.covariance, nm.factor, None, dt,
                                       rng.standard_normal(16))
            assert abs(pre - 1) <= 10 * dt * nm.rate

    def test_zero_noise_is_schroedinger(self):
        kin = KineticOperator(0.7)
        state = _test_state().normalized()
        out = sse.sse_step(state, sse.NoiseModel.zero(16), kin, 0.05, np.random.default_rng(1))
        assert np.allclose(out.psi, kin.unitary(GRID, 0.05) @ state.psi, atol=1e-13)

    def test_step_gate(self):
        with pytest.raises(NumericalError):
            sse.sse_step(_test_state().normalized(), _noise(DP), None, 2e-3,
                         np.random.default_rng(0))


class TestEnsemble:
    def test_single_noiseless_trajectory(self):
        kin = KineticOperator(1.0)
        psi0 = _test_state().normalized()
        res = sse.run_ensemble(psi0, sse.NoiseModel.zero(16), kin, 0.5, 1, 0, dt=0.01)
        psi_t = kin.unitary(GRID, 0.5) @ psi0.psi
        assert np.allclose(res.mean_rho.rho, np.outer(psi_t, psi_t.conj()), atol=1e-12)

    def test_bitwise_determinism(self):
        nm = _noise(DP)
        a = sse.run_ensemble(_test_state(), nm, KineticOperator(1.0), 0.2, 40, 7, n_records=4)
        b = sse.run_ensemble(_test_state(), nm, KineticOperator(1.0), 0.2, 40, 7, n_records=4)
        assert np.array_equal(a.mean_rho.rho, b.mean_rho.rho)
        assert np.array_equal(a.variance_series, b.variance_series)
        assert a.statistics == b.statistics
        c = sse.run_ensemble(_test_state(), nm, KineticOperator(1.0), 0.2, 40, 8)
        assert not np.array_equal(a.mean_rho.rho, c.mean_rho.rho)

    def test_reduction_order_independence(self):
        nm = _noise(CSL)
        ref = sse.run_ensemble(_test_state(), nm, None, 0.1, 60, 3, batch_size=60)
        for bs in (1, 7, 25):
            other = sse.run_ensemble(_test_state(), nm, None, 0.1, 60, 3, batch_size=bs)
            assert np.allclose(other.mean_rho.rho, ref.mean_rho.rho, rtol=0, atol=1e-12)
        # a prefix of the trajectories is the same set regardless of n_traj
        part = sse.run_ensemble(_test_state(), nm, None, 0.1, 30, 3)
        assert np.allclose(part.final_psi, ref.final_psi[:30], rtol=0, atol=1e-12)

    @pytest.mark.skipif(len(kernels.BACKENDS) < 2, reason="compiled backend not built")
    def test_backends_agree(self):
        nm = _noise(DP)
        runs = [sse.run_ensemble(_test_state(), nm, KineticOperator(1.0), 0.2, 20, 4, backend=b)
                for b in sorted(kernels.BACKENDS)]
        assert np.allclose(runs[0].mean_rho.rho, runs[1].mean_rho.rho, rtol=0, atol=1e-12)

    def test_trace_and_errors(self):
        res = sse.run_ensemble(_test_state(), _noise(DP), None, 0.2, 50, 1)
        assert abs(res.mean_rho.trace - 1) <= 1e-8
        mean, err = res.statistics["position_mean"]
        assert err > 0
        assert res.statistics["norm"][0] == pytest.approx(1.0, abs=1e-12)

    def test_localization(self):
        # H = 0: the mean per-trajectory position variance never increases
        res = sse.run_ensemble(_test_state(), _noise(DP), None, 1.0, 400, 2, n_records=10)
        var = res.variance_series[:, 0]
        assert np.all(np.diff(var) <= 0)
        # and it matches the exact prediction of the master equation at t = 0
        rho0 = DensityMatrixGrid.from_wavefunction(GRID, _test_state().psi, None)
        assert var[0] == pytest.approx(rho0.position_moments()[1], rel=1e-12)

    def test_bad_inputs(self):
        with pytest.raises(ConfigurationError):
            sse.run_ensemble(_test_state(), _noise(DP), None, 0.1, 0, 1)
        with pytest.raises(ConfigurationError):
            sse.run_ensemble(_test_state(), _noise(DP), None, 0.10005, 2, 1)


def _lindblad(psi0, kernel, mass, t):
    rho = DensityMatrixGrid.from_wavefunction(GRID, psi0.psi, mass)
    D = master.build_decoherence_matrix(kernel, GRID)
    return master.propagate(rho, D, KineticOperator(mass), 0.01, int(round(t / 0.01)))


@pytest.mark.parametrize("dt", [1e-3, 5e-4])
def test_ensemble_matches_lindblad_under_step_halving(dt):
    n = 800
    res = sse.run_ensemble(_test_state(), _noise(CSL), KineticOperator(1.0), 1.0, n, 9, dt=dt)
    ref = _lindblad(_test_state(), CSL, 1.0, 1.0)
    assert master.trace_distance(res.mean_rho, ref) <= 5 / math.sqrt(n)


class TestCollapse:
    def test_certain_outcome(self):
        psi0 = sse.two_site_superposition(GRID, 4, 11, 1.0)
        st = sse.collapse_statistics(psi0, _noise(DP), 1.0, 50, 0)
        assert st.freq_left == 1.0 and st.n_unresolved == 0
        assert st.chi2_pvalue == 1.0

    def test_inconclusive_flag(self):
        psi0 = sse.two_site_superposition(GRID, 4, 11, 0.5)
        st = sse.collapse_statistics(psi0, _noise(DP), 0.01, 20, 0)
        assert st.inconclusive and st.n_unresolved > 2

    def test_bad_weight(self):
        with pytest.raises(ConfigurationError):
            sse.two_site_superposition(GRID, 4, 11, 1.5)

    @pytest.mark.slow
    @pytest.mark.parametrize("weight", [0.5, 0.3, 0.1])
    def test_born_rule(self, weight):
        psi0 = sse.two_site_superposition(GRID, 4, 11, weight)
        st = sse.collapse_statistics(psi0, _noise(DP), 8.0, 2000, 11)
        assert not st.inconclusive
        assert abs(st.freq_left - weight) <= 3 * st.stderr_left
        assert st.chi2_pvalue > 0.01
        assert st.ci_left[0] <= st.freq_left <= st.ci_left[1]
