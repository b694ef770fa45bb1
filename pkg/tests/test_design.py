import numpy as np
import pytest

from adaptive_design import design, sdp
from adaptive_design.design import Autocorrelation, DesignConfig, InputFilter
from adaptive_design.errors import BoundarySpectrum, NotPSDSpectrum, OrderError, OrderMismatchWarning
from adaptive_design.lti import ModelParams

from conftest import SIGMA2, THETA_B, THETA_D


def test_toeplitz_examples():
    np.testing.assert_array_equal(design.toeplitz(Autocorrelation([1, 0, 0, 0])), np.eye(4))
    assert np.linalg.eigvalsh(design.toeplitz(Autocorrelation(np.ones(4))))[0] == pytest.approx(0, abs=1e-12)
    np.testing.assert_allclose(np.linalg.eigvalsh(design.toeplitz(Autocorrelation([1.25, 0.5]))), [0.75, 1.75])


def test_kyp_block_white_zero_q():
    K = design.kyp_block(Autocorrelation([1, 0, 0, 0]), np.zeros((3, 3)))
    expected = np.zeros((4, 4))
    expected[-1, -1] = 1.0
    np.testing.assert_allclose(K, expected)


def test_kyp_block_homogeneous():
    rng = np.random.default_rng(0)
    r = rng.standard_normal(4)
    Q = rng.standard_normal((3, 3))
    Q = Q + Q.T
    np.testing.assert_allclose(design.kyp_block(Autocorrelation(2.5 * r), 2.5 * Q),
                               2.5 * design.kyp_block(Autocorrelation(r), Q), atol=1e-12)


def test_kyp_feasible_for_positive_spectrum():
    """Find Q >= 0 with the KYP block PSD for r = (1.25, 0.5, 0, 0)."""
    r = Autocorrelation([1.25, 0.5, 0.0, 0.0])
    basis = design._vech_basis(3)
    k = len(basis)
    F = np.zeros((k + 1, 4, 4))
    F[0] = design.kyp_block(r, np.zeros((3, 3)))
    for i, E in enumerate(basis):
        F[i + 1] = design.kyp_block(Autocorrelation(np.zeros(4)), E)
    sol = sdp.solve(sdp.SdpProblem(np.zeros(k), [F]))
    assert sol.status == sdp.OPTIMAL


def test_rd_matrix_examples():
    r = Autocorrelation([2.0, 0.5, 0.1, 0.0])
    assert np.all(design.rd_matrix(np.zeros(3), r, 4) == 0)
    RD = design.rd_matrix(np.array([0.3]), Autocorrelation([2.0, 0, 0, 0]), 4)
    expected = np.zeros((4, 4))
    for k in range(1, 4):
        expected[k, k - 1] = 0.3 * 2.0
    np.testing.assert_allclose(RD, expected)


def test_rd_matrix_brute_force():
    r = Autocorrelation([1.0, 0.4, -0.2, 0.1])
    RD = design.rd_matrix(THETA_D, r, 4)
    brute = np.zeros((4, 4))
    for k in range(4):
        for l in range(4):
            brute[k, l] = sum(THETA_D[j] * r.lag(j + 1 + l - k) for j in range(3))
    np.testing.assert_allclose(RD, brute, atol=1e-14)
    S = 0.5 * (RD + RD.T)
    np.testing.assert_allclose(np.linalg.eigvalsh(S), np.linalg.eigvalsh(0.5 * (brute + brute.T)))


def test_spectrum_eval():
    assert design.spectrum_eval(Autocorrelation([1, 0, 0]), 1.3) == pytest.approx(1.0)
    r = Autocorrelation([1.25, 0.5])
    assert design.spectrum_eval(r, 0.0) == pytest.approx(2.25)
    assert design.spectrum_eval(r, np.pi) == pytest.approx(0.25)


def test_design_at_true_parameters(ararx):
    cfg = DesignConfig()
    prob = design.build_design_problem(ararx, SIGMA2, cfg)
    res = design.design_input(ararx, SIGMA2, cfg)
    assert res.status == sdp.OPTIMAL and not res.fallback
    assert cfg.r_min < res.r[0] < cfg.r_max
    # golden value of the optimal power at the true parameters
    assert res.r[0] == pytest.approx(0.8673, abs=1e-3)
    assert sdp.check_solution(prob, res.x, 1e-7).feasible
    omega = np.linspace(-np.pi, np.pi, 1024, endpoint=False)
    assert design.spectrum_eval(Autocorrelation(res.r), omega).min() >= -1e-7


def test_accuracy_constraint_is_active(ararx):
    from adaptive_design.analysis import variance_check

    cfg = DesignConfig()
    res = design.design_input(ararx, SIGMA2, cfg)
    v = variance_check(THETA_B, design.toeplitz(Autocorrelation(res.r), 4), SIGMA2, cfg.N)
    assert v == pytest.approx(cfg.gamma, rel=1e-3)


def test_zero_gain_needs_only_floor():
    p = ModelParams.from_polys(b=np.zeros(4), d=THETA_D)
    res = design.design_input(p, SIGMA2, DesignConfig(beta_K=1e-6))
    assert res.r[0] == pytest.approx(1e-3, abs=1e-5)


def test_huge_gamma_hits_floor(ararx):
    res = design.design_input(ararx, SIGMA2, DesignConfig(gamma=1e6, beta_K=1e-6))
    assert res.r[0] == pytest.approx(1e-3, abs=1e-5)


def test_kyp_margin_sets_floor(ararx):
    """KYP block >= beta_K I_{m+1} implies Psi_u >= (m+1) beta_K, above r_min for the default margins."""
    res = design.design_input(ararx, SIGMA2, DesignConfig(gamma=1e6))
    assert res.r[0] == pytest.approx(4e-3, abs=1e-5)


def test_homogeneity_in_gamma_over_sigma2(ararx):
    r1 = design.design_input(ararx, SIGMA2, DesignConfig()).r
    r2 = design.design_input(ararx, 3 * SIGMA2, DesignConfig(gamma=3e-4)).r
    np.testing.assert_allclose(r1, r2, atol=1e-6)


def test_fallback_when_infeasible(ararx):
    res = design.design_input(ararx, SIGMA2, DesignConfig(gamma=1e-9, r_max=1.0))
    assert res.fallback
    np.testing.assert_array_equal(res.r, [1.0, 0, 0, 0])


def test_batched_design(ararx):
    th = ararx.with_theta(np.stack([ararx.theta, 0.5 * ararx.theta]))
    res = design.design_input(th, np.array([SIGMA2, SIGMA2]), DesignConfig())
    single = design.design_input(ararx.with_theta(0.5 * ararx.theta), SIGMA2, DesignConfig())
    np.testing.assert_allclose(res.r[1], single.r, atol=1e-6)


def test_order_mismatch_warns(ararx):
    with pytest.warns(OrderMismatchWarning):
        design.build_design_problem(ararx, SIGMA2, DesignConfig(m=2))


def test_sigma2_zero_is_finite(ararx):
    res = design.design_input(ararx, 0.0, DesignConfig())
    assert np.all(np.isfinite(res.r)) and not res.fallback


def test_factorize_examples():
    np.testing.assert_allclose(design.spectral_factorize(Autocorrelation([4, 0, 0, 0])).f, [2, 0, 0, 0], atol=1e-12)
    np.testing.assert_allclose(design.spectral_factorize(Autocorrelation([1.25, 0.5])).f, [1, 0.5], atol=1e-12)
    with pytest.warns(BoundarySpectrum):
        filt = design.spectral_factorize(Autocorrelation([2.0, 1.0, 0.0, 0.0]))
    conv = np.correlate(filt.f, filt.f, "full")[len(filt.f) - 1 :]
    np.testing.assert_allclose(conv, [2, 1, 0, 0], atol=1e-8)


def test_factor_matches_spectrum():
    r = InputFilter(np.array([1.0, 0.4, -0.3, 0.2]), 3).autocorrelation()
    filt = design.spectral_factorize(r)
    omega = np.linspace(-np.pi, np.pi, 256, endpoint=False)
    F = np.polynomial.polynomial.polyval(np.exp(-1j * omega), filt.f)
    np.testing.assert_allclose(np.abs(F) ** 2, design.spectrum_eval(r, omega), atol=1e-8)
    assert filt.f[0] > 0
    assert np.all(np.abs(design.filter_roots(filt)) < 1 - 1e-8)


def test_factorize_rejects_negative_spectrum():
    with pytest.raises(NotPSDSpectrum):
        design.spectral_factorize(Autocorrelation([1.0, 0.8]))


def test_effective_order():
    assert design.effective_order(np.array([[1.0, 0.5, 0.0, 0.0]]))[0] == 1
    assert design.effective_order(np.array([[1.0, 0.0, 0.0, 0.0]]))[0] == 0


def test_realize_white_filter():
    ss = design.realize_filter(InputFilter(np.array([2.0, 0, 0, 0]), 0), 3)
    assert ss.D[0, 0] == 2.0
    np.testing.assert_array_equal(ss.A, np.zeros((3, 3)))


def test_realize_impulse_response():
    ss = design.realize_filter(InputFilter(np.array([1.0, 0.5]), 1), 3)
    np.testing.assert_allclose(ss.impulse_response(6), [1, 0.5, 0, 0, 0, 0])
    assert np.allclose(np.linalg.matrix_power(ss.A, 3), 0)
    f = np.array([0.9, -0.3, 0.2, 0.1])
    np.testing.assert_allclose(design.realize_filter(InputFilter(f, 3), 3).impulse_response(4), f)


def test_realize_order_error():
    with pytest.raises(OrderError):
        design.realize_filter(InputFilter(np.array([1.0, 0.5, 0.2]), 2), 1)


def test_csv_writers(tmp_path):
    design.write_autocorrelation_csv(tmp_path / "r.csv", Autocorrelation([1.0, 0.5]))
    design.write_filter_csv(tmp_path / "f.csv", InputFilter(np.array([1.0, 0.5]), 1))
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "tau,r_tau"
    assert (tmp_path / "f.csv").read_text().splitlines()[2] == "1,0.5"


def test_filtered_information_option(ararx):
    res = design.design_input(ararx, SIGMA2, DesignConfig(information="filtered"))
    assert not res.fallback and res.r[0] > 1.0
