import numpy as np
import pytest

from adaptive_design import lti
from adaptive_design.errors import Assumption1Violation, DomainViolation, ShapeError
from adaptive_design.lti import ModelParams, Orders, PolynomialCoeffs

from conftest import THETA_B, THETA_D


def white_generator(m=0):
    return lti.StateSpace(np.zeros((m, m)), np.zeros((m, 1)), np.zeros((1, m)), np.ones((1, 1)))


def test_theta_flattening_order():
    p = ModelParams.from_polys(a=[0.1], b=[1, 2], f=[0.3], c=[0.4, 0.5], d=[0.6])
    assert p.orders == Orders(1, 2, 1, 2, 1)
    np.testing.assert_array_equal(p.theta, [0.1, 1, 2, 0.3, 0.4, 0.5, 0.6])
    np.testing.assert_array_equal(p.c, [0.4, 0.5])
    assert p.poly("b").monic is False and p.poly("d").monic is True


def test_model_needs_a_parameter():
    with pytest.raises(ShapeError):
        ModelParams.from_polys()
    with pytest.raises(ShapeError):
        ModelParams(Orders(0, 2), np.zeros(3))


def test_polynomial_stability(ararx):
    assert ararx.poly("d").is_stable()
    assert PolynomialCoeffs(np.array([-2.0])).spectral_radius() == pytest.approx(2.0)
    with pytest.raises(Assumption1Violation):
        ModelParams.from_polys(b=[1.0], d=[-2.0]).check_stable()


def test_simulate_zero_input(ararx):
    y = lti.simulate_system(ararx, np.zeros(50), np.zeros(50))
    assert np.all(y == 0)


def test_simulate_impulse_fir(ararx):
    u = np.zeros(20)
    u[0] = 1.0
    y = lti.simulate_system(ararx, u, np.zeros(20))
    np.testing.assert_allclose(y[1:5], THETA_B, atol=1e-14)
    assert y[0] == 0 and np.all(y[5:] == 0)


def test_simulate_geometric_noise_response():
    p = ModelParams.from_polys(b=[1.0], d=[-0.5])
    e = np.zeros(30)
    e[0] = 1.0
    y = lti.simulate_system(p, np.zeros(30), e)
    np.testing.assert_allclose(y, 0.5 ** np.arange(30), atol=1e-14)


def test_state_space_first_order_fir():
    ss = lti.to_state_space(ModelParams.from_polys(b=[0.5]))
    assert ss.n_states == 1
    assert ss.C[0] @ ss.B[:, 0] == pytest.approx(0.5)
    np.testing.assert_array_equal(ss.A, [[0.0]])


def test_state_space_pure_noise_model():
    ss = lti.to_state_space(ModelParams.from_polys(c=[0.3]))
    h = ss.impulse_response(6, input_index=1)
    np.testing.assert_allclose(h, [1, 0.3, 0, 0, 0, 0], atol=1e-14)


@pytest.mark.parametrize(
    "polys",
    [
        dict(b=THETA_B, d=THETA_D),
        dict(a=[-0.5], b=[1.0, 0.4], f=[0.3], c=[0.2, 0.1], d=[-0.4]),
        dict(a=[0.2, -0.1], b=[0.7], c=[-0.5]),
    ],
)
def test_state_space_matches_simulation(polys):
    p = ModelParams.from_polys(**polys)
    ss = lti.to_state_space(p)
    n = 200
    imp = np.zeros(n)
    imp[0] = 1.0
    np.testing.assert_allclose(ss.impulse_response(n, 0), lti.simulate_system(p, imp, np.zeros(n)), atol=1e-10)
    np.testing.assert_allclose(ss.impulse_response(n, 1), lti.simulate_system(p, np.zeros(n), imp), atol=1e-10)


def test_predictor_noise_free_is_exact(ararx, rng):
    u = rng.standard_normal(300)
    y = lti.simulate_system(ararx, u, np.zeros(300))
    np.testing.assert_allclose(lti.predict_one_step(ararx, y, u), y, atol=1e-12)


def test_predictor_requires_stable_c_and_f():
    with pytest.raises(DomainViolation):
        lti.predict_one_step(ModelParams.from_polys(b=[1.0], c=[-1.5]), np.zeros(5), np.zeros(5))


def _closed_loop(params, n, rng, theta=None):
    """Run regressor_step under white input; returns (y, u, eps) sequences."""
    theta = theta or params
    plant = lti.to_state_space(params)
    gen = white_generator()
    st = lti.RegressorState.zeros(params.orders, plant, 0)
    e = 0.3 * rng.standard_normal(n + 1)
    s = rng.standard_normal(n + 1)
    # Phi_0 carries e_0; u_n = s_n for the white generator
    st.phi[st.layout.sizes[0] + st.layout.sizes[1]] = e[0]
    eps, thetas = [], []
    for k in range(n):
        st, et, ek = lti.regressor_step(st, theta, gen, (e[k + 1], s[k]))
        eps.append(ek)
        thetas.append(et)
    u = s[:n]
    y = lti.simulate_system(params, s[: n + 1], e)
    return y, u, np.array(eps), np.array(thetas)


@pytest.mark.parametrize(
    "polys",
    [dict(b=THETA_B, d=THETA_D), dict(a=[-0.5], b=[1.0, 0.4], f=[0.3], c=[0.2, 0.1], d=[-0.4])],
)
def test_predictor_regressor_equivalence(polys, rng):
    p = ModelParams.from_polys(**polys)
    theta = p.with_theta(p.theta + 0.05)
    y, u, eps, _ = _closed_loop(p, 200, rng, theta)
    # eps from the recursion is the error of predicting y_{n+1}
    yhat = lti.predict_one_step(theta, y, np.append(u, 0.0))
    np.testing.assert_allclose(eps, (y - yhat)[1:], atol=1e-10)


def test_regressor_rest_state():
    p = ModelParams.from_polys(a=[0.1], b=[1.0], f=[0.2], c=[0.3], d=[0.4])
    plant = lti.to_state_space(p)
    st = lti.RegressorState.zeros(p.orders, plant, 2)
    gen = lti.StateSpace(np.diag([1.0], -1), np.array([[1.0], [0.0]]), np.array([[0.5, 0.2]]), [[1.0]])
    for _ in range(10):
        st, et, eps = lti.regressor_step(st, p, gen, (0.0, 0.0))
    assert np.all(st.phi == 0) and np.all(et == 0) and eps == 0


def test_ararx_regressor_structure(ararx, rng):
    y, u, eps, et = _closed_loop(ararx, 50, rng)
    n = 20
    # eps_theta_{n+1} = [-u~_n ; v~_n] with v = y - B u
    v = y - np.convolve(np.concatenate([[0.0], THETA_B]), u)[: len(y)]
    np.testing.assert_allclose(et[n, :4], -u[n::-1][:4], atol=1e-12)
    np.testing.assert_allclose(et[n, 4:], v[n::-1][:3], atol=1e-12)


def test_regressor_matches_explicit_matrices(rng):
    p = ModelParams.from_polys(a=[-0.5], b=[1.0, 0.4], f=[0.3], c=[0.2], d=[-0.4])
    plant = lti.to_state_space(p)
    gen = lti.StateSpace(np.diag([1.0], -1), np.array([[1.0], [0.0]]), np.array([[0.5, 0.2]]), [[1.0]])
    A, B = lti.phi_matrices(p, gen, plant)
    st = lti.RegressorState.zeros(p.orders, plant, 2)
    phi = st.phi.copy()
    for _ in range(30):
        eta = rng.standard_normal(2)
        st, _, _ = lti.regressor_step(st, p, gen, eta)
        phi = A @ phi + B @ eta
        np.testing.assert_allclose(st.phi, phi, atol=1e-10)


def test_gradient_is_finite_difference_of_error(ararx, rng):
    """The PEM gradient filters give d eps / d theta along a frozen-parameter run."""
    from adaptive_design.estimator import GradientFilters

    n = 120
    u = rng.standard_normal(n)
    y = lti.simulate_system(ararx, u, 0.3 * rng.standard_normal(n))
    theta = ararx.with_theta(ararx.theta + 0.02)

    def errors(th):
        lags = lti.PredictorLags.zeros(th.orders, (1,))
        out = []
        for k in range(n):
            lags, (_, _, e) = lags.push(th, y[k : k + 1], u[k : k + 1])
            out.append(e[0])
        return np.array(out)

    lags = lti.PredictorLags.zeros(theta.orders, (1,))
    grad = GradientFilters.zeros(theta.orders, 1)
    psi = []
    for k in range(n):
        lags, (w, v, e) = lags.push(theta, y[k : k + 1], u[k : k + 1])
        grad = grad.step(theta, y[k : k + 1], u[k : k + 1], w, v, e)
        psi.append(grad.psi()[0])
    psi = np.array(psi)
    h = 1e-6
    for i in range(theta.p):
        dp = np.zeros(theta.p)
        dp[i] = h
        fd = (errors(theta.with_theta(theta.theta + dp)) - errors(theta.with_theta(theta.theta - dp))) / (2 * h)
        # psi_k is the gradient of eps_{k+1}
        np.testing.assert_allclose(psi[:-1, i], fd[1:], rtol=1e-4, atol=1e-7)


def test_identifiability_clauses(ararx):
    ok = lti.check_identifiability(ModelParams.from_polys(b=[1.0], f=[0.5]))
    assert ok.clause_passed("ii")
    bad = lti.check_identifiability(ModelParams.from_polys(b=[1.0, 0.5], f=[0.5]))
    assert bad.clause_passed("ii") is False and not bad.passed
    assert lti.check_identifiability(ararx).passed
