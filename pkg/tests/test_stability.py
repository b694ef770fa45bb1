import numpy as np
import pytest

from adaptive_design import stability
from adaptive_design.design import realize_filter, InputFilter
from adaptive_design.errors import BudgetExceeded, DegenerateOrder
from adaptive_design.lti import PolynomialCoeffs
from adaptive_design.stability import Infeasible, MatrixFamily

from conftest import THETA_D


def test_companion_examples():
    np.testing.assert_array_equal(stability.companion(PolynomialCoeffs(np.array([0.5]))), [[-0.5]])
    M = stability.companion(PolynomialCoeffs(THETA_D))
    assert np.all(np.abs(np.linalg.eigvals(M)) < 1)
    assert np.max(np.abs(np.linalg.eigvals(stability.companion(np.array([-2.0]))))) == pytest.approx(2.0)


def test_companion_eigenvalues_are_roots():
    rng = np.random.default_rng(0)
    for _ in range(20):
        c = rng.standard_normal(rng.integers(1, 7))
        lam = np.linalg.eigvals(stability.companion(c))
        assert np.max(np.abs(np.polyval(np.concatenate([[1.0], c]), lam))) < 1e-6


def test_companion_order_zero():
    with pytest.raises(DegenerateOrder):
        stability.companion(np.array([]))
    assert stability.companion(np.array([]), strict=False).shape == (0, 0)


def test_jsr_single_matrix():
    A = np.array([[0.5, 0.2], [0.0, 0.3]])
    b = stability.jsr_upper_bound(MatrixFamily([A]), 20)
    assert 0.5 < b <= 0.6


def test_jsr_zero_and_monotone():
    assert stability.jsr_upper_bound(MatrixFamily([np.zeros((2, 2))]), 3) == 0.0
    rng = np.random.default_rng(1)
    fam = MatrixFamily([0.5 * rng.standard_normal((3, 3)) for _ in range(3)])
    bounds = [stability.jsr_upper_bound(fam, d) for d in range(1, 7)]
    assert all(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:]))


def test_jsr_budget():
    fam = MatrixFamily([np.eye(2)] * 10)
    with pytest.raises(BudgetExceeded):
        stability.jsr_upper_bound(fam, 8, budget=1000)


def test_generator_family_is_nilpotent():
    rng = np.random.default_rng(2)
    mats = []
    for _ in range(4):
        f = np.concatenate([[1.0], 0.3 * rng.standard_normal(3)])
        mats.append(realize_filter(InputFilter(f, 3), 3).A)
    fam = MatrixFamily(mats)
    assert np.allclose(np.linalg.matrix_power(mats[0], 3), 0)
    assert stability.jsr_upper_bound(fam, 3) < 1


def test_common_lyapunov_scalar():
    cert = stability.common_lyapunov(MatrixFamily([[[0.5]]]))
    assert cert.lam == pytest.approx(0.25, abs=1e-5)
    assert cert.residual(MatrixFamily([[[0.5]]])) <= 1e-9


def test_common_lyapunov_pair():
    fam = MatrixFamily([[[0.9]], [[-0.9]]])
    cert = stability.common_lyapunov(fam)
    assert cert and 0.81 - 1e-6 <= cert.lam < 1


def test_common_lyapunov_unstable_member():
    res = stability.common_lyapunov(MatrixFamily([[[0.5]], [[1.1]]]))
    assert isinstance(res, Infeasible) and not res


def test_lyapunov_implies_jsr_below_one():
    fam = MatrixFamily([np.array([[0.5, 0.3], [0.0, 0.4]]), np.array([[0.4, 0.0], [0.3, 0.5]])])
    cert = stability.common_lyapunov(fam)
    assert cert
    assert stability.jsr_upper_bound(fam, 8) < 1
