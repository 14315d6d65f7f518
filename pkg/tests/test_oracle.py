import numpy as np
import pytest

from truncflow.errors import NearKink
from truncflow.flows import effective_rhs
from truncflow.manifold import AntisymmetricMatrix
from truncflow.measures import TrainingSet
from truncflow.model import ModelState
from truncflow.oracle import (
    FDSettings,
    assert_kink_free,
    fd_grad_beta,
    fd_grad_rotation,
    reference_integrate,
    rk4_array,
)
from truncflow.scenarios import make_separated_config, state_from_arrays

RNG = np.random.default_rng(55)


class TestFDSettings:
    def test_step_bounds(self):
        with pytest.raises(ValueError):
            FDSettings(step=1e-10)
        with pytest.raises(ValueError):
            FDSettings(step=0.1)
        with pytest.raises(ValueError):
            FDSettings(scheme="forward")


class TestKinkGuard:
    def test_rejects_boundary_adjacent_point(self):
        q = 2
        state = state_from_arrays([np.eye(q)], [np.zeros(q)], np.eye(q), np.zeros((q, q)))
        data = TrainingSet([np.array([[1e-7, 1.0]]), np.array([[1.0, 1.0]])])
        with pytest.raises(NearKink):
            assert_kink_free(state, data, 1e-5)
        with pytest.raises(NearKink):
            fd_grad_beta(state, data, 0, FDSettings(step=1e-5))

    def test_accepts_clear_configuration(self):
        state, data = make_separated_config(2, n_per=3, seed=1)
        assert_kink_free(state, data, 1e-5)


class TestSecondOrderConvergence:
    def test_beta_stencil_exact_for_piecewise_quadratic(self):
        # at fixed masks the cost is quadratic in beta, so the central
        # stencil is exact up to rounding at any admissible step
        state, data = make_separated_config(3, n_per=5, seed=2, kink_margin=2e-2)
        layer = 1
        bd, _ = effective_rhs(state, data, layer)
        for step in (2e-4, 1e-5):
            fd = fd_grad_beta(state, data, layer, FDSettings(step=step))
            assert np.linalg.norm(bd + fd) <= 1e-8 * max(1.0, np.linalg.norm(fd))

    def test_rotation_gradient_second_order(self):
        # along exp(eps w) R the cost is trigonometric: halving the step
        # shrinks the truncation error about fourfold
        state, data = make_separated_config(2, n_per=5, seed=6, kink_margin=2e-2)
        bd, om = effective_rhs(state, data, 0)
        errs = []
        for step in (4e-4, 2e-4):
            fd = fd_grad_rotation(state, data, 0, settings=FDSettings(step=step))
            errs.append(np.linalg.norm(om.mat - fd.mat))
        ratio = errs[0] / errs[1]
        assert 2.5 <= ratio <= 6.0


class TestPartialBasis:
    def test_omega_basis_subset(self):
        state, data = make_separated_config(3, n_per=4, seed=3)
        full = fd_grad_rotation(state, data, 0, settings=FDSettings(step=1e-5))
        sub = fd_grad_rotation(state, data, 0, omega_basis=[(0, 1)], settings=FDSettings(step=1e-5))
        assert sub.mat[0, 1] == pytest.approx(full.mat[0, 1], rel=1e-12)
        assert sub.mat[0, 2] == 0.0 and sub.mat[1, 2] == 0.0


class TestReferenceIntegrate:
    def test_equilibrium_constant(self):
        state, data = make_separated_config(2, n_per=3, seed=4, truncation="full")

        def rhs(st):
            return [effective_rhs(st, data, k) for k in range(st.depth)]

        out = reference_integrate(rhs, state, 0.05, step=1e-3)
        for k in range(2):
            assert np.array_equal(out.layers[k].beta, state.layers[k].beta)

    def test_exponential_decay(self):
        # fully truncated single-coordinate flow integrates to e^{-s}
        state = state_from_arrays([np.eye(1)], [np.array([0.5])], np.eye(1), np.array([[1.0]]))
        data = TrainingSet([np.array([[-3.0], [-2.0]])])

        def rhs(st):
            return [effective_rhs(st, data, 0)]

        out = reference_integrate(rhs, state, 1.0, step=1e-4)
        gap0 = 0.5 + 1.0
        assert abs(out.layers[0].beta[0] + 1.0 - gap0 * np.exp(-1.0)) <= 1e-9

    def test_rk4_array_linear(self):
        a = np.array([[-1.0, 0.3], [0.0, -2.0]])
        y0 = np.array([1.0, 1.0])
        out = rk4_array(lambda y: a @ y, y0, 1.0, step=1e-3)
        import scipy.linalg

        np.testing.assert_allclose(out, scipy.linalg.expm(a) @ y0, atol=1e-9)
