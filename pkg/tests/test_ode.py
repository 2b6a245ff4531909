"""Tests for the adaptive integrator and the forward/adjoint flows"""

import numpy as np
import pytest

from mcnf_tools import densemat, net
from mcnf_tools.exceptions import (
    MaxStepsExceededError,
    NonFiniteError,
    RetractionError,
    StepUnderflowError,
)
from mcnf_tools.field import FlowField
from mcnf_tools.manifolds import build_manifold
from mcnf_tools.ode import (
    EVAL_SOLVER,
    SolverConfig,
    backward_adjoint,
    forward_flow,
    integrate,
)

TIGHT = SolverConfig(rtol=1e-8, atol=1e-8)


def random_field(name, seed, output_scale=10.0):
    man = build_manifold(name)
    params = net.init(man.spec, np.random.default_rng(seed))
    params.weights[-1] *= output_scale
    return FlowField(man, params)


class TestSolverConfig:
    """Test tolerance validation"""

    def test_defaults(self):
        cfg = SolverConfig()
        assert (cfg.rtol, cfg.atol) == (1e-6, 1e-6)
        assert EVAL_SOLVER.rtol == 1e-8

    @pytest.mark.parametrize("kwargs", [
        {'rtol': 0.0}, {'atol': -1.0}, {'h_min': 2.0}, {'max_steps': 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SolverConfig(**kwargs)


class TestIntegrate:
    """Test the Dormand-Prince integrator on closed-form problems"""

    def test_zero_dynamics(self):
        y0 = np.array([1.0, -2.0])
        y1, stats = integrate(lambda t, y: np.zeros_like(y), y0, 0.0, 1.0, SolverConfig())
        assert np.array_equal(y1, y0)
        assert stats.n_steps == 1

    def test_exponential(self):
        y1, _ = integrate(lambda t, y: y, np.array([1.0]), 0.0, 1.0, TIGHT)
        assert y1[0] == pytest.approx(np.e, abs=1e-7)

    def test_rotation(self):
        y1, _ = integrate(lambda t, y: np.array([-y[1], y[0]]), np.array([1.0, 0.0]),
                          0.0, np.pi / 2, TIGHT)
        assert np.allclose(y1, [0.0, 1.0], atol=1e-7)

    def test_backwards_in_time(self):
        y0, _ = integrate(lambda t, y: y, np.array([np.e]), 1.0, 0.0, TIGHT)
        assert y0[0] == pytest.approx(1.0, abs=1e-7)

    def test_time_dependent(self):
        """y' = 2t gives y(1) = 1 exactly for a 5th order method"""
        y1, _ = integrate(lambda t, y: np.array([2.0 * t]), np.array([0.0]), 0.0, 1.0, TIGHT)
        assert y1[0] == pytest.approx(1.0, abs=1e-12)

    def test_equal_endpoints(self):
        with pytest.raises(ValueError):
            integrate(lambda t, y: y, np.ones(1), 0.5, 0.5, SolverConfig())

    def test_non_finite(self):
        with pytest.raises(NonFiniteError):
            integrate(lambda t, y: np.array([np.nan]), np.ones(1), 0.0, 1.0, SolverConfig())

    def test_max_steps(self):
        with pytest.raises(MaxStepsExceededError):
            integrate(lambda t, y: np.array([np.cos(200.0 * t)]), np.zeros(1), 0.0, 1.0,
                      SolverConfig(rtol=1e-10, atol=1e-10, max_steps=5))

    def test_step_underflow(self):
        """Finite-time blow-up of y' = y² from y(0) = 1 at t = 1"""
        with pytest.raises((StepUnderflowError, NonFiniteError)):
            integrate(lambda t, y: y * y, np.ones(1), 0.0, 2.0,
                      SolverConfig(h_min=1e-6, max_steps=100000))

    def test_hook_applied_to_accepted_states(self):
        seen = []

        def hook(y):
            seen.append(y.copy())
            return y / np.linalg.norm(y)

        y1, stats = integrate(lambda t, y: np.array([-y[1], y[0]]), np.array([1.0, 0.0]),
                              0.0, 1.0, SolverConfig(), hook=hook)
        assert len(seen) == stats.n_steps
        assert np.linalg.norm(y1) == pytest.approx(1.0, abs=1e-15)

    def test_hook_rejection_shrinks_step(self):
        calls = {'n': 0}

        def hook(y):
            calls['n'] += 1
            if calls['n'] == 1:
                raise RetractionError("too far")
            return y

        _, stats = integrate(lambda t, y: np.zeros_like(y), np.ones(2), 0.0, 1.0,
                             SolverConfig(), hook=hook)
        assert stats.n_rejected == 1
        assert stats.n_steps >= 2


class TestForwardFlow:
    """Test the flow with its log-density channel"""

    def test_zero_params(self):
        man = build_manifold('sphere:2')
        ff = FlowField(man, net.zeros(net.architecture(man.spec)))
        x0 = man.sample_base(np.random.default_rng(0), 5)
        res = forward_flow(ff, x0, np.zeros(5), SolverConfig())
        assert np.array_equal(res.point, x0)
        assert np.all(res.delta_logp == 0.0)

    @pytest.mark.parametrize("name", ['so:3', 'su:2', 'u:2'])
    def test_constant_flow_is_left_translation(self, name):
        """Constant coefficients c: x(1) = x0·exp(Σ c_i v_i) with zero log-density change"""
        man = build_manifold(name)
        rng = np.random.default_rng(1)
        c = rng.uniform(-1.0, 1.0, man.gen_count)
        ff = FlowField(man, net.MlpParams.constant(net.architecture(man.spec), c))
        x0 = man.sample_base(rng)
        res = forward_flow(ff, x0, 0.0, TIGHT)
        expected = man.to_matrix(x0) @ densemat.matrix_exp(sum(ci * v for ci, v in zip(c, man.basis)))
        assert np.linalg.norm(man.to_matrix(res.point) - expected) <= 1e-6
        assert res.delta_logp == 0.0

    def test_constant_flow_stays_on_sphere(self):
        man = build_manifold('sphere:2')
        ff = FlowField(man, net.MlpParams.constant(net.architecture(man.spec), [1.0, -0.5, 0.3]))
        x0 = man.sample_base(np.random.default_rng(2), 10)
        res = forward_flow(ff, x0, np.zeros(10), SolverConfig())
        assert np.max(man.check_constraint(res.point)) <= 1e-8

    def test_estimate_mode_with_fixed_probes(self):
        ff = random_field('sphere:2', 3)
        x0 = ff.manifold.sample_base(np.random.default_rng(4), 4)
        probes = np.ones((4, 1, 3))
        a = forward_flow(ff, x0, np.zeros(4), SolverConfig(), divergence='estimate', probes=probes)
        b = forward_flow(ff, x0, np.zeros(4), SolverConfig(), divergence='estimate', probes=probes)
        assert np.array_equal(a.delta_logp, b.delta_logp)
        exact = forward_flow(ff, x0, np.zeros(4), SolverConfig())
        assert np.allclose(a.point, exact.point, atol=1e-4)

    def test_unknown_divergence_mode(self):
        ff = random_field('sphere:2', 3)
        with pytest.raises(ValueError):
            forward_flow(ff, np.array([1.0, 0.0, 0.0]), 0.0, SolverConfig(), divergence='hutch')

    def test_composition(self):
        """Flowing over [0, 0.5] then [0.5, 1] matches one pass over [0, 1]"""
        ff = random_field('so:3', 5)
        x0 = ff.manifold.sample_base(np.random.default_rng(6))
        whole = forward_flow(ff, x0, 0.0, TIGHT)
        first = forward_flow(ff, x0, 0.0, TIGHT, t1=0.5)
        second = forward_flow(ff, first.point, first.delta_logp, TIGHT, t0=0.5, t1=1.0)
        assert np.allclose(second.point, whole.point, atol=1e-5)
        assert first.delta_logp + second.delta_logp == pytest.approx(whole.delta_logp, abs=1e-5)

    def test_invertible(self):
        """Integrating back from t=1 to t=0 returns the start point"""
        ff = random_field('sphere:2', 7)
        x0 = ff.manifold.sample_base(np.random.default_rng(8))
        fwd = forward_flow(ff, x0, 0.0, TIGHT)
        back = forward_flow(ff, fwd.point, 0.0, TIGHT, t0=1.0, t1=0.0)
        assert np.allclose(back.point, x0, atol=1e-5)
        assert back.delta_logp == pytest.approx(-fwd.delta_logp, abs=1e-5)

    def test_homogeneous_log_density_is_jacobian_term_only(self):
        """On SO(3) the log-density change is -∫Σ df_i(X_i): zero for constant fields, nonzero otherwise"""
        ff = random_field('so:3', 9)
        x0 = ff.manifold.sample_base(np.random.default_rng(10))
        res = forward_flow(ff, x0, 0.0, TIGHT)
        assert np.isfinite(res.delta_logp)
        assert res.delta_logp != 0.0

    def test_constant_spd_flow_is_congruence(self):
        """Q' = AQ + QAᵀ with A[j, k] = c[k·n + j] gives Q(1) = exp(A)·Q0·exp(A)ᵀ"""
        man = build_manifold('spd:2')
        c = np.array([0.4, -0.3, 0.2, -0.5])
        ff = FlowField(man, net.MlpParams.constant(net.architecture(man.spec), c))
        q0 = np.array([[2.0, 0.5], [0.5, 1.0]])
        res = forward_flow(ff, man.from_matrix(q0), 0.0, TIGHT)
        e = densemat.matrix_exp(c.reshape(2, 2).T)
        assert np.allclose(man.to_matrix(res.point), e @ q0 @ e.T, atol=1e-6)

    def test_constraint_drift_bounded(self):
        ff = random_field('stiefel:2:4', 11)
        x0 = ff.manifold.sample_base(np.random.default_rng(12), 5)
        res = forward_flow(ff, x0, np.zeros(5), SolverConfig())
        assert np.max(ff.manifold.check_constraint(res.point)) <= 1e-6


class TestBackwardAdjoint:
    """Test the adjoint pass"""

    def test_zero_seeds(self):
        ff = random_field('sphere:2', 13)
        x0 = ff.manifold.sample_base(np.random.default_rng(14))
        fwd = forward_flow(ff, x0, 0.0, SolverConfig())
        res = backward_adjoint(ff, fwd.point, np.zeros(3), 0.0, SolverConfig())
        assert np.all(res.grad_params.flatten() == 0.0)
        assert np.all(res.grad_x0 == 0.0)

    @pytest.mark.parametrize("name", ['sphere:2', 'so:3'])
    def test_endpoint_gradient_finite_differences(self, name):
        """d/dλ of <w, x(1)> + ℓ(1) against central differences"""
        ff = random_field(name, 15)
        rng = np.random.default_rng(16)
        man = ff.manifold
        x0 = man.sample_base(rng, 2)
        w = rng.standard_normal(man.dim)
        solver = SolverConfig(rtol=1e-10, atol=1e-10, max_steps=100000)

        def objective(field_):
            res = forward_flow(field_, x0, np.zeros(2), solver)
            return float(np.sum(res.point @ w) + np.sum(res.delta_logp))

        fwd = forward_flow(ff, x0, np.zeros(2), solver)
        adj = backward_adjoint(ff, fwd.point, np.tile(w, (2, 1)), np.ones(2), solver)
        grad = adj.grad_params.flatten()
        flat = ff.params.flatten()
        floor = 1e-2 * np.max(np.abs(grad))
        h = 1e-4
        for i in rng.choice(flat.size, size=10, replace=False):
            up, down = flat.copy(), flat.copy()
            up[i] += h
            down[i] -= h
            fd = (objective(ff.with_params(ff.params.unflatten(up)))
                  - objective(ff.with_params(ff.params.unflatten(down)))) / (2 * h)
            assert abs(grad[i] - fd) <= 1e-3 * max(abs(fd), floor)

    def test_state_cotangent_flat_fixture(self):
        """On R^D the adjoint a_x(0) is the transposed flow Jacobian applied to the seed"""
        ff = random_field('euclid:2', 17)
        x0 = np.array([0.3, -0.6])
        w = np.array([1.0, 2.0])
        solver = SolverConfig(rtol=1e-10, atol=1e-10)
        fwd = forward_flow(ff, x0, 0.0, solver)
        adj = backward_adjoint(ff, fwd.point, w, 0.0, solver)
        h = 1e-5
        for d in range(2):
            e = np.zeros(2)
            e[d] = h
            fd = (forward_flow(ff, x0 + e, 0.0, solver).point
                  - forward_flow(ff, x0 - e, 0.0, solver).point) @ w / (2 * h)
            assert adj.grad_x0[d] == pytest.approx(fd, abs=1e-5)
