"""
Time-dependent vector fields built from a generating set

X_t(x) = Σ_i f_i(t, x) X_i(x), with f the coefficient network. The divergence
splits as Σ_i df_i(X_i) + Σ_i f_i div X_i, so it needs one directional
derivative of f per generator (exact) or one per Rademacher probe (estimate).
"""

import numpy as np

from . import net
from .constants import VELOCITY_CONSTRAINT_TOL
from .exceptions import ConstraintViolationError
from .manifolds import Manifold, build_manifold


def rademacher(rng, shape):
    """Random ±1 entries"""
    return 2.0 * rng.integers(0, 2, size=shape) - 1.0


class FlowField:
    """Vector field Σ f_i(t, ·) X_i on a manifold"""

    def __init__(self, manifold, params):
        if not isinstance(manifold, Manifold):
            manifold = build_manifold(manifold)
        net.check_architecture(params, manifold.spec)
        self.manifold = manifold
        self.spec = manifold.spec
        self.params = params

    def with_params(self, params):
        return FlowField(self.manifold, params)

    def _prepare(self, x, validate):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x2 = np.atleast_2d(x)
        if validate:
            residual = self.manifold.check_constraint(x2)
            if np.any(~(residual <= VELOCITY_CONSTRAINT_TOL)):
                raise ConstraintViolationError(
                    f"point off {self.spec}: residual {float(np.max(residual)):.3e}"
                )
        return x2, single

    def velocity(self, t, x, validate=True):
        """Σ_i f_i(t, x) X_i(x)"""
        x2, single = self._prepare(x, validate)
        f = net.forward(self.params, t, x2)
        out = np.einsum('bi,bid->bd', f, self.manifold.generators(x2))
        return out[0] if single else out

    def _generator_jvp(self, t, x2, gens):
        """f and (∂f/∂x)·X_j for every generator j: shapes (B, m), (B, m, m)"""
        batch, m, dim = gens.shape
        x_rep = np.repeat(x2, m, axis=0)
        f, df = net.jvp(self.params, t, x_rep, gens.reshape(batch * m, dim))
        return f.reshape(batch, m, m)[:, 0, :], df.reshape(batch, m, m)

    def jacobian(self, t, x):
        """Dense ∂f/∂x, shape (B, m_gen, D)"""
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        batch, dim = x2.shape
        x_rep = np.repeat(x2, dim, axis=0)
        directions = np.tile(np.eye(dim), (batch, 1))
        f, df = net.jvp(self.params, t, x_rep, directions)
        m = f.shape[1]
        return f.reshape(batch, dim, m)[:, 0, :], np.swapaxes(df.reshape(batch, dim, m), 1, 2)

    def divergence_exact(self, t, x, validate=True):
        """Σ_i df_i(X_i) + Σ_i f_i div X_i"""
        x2, single = self._prepare(x, validate)
        gens = self.manifold.generators(x2)
        f, df = self._generator_jvp(t, x2, gens)
        div = np.trace(df, axis1=1, axis2=2)
        div = div + np.sum(f * self.manifold.generator_divergence(x2), axis=1)
        return div[0] if single else div

    def divergence_estimate(self, t, x, rng=None, n_probes=1, probes=None, validate=True):
        """
        Hutchinson-type estimate with Rademacher probes ε ∈ {±1}^{m_gen}

        mean over probes of <ε, (∂f/∂x)·(Σ_i ε_i X_i)> + Σ_i f_i div X_i.
        Pass `probes` of shape (B, n_probes, m_gen) to fix the noise.
        """
        x2, single = self._prepare(x, validate)
        batch = x2.shape[0]
        if probes is None:
            if n_probes < 1:
                raise ValueError(f"n_probes must be >= 1, got {n_probes}")
            probes = rademacher(rng, (batch, n_probes, self.spec.gen_count))
        probes = np.asarray(probes, dtype=float).reshape(batch, -1, self.spec.gen_count)
        count = probes.shape[1]

        gens = self.manifold.generators(x2)
        directions = np.einsum('bpi,bid->bpd', probes, gens).reshape(batch * count, -1)
        f, df = net.jvp(self.params, t, np.repeat(x2, count, axis=0), directions)
        quad = np.sum(probes.reshape(batch * count, -1) * df, axis=1).reshape(batch, count)
        f = f.reshape(batch, count, -1)[:, 0, :]
        est = quad.mean(axis=1) + np.sum(f * self.manifold.generator_divergence(x2), axis=1)
        return est[0] if single else est

    def adjoint_terms(self, t, x, a_x, a_l):
        """
        Velocity, exact divergence and the adjoint contractions in one pass

        With Y = Σ f_i X̄_i and g the exact divergence:
          da_x     = (∂Y/∂x)ᵀ a_x + a_l ∂g/∂x
          g_params = (∂Y/∂λ)ᵀ a_x + a_l ∂g/∂λ   (summed over the batch)
        """
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        a_x = np.atleast_2d(np.asarray(a_x, dtype=float))
        a_l = np.broadcast_to(np.asarray(a_l, dtype=float).reshape(-1), (x2.shape[0],))
        man = self.manifold
        batch, dim = x2.shape
        m = self.spec.gen_count

        gens = man.generators(x2)
        gen_div = man.generator_divergence(x2)
        f, jac = self.jacobian(t, x2)

        velocity = np.einsum('bi,bid->bd', f, gens)
        divergence = np.einsum('bid,bid->b', jac, gens) + np.sum(f * gen_div, axis=1)

        # first-order terms: network cotangent (X_iᵀ a_x)_i + a_l div X_i
        u = np.einsum('bid,bd->bi', gens, a_x) + a_l[:, None] * gen_div
        gx, _, g_params = net.vjp(self.params, t, x2, u)
        da_x = gx + man.generator_vjp(x2, f[:, :, None] * a_x[:, None, :])

        if np.any(a_l != 0.0):
            # second derivatives of f along each generator
            weights = (a_l[:, None, None] * np.eye(m)).reshape(batch * m, m)
            gx2, g2 = net.grad_of_jvp(
                self.params, t, np.repeat(x2, m, axis=0), gens.reshape(batch * m, dim), weights
            )
            da_x = da_x + gx2.reshape(batch, m, dim).sum(axis=1)
            g_params = g_params + g2
            # generators varying under a fixed Jacobian, and the gradient of div X_i
            da_x = da_x + a_l[:, None] * man.generator_vjp(x2, jac)
            da_x = da_x + a_l[:, None] * np.einsum(
                'bi,bid->bd', f, man.generator_divergence_grad(x2)
            )
        return velocity, divergence, da_x, g_params

    def adjoint_contractions(self, t, x, a_x, a_l):
        """(dx_dot, da_x, g_params) for the augmented field (Y, g)"""
        single = np.ndim(x) == 1
        velocity, _, da_x, g_params = self.adjoint_terms(t, x, a_x, a_l)
        if single:
            return velocity[0], da_x[0], g_params
        return velocity, da_x, g_params
