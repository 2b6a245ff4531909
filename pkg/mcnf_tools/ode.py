"""
ODE integration

Adaptive Dormand-Prince 5(4) integration of flat real state vectors, and the
two augmented systems built on it: the forward flow with its log-density
channel, and the backward adjoint pass that recomputes the trajectory in
reverse while accumulating parameter gradients.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .constants import STEP_FACTOR_MAX, STEP_FACTOR_MIN, STEP_SAFETY
from .exceptions import (
    MaxStepsExceededError,
    NonFiniteError,
    RetractionError,
    StepUnderflowError,
)
from .field import rademacher

logger = logging.getLogger(__name__)

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# difference between the 5th and embedded 4th order weights
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and step limits for the adaptive integrator"""

    rtol: float = 1e-6
    atol: float = 1e-6
    h_init: float = 1.0
    h_min: float = 1e-10
    max_steps: int = 10000

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError(f"rtol and atol must be positive, got {self.rtol}, {self.atol}")
        if not 0 < self.h_min < self.h_init:
            raise ValueError(f"need 0 < h_min < h_init, got {self.h_min}, {self.h_init}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")


EVAL_SOLVER = SolverConfig(rtol=1e-8, atol=1e-8)


@dataclass
class SolverStats:
    n_steps: int = 0
    n_rejected: int = 0
    n_evals: int = 0


@dataclass
class FlowResult:
    """Transported points, accumulated log-density change and solver statistics"""

    point: np.ndarray
    delta_logp: np.ndarray
    n_steps: int
    n_rejected: int


@dataclass
class AdjointResult:
    """Parameter gradient, state cotangent at t=0 and solver statistics"""

    grad_params: object
    grad_x0: np.ndarray
    n_steps: int


def _derivative(dynamics, t, y, stats):
    dy = np.asarray(dynamics(t, y), dtype=float)
    stats.n_evals += 1
    if not np.all(np.isfinite(dy)):
        raise NonFiniteError(f"non-finite derivative at t={t:.6g}")
    return dy


def integrate(dynamics, y0, t0, t1, cfg, hook=None):
    """
    Integrate y' = dynamics(t, y) from t0 to t1 (either direction)

    The local error of each step is scaled componentwise by atol + rtol·|y| and
    the step is accepted when its max-norm is <= 1. `hook` maps accepted states
    (e.g. a retraction); a RetractionError from it rejects the step.

    Returns: (y1, SolverStats)
    """
    if t0 == t1:
        raise ValueError("t0 and t1 must differ")
    y = np.array(y0, dtype=float)
    direction = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)
    stats = SolverStats()

    t = t0
    h = min(cfg.h_init, span)
    k1 = _derivative(dynamics, t, y, stats)
    while True:
        remaining = abs(t1 - t)
        if remaining <= 1e-12 * max(1.0, span):
            break
        if stats.n_steps + stats.n_rejected >= cfg.max_steps:
            raise MaxStepsExceededError(
                f"{cfg.max_steps} steps exceeded at t={t:.6g} (target {t1:.6g})"
            )
        last = h >= remaining
        if last:
            h = remaining
        dt = direction * h

        ks = [k1]
        for stage in range(1, 7):
            incr = sum(a * k for a, k in zip(_A[stage], ks) if a != 0.0)
            ks.append(_derivative(dynamics, t + _C[stage] * dt, y + dt * incr, stats))
        y_new = y + dt * sum(b * k for b, k in zip(_B, ks) if b != 0.0)
        err = dt * sum(e * k for e, k in zip(_E, ks) if e != 0.0)

        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
        norm = float(np.max(np.abs(err) / scale)) if err.size else 0.0
        if not np.isfinite(norm):
            raise NonFiniteError(f"non-finite error estimate at t={t:.6g}")

        accepted = norm <= 1.0
        hook_rejected = False
        if accepted and hook is not None:
            try:
                projected = hook(y_new)
            except RetractionError as exc:
                logger.debug("step rejected by hook at t=%.6g: %s", t, exc)
                accepted = False
                hook_rejected = True

        if accepted:
            t = t1 if last else t + dt
            stats.n_steps += 1
            if hook is None:
                y = y_new
                k1 = ks[6]
            else:
                y = projected
                k1 = _derivative(dynamics, t, y, stats)
        else:
            stats.n_rejected += 1

        if hook_rejected:
            factor = STEP_FACTOR_MIN
        elif norm == 0.0:
            factor = STEP_FACTOR_MAX
        else:
            factor = min(STEP_FACTOR_MAX, max(STEP_FACTOR_MIN, STEP_SAFETY * norm ** -0.2))
        h = h * factor
        if h < cfg.h_min and abs(t1 - t) > cfg.h_min:
            raise StepUnderflowError(f"step size {h:.3e} below h_min at t={t:.6g}")

    return y, stats


def _batch(x):
    x = np.asarray(x, dtype=float)
    return np.atleast_2d(x), x.ndim == 1


def forward_flow(ff, x0, logp0, cfg, divergence='exact', probes=None, rng=None, t0=0.0, t1=1.0):
    """
    Transport x0 along the field and integrate the log-density change

    State (x, ℓ) with x' = velocity and ℓ' = -divergence; the retraction is
    applied to the x block of accepted states. `divergence` is 'exact' or
    'estimate' (Rademacher probes fixed for the whole trajectory: pass
    `probes` of shape (B, n_probes, m_gen) or an `rng` to draw one per sample).

    Returns: FlowResult with delta_logp = ℓ(t1) - logp0
    """
    x2, single = _batch(x0)
    batch, dim = x2.shape
    logp = np.broadcast_to(np.asarray(logp0, dtype=float).reshape(-1), (batch,)).copy()
    man = ff.manifold
    x2 = man.retract(x2)

    if divergence == 'estimate':
        if probes is None:
            probes = rademacher(rng, (batch, 1, ff.spec.gen_count))
    elif divergence != 'exact':
        raise ValueError(f"divergence must be 'exact' or 'estimate', got '{divergence}'")

    def dynamics(t, y):
        x = y[: batch * dim].reshape(batch, dim)
        vel = ff.velocity(t, x, validate=False)
        if divergence == 'exact':
            div = ff.divergence_exact(t, x, validate=False)
        else:
            div = ff.divergence_estimate(t, x, probes=probes, validate=False)
        return np.concatenate([vel.ravel(), -div])

    def hook(y):
        out = y.copy()
        out[: batch * dim] = man.retract(y[: batch * dim].reshape(batch, dim)).ravel()
        return out

    y0 = np.concatenate([x2.ravel(), logp])
    y1, stats = integrate(dynamics, y0, t0, t1, cfg, hook=hook)
    point = y1[: batch * dim].reshape(batch, dim)
    delta = y1[batch * dim:] - logp
    logger.debug(
        "forward flow: %d samples, %d steps, %d rejected", batch, stats.n_steps, stats.n_rejected
    )
    if single:
        return FlowResult(point[0], float(delta[0]), stats.n_steps, stats.n_rejected)
    return FlowResult(point, delta, stats.n_steps, stats.n_rejected)


def backward_adjoint(ff, x1, a_x1, a_l1, cfg, t0=0.0, t1=1.0):
    """
    Integrate the adjoint system from t1 back to t0

    Augmented state (x, ℓ, a_x, a_ℓ, g_λ): x and ℓ are recomputed in reverse,
    a_x' = -[(∂Y/∂x)ᵀ a_x - a_ℓ ∂g/∂x], a_ℓ' = 0 and
    g_λ' = -[(∂Y/∂λ)ᵀ a_x - a_ℓ ∂g/∂λ], the minus sign on a_ℓ reflecting ℓ' = -g.

    Returns: AdjointResult with the batch-summed parameter gradient and a_x(t0)
    """
    x2, single = _batch(x1)
    batch, dim = x2.shape
    a_x = np.broadcast_to(np.atleast_2d(np.asarray(a_x1, dtype=float)), (batch, dim))
    a_l = np.broadcast_to(np.asarray(a_l1, dtype=float).reshape(-1), (batch,))
    template = ff.params
    n_params = template.num_params
    man = ff.manifold

    nx = batch * dim
    sl_x = slice(0, nx)
    sl_l = slice(nx, nx + batch)
    sl_ax = slice(nx + batch, 2 * nx + batch)
    sl_al = slice(2 * nx + batch, 2 * nx + 2 * batch)
    sl_g = slice(2 * nx + 2 * batch, 2 * nx + 2 * batch + n_params)

    def dynamics(t, y):
        x = y[sl_x].reshape(batch, dim)
        ax = y[sl_ax].reshape(batch, dim)
        al = y[sl_al]
        vel, div, da_x, g_params = ff.adjoint_terms(t, x, ax, -al)
        out = np.empty_like(y)
        out[sl_x] = vel.ravel()
        out[sl_l] = -div
        out[sl_ax] = -da_x.ravel()
        out[sl_al] = 0.0
        out[sl_g] = -g_params.flatten()
        return out

    def hook(y):
        out = y.copy()
        out[sl_x] = man.retract(y[sl_x].reshape(batch, dim)).ravel()
        return out

    y1 = np.concatenate([x2.ravel(), np.zeros(batch), a_x.ravel(), a_l, np.zeros(n_params)])
    y0, stats = integrate(dynamics, y1, t1, t0, cfg, hook=hook)
    grad = template.unflatten(y0[sl_g])
    grad_x0 = y0[sl_ax].reshape(batch, dim)
    logger.debug("adjoint pass: %d samples, %d steps", batch, stats.n_steps)
    return AdjointResult(grad, grad_x0[0] if single else grad_x0, stats.n_steps)
