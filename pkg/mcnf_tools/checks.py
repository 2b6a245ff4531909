"""
Property gate

Numerical self-checks run by `mcnf check`: matrix kernel oracles, generator
tangency and spanning, Haar sampler constraints, unbiasedness of the
divergence estimator, closed-form flows on Lie groups, adjoint gradients
against finite differences, and the calibration of the identity flow.
"""

import copy
import logging
import time
from dataclasses import dataclass

import numpy as np

from . import densemat, net
from .field import FlowField, rademacher
from .manifolds import build_manifold
from .ode import SolverConfig, forward_flow
from .targets import make_target
from .train import TrainConfig, evaluate, kl_loss_batch
from .utilities import make_rng

logger = logging.getLogger(__name__)

GEOMETRY_MANIFOLDS = (
    'sphere:2', 'sphere:3', 'so:2', 'so:3', 'u:2', 'u:3', 'su:2', 'su:3', 'stiefel:2:4', 'spd:2',
)
CHECK_SEED = 20240229


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    bound: float
    seconds: float = 0.0
    detail: str = ''


def corrupt_generators(manifold, scale=1e-3):
    """Copy of a manifold whose generators gain a normal component (negative control)"""
    base = type(manifold)

    class Corrupted(base):
        def generators(self, x):
            gens = base.generators(self, x)
            return gens + scale * np.asarray(x, dtype=float)[..., None, :]

    Corrupted.__name__ = f"Corrupted{base.__name__}"
    out = copy.copy(manifold)
    out.__class__ = Corrupted
    return out


def _result(name, value, bound, started, detail=''):
    value = float(value)
    return CheckResult(name, bool(value <= bound), value, bound, time.perf_counter() - started, detail)


def _random_field(manifold, rng, output_scale=100.0):
    params = net.init(manifold.spec, rng)
    params.weights[-1] *= output_scale
    return FlowField(manifold, params)


# --- matrix kernel -----------------------------------------------------------


def check_densemat(rng):
    results = []
    started = time.perf_counter()
    worst = 0.0
    for shape in ((4, 4), (5, 3)):
        for cplx in (False, True):
            a = rng.standard_normal(shape) + (1j * rng.standard_normal(shape) if cplx else 0.0)
            q, r = densemat.qr_decompose(a)
            gram = densemat.conj_transpose(q) @ q
            worst = max(
                worst,
                np.linalg.norm(q @ r - a) / (1.0 + np.linalg.norm(a)),
                np.linalg.norm(gram - np.eye(shape[1])),
                np.max(np.abs(np.imag(np.diag(r)))),
                float(np.max(-np.real(np.diag(r)), initial=0.0) > 0.0),
            )
    results.append(_result('qr reconstruction and orthonormality', worst, 1e-10, started))

    started = time.perf_counter()
    a = rng.standard_normal((4, 4))
    b = rng.standard_normal((4, 4))
    product = densemat.determinant(a @ b)
    rel = abs(product - densemat.determinant(a) * densemat.determinant(b)) / abs(product)
    rel = max(rel, abs(densemat.determinant(np.diag([2.0, 3.0])) - 6.0))
    results.append(_result('determinant multiplicativity', rel, 1e-8, started))

    started = time.perf_counter()
    theta = np.pi / 2
    rot = densemat.matrix_exp(np.array([[0.0, theta], [-theta, 0.0]]))
    err = np.linalg.norm(rot - np.array([[0.0, 1.0], [-1.0, 0.0]]))
    a = rng.standard_normal((4, 4))
    a *= 10.0 / np.linalg.norm(a)
    err = max(err, np.linalg.norm(densemat.matrix_exp(a) @ densemat.matrix_exp(-a) - np.eye(4)))
    results.append(_result('matrix exponential oracles', err, 1e-10, started))
    return results


# --- geometry ----------------------------------------------------------------


def check_geometry(name, rng, build=build_manifold, n_points=100):
    man = build(name)
    results = []
    x = man.sample_base(rng, n_points)

    started = time.perf_counter()
    tangency = np.max(man.is_tangent(x[:, None, :], man.generators(x)))
    results.append(_result(f"{name}: generator tangency", tangency, 1e-10, started))

    started = time.perf_counter()
    gens = man.generators(x[:10])
    ranks = [np.linalg.matrix_rank(g) for g in gens]
    gap = max(abs(r - man.spec.intrinsic_dim) for r in ranks)
    results.append(_result(f"{name}: generator span rank", gap, 0.0, started,
                           f"ranks {sorted(set(ranks))}, intrinsic {man.spec.intrinsic_dim}"))

    started = time.perf_counter()
    residual = np.max(man.check_constraint(x))
    results.append(_result(f"{name}: base sample constraint", residual, 1e-10, started))
    return results


# --- divergence estimator ----------------------------------------------------


def check_estimator(name, rng, n_points=20, n_probes=100000, z_bound=3.0):
    """Max over points of |mean estimate - exact| / (σ̂/√P)"""
    started = time.perf_counter()
    man = build_manifold(name)
    ff = _random_field(man, rng)
    worst = 0.0
    for _ in range(n_points):
        x = man.sample_base(rng)
        t = rng.uniform()
        exact = ff.divergence_exact(t, x)
        probes = rademacher(rng, (n_probes, 1, man.gen_count))
        values = ff.divergence_estimate(t, np.tile(x, (n_probes, 1)), probes=probes)
        sigma = np.std(values, ddof=1)
        err = abs(np.mean(values) - exact)
        if sigma == 0.0:
            z = 0.0 if err <= 1e-12 else np.inf
        else:
            z = err / (sigma / np.sqrt(n_probes))
        worst = max(worst, z)
    return _result(f"{name}: divergence estimator unbiased", worst, z_bound, started,
                   f"{n_points} points x {n_probes} probes")


# --- closed-form flows -------------------------------------------------------


def check_closed_form_flow(name, rng):
    """Constant coefficients c: the flow from a is a·exp(Σ c_i v_i) with zero log-density change"""
    started = time.perf_counter()
    man = build_manifold(name)
    coeffs = rng.uniform(-1.0, 1.0, man.gen_count)
    params = net.MlpParams.constant(net.architecture(man.spec), coeffs)
    ff = FlowField(man, params)
    a = man.sample_base(rng)
    res = forward_flow(ff, a, 0.0, SolverConfig(rtol=1e-8, atol=1e-8))
    algebra = sum(c * v for c, v in zip(coeffs, man.basis))
    expected = man.to_matrix(a) @ densemat.matrix_exp(algebra)
    err = np.linalg.norm(man.to_matrix(res.point) - expected)
    if res.delta_logp != 0.0:
        err = max(err, np.inf)
    return _result(f"{name}: closed-form constant flow", err, 1e-6, started,
                   f"delta_logp {res.delta_logp!r}")


# --- adjoint -----------------------------------------------------------------


def check_adjoint(name, family, rng, n_params=10, h=1e-4, batch_size=8):
    """Relative error of adjoint parameter gradients against central differences"""
    started = time.perf_counter()
    man = build_manifold(name)
    ff = _random_field(man, rng, output_scale=30.0)
    target = make_target(man, family, 2.0, k=2, rng=rng)
    cfg = TrainConfig(batch_size=batch_size, chunk_size=batch_size, divergence='exact', seed=CHECK_SEED)
    solver = SolverConfig(rtol=1e-10, atol=1e-10, max_steps=100000)

    grad = kl_loss_batch(ff, target, cfg, solver=solver).grad.flatten()
    flat = ff.params.flatten()
    floor = 1e-2 * np.max(np.abs(grad))
    worst = 0.0
    for i in rng.choice(flat.size, size=min(n_params, flat.size), replace=False):
        losses = []
        for sign in (1.0, -1.0):
            shifted = flat.copy()
            shifted[i] += sign * h
            losses.append(kl_loss_batch(ff.with_params(ff.params.unflatten(shifted)), target, cfg,
                                        solver=solver).loss)
        fd = (losses[0] - losses[1]) / (2.0 * h)
        worst = max(worst, abs(grad[i] - fd) / max(abs(fd), floor))
    return _result(f"{name}: adjoint gradient vs finite differences", worst, 1e-3, started)


# --- calibration -------------------------------------------------------------


def check_identity_calibration(name, n_samples=20000):
    """Untrained (zero) flow against the base density: ESS 100%, KL within 3/√S"""
    started = time.perf_counter()
    man = build_manifold(name)
    ff = FlowField(man, net.zeros(net.architecture(man.spec)))
    target = make_target(man, 'base', 1.0)
    cfg = TrainConfig(eval_sample_size=n_samples, seed=CHECK_SEED)
    report = evaluate(ff, target, cfg)
    ess_gap = abs(report.ess_percent - 100.0) / 0.1
    kl_ratio = abs(report.kl_nats) / (3.0 / np.sqrt(n_samples))
    return _result(f"{name}: identity flow calibration", max(ess_gap, kl_ratio), 1.0, started,
                   f"ESS {report.ess_percent:.3f}%, KL {report.kl_nats:.2e}")


def run_checks(quick=False, build=build_manifold, seed=CHECK_SEED):
    """
    Run the property gate

    `quick` skips the adjoint finite-difference checks. `build` constructs the
    manifolds used by the geometry checks.
    Returns: list of CheckResult
    """
    results = []
    results.extend(check_densemat(make_rng(seed, 0)))
    for i, name in enumerate(GEOMETRY_MANIFOLDS):
        results.extend(check_geometry(name, make_rng(seed, 1, i), build=build))
    for i, name in enumerate(('sphere:2', 'so:3')):
        probes = 10000 if quick else 100000
        results.append(check_estimator(name, make_rng(seed, 2, i), n_probes=probes))
    for i, name in enumerate(('so:3', 'su:2')):
        results.append(check_closed_form_flow(name, make_rng(seed, 3, i)))
    if not quick:
        for i, (name, family) in enumerate((('sphere:2', 'vmf'), ('so:3', 'langevin'))):
            results.append(check_adjoint(name, family, make_rng(seed, 4, i)))
    for name in ('sphere:2', 'so:3'):
        results.append(check_identity_calibration(name))
    for r in results:
        logger.debug("%s: %s (%.3e <= %.3e)", r.name, 'pass' if r.passed else 'FAIL', r.value, r.bound)
    return results
