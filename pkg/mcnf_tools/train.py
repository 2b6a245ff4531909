"""
Training and evaluation

Reverse-KL training of a flow field with Adam, and importance-sampling
evaluation (KL with estimated normalization constant, effective sample size).

Batches are cut into fixed-size chunks that are integrated jointly; every
chunk draws from its own random stream derived from (seed, purpose, step,
chunk), so results do not depend on the number of worker threads. A chunk
whose integration fails is re-run one sample at a time and the failing
samples are dropped.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import logsumexp

from . import net
from .constants import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_CHUNK_SIZE,
    DEFAULT_EVAL_SAMPLES,
    DEFAULT_LEARNING_RATE,
    DEFAULT_TRAIN_STEPS,
    MAX_DROP_FRACTION,
    STREAM_EVAL,
    STREAM_INIT,
    STREAM_TRAIN,
)
from .exceptions import (
    BatchFailedError,
    ConfigError,
    NotPositiveDefiniteError,
    PositivityError,
    RetractionError,
    SolverError,
)
from .field import FlowField, rademacher
from .ode import EVAL_SOLVER, SolverConfig, backward_adjoint, forward_flow
from .utilities import make_rng, split_chunks

logger = logging.getLogger(__name__)

# Errors that end a single trajectory; the sample is dropped
FLOW_ERRORS = (SolverError, RetractionError, PositivityError, NotPositiveDefiniteError)


@dataclass
class TrainConfig:
    """Optimizer, batching and sampling settings"""

    batch_size: int = DEFAULT_BATCH_SIZE
    lr: float = DEFAULT_LEARNING_RATE
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    n_steps: int = DEFAULT_TRAIN_STEPS
    eval_sample_size: int = DEFAULT_EVAL_SAMPLES
    seed: int = 0
    chunk_size: int = DEFAULT_CHUNK_SIZE
    threads: int = 1
    divergence: str = 'estimate'
    log_every: int = 100

    def __post_init__(self):
        for key in ('batch_size', 'eval_sample_size', 'chunk_size', 'threads'):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"train.{key}", f"must be >= 1, got {getattr(self, key)}")
        if self.n_steps < 0:
            raise ConfigError('train.n_steps', f"must be >= 0, got {self.n_steps}")
        if self.log_every < 0:
            raise ConfigError('train.log_every', f"must be >= 0, got {self.log_every}")
        if not self.lr > 0:
            raise ConfigError('train.lr', f"learning rate must be positive, got {self.lr}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError('train.adam_beta1', "Adam decay rates must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise ConfigError('train.adam_eps', f"must be positive, got {self.adam_eps}")
        if self.divergence not in ('estimate', 'exact'):
            raise ConfigError('train.divergence', f"must be 'estimate' or 'exact', got '{self.divergence}'")


@dataclass
class AdamState:
    """First and second moment estimates over the flattened parameters"""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, num_params):
        return cls(np.zeros(num_params), np.zeros(num_params), 0)


def adam_step(params, grad, state, cfg):
    """One bias-corrected Adam update; returns (new params, new state)"""
    g = grad.flatten()
    if g.size != state.m.size:
        raise ValueError(f"gradient has {g.size} entries, optimizer state {state.m.size}")
    t = state.t + 1
    m = cfg.adam_beta1 * state.m + (1.0 - cfg.adam_beta1) * g
    v = cfg.adam_beta2 * state.v + (1.0 - cfg.adam_beta2) * g * g
    m_hat = m / (1.0 - cfg.adam_beta1 ** t)
    v_hat = v / (1.0 - cfg.adam_beta2 ** t)
    flat = params.flatten() - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return params.unflatten(flat), AdamState(m, v, t)


@dataclass
class BatchLoss:
    """Mean loss and parameter gradient over the samples that survived integration"""

    loss: float
    grad: net.MlpParams
    n_used: int
    n_dropped: int
    n_ode_steps_mean: float


@dataclass
class EvalSamples:
    points: np.ndarray
    log_model: np.ndarray
    log_target: np.ndarray


@dataclass
class EvalReport:
    """Importance-sampling diagnostics of a trained flow"""

    kl_nats: float
    ess_percent: float
    z_hat: float
    log_z_hat: float
    n_samples: int
    n_dropped: int = 0
    samples: Optional[EvalSamples] = field(default=None, repr=False, compare=False)

    def to_dict(self):
        data = asdict(self)
        data.pop('samples')
        return data


@dataclass
class TrainRecord:
    step: int
    loss: float
    wall_ms: float
    n_ode_steps_mean: float
    n_dropped: int = 0

    def to_row(self):
        return [self.step, self.loss, self.wall_ms, self.n_ode_steps_mean]


@dataclass
class TrainResult:
    params: net.MlpParams
    records: List[TrainRecord]
    state: AdamState


def initial_field(manifold, seed):
    """Freshly initialized flow field for a manifold and run seed"""
    field_ = FlowField(manifold, net.zeros(net.architecture(manifold.spec)))
    return field_.with_params(net.init(manifold.spec, make_rng(seed, STREAM_INIT)))


def effective_sample_size(log_weights):
    """ESS in percent, 100·(Σw)² / (S·Σw²), computed from log-weights"""
    lw = np.asarray(log_weights, dtype=float).ravel()
    if lw.size == 0:
        raise ValueError("no weights")
    with np.errstate(divide='ignore'):
        log_ess = 2.0 * logsumexp(lw) - logsumexp(2.0 * lw)
    return float(100.0 * np.exp(log_ess) / lw.size)


def ess_from_weights(weights):
    """ESS in percent from raw nonnegative weights"""
    with np.errstate(divide='ignore'):
        return effective_sample_size(np.log(np.asarray(weights, dtype=float)))


def _isolate_failures(work, count):
    """work(indices) on the whole chunk, falling back to one sample at a time on failure"""
    try:
        return [work(np.arange(count))], 0
    except FLOW_ERRORS as exc:
        logger.info("chunk of %d failed (%s), retrying samples individually", count, exc)
    results, dropped = [], 0
    for i in range(count):
        try:
            results.append(work(np.array([i])))
        except FLOW_ERRORS as exc:
            dropped += 1
            logger.debug("sample %d dropped: %s", i, exc)
    return results, dropped


def _map_chunks(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _check_drops(dropped, total, what):
    if dropped > MAX_DROP_FRACTION * total:
        raise BatchFailedError(f"{what}: {dropped} of {total} samples dropped")
    if dropped:
        logger.warning("%s: dropped %d of %d samples", what, dropped, total)


def kl_loss_batch(ff, target, cfg, step=0, solver=None):
    """
    Reverse-KL loss E[log ρ_λ - log ρ*] and its parameter gradient on one batch

    Forward pass uses cfg.divergence (one Rademacher probe per sample and
    trajectory for 'estimate'); the adjoint pass uses the exact divergence and
    is seeded with a_x = -∇log ρ*(x1), a_ℓ = 1.
    """
    solver = solver or SolverConfig()
    man = ff.manifold
    chunks = split_chunks(cfg.batch_size, cfg.chunk_size)

    def run(item):
        index, (start, stop) = item
        rng = make_rng(cfg.seed, STREAM_TRAIN, step, index)
        count = stop - start
        x0 = man.sample_base(rng, count)
        probes = None
        if cfg.divergence == 'estimate':
            probes = rademacher(rng, (count, 1, man.gen_count))

        def work(idx):
            xs = x0[idx]
            logp0 = man.base_log_density0(xs)
            fwd = forward_flow(
                ff, xs, logp0, solver, divergence=cfg.divergence,
                probes=None if probes is None else probes[idx],
            )
            losses = logp0 + fwd.delta_logp - target.log_target(fwd.point)
            seed_x = -target.grad_log_target(fwd.point)
            adj = backward_adjoint(ff, fwd.point, seed_x, np.ones(len(idx)), solver)
            return losses, adj.grad_params.flatten(), fwd.n_steps * len(idx)

        return _isolate_failures(work, count)

    outputs = _map_chunks(run, list(enumerate(chunks)), cfg.threads)

    losses, grad_sum, steps, dropped = [], np.zeros(ff.params.num_params), 0, 0
    for results, chunk_dropped in outputs:
        dropped += chunk_dropped
        for chunk_losses, chunk_grad, chunk_steps in results:
            losses.append(chunk_losses)
            grad_sum += chunk_grad
            steps += chunk_steps
    _check_drops(dropped, cfg.batch_size, f"training step {step}")

    losses = np.concatenate(losses)
    used = losses.size
    return BatchLoss(
        loss=float(np.mean(losses)),
        grad=ff.params.unflatten(grad_sum / used),
        n_used=used,
        n_dropped=dropped,
        n_ode_steps_mean=steps / used,
    )


def evaluate(ff, target, cfg, solver=None, seed=None, n_samples=None, keep_samples=False):
    """
    KL divergence, normalization estimate and ESS of the flow against the target

    With log w = log ρ* - log ρ_λ over S model samples (exact divergence):
    Ẑ = (1/S)Σw, KL = mean(log ρ_λ - log ρ*) + log Ẑ, ESS% = 100·(Σw)²/(S·Σw²).
    """
    solver = solver or EVAL_SOLVER
    seed = cfg.seed if seed is None else seed
    total = cfg.eval_sample_size if n_samples is None else int(n_samples)
    man = ff.manifold
    chunks = split_chunks(total, cfg.chunk_size)

    def run(item):
        index, (start, stop) = item
        rng = make_rng(seed, STREAM_EVAL, index)
        x0 = man.sample_base(rng, stop - start)

        def work(idx):
            xs = x0[idx]
            logp0 = man.base_log_density0(xs)
            fwd = forward_flow(ff, xs, logp0, solver, divergence='exact')
            return fwd.point, logp0 + fwd.delta_logp, target.log_target(fwd.point)

        return _isolate_failures(work, stop - start)

    outputs = _map_chunks(run, list(enumerate(chunks)), cfg.threads)
    points, log_model, log_star, dropped = [], [], [], 0
    for results, chunk_dropped in outputs:
        dropped += chunk_dropped
        for p, lm, ls in results:
            points.append(p)
            log_model.append(lm)
            log_star.append(ls)
    _check_drops(dropped, total, "evaluation")

    log_model = np.concatenate(log_model)
    log_star = np.concatenate(log_star)
    count = log_model.size
    lw = log_star - log_model
    log_z_hat = float(logsumexp(lw) - np.log(count))
    report = EvalReport(
        kl_nats=float(np.mean(log_model - log_star) + log_z_hat),
        ess_percent=effective_sample_size(lw),
        z_hat=float(np.exp(log_z_hat)),
        log_z_hat=log_z_hat,
        n_samples=count,
        n_dropped=dropped,
    )
    if keep_samples:
        report.samples = EvalSamples(np.concatenate(points), log_model, log_star)
    logger.info(
        "evaluation: KL %.5f nats, ESS %.2f%%, log Z %.5f (%d samples, %d dropped)",
        report.kl_nats, report.ess_percent, log_z_hat, count, dropped,
    )
    return report


def train(ff, target, cfg, solver=None, callback=None, state=None):
    """
    Run cfg.n_steps Adam steps on the reverse KL; callback(record) after each step

    Returns: TrainResult with the final parameters, per-step records and optimizer state
    """
    params = ff.params
    state = state or AdamState.zeros(params.num_params)
    records = []
    for step in range(cfg.n_steps):
        started = time.perf_counter()
        batch = kl_loss_batch(ff.with_params(params), target, cfg, step=step, solver=solver)
        params, state = adam_step(params, batch.grad, state, cfg)
        record = TrainRecord(
            step=step,
            loss=batch.loss,
            wall_ms=1000.0 * (time.perf_counter() - started),
            n_ode_steps_mean=batch.n_ode_steps_mean,
            n_dropped=batch.n_dropped,
        )
        records.append(record)
        if callback is not None:
            callback(record)
        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            window = records[-cfg.log_every:]
            logger.info(
                "step %d/%d: loss %.5f (mean of last %d: %.5f), %.1f ODE steps",
                step + 1, cfg.n_steps, record.loss, len(window),
                float(np.mean([r.loss for r in window])), record.n_ode_steps_mean,
            )
    return TrainResult(params, records, state)
