"""
Coefficient network

A small tanh MLP f(t, x) -> R^{m_gen} with hand-written derivatives:
forward evaluation, forward-mode directional derivatives (jvp), reverse-mode
products (vjp) and the gradient of a contracted directional derivative
(grad_of_jvp), which the adjoint pass needs for the divergence channel.

Inputs are batched: x has shape (B, D) (or (D,)), t is a scalar or shape (B,).
Parameter gradients are summed over the batch.
"""

import json
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .constants import HIDDEN_FACTOR, HIDDEN_LAYERS, OUTPUT_INIT_SCALE
from .exceptions import CheckpointError, ManifoldMismatchError
from .utilities import atomic_write_bytes

CHECKPOINT_MAGIC = 'mcnf-checkpoint'
CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    """Weights (out × in) and biases of each layer, with one activation tag per layer"""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activations: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.activations:
            self.activations = ['tanh'] * (len(self.weights) - 1) + ['linear']
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must have equal length")
        for tag in self.activations:
            if tag not in ('tanh', 'linear'):
                raise ValueError(f"unsupported activation '{tag}'")

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def output_dim(self):
        return self.weights[-1].shape[0]

    @property
    def num_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flatten(self):
        """All parameters as one vector: W1, b1, W2, b2, ..."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def unflatten(self, flat):
        """Parameters with this architecture taken from a flat vector"""
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.num_params:
            raise ValueError(f"expected {self.num_params} values, got {flat.size}")
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(flat[pos:pos + w.size].reshape(w.shape).copy())
            pos += w.size
            biases.append(flat[pos:pos + b.size].copy())
            pos += b.size
        return MlpParams(weights, biases, list(self.activations))

    def zeros_like(self):
        return self.unflatten(np.zeros(self.num_params))

    def copy(self):
        return self.unflatten(self.flatten())

    def __add__(self, other):
        return self.unflatten(self.flatten() + other.flatten())

    def scaled(self, factor):
        return self.unflatten(factor * self.flatten())

    @classmethod
    def constant(cls, layer_sizes, value):
        """Network that outputs `value` everywhere (zero weights, final bias = value)"""
        params = zeros(layer_sizes)
        params.biases[-1][:] = value
        return params


# Parameter gradients share the parameter container
ParamGrad = MlpParams


def architecture(spec):
    """Layer sizes for a manifold: (D+1) -> 5·m_gen -> 5·m_gen -> m_gen"""
    hidden = HIDDEN_FACTOR * spec.gen_count
    return [spec.ambient_dim + 1] + [hidden] * HIDDEN_LAYERS + [spec.gen_count]


def zeros(layer_sizes):
    weights = [np.zeros((o, i)) for i, o in zip(layer_sizes[:-1], layer_sizes[1:])]
    biases = [np.zeros(o) for o in layer_sizes[1:]]
    return MlpParams(weights, biases)


def init(spec, rng):
    """Glorot-uniform weights, zero biases, final layer scaled down for a near-identity flow"""
    sizes = architecture(spec)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    weights[-1] *= OUTPUT_INIT_SCALE
    return MlpParams(weights, biases)


def check_architecture(params, spec):
    """Raise ManifoldMismatchError unless params fit the manifold"""
    if params.input_dim != spec.ambient_dim + 1 or params.output_dim != spec.gen_count:
        raise ManifoldMismatchError(
            f"network {params.layer_sizes} does not match {spec} "
            f"(input {spec.ambient_dim + 1}, output {spec.gen_count})"
        )


def _inputs(t, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    t_col = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1, 1), (x2.shape[0], 1))
    return np.concatenate([t_col, x2], axis=1), single


def _slope(tag, h):
    if tag == 'tanh':
        return 1.0 - h * h
    return np.ones_like(h)


def _curvature(tag, h, slope):
    # derivative of the slope with respect to the pre-activation
    if tag == 'tanh':
        return -2.0 * h * slope
    return np.zeros_like(h)


def _activate(tag, z):
    return np.tanh(z) if tag == 'tanh' else z


def _forward_cache(params, h0):
    hs = [h0]
    for w, b, tag in zip(params.weights, params.biases, params.activations):
        hs.append(_activate(tag, hs[-1] @ w.T + b))
    return hs


def _tangent_cache(params, hs, v):
    dh = np.zeros_like(hs[0])
    dh[:, 1:] = v
    dhs, dzs = [dh], []
    for layer, (w, tag) in enumerate(zip(params.weights, params.activations)):
        dz = dhs[-1] @ w.T
        dzs.append(dz)
        dhs.append(_slope(tag, hs[layer + 1]) * dz)
    return dhs, dzs


def forward(params, t, x):
    """f(t, x): shape (B, m_gen), or (m_gen,) for a single x"""
    h0, single = _inputs(t, x)
    out = _forward_cache(params, h0)[-1]
    return out[0] if single else out


def jvp(params, t, x, v):
    """(f, (∂f/∂x)·v) by forward-mode propagation; the time direction is 0"""
    h0, single = _inputs(t, x)
    v2 = np.atleast_2d(np.asarray(v, dtype=float))
    hs = _forward_cache(params, h0)
    dhs, _ = _tangent_cache(params, hs, np.broadcast_to(v2, h0[:, 1:].shape))
    f, df = hs[-1], dhs[-1]
    return (f[0], df[0]) if single else (f, df)


def vjp(params, t, x, u):
    """
    Reverse-mode product with a cotangent u of shape (B, m_gen)

    Returns: (grad_x (B, D), grad_t (B,), grad_params summed over the batch)
    """
    h0, single = _inputs(t, x)
    hs = _forward_cache(params, h0)
    gh = np.atleast_2d(np.asarray(u, dtype=float)).copy()
    gh = np.broadcast_to(gh, hs[-1].shape)
    gw, gb = [], []
    for layer in reversed(range(len(params.weights))):
        tag = params.activations[layer]
        gz = gh * _slope(tag, hs[layer + 1])
        gw.append(gz.T @ hs[layer])
        gb.append(gz.sum(axis=0))
        gh = gz @ params.weights[layer]
    grad = MlpParams(gw[::-1], gb[::-1], list(params.activations))
    grad_x, grad_t = gh[:, 1:], gh[:, 0]
    if single:
        return grad_x[0], grad_t[0], grad
    return grad_x, grad_t, grad


def grad_of_jvp(params, t, x, v, u):
    """
    Gradients of s(x, λ) = <u, (∂f/∂x)·v> with v and u held fixed

    Reverse sweep over the forward-mode dual computation.
    Returns: (gx (B, D), gλ summed over the batch)
    """
    h0, single = _inputs(t, x)
    v2 = np.broadcast_to(np.atleast_2d(np.asarray(v, dtype=float)), h0[:, 1:].shape)
    hs = _forward_cache(params, h0)
    dhs, dzs = _tangent_cache(params, hs, v2)

    adj_h = np.zeros_like(hs[-1])
    adj_dh = np.broadcast_to(np.atleast_2d(np.asarray(u, dtype=float)), hs[-1].shape)
    gw, gb = [], []
    for layer in reversed(range(len(params.weights))):
        tag = params.activations[layer]
        h = hs[layer + 1]
        slope = _slope(tag, h)
        adj_dz = adj_dh * slope
        adj_z = adj_h * slope + adj_dh * dzs[layer] * _curvature(tag, h, slope)
        gw.append(adj_z.T @ hs[layer] + adj_dz.T @ dhs[layer])
        gb.append(adj_z.sum(axis=0))
        adj_h = adj_z @ params.weights[layer]
        adj_dh = adj_dz @ params.weights[layer]
    grad = MlpParams(gw[::-1], gb[::-1], list(params.activations))
    gx = adj_h[:, 1:]
    return (gx[0], grad) if single else (gx, grad)


def save_checkpoint(path, params, manifold, seed, extra=None):
    """
    Write parameters as a JSON header line followed by little-endian float64 values
    """
    header = {
        'format': CHECKPOINT_MAGIC,
        'version': CHECKPOINT_VERSION,
        'layer_sizes': params.layer_sizes,
        'activations': list(params.activations),
        'manifold': str(manifold),
        'seed': int(seed),
        'num_params': int(params.num_params),
    }
    if extra:
        header.update(extra)
    payload = json.dumps(header, sort_keys=True).encode('utf-8') + b"\n"
    payload += params.flatten().astype('<f8').tobytes()
    return atomic_write_bytes(path, payload)


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint; returns (params, header)"""
    with open(path, 'rb') as f:
        data = f.read()
    newline = data.find(b"\n")
    if newline < 0:
        raise CheckpointError(f"{path}: missing header")
    try:
        header = json.loads(data[:newline].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
    if header.get('format') != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not an MCNF checkpoint")

    values = np.frombuffer(data[newline + 1:], dtype='<f8').astype(float)
    if values.size != header.get('num_params'):
        raise CheckpointError(
            f"{path}: expected {header.get('num_params')} parameters, found {values.size}"
        )
    template = zeros(header['layer_sizes'])
    template.activations = list(header['activations'])
    return template.unflatten(values), header
