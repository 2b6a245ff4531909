"""
Target densities

Unnormalized mixtures log ρ*(q) = logsumexp_i log ρ(q | β, W_i) with one
component family per manifold kind, their ambient gradients (used to seed the
adjoint pass) and the generation, saving and loading of mixture centers.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from . import densemat
from .constants import CONJUGATION_PRESETS, SPD_CENTERS, TARGET_FAMILIES
from .exceptions import ConfigError, ManifoldMismatchError, NotPositiveDefiniteError
from .manifolds import Manifold, build_manifold
from .utilities import write_json

logger = logging.getLogger(__name__)

# Families whose component log-density is linear in the ambient coordinates
LINEAR_FAMILIES = ('vmf', 'langevin', 'unitary_trace')

# Families defined without centers
CENTERLESS_FAMILIES = ('conjugation_invariant', 'base')

CENTER_TOL = 1e-8


@dataclass
class TargetSpec:
    """Target family, concentration, centers (k, D) and, for conjugation invariant targets, c"""

    family: str
    beta: float = 1.0
    centers: Optional[np.ndarray] = None
    coefficients: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.family not in TARGET_FAMILIES:
            raise ConfigError('target.family', f"unknown target family '{self.family}'")
        if not self.beta > 0:
            raise ConfigError('target.beta', f"beta must be positive, got {self.beta}")
        if self.family in CENTERLESS_FAMILIES:
            self.centers = None
        else:
            if self.centers is None:
                raise ConfigError('target.centers', f"family '{self.family}' needs centers")
            self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
            if self.centers.shape[0] < 1:
                raise ConfigError('target.k', "at least one component is required")
        if self.family == 'conjugation_invariant':
            coeffs = self.coefficients
            if coeffs is None:
                coeffs = 'c1'
            if isinstance(coeffs, str):
                if coeffs not in CONJUGATION_PRESETS:
                    raise ConfigError('target.coefficients', f"unknown preset '{coeffs}'")
                coeffs = CONJUGATION_PRESETS[coeffs]
            self.coefficients = tuple(float(c) for c in coeffs)
            if not self.coefficients:
                raise ConfigError('target.coefficients', "coefficient vector is empty")

    @property
    def k(self):
        return 1 if self.centers is None else self.centers.shape[0]


class MixtureTarget:
    """A TargetSpec bound to its manifold"""

    def __init__(self, manifold, spec):
        if not isinstance(manifold, Manifold):
            manifold = build_manifold(manifold)
        kind = manifold.spec.kind
        if kind not in TARGET_FAMILIES[spec.family]:
            raise ManifoldMismatchError(f"target family '{spec.family}' is not defined on {manifold.spec}")
        self.manifold = manifold
        self.spec = spec
        n = manifold.spec.n

        if spec.centers is not None:
            if spec.centers.shape[1] != manifold.dim:
                raise ManifoldMismatchError(
                    f"centers have {spec.centers.shape[1]} coordinates, {manifold.spec} needs {manifold.dim}"
                )
            residual = manifold.check_constraint(spec.centers)
            if np.any(~(residual <= CENTER_TOL)):
                raise ConfigError('target.centers', f"center off {manifold.spec}: residual {float(np.max(residual)):.3e}")

        if spec.family == 'vmf':
            self._scale = spec.beta
        elif spec.family == 'langevin':
            # SO(n) is treated as V_{n-1}(R^n)
            self._scale = spec.beta / (manifold.spec.m if kind == 'stiefel' else n - 1)
        elif spec.family in ('unitary_trace', 'conjugation_invariant'):
            self._scale = spec.beta / n
        elif spec.family == 'wishart':
            if spec.beta < n + 1 or spec.beta != int(spec.beta):
                raise ConfigError('target.beta', f"Wishart needs an integer beta >= {n + 1}, got {spec.beta}")
            mats = manifold.to_matrix(spec.centers)
            self._inv_centers = np.linalg.inv(mats)
            self._logdet_centers = np.linalg.slogdet(mats)[1]
            self._inv_center_coords = manifold.matrix_grad_to_coords(self._inv_centers)

    def __repr__(self):
        return f"MixtureTarget({self.spec.family}, {self.manifold.spec}, beta={self.spec.beta}, k={self.spec.k})"

    def _points(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.manifold.dim:
            raise ManifoldMismatchError(
                f"point has {x.shape[-1]} coordinates, {self.manifold.spec} needs {self.manifold.dim}"
            )
        return x

    def component_log_densities(self, x):
        """Unnormalized log-density of every component: array (..., k)"""
        x = self._points(x)
        family = self.spec.family
        if family in LINEAR_FAMILIES:
            return self._scale * (x @ self.spec.centers.T)
        if family == 'wishart':
            q = self.manifold.to_matrix(x)
            sign, logdet = np.linalg.slogdet(q)
            if np.any(sign <= 0):
                raise NotPositiveDefiniteError("Wishart target evaluated outside Sym+(n)")
            traces = np.einsum('kab,...ab->...k', self._inv_centers, q)
            beta = self.spec.beta
            return 0.5 * beta * (logdet[..., None] - self._logdet_centers) - 0.5 * traces
        if family == 'conjugation_invariant':
            u = self.manifold.to_matrix(x)
            power = u
            total = np.zeros(x.shape[:-1])
            for c in self.spec.coefficients:
                total = total + c * np.trace(power, axis1=-2, axis2=-1).real
                power = power @ u
            return (self._scale * total)[..., None]
        return self.manifold.base_log_density0(x)[..., None]

    def component_grads(self, x):
        """Ambient gradient of every component: array (..., k, D)"""
        x = self._points(x)
        family = self.spec.family
        lead = x.shape[:-1]
        if family in LINEAR_FAMILIES:
            grads = self._scale * self.spec.centers
            return np.broadcast_to(grads, lead + grads.shape)
        if family == 'wishart':
            q = self.manifold.to_matrix(x)
            inv_q = self.manifold.matrix_grad_to_coords(np.linalg.inv(q))
            return 0.5 * self.spec.beta * inv_q[..., None, :] - 0.5 * self._inv_center_coords
        if family == 'conjugation_invariant':
            u = self.manifold.to_matrix(x)
            eye = np.broadcast_to(np.eye(u.shape[-1], dtype=complex), u.shape)
            power = eye
            holo = np.zeros_like(u)
            for j, c in enumerate(self.spec.coefficients, start=1):
                holo = holo + c * j * np.swapaxes(power, -1, -2)
                power = power @ u
            # ∂/∂Re = Re G, ∂/∂Im = -Im G for the holomorphic gradient G
            return (self._scale * densemat.pack_complex(np.conj(holo)))[..., None, :]
        return self.manifold.base_log_density0_grad(x)[..., None, :]

    def log_target(self, x):
        """log ρ*(x) up to an additive constant"""
        return logsumexp(self.component_log_densities(x), axis=-1)

    def grad_log_target(self, x):
        """Ambient gradient of log_target: softmax-weighted component gradients"""
        weights = softmax(self.component_log_densities(x), axis=-1)
        return np.einsum('...k,...kd->...d', weights, self.component_grads(x))


def sample_centers(manifold, family, k, rng, beta=None):
    """
    Mixture centers for a family: array (k, D)

    Compact manifolds draw k points from the base measure. SPD Wishart targets
    use the fixed centers Ŵ_i / β when the size has a table entry.
    Centerless families return an empty (0, D) array.
    """
    if not isinstance(manifold, Manifold):
        manifold = build_manifold(manifold)
    if family in CENTERLESS_FAMILIES:
        return np.zeros((0, manifold.dim))
    if k < 1:
        raise ConfigError('target.k', f"k must be >= 1, got {k}")
    n = manifold.spec.n
    if family == 'wishart' and n in SPD_CENTERS:
        table = SPD_CENTERS[n]
        if k > len(table):
            raise ConfigError('target.k', f"only {len(table)} fixed centers exist for spd:{n}")
        if beta is None:
            raise ConfigError('target.beta', "fixed SPD centers need beta")
        return manifold.from_matrix(np.asarray(table[:k], dtype=float) / beta)
    return manifold.sample_base(rng, k)


def make_target(manifold, family, beta, k=1, rng=None, centers=None, coefficients=None):
    """Build a MixtureTarget, drawing centers from rng when none are given"""
    if not isinstance(manifold, Manifold):
        manifold = build_manifold(manifold)
    if centers is None and family not in CENTERLESS_FAMILIES:
        centers = sample_centers(manifold, family, k, rng, beta=beta)
    spec = TargetSpec(family, beta, centers, coefficients)
    logger.debug("target %s on %s with %d component(s)", family, manifold.spec, spec.k)
    return MixtureTarget(manifold, spec)


def _center_to_json(manifold, center):
    kind = manifold.spec.kind
    if kind in ('sphere', 'euclid'):
        return [float(v) for v in center]
    mat = manifold.to_matrix(center)
    if np.iscomplexobj(mat):
        return {'re': mat.real.tolist(), 'im': mat.imag.tolist()}
    return mat.tolist()


def _center_from_json(manifold, entry):
    if isinstance(entry, dict):
        mat = np.asarray(entry['re'], dtype=float) + 1j * np.asarray(entry['im'], dtype=float)
        return manifold.from_matrix(mat)
    arr = np.asarray(entry, dtype=float)
    if arr.ndim == 1:
        return arr
    return manifold.from_matrix(arr)


def save_centers(path, target):
    """Write the target's family, beta, coefficients and row-major centers as JSON"""
    man, spec = target.manifold, target.spec
    payload = {
        'manifold': str(man.spec),
        'family': spec.family,
        'beta': spec.beta,
        'centers': [] if spec.centers is None else [_center_to_json(man, c) for c in spec.centers],
    }
    if spec.coefficients is not None:
        payload['coefficients'] = list(spec.coefficients)
    return write_json(path, payload)


def load_centers(path, manifold):
    """
    Read centers from JSON: either a bare list of matrices/vectors or a document
    written by save_centers. Returns an array (k, D).
    """
    if not isinstance(manifold, Manifold):
        manifold = build_manifold(manifold)
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError('target.centers_file', f"cannot read {path}: {exc}") from exc
    if isinstance(payload, dict):
        stored = payload.get('manifold')
        if stored is not None and stored != str(manifold.spec):
            raise ManifoldMismatchError(f"{path} holds centers for {stored}, not {manifold.spec}")
        payload = payload.get('centers', [])
    try:
        centers = [_center_from_json(manifold, entry) for entry in payload]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError('target.centers_file', f"malformed centers in {path}: {exc}") from exc
    if not centers:
        raise ConfigError('target.centers_file', f"{path} contains no centers")
    return np.stack(centers)
