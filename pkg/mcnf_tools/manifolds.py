"""
Embedded manifolds

Each manifold is stored as flat real vectors in its ambient space R^D and comes
with a generating set of tangent vector fields X_i whose divergences with
respect to the base density are known in closed form, a retraction, a
constraint residual and a sampler for the initial density.

All methods accept a single point of shape (D,) or a batch of shape (..., D).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.stats
from scipy.special import multigammaln

from . import densemat
from .constants import (
    MANIFOLD_KINDS,
    RETRACT_SKIP_TOL,
    RETRACT_TRUST_RADIUS,
    SPD_BASE_SCALE,
    SPD_DEFAULT_BETA,
    SPD_PIVOT_MIN,
)
from .exceptions import (
    ConfigError,
    GeneratorIndexError,
    NotPositiveDefiniteError,
    PositivityError,
    RankDeficientError,
    RetractionError,
)


@dataclass(frozen=True)
class ManifoldSpec:
    """Which manifold: kind plus size parameters"""

    kind: str
    n: int
    m: Optional[int] = None
    beta: Optional[float] = None

    def __post_init__(self):
        if self.kind not in MANIFOLD_KINDS:
            raise ConfigError('manifold', f"unknown manifold kind '{self.kind}'")
        if self.n < 1:
            raise ConfigError('manifold', f"size must be positive, got {self.n}")
        if self.kind in ('so', 'su') and self.n < 2:
            raise ConfigError('manifold', f"{self.kind}:{self.n} is a single point")
        if self.kind == 'stiefel':
            if self.m is None or not 1 <= self.m < self.n:
                raise ConfigError('manifold', f"stiefel needs 1 <= m < n, got m={self.m} n={self.n}")
        elif self.m is not None:
            raise ConfigError('manifold', f"{self.kind} takes a single size parameter")
        if self.beta is not None and self.beta <= 0:
            raise ConfigError('manifold', f"beta must be positive, got {self.beta}")

    @classmethod
    def parse(cls, text, beta=None):
        """Parse 'sphere:2', 'so:3', 'stiefel:2:4', 'spd:2', ..."""
        parts = str(text).strip().lower().split(':')
        kind = parts[0]
        if kind not in MANIFOLD_KINDS:
            raise ConfigError('manifold', f"unknown manifold kind '{kind}'")
        sizes = parts[1:]
        if len(sizes) != MANIFOLD_KINDS[kind]:
            raise ConfigError(
                'manifold', f"'{text}' needs {MANIFOLD_KINDS[kind]} size parameter(s)"
            )
        try:
            sizes = [int(s) for s in sizes]
        except ValueError:
            raise ConfigError('manifold', f"non-integer size in '{text}'") from None
        if kind == 'stiefel':
            return cls(kind, n=sizes[1], m=sizes[0])
        return cls(kind, n=sizes[0], beta=beta if kind == 'spd' else None)

    def __str__(self):
        if self.kind == 'stiefel':
            return f"stiefel:{self.m}:{self.n}"
        return f"{self.kind}:{self.n}"

    @property
    def ambient_dim(self):
        n = self.n
        return {
            'sphere': n + 1,
            'so': n * n,
            'u': 2 * n * n,
            'su': 2 * n * n,
            'stiefel': n * (self.m or 0),
            'spd': n * (n + 1) // 2,
            'euclid': n,
        }[self.kind]

    @property
    def gen_count(self):
        n = self.n
        return {
            'sphere': n + 1,
            'so': n * (n - 1) // 2,
            'u': n * n,
            'su': n * n - 1,
            'stiefel': n * (n - 1) // 2,
            'spd': n * n,
            'euclid': n,
        }[self.kind]

    @property
    def intrinsic_dim(self):
        n, m = self.n, self.m or 0
        return {
            'sphere': n,
            'so': n * (n - 1) // 2,
            'u': n * n,
            'su': n * n - 1,
            'stiefel': n * m - m * (m + 1) // 2,
            'spd': n * (n + 1) // 2,
            'euclid': n,
        }[self.kind]


def skew_pairs(n):
    """Index pairs (k, j), k < j, in reverse lexicographic order"""
    return [(k, j) for k in range(n) for j in range(k + 1, n)][::-1]


def matrix_unit(n, k, j, cols=None):
    e = np.zeros((n, cols or n))
    e[k, j] = 1.0
    return e


def so_basis(n):
    """Basis V_kj = E_kj - E_jk of so(n)"""
    return [matrix_unit(n, k, j) - matrix_unit(n, j, k) for k, j in skew_pairs(n)]


def u_basis(n):
    """Basis of u(n): V_kj, i(E_kj + E_jk), iE_jj"""
    basis = [b.astype(complex) for b in so_basis(n)]
    basis += [1j * (matrix_unit(n, k, j) + matrix_unit(n, j, k)) for k, j in skew_pairs(n)]
    basis += [1j * matrix_unit(n, j, j) for j in range(n)]
    return basis


def su_basis(n):
    """Basis of su(n): V_kj, i(E_kj + E_jk), i(E_kk - E_k+1,k+1)"""
    basis = u_basis(n)[: n * (n - 1)]
    basis += [1j * (matrix_unit(n, k, k) - matrix_unit(n, k + 1, k + 1)) for k in range(n - 1)]
    return basis


class Manifold:
    """Common interface of the embedded manifolds"""

    def __init__(self, spec):
        self.spec = spec
        self.dim = spec.ambient_dim
        self.gen_count = spec.gen_count

    def __repr__(self):
        return f"{type(self).__name__}({self.spec})"

    # --- generating set -------------------------------------------------

    def generators(self, x):
        """All generators at x: array (..., m_gen, D)"""
        raise NotImplementedError

    def eval_generator(self, x, i):
        """Generator X_i at x"""
        self._check_index(i)
        return self.generators(x)[..., i, :]

    def generator_divergence(self, x):
        """div X_i at x for all i: array (..., m_gen)"""
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.gen_count,))

    def generator_divergence_grad(self, x):
        """Ambient gradient of each div X_i: array (..., m_gen, D)"""
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.gen_count, self.dim))

    def generator_vjp(self, x, covectors):
        """Σ_i (∂X̄_i/∂x)ᵀ covectors_i for covectors of shape (..., m_gen, D)"""
        raise NotImplementedError

    def _check_index(self, i):
        if not 0 <= i < self.gen_count:
            raise GeneratorIndexError(
                f"generator index {i} out of range for {self.spec} (m_gen={self.gen_count})"
            )

    # --- constraints ----------------------------------------------------

    def check_constraint(self, x):
        """Nonnegative residual measuring the distance of x from the manifold"""
        raise NotImplementedError

    def is_tangent(self, x, v):
        """Residual of the tangency condition for v at x"""
        raise NotImplementedError

    def retract(self, x):
        """Map a nearby ambient point onto the manifold"""
        x = np.asarray(x, dtype=float)
        residual = self.check_constraint(x)
        if np.any(~(residual <= RETRACT_TRUST_RADIUS)):
            raise RetractionError(
                f"point too far from {self.spec}: residual {float(np.max(residual)):.3e}"
            )
        done = residual <= RETRACT_SKIP_TOL
        if np.all(done):
            return x
        out = self._project(x)
        return np.where(done[..., None], x, out)

    def _project(self, x):
        raise NotImplementedError

    # --- densities ------------------------------------------------------

    def sample_base(self, rng, size=None):
        """Draw from the initial density; (D,) if size is None else (size, D)"""
        count = 1 if size is None else int(size)
        out = self._sample(rng, count)
        return out[0] if size is None else out

    def _sample(self, rng, count):
        raise NotImplementedError

    def base_log_density0(self, x):
        """log of the initial density relative to the base density"""
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    def base_log_density0_grad(self, x):
        """Ambient gradient of base_log_density0"""
        return np.zeros(np.shape(x), dtype=float)

    def matrix_grad_to_coords(self, grad):
        """Convert a gradient with respect to matrix entries into ambient coordinates"""
        return np.asarray(grad, dtype=float)


class Sphere(Manifold):
    """S^n in R^{n+1} with gradient fields of the coordinate functions"""

    def generators(self, x):
        x = np.asarray(x, dtype=float)
        eye = np.eye(self.dim)
        return eye - x[..., :, None] * x[..., None, :]

    def eval_generator(self, x, i):
        self._check_index(i)
        x = np.asarray(x, dtype=float)
        e = np.zeros(self.dim)
        e[i] = 1.0
        return e - x[..., i, None] * x

    def generator_divergence(self, x):
        return -self.spec.n * np.asarray(x, dtype=float)

    def generator_divergence_grad(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(-self.spec.n * np.eye(self.dim), x.shape[:-1] + (self.dim, self.dim))

    def generator_vjp(self, x, covectors):
        # ∂X̄_i/∂x = -x_i I - x e_iᵀ
        x = np.asarray(x, dtype=float)
        w = np.asarray(covectors, dtype=float)
        return -np.einsum('...id,...d->...i', w, x) - np.einsum('...i,...id->...d', x, w)

    def check_constraint(self, x):
        return np.abs(np.linalg.norm(np.asarray(x, dtype=float), axis=-1) - 1.0)

    def is_tangent(self, x, v):
        return np.abs(np.sum(np.asarray(x) * np.asarray(v), axis=-1))

    def _project(self, x):
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    def _sample(self, rng, count):
        return self._project(rng.standard_normal((count, self.dim)))


class EuclideanSpace(Manifold):
    """R^d embedded in itself with coordinate generators (test fixture)"""

    def generators(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(self.dim), x.shape[:-1] + (self.dim, self.dim))

    def generator_vjp(self, x, covectors):
        return np.zeros(np.shape(covectors)[:-2] + (self.dim,))

    def check_constraint(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(np.all(np.isfinite(x), axis=-1), 0.0, np.inf)

    def is_tangent(self, x, v):
        return np.zeros(np.shape(x)[:-1])

    def _project(self, x):
        return x

    def _sample(self, rng, count):
        return rng.standard_normal((count, self.dim))

    def base_log_density0(self, x):
        x = np.asarray(x, dtype=float)
        return -0.5 * np.sum(x * x, axis=-1) - 0.5 * self.dim * np.log(2.0 * np.pi)

    def base_log_density0_grad(self, x):
        return -np.asarray(x, dtype=float)


class MatrixManifold(Manifold):
    """Manifolds of (possibly complex) matrices whose generators are linear in the point"""

    rows = cols = 0
    is_complex = False

    def __init__(self, spec):
        super().__init__(spec)
        # generator X_i(x) = L_i x, L has shape (m_gen, D, D)
        eye = np.eye(self.dim)
        self._linear = np.stack(
            [
                np.stack([self.from_matrix(self._act(self.to_matrix(e), i)) for e in eye], axis=-1)
                for i in range(self.gen_count)
            ]
        )

    def _act(self, mat, i):
        """Generator i applied to the matrix point mat"""
        raise NotImplementedError

    def to_matrix(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_complex:
            return densemat.unpack_complex(x, self.rows, self.cols)
        return x.reshape(x.shape[:-1] + (self.rows, self.cols))

    def from_matrix(self, mat):
        mat = np.asarray(mat)
        if self.is_complex:
            return densemat.pack_complex(mat)
        return mat.reshape(mat.shape[:-2] + (-1,)).astype(float)

    def matrix_grad_to_coords(self, grad):
        return self.from_matrix(grad)

    def generators(self, x):
        return np.einsum('idk,...k->...id', self._linear, np.asarray(x, dtype=float))

    def eval_generator(self, x, i):
        self._check_index(i)
        return np.einsum('dk,...k->...d', self._linear[i], np.asarray(x, dtype=float))

    def generator_vjp(self, x, covectors):
        return np.einsum('idk,...id->...k', self._linear, np.asarray(covectors, dtype=float))

    def _orthonormality(self, mat):
        gram = densemat.conj_transpose(mat) @ mat
        return np.linalg.norm(gram - np.eye(self.cols), axis=(-2, -1))

    def check_constraint(self, x):
        return self._orthonormality(self.to_matrix(x))

    def is_tangent(self, x, v):
        q = self.to_matrix(x)
        w = self.to_matrix(v)
        sym = densemat.conj_transpose(q) @ w + densemat.conj_transpose(w) @ q
        return np.linalg.norm(sym, axis=(-2, -1))

    def _project(self, x):
        try:
            q, _ = densemat.qr_decompose(self.to_matrix(x))
        except RankDeficientError as exc:
            raise RetractionError(f"cannot retract onto {self.spec}: {exc}") from exc
        return self.from_matrix(self._fix_determinant(q))

    def _fix_determinant(self, q):
        return q

    def _gaussian(self, rng, count):
        shape = (count, self.rows, self.cols)
        if self.is_complex:
            return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
        return rng.standard_normal(shape)

    def _sample(self, rng, count):
        q, _ = densemat.qr_decompose(self._gaussian(rng, count))
        return self.from_matrix(self._fix_determinant(q))


class LieGroup(MatrixManifold):
    """Matrix Lie group with left-invariant generators A·v_i"""

    def __init__(self, spec):
        self.rows = self.cols = spec.n
        self.basis = self.lie_algebra_basis(spec.n)
        super().__init__(spec)

    @staticmethod
    def lie_algebra_basis(n):
        raise NotImplementedError

    def _act(self, mat, i):
        return mat @ self.basis[i]


class SpecialOrthogonal(LieGroup):
    """SO(n): orthonormal matrices with unit determinant"""

    lie_algebra_basis = staticmethod(so_basis)

    def check_constraint(self, x):
        q = self.to_matrix(x)
        return self._orthonormality(q) + np.abs(np.linalg.det(q) - 1.0)

    def _fix_determinant(self, q):
        sign = np.sign(np.linalg.det(q))
        q = q.copy()
        q[..., :, -1] *= sign[..., None]
        return q


class Unitary(LieGroup):
    """U(n): complex unitary matrices"""

    is_complex = True
    lie_algebra_basis = staticmethod(u_basis)


class SpecialUnitary(LieGroup):
    """SU(n): unitary matrices with unit determinant"""

    is_complex = True
    lie_algebra_basis = staticmethod(su_basis)

    def check_constraint(self, x):
        q = self.to_matrix(x)
        return self._orthonormality(q) + np.abs(np.linalg.det(q) - 1.0)

    def _fix_determinant(self, q):
        det = np.linalg.det(q)
        q = q.copy()
        q[..., :, -1] *= np.conj(det)[..., None] / np.abs(det)[..., None]
        return q

    def _sample(self, rng, count):
        # Haar U(n) sample divided by the principal n-th root of its determinant
        q, _ = densemat.qr_decompose(self._gaussian(rng, count))
        det = np.linalg.det(q)
        root = np.exp(1j * np.angle(det) / self.spec.n)
        return self.from_matrix(q / root[:, None, None])


class Stiefel(MatrixManifold):
    """V_m(R^n): orthonormal m-frames, generators V_kj·Q from so(n)"""

    def __init__(self, spec):
        self.rows, self.cols = spec.n, spec.m
        self.basis = so_basis(spec.n)
        super().__init__(spec)

    def _act(self, mat, i):
        return self.basis[i] @ mat


class SymmetricPositiveDefinite(MatrixManifold):
    """Sym+(n) stored by its upper triangle, generators from the congruence action of GL(n)"""

    def __init__(self, spec):
        n = spec.n
        self.rows = self.cols = n
        self.beta = float(spec.beta if spec.beta is not None else SPD_DEFAULT_BETA)
        self._upper = np.triu_indices(n)
        super().__init__(spec)

    def to_matrix(self, x):
        x = np.asarray(x, dtype=float)
        n = self.spec.n
        mat = np.zeros(x.shape[:-1] + (n, n))
        mat[..., self._upper[0], self._upper[1]] = x
        mat[..., self._upper[1], self._upper[0]] = x
        return mat

    def from_matrix(self, mat):
        mat = np.asarray(mat, dtype=float)
        return mat[..., self._upper[0], self._upper[1]]

    def matrix_grad_to_coords(self, grad):
        grad = np.asarray(grad, dtype=float)
        full = grad + np.swapaxes(grad, -1, -2)
        coords = full[..., self._upper[0], self._upper[1]]
        diag = self._upper[0] == self._upper[1]
        coords[..., diag] *= 0.5
        return coords

    def _act(self, mat, i):
        # Ẽ_kj(Q) = E_jk Q + Q E_kj, i = k·n + j
        n = self.spec.n
        k, j = divmod(i, n)
        return matrix_unit(n, j, k) @ mat + mat @ matrix_unit(n, k, j)

    def check_constraint(self, x):
        pivots = densemat.min_cholesky_pivot(self.to_matrix(x))
        return np.where(pivots > 0.0, 0.0, np.inf)

    def is_tangent(self, x, v):
        return np.zeros(np.shape(x)[:-1])

    def retract(self, x):
        x = np.asarray(x, dtype=float)
        pivots = densemat.min_cholesky_pivot(self.to_matrix(x))
        if np.any(~(pivots >= SPD_PIVOT_MIN)):
            raise PositivityError(
                f"SPD state lost positivity: min Cholesky pivot {float(np.min(pivots)):.3e}"
            )
        return x

    @property
    def base_scale(self):
        return SPD_BASE_SCALE / self.beta

    def _sample(self, rng, count):
        n = self.spec.n
        wishart = scipy.stats.wishart(df=self.beta, scale=self.base_scale * np.eye(n))
        mats = np.reshape(wishart.rvs(size=count, random_state=rng), (count, n, n))
        return self.from_matrix(mats)

    def base_log_density0(self, x):
        """Wishart(β, (5/β)I) log-density with respect to det(Q)^{-(n+1)/2} dQ"""
        n, beta, scale = self.spec.n, self.beta, self.base_scale
        q = self.to_matrix(x)
        sign, logdet = np.linalg.slogdet(q)
        if np.any(sign <= 0):
            raise NotPositiveDefiniteError("base density evaluated outside Sym+(n)")
        trace = np.trace(q, axis1=-2, axis2=-1)
        log_norm = 0.5 * beta * n * np.log(2.0) + multigammaln(0.5 * beta, n)
        return 0.5 * beta * (logdet - n * np.log(scale)) - 0.5 * trace / scale - log_norm

    def base_log_density0_grad(self, x):
        q = self.to_matrix(x)
        eye = np.eye(self.spec.n)
        grad = 0.5 * self.beta * np.linalg.inv(q) - 0.5 * eye / self.base_scale
        return self.matrix_grad_to_coords(grad)


MANIFOLD_CLASSES = {
    'sphere': Sphere,
    'so': SpecialOrthogonal,
    'u': Unitary,
    'su': SpecialUnitary,
    'stiefel': Stiefel,
    'spd': SymmetricPositiveDefinite,
    'euclid': EuclideanSpace,
}


def build_manifold(spec):
    """Instantiate the manifold for a ManifoldSpec or a spec string"""
    if not isinstance(spec, ManifoldSpec):
        spec = ManifoldSpec.parse(spec)
    return MANIFOLD_CLASSES[spec.kind](spec)
