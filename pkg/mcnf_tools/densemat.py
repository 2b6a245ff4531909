"""
Dense matrix kernel

Thin wrappers over numpy/scipy linear algebra with the conventions the rest of
the package relies on: phase-fixed QR, LU determinants, Pade matrix exponential,
a Cholesky factor with an explicit positivity check, and the packing of complex
matrices into flat real vectors.

Every function accepts stacked matrices: leading axes are batch axes.
"""

import numpy as np
import scipy.linalg

from .constants import QR_RANK_TOL
from .exceptions import NotPositiveDefiniteError, RankDeficientError


def qr_decompose(a):
    """
    QR factorisation with a real positive diagonal on r.

    Columns of q are multiplied by the phase of the matching diagonal entry of
    r (and rows of r by its conjugate), which keeps q·r unchanged and makes the
    factorisation unique. Applied to Gaussian matrices this yields Haar samples.

    Returns: (q, r) with the dtype of `a`
    """
    a = np.asarray(a)
    if a.shape[-2] < a.shape[-1]:
        raise ValueError(f"QR needs rows >= cols, got shape {a.shape[-2:]}")

    q, r = np.linalg.qr(a)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    magnitude = np.abs(d)

    scale = np.linalg.norm(a, axis=(-2, -1))
    if np.any(magnitude < QR_RANK_TOL * np.maximum(scale, np.finfo(float).tiny)[..., None]):
        raise RankDeficientError("matrix is rank deficient")

    phase = d / magnitude
    q = q * phase[..., None, :]
    r = r * np.conj(phase)[..., :, None]
    return q, r


def determinant(a):
    """Determinant via LU with partial pivoting (real or complex, stacked)"""
    a = np.asarray(a)
    if a.shape[-1] != a.shape[-2]:
        raise ValueError(f"determinant needs a square matrix, got {a.shape[-2:]}")
    if a.ndim == 2:
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
        swaps = np.count_nonzero(piv != np.arange(piv.size))
        sign = -1.0 if swaps % 2 else 1.0
        return sign * np.prod(np.diagonal(lu))
    # numpy's stacked det uses the same LAPACK getrf factorisation
    return np.linalg.det(a)


def matrix_exp(a):
    """Matrix exponential by scaling and squaring with a Pade approximant"""
    a = np.asarray(a)
    if a.shape[-1] != a.shape[-2]:
        raise ValueError(f"matrix_exp needs a square matrix, got {a.shape[-2:]}")
    return scipy.linalg.expm(a)


def cholesky(a, min_pivot=0.0):
    """
    Lower-triangular L with L·Lᵀ = a.

    Raises NotPositiveDefiniteError when a pivot is <= min_pivot.
    """
    a = np.asarray(a, dtype=float)
    try:
        factor = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("matrix is not positive definite") from exc
    pivots = np.diagonal(factor, axis1=-2, axis2=-1)
    if np.any(~np.isfinite(pivots)) or np.any(pivots <= min_pivot):
        raise NotPositiveDefiniteError(
            f"cholesky pivot {float(np.min(pivots)):.3e} <= {min_pivot:.1e}"
        )
    return factor


def min_cholesky_pivot(a):
    """Smallest Cholesky pivot per matrix, -inf where the factorisation fails"""
    a = np.asarray(a, dtype=float)
    batch = a.reshape((-1,) + a.shape[-2:])
    out = np.empty(batch.shape[0])
    for i, mat in enumerate(batch):
        try:
            out[i] = np.min(np.diagonal(np.linalg.cholesky(mat)))
        except np.linalg.LinAlgError:
            out[i] = -np.inf
    return out.reshape(a.shape[:-2])


def pack_complex(z):
    """Flatten complex (..., r, c) matrices into real (..., 2·r·c) vectors: Re block, then Im block"""
    z = np.asarray(z)
    lead = z.shape[:-2]
    return np.concatenate(
        [z.real.reshape(lead + (-1,)), z.imag.reshape(lead + (-1,))], axis=-1
    )


def unpack_complex(v, rows, cols):
    """Inverse of pack_complex"""
    v = np.asarray(v, dtype=float)
    half = rows * cols
    lead = v.shape[:-1]
    re = v[..., :half].reshape(lead + (rows, cols))
    im = v[..., half:].reshape(lead + (rows, cols))
    return re + 1j * im


def conj_transpose(a):
    """Conjugate transpose over the last two axes"""
    return np.conj(np.swapaxes(a, -1, -2))
