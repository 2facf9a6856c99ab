"""Numerical kernels shared by the rest of the package.

Everything here works on float64 numpy arrays.  The functions are pure: they
never modify their inputs and return fresh arrays.
"""

from typing import Callable, NamedTuple

import numpy as np

from .errors import ConvergenceError, DimensionError, NumericalError, ValidationError

SYMMETRY_TOL = 1e-10
JACOBI_MAX_SWEEPS = 100


class EigenResult(NamedTuple):
    """Eigenvalues in descending order and the matching eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def make_rng(seed):
    """Seeded PCG64 generator; the stream is identical on every platform."""
    return np.random.default_rng(np.random.PCG64(int(seed)))


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} has non-finite entries")
    return a


def _check_symmetric(a):
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if asym > SYMMETRY_TOL * scale:
        raise ValidationError(f"matrix is not symmetric (max |A - A^T| = {asym:.3g})")


def _canonicalize(w, v):
    # descending by value; stable sort keeps original column order for ties
    order = np.argsort(-w, kind="stable")
    w = w[order]
    v = v[:, order]
    # largest-magnitude entry of each eigenvector is made positive
    pivot = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[pivot, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return EigenResult(np.ascontiguousarray(w), np.ascontiguousarray(v * signs))


def _off_norm(A):
    # summed directly: ||A||^2 - ||diag||^2 cancels catastrophically near convergence
    return float(np.linalg.norm(A - np.diag(np.diag(A))))


def jacobi_eig(a, tol=1e-15, max_sweeps=JACOBI_MAX_SWEEPS):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns the raw (unsorted) eigenvalues and eigenvectors. Raises
    ConvergenceError if the off-diagonal mass has not dropped below
    ``tol * ||A||_F`` after ``max_sweeps`` sweeps.
    """
    A = np.array(a, dtype=np.float64)
    n = A.shape[0]
    V = np.eye(n)
    norm = np.linalg.norm(A)
    if norm == 0.0 or n == 1:
        return np.diag(A).copy(), V
    for _ in range(max_sweeps):
        if _off_norm(A) <= tol * norm:
            return np.diag(A).copy(), V
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = A[:, p].copy()
                col_q = A[:, q]
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p = A[p, :].copy()
                row_q = A[q, :]
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                V[:, p] = c * vp - s * V[:, q]
                V[:, q] = s * vp + c * V[:, q]
    off = _off_norm(A)
    if off <= tol * norm:
        return np.diag(A).copy(), V
    raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps (off-diagonal {off:.3g})")


def sym_eig(a, method="lapack"):
    """Full eigendecomposition of a symmetric matrix.

    Parameters
    ----------
    a : array_like, shape (D, D)
        Symmetric input; asymmetry above 1e-10 (relative to the largest
        entry) is rejected.
    method : {"lapack", "jacobi"}
        ``"lapack"`` uses the symmetric divide-and-conquer driver behind
        ``numpy.linalg.eigh``; ``"jacobi"`` runs the cyclic Jacobi solver in
        this module, which is slow but dependency-free.

    Returns
    -------
    EigenResult
        Eigenvalues sorted non-increasing (ties keep solver column order)
        and orthonormal eigenvectors whose largest-magnitude entry is
        positive.
    """
    a = as_matrix(a)
    _check_symmetric(a)
    a = 0.5 * (a + a.T)
    if method == "lapack":
        try:
            w, v = np.linalg.eigh(a)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"eigh failed: {exc}") from exc
    elif method == "jacobi":
        w, v = jacobi_eig(a)
    else:
        raise ValidationError(f"unknown eigensolver {method!r}")
    return _canonicalize(w, v)


def logsumexp(v, axis=None):
    """log(sum(exp(v))) with max-subtraction.

    With ``axis=None`` the input must be a non-empty vector and a float is
    returned; otherwise the reduction runs along ``axis``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or (axis is not None and v.shape[axis] == 0):
        raise ValidationError("logsumexp of an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValidationError("logsumexp input has non-finite entries")
    if axis is None:
        m = np.max(v)
        return float(m + np.log(np.sum(np.exp(v - m))))
    m = np.max(v, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def softmax(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    z = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def central_difference(f: Callable[[np.ndarray], float], point, step=1e-5):
    """Central finite-difference gradient of a scalar function."""
    x = np.array(point, dtype=np.float64).ravel()
    out = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + step
        f_plus = f(x.copy())
        x[i] = orig - step
        f_minus = f(x.copy())
        x[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericalError(f"non-finite function value near coordinate {i}")
        out[i] = (f_plus - f_minus) / (2.0 * step)
    return out


def grad_check(f, analytic_grad, point, step=1e-5):
    """Max over coordinates of |numeric - analytic| / max(1, |analytic|)."""
    if step <= 0:
        raise ValidationError("step must be positive")
    analytic = np.asarray(analytic_grad, dtype=np.float64).ravel()
    numeric = central_difference(f, point, step)
    if numeric.shape != analytic.shape:
        raise DimensionError(f"gradient has {analytic.size} entries, point has {numeric.size}")
    return float(np.max(np.abs(numeric - analytic) / np.maximum(1.0, np.abs(analytic))))


class Adam:
    """Adaptive-moment optimizer over a list of parameter arrays.

    ``step`` returns updated copies and leaves the inputs untouched.
    """

    def __init__(self, shapes, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / corr1
            v_hat = self.v[i] / corr2
            out.append(p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return out
