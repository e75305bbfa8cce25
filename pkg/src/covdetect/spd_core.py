"""Numerics on the manifold of symmetric positive-definite (SPD) matrices.

Covariance estimation, the Euclidean / affine-invariant / log-Euclidean
distances, tangent-space maps and the matching means. Functions accept a
single ``(n, n)`` matrix or a stack ``(..., n, n)`` wherever that makes sense.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

SYMMETRY_RTOL = 1e-10
EIGEN_FLOOR = 1e-12


class NotSPDError(ValueError):
    """Raised when a matrix fails the symmetry or positive-definiteness check."""


class SingularCovarianceError(NotSPDError):
    """Raised when a sample covariance is singular and no shrinkage was asked for."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver stops before meeting its tolerance.

    ``last_iterate`` carries the final estimate, ``n_iter`` the iterations run
    and ``residual`` the last measured stopping quantity.
    """

    def __init__(self, message, last_iterate=None, n_iter=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.n_iter = n_iter
        self.residual = residual


class Metric(str, Enum):
    EUCLIDEAN = "euclidean"
    AFFINE_INVARIANT = "affine_invariant"
    LOG_EUCLIDEAN = "log_euclidean"

    @classmethod
    def parse(cls, value) -> "Metric":
        if isinstance(value, Metric):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"riemann": "affine_invariant", "airm": "affine_invariant",
                   "logeuclid": "log_euclidean", "le": "log_euclidean",
                   "euclid": "euclidean"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown metric {value!r}; expected one of {names}") from None


###############################################################################
# Validation and elementary matrix functions


def check_spd(P, name="matrix"):
    """Validate that ``P`` (or every matrix of a stack) is SPD.

    Symmetry must hold to ``1e-10 * max|P|`` and the smallest eigenvalue must
    exceed ``1e-12 * lambda_max``. Nothing is clamped: a near-singular matrix
    is rejected, shrinkage is the way to fix it.

    Returns the input as a float ndarray.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim < 2 or P.shape[-1] != P.shape[-2]:
        raise NotSPDError(f"{name} must be square, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise NotSPDError(f"{name} contains non-finite values")
    scale = np.max(np.abs(P), axis=(-2, -1))
    asym = np.max(np.abs(P - np.swapaxes(P, -1, -2)), axis=(-2, -1))
    if np.any(asym > SYMMETRY_RTOL * scale):
        raise NotSPDError(f"{name} is not symmetric")
    eigvals = np.linalg.eigvalsh(P)
    if np.any(eigvals[..., 0] <= EIGEN_FLOOR * eigvals[..., -1]) or np.any(eigvals[..., -1] <= 0):
        raise NotSPDError(
            f"{name} is not positive definite (min eigenvalue {eigvals[..., 0].min():.3g}); "
            "increase covariance shrinkage"
        )
    return P


def _check_symmetric(S, name="matrix"):
    S = np.asarray(S, dtype=float)
    if S.ndim < 2 or S.shape[-1] != S.shape[-2]:
        raise ValueError(f"{name} must be square, got shape {S.shape}")
    scale = max(float(np.max(np.abs(S))), 1.0)
    if np.max(np.abs(S - np.swapaxes(S, -1, -2))) > SYMMETRY_RTOL * scale:
        raise ValueError(f"{name} is not symmetric")
    return S


def _funm(P, fun):
    """Apply ``fun`` to the eigenvalues of symmetric ``P`` (stack aware)."""
    eigvals, eigvecs = np.linalg.eigh(P)
    out = (eigvecs * fun(eigvals)[..., None, :]) @ np.swapaxes(eigvecs, -1, -2)
    return (out + np.swapaxes(out, -1, -2)) / 2


def logm(P):
    """Matrix logarithm of SPD matrices via symmetric eigendecomposition."""
    return _funm(P, np.log)


def expm(S):
    """Matrix exponential of symmetric matrices via symmetric eigendecomposition."""
    return _funm(S, np.exp)


def sqrtm(P):
    return _funm(P, np.sqrt)


def invsqrtm(P):
    return _funm(P, lambda x: 1.0 / np.sqrt(x))


def _sym_pair(P):
    """Return (P^{1/2}, P^{-1/2}) from one eigendecomposition."""
    eigvals, eigvecs = np.linalg.eigh(P)
    vt = np.swapaxes(eigvecs, -1, -2)
    root = np.sqrt(eigvals)
    half = (eigvecs * root[..., None, :]) @ vt
    ihalf = (eigvecs * (1.0 / root)[..., None, :]) @ vt
    return (half + np.swapaxes(half, -1, -2)) / 2, (ihalf + np.swapaxes(ihalf, -1, -2)) / 2


def _congruence(A, B):
    """A @ B @ A with symmetrization, for symmetric A."""
    out = A @ B @ A
    return (out + np.swapaxes(out, -1, -2)) / 2


###############################################################################
# Covariance


def default_shrinkage(n_channels, n_samples):
    return 0.01 if n_samples >= 10 * n_channels else 0.1


def shrink(P, gamma):
    """Shrink towards the scaled identity: ``(1-gamma) P + gamma tr(P)/n I``."""
    P = np.asarray(P, dtype=float)
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"shrinkage must lie in [0, 1], got {gamma}")
    n = P.shape[-1]
    mu = np.trace(P, axis1=-2, axis2=-1) / n
    return (1.0 - gamma) * P + gamma * mu[..., None, None] * np.eye(n)


def raw_covariance(X):
    """Unbiased channel cross-product matrix ``X X^T / (N_t - 1)``.

    ``X`` is ``(..., n_channels, n_samples)``. The data is not re-centred;
    band-pass filtered EEG is already zero mean.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[-1] < 2:
        raise ValueError("an epoch needs at least 2 samples")
    if not np.all(np.isfinite(X)):
        raise ValueError("epoch contains non-finite values")
    P = X @ np.swapaxes(X, -1, -2) / (X.shape[-1] - 1)
    return (P + np.swapaxes(P, -1, -2)) / 2


def sample_covariance(X, shrinkage=None):
    """Shrunk sample covariance of one epoch or a stack of epochs.

    Parameters
    ----------
    X : ndarray, shape (..., n_channels, n_samples)
        Epoch data, channels in rows.
    shrinkage : float in [0, 1] or None
        Weight of the scaled-identity target. ``None`` picks 0.01 when
        ``n_samples >= 10 * n_channels`` and 0.1 otherwise.

    Returns
    -------
    P : ndarray, shape (..., n_channels, n_channels)
        SPD covariance matrices.
    """
    X = np.asarray(X, dtype=float)
    if shrinkage is None:
        shrinkage = default_shrinkage(X.shape[-2], X.shape[-1])
    P = shrink(raw_covariance(X), shrinkage)
    try:
        return check_spd(P, "covariance")
    except NotSPDError:
        raise SingularCovarianceError(
            "sample covariance is singular (constant or rank-deficient epoch); "
            "use shrinkage > 0"
        ) from None


###############################################################################
# Distances


def _check_pair(A, B):
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[-2:] != B.shape[-2:]:
        raise ValueError(f"dimension mismatch: {A.shape[-2:]} vs {B.shape[-2:]}")
    return A, B


def distance_euclid(A, B):
    A, B = _check_pair(A, B)
    return np.linalg.norm(A - B, ord="fro", axis=(-2, -1))


def distance_riemann(A, B):
    r"""Affine-invariant distance :math:`\Vert \log(B^{-1/2} A B^{-1/2}) \Vert_F`.

    Computed from the eigenvalues of the whitened matrix, which are the
    generalized eigenvalues of the pencil (A, B).
    """
    A, B = _check_pair(A, B)
    isq = invsqrtm(B)
    eigvals = np.linalg.eigvalsh(_congruence(isq, A))
    return np.sqrt(np.sum(np.log(eigvals) ** 2, axis=-1))


def distance_logeuclid(A, B):
    A, B = _check_pair(A, B)
    return distance_euclid(logm(A), logm(B))


_DISTANCES = {
    Metric.EUCLIDEAN: distance_euclid,
    Metric.AFFINE_INVARIANT: distance_riemann,
    Metric.LOG_EUCLIDEAN: distance_logeuclid,
}


def distance(A, B, metric=Metric.LOG_EUCLIDEAN):
    """Distance between SPD matrices under ``metric`` (broadcasts over stacks)."""
    return _DISTANCES[Metric.parse(metric)](A, B)


def pairwise_distances(X, Y, metric=Metric.LOG_EUCLIDEAN):
    """Distance matrix of shape (len(X), len(Y)) between two stacks.

    Matrix functions are evaluated once per input rather than once per pair.
    """
    metric = Metric.parse(metric)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape[-2:] != Y.shape[-2:]:
        raise ValueError(f"dimension mismatch: {X.shape[-2:]} vs {Y.shape[-2:]}")
    if metric is Metric.EUCLIDEAN:
        return np.linalg.norm(X[:, None] - Y[None], axis=(-2, -1))
    if metric is Metric.LOG_EUCLIDEAN:
        lx = logm(X).reshape(len(X), -1)
        ly = logm(Y).reshape(len(Y), -1)
        return np.linalg.norm(lx[:, None] - ly[None], axis=-1)
    out = np.empty((len(X), len(Y)))
    for j, isq in enumerate(invsqrtm(Y)):
        eigvals = np.linalg.eigvalsh(_congruence(isq, X))
        out[:, j] = np.sqrt(np.sum(np.log(eigvals) ** 2, axis=-1))
    return out


###############################################################################
# Tangent space


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Symmetric matrix living in the tangent space at ``base_point``."""

    values: np.ndarray
    base_point: np.ndarray

    def norm(self):
        """Riemannian norm ``tr(S Q^-1 S Q^-1)^{1/2}``."""
        return float(np.sqrt(inner(self.values, self.values, self.base_point)))


def inner(T1, T2, Q):
    """Affine-invariant inner product ``tr(T1 Q^-1 T2 Q^-1)`` at ``Q``."""
    Qi = np.linalg.inv(Q)
    return float(np.trace(T1 @ Qi @ T2 @ Qi))


def log_map(Q, P):
    """Project ``P`` onto the tangent space at ``Q``.

    ``S = Q^{1/2} logm(Q^{-1/2} P Q^{-1/2}) Q^{1/2}``.
    """
    Q = check_spd(Q, "base point")
    P = check_spd(P, "point")
    if P.shape != Q.shape:
        raise ValueError(f"dimension mismatch: {Q.shape} vs {P.shape}")
    half, ihalf = _sym_pair(Q)
    S = _congruence(half, logm(_congruence(ihalf, P)))
    return TangentVector(S, Q)


def exp_map(Q, S):
    """Map tangent vector ``S`` at ``Q`` back to the manifold.

    ``P = Q^{1/2} expm(Q^{-1/2} S Q^{-1/2}) Q^{1/2}``. ``S`` may be a
    :class:`TangentVector`, whose base point must equal ``Q``, or a bare
    symmetric matrix.
    """
    Q = check_spd(Q, "base point")
    if isinstance(S, TangentVector):
        base = np.asarray(S.base_point)
        if base.shape != Q.shape or not np.allclose(base, Q, rtol=1e-12, atol=0.0):
            raise ValueError("tangent vector is attached to a different base point")
        S = S.values
    S = _check_symmetric(S, "tangent vector")
    if S.shape != Q.shape:
        raise ValueError(f"dimension mismatch: {Q.shape} vs {S.shape}")
    half, ihalf = _sym_pair(Q)
    return _congruence(half, expm(_congruence(ihalf, S)))


###############################################################################
# Means


@dataclass(frozen=True)
class MeanReport:
    n_iter: int
    gradient_norm: float
    converged: bool


def mean_euclid(mats):
    return np.mean(mats, axis=0)


def mean_logeuclid(mats):
    return expm(np.mean(logm(mats), axis=0))


def mean_riemann(mats, tol=1e-8, max_iter=100, init=None):
    """Karcher mean under the affine-invariant metric.

    Plain fixed point with unit step: ``M <- Exp_M(mean_k Log_M(P_k))``,
    started at the arithmetic mean. The stopping quantity is the Frobenius
    norm of the tangent average ``mean_k Log_M(P_k)``.

    Returns
    -------
    M : ndarray
        The mean.
    report : MeanReport
        Iterations used and the final gradient norm.

    Raises
    ------
    ConvergenceError
        If the gradient norm is still above ``tol`` after ``max_iter``
        updates; the exception carries the last iterate.
    """
    mats = np.asarray(mats, dtype=float)
    M = mean_euclid(mats) if init is None else np.asarray(init, dtype=float)
    grad_norm = np.inf
    for it in range(max_iter + 1):
        half, ihalf = _sym_pair(M)
        # tangent average in whitened coordinates, then mapped back
        W = np.mean(logm(_congruence(ihalf, mats)), axis=0)
        grad_norm = float(np.linalg.norm(_congruence(half, W)))
        if grad_norm <= tol:
            return M, MeanReport(it, grad_norm, True)
        if it == max_iter:
            break
        M = _congruence(half, expm(W))
    raise ConvergenceError(
        f"Karcher mean did not converge in {max_iter} iterations "
        f"(gradient norm {grad_norm:.3g} > {tol:.3g})",
        last_iterate=M, n_iter=max_iter, residual=grad_norm,
    )


def mean(mats, metric=Metric.LOG_EUCLIDEAN, tol=1e-8, max_iter=100):
    """Mean of a nonempty set of SPD matrices under ``metric``.

    Returns ``(M, report)``; for the closed-form means the report has zero
    iterations and a zero gradient norm.
    """
    metric = Metric.parse(metric)
    mats = np.asarray(mats, dtype=float)
    if mats.ndim != 3 or len(mats) == 0:
        raise ValueError("mean needs a nonempty stack of square matrices")
    if metric is Metric.AFFINE_INVARIANT:
        return mean_riemann(mats, tol=tol, max_iter=max_iter)
    if metric is Metric.EUCLIDEAN:
        return mean_euclid(mats), MeanReport(0, 0.0, True)
    return mean_logeuclid(mats), MeanReport(0, 0.0, True)
