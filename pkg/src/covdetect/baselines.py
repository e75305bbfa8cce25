"""Reference classifiers: one-class SVM, air-flow descriptors, CSP + LDA."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import eigh

from .spd_core import ConvergenceError, raw_covariance

AIRFLOW6 = ("peak", "mean", "volume", "variance", "skewness", "kurtosis")
AIRFLOW3 = ("peak", "variance", "skewness")


###############################################################################
# Feature vectors


def vectorize_cov(P):
    """Row-major upper triangle (diagonal included), length n(n+1)/2."""
    P = np.asarray(P, dtype=float)
    rows, cols = np.triu_indices(P.shape[-1])
    return P[..., rows, cols]


def devectorize_cov(v, n):
    v = np.asarray(v, dtype=float)
    P = np.zeros(v.shape[:-1] + (n, n))
    rows, cols = np.triu_indices(n)
    P[..., rows, cols] = v
    P[..., cols, rows] = v
    return P


def airflow_features(epoch, sample_rate_hz, select=AIRFLOW6):
    """Descriptors of one air-flow window.

    peak (max flow), mean flow, volume (trapezoidal integral of flow),
    variance, skewness and non-excess kurtosis (Gaussian -> 3). Central
    moments use the population (1/n) normalization.
    """
    x = np.asarray(getattr(epoch, "data", epoch), dtype=float)
    if x.ndim == 2:
        if x.shape[0] != 1:
            raise ValueError("air-flow features need a single-channel epoch")
        x = x[0]
    m = x.mean()
    c = x - m
    var = float(np.mean(c ** 2))
    if var <= 1e-300:
        raise ValueError("zero-variance air-flow epoch: skewness and kurtosis are undefined")
    feats = {
        "peak": float(x.max()),
        "mean": float(m),
        "volume": float(np.sum((x[1:] + x[:-1]) / 2) / sample_rate_hz),
        "variance": var,
        "skewness": float(np.mean(c ** 3) / var ** 1.5),
        "kurtosis": float(np.mean(c ** 4) / var ** 2),
    }
    return np.array([feats[k] for k in select])


###############################################################################
# One-class SVM


def gaussian_kernel(x1, x2, sigma):
    """``exp(-||x1 - x2||^2 / sigma)``; broadcasts over leading axes."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.shape[-1] != x2.shape[-1]:
        raise ValueError("feature vectors differ in length")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return np.exp(-np.sum((x1 - x2) ** 2, axis=-1) / sigma)


def _sq_dists(X, Y):
    d = np.sum(X ** 2, 1)[:, None] + np.sum(Y ** 2, 1)[None] - 2 * X @ Y.T
    return np.maximum(d, 0.0)


def kernel_matrix(X, Y, sigma):
    return np.exp(-_sq_dists(np.atleast_2d(X), np.atleast_2d(Y)) / sigma)


def median_sigma(train):
    """Median of the squared pairwise distances over all unordered pairs."""
    X = np.asarray(train, dtype=float)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("median heuristic needs at least 2 feature vectors")
    i, j = np.triu_indices(len(X), k=1)
    sq = np.sum((X[i] - X[j]) ** 2, axis=1)
    sigma = float(np.median(sq))
    if sigma <= 0:
        raise ValueError("median pairwise distance is zero (duplicate training points); "
                         "sigma would be zero")
    return sigma


@dataclass(frozen=True, eq=False)
class OcsvmModel:
    support_vectors: np.ndarray
    alphas: np.ndarray
    rho: float
    sigma: float
    nu: float
    n_iter: int = 0

    def decision_function(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.support_vectors.shape[1]:
            raise ValueError("feature length does not match the model")
        return kernel_matrix(X, self.support_vectors, self.sigma) @ self.alphas - self.rho


def solve_ocsvm_dual(K, nu, tol=1e-6, max_iter=100_000):
    """Minimize ``a^T K a / 2`` on ``{0 <= a <= 1/(nu n), sum a = 1}``.

    Sequential minimal optimization with maximal-violating-pair selection.
    Returns ``(alpha, rho, n_iter)``.
    """
    K = np.asarray(K, dtype=float)
    n = len(K)
    C = 1.0 / (nu * n)
    alpha = np.zeros(n)
    n_full = int(np.floor(1.0 / C))
    alpha[:n_full] = C
    if n_full < n:
        alpha[n_full] = 1.0 - n_full * C
    G = K @ alpha
    diag = np.diag(K)
    eps = 1e-12 * C
    for it in range(max_iter):
        up = alpha < C - eps
        low = alpha > eps
        gi = np.where(up, G, np.inf)
        gj = np.where(low, G, -np.inf)
        i = int(np.argmin(gi))
        j = int(np.argmax(gj))
        gap = gj[j] - gi[i]
        if gap <= tol:
            break
        eta = max(diag[i] + diag[j] - 2 * K[i, j], 1e-12)
        t = min(gap / eta, C - alpha[i], alpha[j])
        alpha[i] += t
        alpha[j] -= t
        G += t * (K[:, i] - K[:, j])
    else:
        raise ConvergenceError(f"one-class SVM solver stopped after {max_iter} iterations "
                               f"(KKT gap {gap:.3g} > {tol:.3g})",
                               last_iterate=alpha, n_iter=max_iter, residual=gap)
    # rho within the KKT interval, at its lower end: every point with
    # alpha < C then has f >= 0, so only bounded SVs can fall outside
    up = alpha < C - eps
    rho = float(np.min(G[up])) if np.any(up) else float(np.max(G))
    return alpha, rho, it


def ocsvm_train(train, nu=0.1, sigma=None, tol=1e-6, max_iter=100_000) -> OcsvmModel:
    """Fit a Gaussian-kernel one-class SVM; ``sigma`` defaults to the median heuristic."""
    X = np.asarray(train, dtype=float)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("need at least 2 training vectors")
    if not 0 < nu <= 1:
        raise ValueError("nu must lie in (0, 1]")
    if sigma is None:
        sigma = median_sigma(X)
    alpha, rho, n_iter = solve_ocsvm_dual(kernel_matrix(X, X, sigma), nu, tol, max_iter)
    keep = alpha > 0
    return OcsvmModel(X[keep], alpha[keep], rho, float(sigma), float(nu), n_iter)


def ocsvm_score(model: OcsvmModel, x):
    """Anomaly score ``-f(x)``: higher is more anomalous."""
    s = -model.decision_function(x)
    return float(s[0]) if np.ndim(x) == 1 else s


###############################################################################
# CSP + LDA


@dataclass(frozen=True, eq=False)
class CspModel:
    W: np.ndarray               # filters in columns, eigenvalues descending
    A: np.ndarray               # patterns, (W^-1)^T
    eigenvalues: np.ndarray
    selected_filters: tuple
    lda: "LdaModel" = None


def csp_fit(class0, class1) -> CspModel:
    """Common spatial patterns from two sets of covariance matrices.

    Solves ``S0 w = lambda (S0 + S1) w`` on the arithmetic class means and
    keeps the two filters from each end of the spectrum.
    """
    class0 = np.asarray(class0, dtype=float)
    class1 = np.asarray(class1, dtype=float)
    if len(class0) == 0 or len(class1) == 0:
        raise ValueError("both classes need at least one covariance matrix")
    if class0.shape[1:] != class1.shape[1:]:
        raise ValueError("classes have different channel counts")
    S0 = class0.mean(axis=0)
    S1 = class1.mean(axis=0)
    composite = S0 + S1
    ev = np.linalg.eigvalsh(composite)
    if ev[0] <= 1e-12 * ev[-1]:
        raise ValueError("composite covariance is rank deficient; apply covariance shrinkage")
    lam, W = eigh(S0, composite)
    order = np.argsort(lam)[::-1]
    lam, W = lam[order], W[:, order]
    n = len(lam)
    selected = tuple(sorted({0, 1, n - 2, n - 1} & set(range(n))))
    A = np.linalg.inv(W).T
    return CspModel(W, A, lam, selected)


def csp_features(model: CspModel, epoch):
    """``log var(w_j^T X)`` for each selected filter."""
    X = np.asarray(getattr(epoch, "data", epoch), dtype=float)
    if X.shape[-2] != model.W.shape[0]:
        raise ValueError("epoch channel count does not match the CSP model")
    Y = np.swapaxes(model.W[:, list(model.selected_filters)], 0, 1) @ X
    var = np.var(Y, axis=-1, ddof=1)
    if np.any(var <= 0):
        raise ValueError("zero variance along a spatial filter")
    return np.log(var)


@dataclass(frozen=True, eq=False)
class LdaModel:
    weights: np.ndarray
    bias: float


def lda_fit(f0, f1, shrinkage=1e-3) -> LdaModel:
    """Fisher discriminant ``w = Sw^-1 (mu1 - mu0)``.

    ``Sw`` is the pooled within-class covariance plus ``shrinkage * tr(Sw)/d``
    on the diagonal; the bias sits at the midpoint of the projected means.
    """
    f0 = np.atleast_2d(np.asarray(f0, dtype=float))
    f1 = np.atleast_2d(np.asarray(f1, dtype=float))
    if len(f0) < 2 or len(f1) < 2:
        raise ValueError("LDA needs at least 2 samples per class")
    mu0, mu1 = f0.mean(0), f1.mean(0)
    c0, c1 = f0 - mu0, f1 - mu1
    Sw = (c0.T @ c0 + c1.T @ c1) / (len(f0) + len(f1) - 2)
    d = Sw.shape[0]
    Sw = Sw + shrinkage * np.trace(Sw) / d * np.eye(d)
    try:
        cond = np.linalg.cond(Sw)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e14:
        raise ValueError("within-class scatter is singular; use shrinkage > 0")
    w = np.linalg.solve(Sw, mu1 - mu0)
    bias = float(w @ (mu0 + mu1) / 2)
    return LdaModel(w, bias)


def lda_score(model: LdaModel, x):
    """``w^T x - bias``; positive leans towards class 1."""
    return np.asarray(x, dtype=float) @ model.weights - model.bias


def csp_lda_fit(epochs0, epochs1):
    """CSP on the two epoch classes, then LDA on the log-variance features."""
    cov0 = raw_covariance(epochs0)
    cov1 = raw_covariance(epochs1)
    model = csp_fit(cov0, cov1)
    lda = lda_fit(csp_features(model, epochs0), csp_features(model, epochs1))
    return CspModel(model.W, model.A, model.eigenvalues, model.selected_filters, lda)


def csp_lda_score(model: CspModel, epochs):
    return lda_score(model.lda, csp_features(model, epochs))


###############################################################################
# Serialization: JSON with a "type" discriminator, like detector models


def baseline_to_dict(model) -> dict:
    if isinstance(model, OcsvmModel):
        return {"type": "ocsvm", "nu": model.nu, "sigma": model.sigma, "rho": model.rho,
                "n_iter": model.n_iter, "alphas": model.alphas.tolist(),
                "support_vectors": model.support_vectors.tolist()}
    if isinstance(model, CspModel):
        lda = None if model.lda is None else {"weights": model.lda.weights.tolist(),
                                              "bias": model.lda.bias}
        return {"type": "csp_lda", "W": model.W.tolist(), "eigenvalues": model.eigenvalues.tolist(),
                "selected_filters": list(model.selected_filters), "lda": lda}
    raise TypeError(f"cannot serialize {type(model).__name__}")


def baseline_from_dict(obj):
    kind = obj.get("type")
    if kind == "ocsvm":
        return OcsvmModel(np.array(obj["support_vectors"], dtype=float), np.array(obj["alphas"]),
                          float(obj["rho"]), float(obj["sigma"]), float(obj["nu"]),
                          int(obj.get("n_iter", 0)))
    if kind == "csp_lda":
        W = np.array(obj["W"], dtype=float)
        lda = obj.get("lda")
        lda = None if lda is None else LdaModel(np.array(lda["weights"]), float(lda["bias"]))
        return CspModel(W, np.linalg.inv(W).T, np.array(obj["eigenvalues"]),
                        tuple(obj["selected_filters"]), lda)
    raise ValueError(f"not a baseline model (type={kind!r})")


def save_baseline(model, path):
    Path(path).write_text(json.dumps(baseline_to_dict(model), indent=2) + "\n")


def load_baseline(path):
    return baseline_from_dict(json.loads(Path(path).read_text()))
