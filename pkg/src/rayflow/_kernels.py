"""Hot inner loops with a numba path and a vectorised numpy path.

The numba kernels are used when numba imports and ``RAYFLOW_NUMBA`` is not
set to ``0``.  Both paths compute the same quantities; the test-suite runs
them against each other.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("RAYFLOW_NUMBA", "1") != "0"


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------


def svgd_phi_numpy(particles, scores, h):
    diff = particles[None, :] - particles[:, None]  # [j, i] = t_i - t_j
    k = np.exp(-(diff**2) / (2.0 * h * h))
    drive = scores[:, None] * k
    repulse = diff / (h * h) * k
    return (drive + repulse).mean(axis=0)


def kde_score_numpy(centers, weights, h, query):
    # d/dt log sum_i w_i exp(-(t - c_i)^2 / 2h^2), max-shifted
    diff = query[:, None] - centers[None, :]
    logk = -(diff**2) / (2.0 * h * h)
    with np.errstate(divide="ignore"):
        logw = np.log(weights)[None, :] + logk
    m = logw.max(axis=1, keepdims=True)
    w = np.exp(logw - m)
    return (w * (-diff / (h * h))).sum(axis=1) / w.sum(axis=1)


def responsibilities_numpy(x, means, variances, log_weights):
    d = x.shape[1]
    sq = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    logp = log_weights[None, :] - 0.5 * d * np.log(variances)[None, :] - sq / (2.0 * variances[None, :])
    logp -= logp.max(axis=1, keepdims=True)
    w = np.exp(logp)
    return w / w.sum(axis=1, keepdims=True)


def rbf_mean_numpy(a, b, h):
    sq = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return float(np.exp(-sq / (2.0 * h * h)).mean())


# ---------------------------------------------------------------------------
# numba loop implementations
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def svgd_phi_numba(particles, scores, h):
        n = particles.shape[0]
        out = np.zeros(n)
        inv_h2 = 1.0 / (h * h)
        for i in range(n):
            acc = 0.0
            ti = particles[i]
            for j in range(n):
                diff = ti - particles[j]
                k = math.exp(-0.5 * diff * diff * inv_h2)
                acc += scores[j] * k + diff * inv_h2 * k
            out[i] = acc / n
        return out

    @njit(cache=True)
    def kde_score_numba(centers, weights, h, query):
        m = query.shape[0]
        n = centers.shape[0]
        out = np.empty(m)
        inv_h2 = 1.0 / (h * h)
        logw = np.empty(n)
        for q in range(m):
            t = query[q]
            top = -np.inf
            for i in range(n):
                diff = t - centers[i]
                if weights[i] > 0.0:
                    logw[i] = math.log(weights[i]) - 0.5 * diff * diff * inv_h2
                else:
                    logw[i] = -np.inf
                if logw[i] > top:
                    top = logw[i]
            num = 0.0
            den = 0.0
            for i in range(n):
                w = math.exp(logw[i] - top)
                num += w * (centers[i] - t) * inv_h2
                den += w
            out[q] = num / den
        return out

    @njit(cache=True)
    def responsibilities_numba(x, means, variances, log_weights):
        m, d = x.shape
        k = means.shape[0]
        out = np.empty((m, k))
        for q in range(m):
            top = -np.inf
            for c in range(k):
                sq = 0.0
                for j in range(d):
                    diff = x[q, j] - means[c, j]
                    sq += diff * diff
                v = log_weights[c] - 0.5 * d * math.log(variances[c]) - sq / (2.0 * variances[c])
                out[q, c] = v
                if v > top:
                    top = v
            total = 0.0
            for c in range(k):
                out[q, c] = math.exp(out[q, c] - top)
                total += out[q, c]
            for c in range(k):
                out[q, c] /= total
        return out

    @njit(cache=True)
    def rbf_mean_numba(a, b, h):
        n, d = a.shape
        m = b.shape[0]
        inv = 1.0 / (2.0 * h * h)
        acc = 0.0
        for i in range(n):
            for j in range(m):
                sq = 0.0
                for c in range(d):
                    diff = a[i, c] - b[j, c]
                    sq += diff * diff
                acc += math.exp(-sq * inv)
        return acc / (n * m)


def _pick(name):
    if USE_NUMBA:
        return globals()[name + "_numba"]
    return globals()[name + "_numpy"]


def svgd_phi(particles: np.ndarray, scores: np.ndarray, h: float) -> np.ndarray:
    """SVGD direction at every particle for a 1-d Gaussian kernel."""
    return _pick("svgd_phi")(np.ascontiguousarray(particles, dtype=float),
                             np.ascontiguousarray(scores, dtype=float), float(h))


def kde_score(centers: np.ndarray, weights: np.ndarray, h: float, query: np.ndarray) -> np.ndarray:
    """Derivative of the log of a weighted Gaussian KDE, evaluated at ``query``."""
    return _pick("kde_score")(np.ascontiguousarray(centers, dtype=float),
                              np.ascontiguousarray(weights, dtype=float), float(h),
                              np.ascontiguousarray(query, dtype=float))


def responsibilities(x: np.ndarray, means: np.ndarray, variances: np.ndarray,
                     log_weights: np.ndarray) -> np.ndarray:
    """Posterior component probabilities of an isotropic Gaussian mixture, shape (m, K)."""
    return _pick("responsibilities")(np.ascontiguousarray(x, dtype=float),
                                     np.ascontiguousarray(means, dtype=float),
                                     np.ascontiguousarray(variances, dtype=float),
                                     np.ascontiguousarray(log_weights, dtype=float))


def rbf_mean(a: np.ndarray, b: np.ndarray, h: float) -> float:
    """Mean of exp(-|a_i - b_j|^2 / 2h^2) over all pairs."""
    return float(_pick("rbf_mean")(np.ascontiguousarray(a, dtype=float),
                                   np.ascontiguousarray(b, dtype=float), float(h)))
