"""Shared independent oracles for the test suite.

Everything here is deliberately written against a different algorithmic
route than the library code (loops instead of BLAS, finite differences
instead of the tape, SVD principal angles instead of Gram norms, Monte
Carlo instead of closed forms) so agreement is evidence, not tautology.
"""

from __future__ import annotations

import numpy as np


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop matrix product; O(n^3) reference free of numpy dot."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def central_diff(f, arrays: dict, eps: float = 1e-6) -> dict:
    """Central finite-difference gradient of scalar f over named arrays."""
    grads = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            hi = f(arrays)
            flat[i] = keep - eps
            lo = f(arrays)
            flat[i] = keep
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads[name] = g
    return grads


def rel_err(approx: np.ndarray, ref: np.ndarray) -> float:
    """Scaled sup-norm error: ||a - r||_inf / max(1, ||r||_inf)."""
    diff = float(np.max(np.abs(np.asarray(approx) - np.asarray(ref))))
    scale = max(1.0, float(np.max(np.abs(ref))) if np.asarray(ref).size else 0.0)
    return diff / scale


def svd_chordal(q1: np.ndarray, q2: np.ndarray) -> float:
    """Chordal distance via SVD principal angles: sqrt(sum sin^2 theta_i)."""
    sigma = np.linalg.svd(q1.T @ q2, compute_uv=False)
    sigma = np.clip(sigma, -1.0, 1.0)
    return float(np.sqrt(np.sum(1.0 - sigma ** 2)))


def mc_gaussian_kl(mu_p, cov_p, mu_q, cov_q, n: int, rng) -> float:
    """Monte Carlo estimate of KL(p || q) from n draws of p."""
    d = mu_p.shape[0]
    lp = np.linalg.cholesky(cov_p)
    x = mu_p[None, :] + rng.standard_normal((n, d)) @ lp.T

    def logpdf(pts, mu, cov):
        diff = pts - mu[None, :]
        sol = np.linalg.solve(cov, diff.T).T
        quad = np.sum(diff * sol, axis=1)
        _, logdet = np.linalg.slogdet(cov)
        return -0.5 * (quad + logdet + d * np.log(2.0 * np.pi))

    return float(np.mean(logpdf(x, mu_p, cov_p) - logpdf(x, mu_q, cov_q)))


def grid_filter_sup(w: np.ndarray, num: int = 20001) -> float:
    """Sup of |d/dlam sum_k w_k lam^k| on [0, 2] by dense grid search."""
    lam = np.linspace(0.0, 2.0, num)
    deriv = np.zeros_like(lam)
    for k in range(1, w.shape[0]):
        deriv += k * w[k] * lam ** (k - 1)
    return float(np.max(np.abs(deriv)))


def random_spd(rng, d: int, scale: float = 1.0) -> np.ndarray:
    """Random symmetric positive definite matrix with eigenvalues >= 0.1."""
    a = rng.standard_normal((d, d))
    return scale * (a @ a.T + 0.1 * np.eye(d))
