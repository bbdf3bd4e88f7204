"""Shared test oracles: quadrature, finite differences, peak detection.

Everything here is deliberately independent of the library's own code
paths (naive loops and textbook formulas only), so a test failure points
at the implementation, not at a shared bug.
"""

import functools
import math

import numpy as np
import pytest


@functools.lru_cache(maxsize=8)
def gauss_legendre_01(n: int):
    """Nodes and weights on (0, 1)."""
    nodes, weights = np.polynomial.legendre.leggauss(n)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def beta_pdf_reference(t, alpha: float, beta: float):
    """Direct density evaluation through the standard library's lgamma."""
    ln_b = math.lgamma(alpha) + math.lgamma(beta) - math.lgamma(alpha + beta)
    t = np.asarray(t, dtype=np.float64)
    return np.exp((alpha - 1.0) * np.log(t) + (beta - 1.0) * np.log1p(-t) - ln_b)


def mixture_moments_by_quadrature(components, n_nodes: int = 4000):
    """(mean, variance) of an equal-weight beta mixture via Gauss-Legendre.

    4000 nodes keep the error below ~5e-8 even for shape parameters just
    above 1, where the endpoint derivative singularity slows convergence.
    """
    nodes, weights = gauss_legendre_01(n_nodes)
    pdf = np.zeros_like(nodes)
    for alpha, beta in components:
        pdf += beta_pdf_reference(nodes, alpha, beta)
    pdf /= len(components)
    mean = float(np.sum(weights * nodes * pdf))
    second = float(np.sum(weights * nodes * nodes * pdf))
    return mean, second - mean * mean


def central_difference(f, x: float, h: float) -> float:
    return (f(x + h) - f(x - h)) / (2.0 * h)


def numeric_grad(loss_fn, arr: np.ndarray, h: float) -> np.ndarray:
    """Elementwise central differences of loss_fn() w.r.t. entries of arr.

    loss_fn takes no arguments and must observe mutations of arr.
    """
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        grad_flat[i] = (up - down) / (2.0 * h)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor)))


def detect_peak_times(samples: np.ndarray, fs: float,
                      height_fraction: float = 0.5,
                      min_distance_s: float = 0.25) -> np.ndarray:
    """Naive spike detector: local maxima above a fraction of the global
    max, greedily thinned to a minimum spacing."""
    x = np.asarray(samples, dtype=np.float64)
    x = x - np.median(x)
    threshold = height_fraction * x.max()
    candidates = [
        i for i in range(1, len(x) - 1)
        if x[i] >= threshold and x[i] >= x[i - 1] and x[i] > x[i + 1]
    ]
    min_gap = int(min_distance_s * fs)
    kept = []
    for i in candidates:
        if kept and i - kept[-1] < min_gap:
            if x[i] > x[kept[-1]]:
                kept[-1] = i
            continue
        kept.append(i)
    return np.asarray(kept, dtype=np.float64) / fs


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
