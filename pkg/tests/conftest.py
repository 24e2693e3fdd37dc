"""Shared fixtures and independent oracle helpers for the test suite.

The oracles here deliberately avoid the package's own closed forms: evidence
values come from adaptive quadrature, fixed points from bisection or Newton
iteration, and partition probabilities from exact rational arithmetic, so a
bug in the implementation cannot hide in its own test.
"""

import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.integrate import quad

from dsdpmm import ExpFamSpec, KernelParams, MarkedHyper


@pytest.fixture
def unit_hyper():
    return MarkedHyper(alpha_star=1.0, a0=1.0, b0=1.0)


@pytest.fixture
def std_spec():
    return ExpFamSpec.gaussian(dimension=1, known_variance=1.0, prior_mean=0.0,
                               pseudo_count=1.0)


@pytest.fixture
def unit_kernel():
    return KernelParams.isotropic(variance=1.0, lengthscale=1.0, dimension=1, jitter=1e-8)


def exact_q_fraction(n_k: int, n: int, a0: int, b0: int) -> Fraction:
    """Marked weight by factorial arithmetic; integer a0, b0 only."""
    num = math.factorial(a0 + n_k - 1)
    den = math.factorial(a0 - 1) * math.factorial(n_k - 1)
    return Fraction(num, den) * Fraction(1, n_k) * Fraction(1, (n + b0) ** a0)


def mass_fraction(sizes, n, alpha: int, a0: int, b0: int) -> Fraction:
    """Unnormalized partition mass by factorial arithmetic (integer hypers)."""
    out = Fraction(alpha**len(sizes) * math.factorial(alpha - 1),
                   math.factorial(alpha + n - 1))
    for s in sizes:
        out *= math.factorial(s - 1) * exact_q_fraction(s, n, a0, b0)
    return out


def mq_by_quadrature(xs, spec: ExpFamSpec) -> float:
    """Log evidence by adaptive quadrature over the topic (1-D specs only)."""
    assert spec.dimension == 1
    v = spec.known_variance[0]
    pm = spec.prior_mean[0]
    pv = spec.prior_variance[0]
    xs = np.asarray(xs, dtype=float).reshape(-1)
    m = xs.shape[0]
    post_mean = (spec.base_eta1[0] + xs.sum()) / (spec.base_eta2 + m)
    post_sd = math.sqrt(v / (spec.base_eta2 + m))

    def log_integrand(t):
        out = -0.5 * (t - pm) ** 2 / pv - 0.5 * math.log(2 * math.pi * pv)
        out += -0.5 * np.sum((xs - t) ** 2) / v - 0.5 * m * math.log(2 * math.pi * v)
        return out

    peak = log_integrand(post_mean)
    val, _ = quad(lambda t: math.exp(log_integrand(t) - peak),
                  post_mean - 15 * post_sd, post_mean + 15 * post_sd, limit=200)
    return peak + math.log(val)


def laplace_target_by_quadrature(stats_count, stat_sum, spec: ExpFamSpec) -> float:
    """Quadrature of exp((s t - eta t^2 / 2) / v) over t (the Laplace target)."""
    assert spec.dimension == 1
    v = spec.known_variance[0]
    eta = spec.base_eta2 + stats_count
    s = spec.base_eta1[0] + stat_sum
    mode = s / eta
    sd = math.sqrt(v / eta)

    def log_g(t):
        return (s * t - 0.5 * eta * t * t) / v

    peak = log_g(mode)
    val, _ = quad(lambda t: math.exp(log_g(t) - peak), mode - 15 * sd, mode + 15 * sd,
                  limit=200)
    return peak + math.log(val)


def bisect_root(f, lo, hi, iters=200):
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if (f(mid) > 0) == (flo > 0):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def newton_2d(f, x0, damping=0.5, iters=200, h=1e-7):
    """Damped Newton on a 2-vector residual, with forward-difference Jacobian."""
    x = np.array(x0, dtype=float)
    for _ in range(iters):
        f0 = f(x)
        jac = np.zeros((2, 2))
        for c in range(2):
            e = np.zeros(2)
            e[c] = h
            jac[:, c] = (f(x + e) - f0) / h
        x = x - damping * np.linalg.solve(jac, f0)
    return x


def write_galaxy_fixture(path, rows=None):
    """A small comma-separated catalog with the three required columns."""
    if rows is None:
        rows = [
            (193.1, -32.5, 14500.0),
            (200.4, -31.2, 15200.0),
            (205.8, -35.9, 4800.0),
        ]
    with open(path, "w") as fh:
        fh.write("RA,Dec,Velocity\n")
        for ra, dec, vel in rows:
            fh.write(f"{ra},{dec},{vel}\n")
    return rows
