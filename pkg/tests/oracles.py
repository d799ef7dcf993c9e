"""Closed-form reference values used across the tests.

Each function is written from the scalar formulas directly and shares no
code with the package.
"""

import math

import numpy as np


def ou_mean(theta, mu, x0, T):
    return mu + (x0 - mu) * math.exp(-theta * T)


def ou_var(theta, sigma, T):
    return sigma**2 * (1 - math.exp(-2 * theta * T)) / (2 * theta)


def ou_scheme_var(theta, sigma, T, n, scheme):
    """Terminal variance of the Euler / NV splitting with exact substep flows."""
    dt = T / n
    a = math.exp(-2 * theta * dt)
    kick = sigma**2 * dt * (1.0 if scheme == "euler" else math.exp(-theta * dt))
    v = 0.0
    for _ in range(n):
        v = a * v + kick
    return v


def heat_scheme_moment2(lam, amp, x0, T, n, scheme):
    """E x_1^2 for one Galerkin mode with eigenvalue lam and noise amplitude amp."""
    dt = T / n
    a = math.exp(2 * lam * dt)
    kick = amp**2 * dt * (1.0 if scheme == "euler" else math.exp(lam * dt))
    v = 0.0
    for _ in range(n):
        v = a * v + kick
    return (x0 * math.exp(lam * T)) ** 2 + v


def heat_moment2(lam, amp, x0, T):
    return (x0 * math.exp(lam * T)) ** 2 + amp**2 * math.expm1(2 * lam * T) / (2 * lam)


def fd_jacobian(f, x, eps=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = eps
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * eps))
    return np.stack(cols, axis=-1)


def loglog_slope(h, err):
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])
