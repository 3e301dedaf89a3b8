"""Closed-form reference prices, written independently of the package."""

import math

import numpy as np
from scipy.stats import norm


def bs_call(S, K, T, r, sigma):
    K = np.asarray(K, dtype=float)
    if T == 0 or sigma == 0:
        return np.maximum(S - K * math.exp(-r * T), 0.0)
    sd = sigma * math.sqrt(T)
    d1 = (np.log(S / K) + (r + 0.5 * sigma**2) * T) / sd
    return S * norm.cdf(d1) - K * math.exp(-r * T) * norm.cdf(d1 - sd)


def merton_call(S, K, T, r, sigma, lam, mu, delta, terms=80):
    """Poisson mixture of Black-Scholes prices with jumps ``N(mu, delta^2)`` in log price."""
    kappa = math.exp(mu + 0.5 * delta**2) - 1
    lam_p = lam * (1 + kappa)
    total = np.zeros_like(np.asarray(K, dtype=float))
    for n in range(terms):
        w = math.exp(-lam_p * T + n * math.log(lam_p * T) - math.lgamma(n + 1)) if lam_p > 0 else float(n == 0)
        if w < 1e-18 and n > lam_p * T:
            break
        s_n = math.sqrt(sigma**2 + n * delta**2 / T)
        r_n = r - lam * kappa + n * math.log(1 + kappa) / T
        total = total + w * bs_call(S, K, T, r_n, s_n)
    return total
