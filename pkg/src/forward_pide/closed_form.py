"""Closed-form reference prices used as independent oracles."""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln
from scipy.stats import norm, poisson


def black_scholes_call(spot, strike, maturity, sigma, rate=0.0, total_rate=None):
    """Black-Scholes call.

    ``total_rate`` overrides ``rate * maturity`` for time-varying rates.
    """
    spot, strike, T = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (spot, strike, maturity)))
    R = np.asarray(rate, dtype=float) * T if total_rate is None else np.asarray(total_rate, dtype=float)
    disc = np.exp(-R)
    sd = np.asarray(sigma, dtype=float) * np.sqrt(T)
    intrinsic = np.maximum(spot - strike * disc, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(spot / strike) + R + 0.5 * sd**2) / sd
        price = spot * norm.cdf(d1) - strike * disc * norm.cdf(d1 - sd)
    return np.where(sd > 0, price, intrinsic)


def merton_call_series(spot, strike, maturity, sigma, rate, intensity, jump_mean, jump_std,
                       tol: float = 1e-16, max_terms: int = 200):
    """Merton jump-diffusion call as a Poisson mixture of Black-Scholes prices."""
    T = float(maturity)
    m = np.exp(jump_mean + 0.5 * jump_std**2)
    lam2 = intensity * m
    total = np.zeros_like(np.asarray(strike, dtype=float) * spot)
    if intensity == 0 or T == 0:
        return black_scholes_call(spot, strike, T, sigma, rate)
    mass = 0.0
    for n in range(max_terms):
        logw = -lam2 * T + n * np.log(lam2 * T) - gammaln(n + 1)
        w = np.exp(logw)
        sig_n = np.sqrt(sigma**2 + n * jump_std**2 / T)
        r_n = rate - intensity * (m - 1.0) + n * np.log(m) / T
        total = total + w * black_scholes_call(spot, strike, T, sig_n, r_n)
        mass += w
        if n > lam2 * T and 1.0 - mass < tol:
            break
    return total


def poisson_tranche_notional(k: int, delta: float, intensity: float, maturity: float) -> float:
    """``delta * E[(k - N_T)^+]`` for a Poisson counter ``N`` of rate ``intensity``."""
    m = np.arange(k)
    return float(delta * np.sum((k - m) * poisson.pmf(m, intensity * maturity)))
