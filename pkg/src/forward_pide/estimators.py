"""Estimator-style wrappers around the engines.

Each wrapper is configured by constructor parameters (``get_params`` /
``set_params`` work as usual), ``fit`` takes a model or loss specification,
and ``predict`` takes an ``(n, 2)`` array of ``(T, K)`` query points.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import cdo_engine, mc_oracle
from .grid import GridSpec
from .models import ProjectionRequiredError, effective_coefficients, suggest_grid, validate_model
from .pide_engine import ModelValidationError, solve_forward, validate_surface


def _query(X) -> np.ndarray:
    X = check_array(X, ensure_min_samples=1, dtype=float)
    if X.shape[1] != 2:
        raise ValueError(f"expected (T, K) columns, got {X.shape[1]} columns")
    if np.any(X[:, 0] < 0) or np.any(X[:, 1] < 0):
        raise ValueError("T and K must be nonnegative")
    return X


def _grid(est, model) -> GridSpec:
    mats = tuple(np.atleast_1d(est.maturities))
    if est.k_min is None or est.k_max is None:
        return suggest_grid(model, mats, est.n_k, est.substeps, grading=est.grading)
    return GridSpec(est.k_min, est.k_max, est.n_k, mats, est.substeps, est.grading)


class ForwardPIDEPricer(BaseEstimator):
    """Call surface from the forward equation.

    With ``k_min``/``k_max`` unset the log-strike domain comes from
    :func:`suggest_grid`.  Models without closed-form coefficients are
    projected by simulation with ``projection_mc``.
    """

    def __init__(self, maturities=(0.25, 0.5, 1.0), n_k=400, substeps=100, k_min=None, k_max=None,
                 grading=1.0, method="auto", scheme="auto", projection_mc=None):
        self.maturities = maturities
        self.n_k = n_k
        self.substeps = substeps
        self.k_min = k_min
        self.k_max = k_max
        self.grading = grading
        self.method = method
        self.scheme = scheme
        self.projection_mc = projection_mc

    def fit(self, model, y=None):
        report = validate_model(model)
        if not report.passed:
            raise ModelValidationError(report)
        grid = _grid(self, model)
        try:
            coeffs = effective_coefficients(model, grid)
        except ProjectionRequiredError:
            if self.projection_mc is None:
                raise
            mc = self.projection_mc
            if hasattr(model, "spots"):
                coeffs = mc_oracle.project_index(model, grid, mc)
            else:
                coeffs = mc_oracle.project_effective_coefficients(model, grid, mc)
        self.grid_ = grid
        self.coefficients_ = coeffs
        self.surface_ = solve_forward(coeffs, model.spot, grid, method=self.method, scheme=self.scheme)
        self.validation_ = validate_surface(self.surface_)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "surface_")
        X = _query(X)
        return np.array([float(self.surface_.price(T, K)) for T, K in X])


class MonteCarloPricer(BaseEstimator):
    """Discounted call prices by simulation; ``predict_stderr`` gives the standard errors."""

    def __init__(self, n_paths=100_000, n_steps=100, master_seed=0, antithetic=False,
                 block_size=8192, threads=1):
        self.n_paths = n_paths
        self.n_steps = n_steps
        self.master_seed = master_seed
        self.antithetic = antithetic
        self.block_size = block_size
        self.threads = threads

    def _config(self) -> mc_oracle.MCConfig:
        return mc_oracle.MCConfig(self.n_paths, self.n_steps, self.master_seed, self.antithetic,
                                  self.block_size)

    def fit(self, model, y=None):
        self._config()
        self.model_ = model
        self._cache = {}
        return self

    def _estimate(self, X):
        check_is_fitted(self, "model_")
        X = _query(X)
        key = X.tobytes()
        if key not in self._cache:
            mats, ti = np.unique(X[:, 0], return_inverse=True)
            Ks, ki = np.unique(X[:, 1], return_inverse=True)
            res = mc_oracle.price_calls_mc(self.model_, mats, Ks, self._config(), self.threads)
            self._cache = {key: (res.mean[ti, ki], res.std_error[ti, ki])}
        return self._cache[key]

    def predict(self, X) -> np.ndarray:
        return self._estimate(X)[0]

    def predict_stderr(self, X) -> np.ndarray:
        return self._estimate(X)[1]


class MarkovianProjector(BaseEstimator):
    """Effective local volatility and jump tail from simulated paths."""

    def __init__(self, maturities=(0.5, 1.0), n_k=400, substeps=100, k_min=None, k_max=None,
                 grading=1.0, n_paths=100_000, n_steps=100, master_seed=0, n_bins=20,
                 min_count=200, step=0.05):
        self.maturities = maturities
        self.n_k = n_k
        self.substeps = substeps
        self.k_min = k_min
        self.k_max = k_max
        self.grading = grading
        self.n_paths = n_paths
        self.n_steps = n_steps
        self.master_seed = master_seed
        self.n_bins = n_bins
        self.min_count = min_count
        self.step = step

    def fit(self, model, y=None):
        grid = _grid(self, model)
        mc = mc_oracle.MCConfig(self.n_paths, self.n_steps, self.master_seed)
        opts = dict(n_bins=self.n_bins, min_count=self.min_count, step=self.step, return_regressions=True)
        if hasattr(model, "spots"):
            coeffs, regs = mc_oracle.project_index(model, grid, mc, **opts)
        else:
            coeffs, regs = mc_oracle.project_effective_coefficients(model, grid, mc, **opts)
        self.grid_ = grid
        self.spot_ = model.spot
        self.coefficients_ = coeffs
        self.regressions_ = regs
        return self

    def predict(self, X) -> np.ndarray:
        """Effective volatility at ``(t, S)`` points."""
        check_is_fitted(self, "coefficients_")
        X = _query(X)
        c = self.coefficients_
        return np.array([np.interp(np.log(max(S, 1e-300)), c.k, c.local_vol[c.row(t)]) for t, S in X])


class TrancheForwardSolver(BaseEstimator):
    """Expected tranche notionals by forward evolution of the loss distribution."""

    def __init__(self, maturities=(1.0,), n_cells=1000, cells_per_default=1, substeps=None,
                 method="uniformized"):
        self.maturities = maturities
        self.n_cells = n_cells
        self.cells_per_default = cells_per_default
        self.substeps = substeps
        self.method = method

    def fit(self, spec, y=None):
        grid = cdo_engine.LossGrid.for_spec(spec, self.n_cells, self.cells_per_default)
        T = np.atleast_1d(np.asarray(self.maturities, dtype=float))
        self.loss_grid_ = grid
        self.maturities_ = T
        self.distributions_ = cdo_engine.evolve_loss_distribution(
            spec, grid, T, substeps=self.substeps, method=self.method)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "distributions_")
        X = _query(X)
        out = np.empty(X.shape[0])
        nodes = self.loss_grid_.nodes
        for n, (T, K) in enumerate(X):
            hit = np.flatnonzero(np.isclose(self.maturities_, T, rtol=0, atol=1e-12))
            if hit.size == 0:
                raise ValueError(f"maturity {T} was not solved; fitted maturities {self.maturities_.tolist()}")
            if K > 1:
                raise ValueError("attachments must lie in [0, 1]")
            out[n] = float(self.distributions_[hit[0]] @ np.maximum(K - nodes, 0.0))
        return out
