import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from forward_pide import (
    ForwardPIDEPricer,
    MarkovianProjector,
    MonteCarloPricer,
    TrancheForwardSolver,
)
from forward_pide.cdo_engine import PortfolioLossSpec, poisson_tranche_surface
from forward_pide.levy_tails import Kou, Merton
from forward_pide.models import (
    JumpDiffusion,
    LocalVol,
    ProjectionRequiredError,
    RateCurve,
    SquareRootProcess,
    StateSurface,
    StochVolJump,
)
from forward_pide.pide_engine import ModelValidationError

from oracles import bs_call

BS = LocalVol(100.0, RateCurve((0.0,)), StateSurface.flat(0.2))
QUERY = np.array([[0.5, 90.0], [1.0, 100.0], [1.0, 110.0]])


def test_params_and_clone():
    est = ForwardPIDEPricer(n_k=128, substeps=10)
    again = clone(est).set_params(n_k=256)
    assert est.get_params()["n_k"] == 128 and again.n_k == 256


def test_pricer_black_scholes():
    est = ForwardPIDEPricer(maturities=(0.5, 1.0), n_k=400, substeps=100).fit(BS)
    ref = [float(bs_call(100.0, K, T, 0.0, 0.2)) for T, K in QUERY]
    np.testing.assert_allclose(est.predict(QUERY), ref, rtol=5e-3)
    assert est.validation_.passed


def test_pricer_rejects_failing_model():
    bad = JumpDiffusion(100.0, RateCurve((0.0,)), StateSurface.flat(0.2), Kou(1.0, 0.4, 1.5, 2.0))
    with pytest.raises(ModelValidationError, match="H'2"):
        ForwardPIDEPricer().fit(bad)


def test_pricer_needs_projection_config():
    svj = StochVolJump(100.0, RateCurve((0.0,)), SquareRootProcess(0.04, 2.0, 0.04, 0.0), Merton(0.2, -0.1, 0.1))
    with pytest.raises(ProjectionRequiredError):
        ForwardPIDEPricer(maturities=(1.0,), n_k=64, substeps=10).fit(svj)


def test_unfitted_predict():
    with pytest.raises(NotFittedError):
        ForwardPIDEPricer().predict(QUERY)


def test_query_shape_checked():
    est = ForwardPIDEPricer(maturities=(1.0,), n_k=64, substeps=10).fit(BS)
    with pytest.raises(ValueError, match="columns"):
        est.predict(np.ones((2, 3)))


def test_monte_carlo_pricer():
    est = MonteCarloPricer(n_paths=50000, n_steps=50).fit(BS)
    mean, se = est.predict(QUERY), est.predict_stderr(QUERY)
    ref = np.array([float(bs_call(100.0, K, T, 0.0, 0.2)) for T, K in QUERY])
    assert np.all(np.abs(mean - ref) <= 4 * se)


def test_projector_constant_variance():
    svj = StochVolJump(100.0, RateCurve((0.0,)), SquareRootProcess(0.04, 2.0, 0.04, 0.0), Merton(0.2, -0.1, 0.1))
    est = MarkovianProjector(maturities=(0.5, 1.0), n_k=64, substeps=10, n_paths=10000, n_steps=50).fit(svj)
    np.testing.assert_allclose(est.predict(QUERY), 0.2, rtol=1e-12)


def test_tranche_solver_poisson():
    spec = PortfolioLossSpec.constant_lgd(0.02, np.full(40, 1.5))
    est = TrancheForwardSolver(maturities=(1.0, 2.0)).fit(spec)
    K = 0.02 * np.arange(1, 6)
    X = np.column_stack((np.full(5, 2.0), K))
    closed = poisson_tranche_surface(0.02, 40, 1.5, [2.0])
    np.testing.assert_allclose(est.predict(X), closed.values[0, 1:6], rtol=1e-9)
    with pytest.raises(ValueError, match="not solved"):
        est.predict([[1.5, 0.1]])
    assert est.predict([[1.0, 0.02]])[0] == pytest.approx(0.02 * math.exp(-1.5), rel=1e-9)
