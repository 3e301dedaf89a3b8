import math

import numpy as np
import pytest

from forward_pide.grid import GridSpec
from forward_pide.levy_tails import Kou, Merton, PointMasses
from forward_pide.mc_oracle import (
    MCConfig,
    ProjectionError,
    UnsupportedModelError,
    martingale_check,
    price_calls_mc,
    project_effective_coefficients,
    project_index,
    projection_times,
    simulation_times,
)
from forward_pide.models import (
    Basket,
    BasketJumps,
    JumpDiffusion,
    LocalVol,
    PureJumpLocalLevy,
    RateCurve,
    SquareRootProcess,
    StateSurface,
    StochVolJump,
    TimeChangedLevy,
)

from oracles import bs_call

X0 = math.log(100.0)
R0 = RateCurve((0.0,))
GRID = GridSpec(X0 - 1.5, X0 + 1.5, 101, (0.5, 1.0), 10)


def test_config_invariants():
    with pytest.raises(ValueError):
        MCConfig(n_paths=99)
    with pytest.raises(ValueError):
        MCConfig(n_steps=49)
    with pytest.raises(ValueError):
        MCConfig(master_seed=2**64)
    assert sum(n for _, n in MCConfig(n_paths=20001, block_size=8192).blocks()) == 20001


def test_simulation_times_hit_every_maturity():
    t = simulation_times([0.3, 1.0], 50)
    assert t[0] == 0 and 0.3 in t and t[-1] == 1.0
    assert np.max(np.diff(t)) <= 1 / 50 + 1e-15


def test_deterministic_model_has_zero_error():
    model = LocalVol(100.0, RateCurve((0.05,)), StateSurface.flat(0.0))
    est = price_calls_mc(model, [1.0], [100.0], MCConfig(n_paths=1000))[0, 0]
    assert est.mean == pytest.approx(100 - 100 * math.exp(-0.05), rel=1e-12)
    assert est.mean == pytest.approx(4.877, abs=5e-4)
    assert est.std_error == 0.0


def test_black_scholes_within_three_errors():
    model = LocalVol(100.0, R0, StateSurface.flat(0.2))
    est = price_calls_mc(model, [1.0], [100.0], MCConfig(n_paths=1_000_000, n_steps=50))[0, 0]
    assert abs(est.mean - 7.9656) <= 3 * est.std_error
    assert est.std_error < 0.02


def test_antithetic_reduces_error_and_stays_unbiased():
    model = LocalVol(100.0, R0, StateSurface.flat(0.2))
    plain = price_calls_mc(model, [1.0], [100.0], MCConfig(n_paths=40000, n_steps=50))[0, 0]
    anti = price_calls_mc(model, [1.0], [100.0], MCConfig(n_paths=40000, n_steps=50, antithetic=True))[0, 0]
    ref = float(bs_call(100.0, 100.0, 1.0, 0.0, 0.2))
    assert anti.std_error < plain.std_error
    assert abs(anti.mean - ref) <= 3 * anti.std_error


def test_results_independent_of_threads():
    model = JumpDiffusion(100.0, R0, StateSurface.flat(0.15), Kou(0.5, 0.4, 4.0, 3.0))
    mc = MCConfig(n_paths=9000, n_steps=50, block_size=1000, master_seed=11)
    a = price_calls_mc(model, [0.5, 1.0], [90.0, 100.0, 110.0], mc, threads=1)
    b = price_calls_mc(model, [0.5, 1.0], [90.0, 100.0, 110.0], mc, threads=4)
    assert a.mean.tobytes() == b.mean.tobytes()
    assert a.std_error.tobytes() == b.std_error.tobytes()


def test_seed_changes_estimate():
    model = LocalVol(100.0, R0, StateSurface.flat(0.2))
    a = price_calls_mc(model, [1.0], [100.0], MCConfig(n_paths=1000, master_seed=1))
    b = price_calls_mc(model, [1.0], [100.0], MCConfig(n_paths=1000, master_seed=2))
    assert a.mean[0, 0] != b.mean[0, 0]


SR = SquareRootProcess(0.04, 2.0, 0.04, 0.3, -0.5)
KOU = Kou(0.5, 0.4, 4.0, 3.0)


def _martingale_models():
    r = RateCurve((0.01, 0.04), (0.5,))
    return [
        LocalVol(100.0, r, StateSurface.table([0.0], [4.0, 5.0], [[0.3, 0.15]])),
        JumpDiffusion(100.0, r, StateSurface.flat(0.15), KOU),
        PureJumpLocalLevy(100.0, r, StateSurface.table([0.0], [4.0, 5.0], [[1.5, 0.5]]), KOU),
        TimeChangedLevy(100.0, r, TimeChangedLevy.martingale_drift(0.04, KOU), 0.04, KOU, SR),
        StochVolJump(100.0, r, SR, Merton(0.5, -0.1, 0.1)),
        Basket((100.0, 100.0), r, (0.2, SR), ((1.0, 0.3), (0.3, 1.0)), (0.5, 0.5),
               BasketJumps(((-0.1, -0.05),), (0.4,), ((1, KOU),))),
    ]


@pytest.mark.parametrize("model", _martingale_models(), ids=lambda m: m.kind)
def test_martingale(model):
    res = martingale_check(model, [0.5, 1.0], MCConfig(n_paths=50000, n_steps=50))
    assert np.all(np.abs(res.mean - model.spot) <= 3 * res.std_error)


def test_infinite_activity_rejected():
    class Unbounded(Kou):
        @property
        def total_intensity(self):
            return math.inf

    model = JumpDiffusion(100.0, R0, StateSurface.flat(0.2), Unbounded(1.0, 0.5, 3.0, 3.0))
    with pytest.raises(UnsupportedModelError, match="infinite activity"):
        price_calls_mc(model, [1.0], [100.0], MCConfig(n_paths=100))


def test_nonpositive_spot_rejected():
    with pytest.raises(ValueError, match="spot"):
        price_calls_mc(LocalVol(-1.0, R0, StateSurface.flat(0.2)), [1.0], [1.0], MCConfig(n_paths=100))


def test_estimate_csv(tmp_path):
    res = price_calls_mc(LocalVol(100.0, R0, StateSurface.flat(0.2)), [1.0], [90.0, 110.0], MCConfig(n_paths=200))
    res.to_csv(tmp_path / "mc.csv")
    lines = (tmp_path / "mc.csv").read_text().splitlines()
    assert lines[0] == "T,K,mean,stderr" and len(lines) == 3
    assert float(lines[2].split(",")[2]) == res.mean[0, 1]


# --- projection -------------------------------------------------------------

PROJ_MC = MCConfig(n_paths=20000, n_steps=50)


def test_projection_rows():
    t = projection_times(GRID)
    assert t[0] == 0 and t[-1] < 1.0
    np.testing.assert_allclose(np.diff(t), 0.05)


def test_constant_variance_projects_flat():
    frozen = SquareRootProcess(0.04, 2.0, 0.04, 0.0)
    model = StochVolJump(100.0, R0, frozen, Merton(0.3, -0.1, 0.1))
    coeffs, regs = project_effective_coefficients(model, GRID, PROJ_MC, return_regressions=True)
    np.testing.assert_allclose(coeffs.local_vol, 0.2, rtol=1e-12)
    # raw-moment variance of a constant is zero up to rounding
    assert all(np.all(r.std_errors["var"] < 1e-9) for r in regs)


def test_deterministic_clock_projects_constant_activity():
    clock = SquareRootProcess(2.0, 1.0, 2.0, 0.0)
    model = TimeChangedLevy(100.0, R0, TimeChangedLevy.martingale_drift(0.04, KOU), 0.04, KOU, clock)
    coeffs = project_effective_coefficients(model, GRID, PROJ_MC)
    for sl in coeffs.jump_tail.slices:
        np.testing.assert_allclose(sl.scales, 2.0, rtol=1e-12)
    np.testing.assert_allclose(coeffs.local_vol, math.sqrt(2.0 * 0.04), rtol=1e-12)


def test_independent_variance_projection_averages_to_mean_variance():
    # S still depends on the integrated variance, so bins are not flat; the count-weighted
    # average of the bin means must equal E[v_t] = theta + (v0 - theta) e^{-kappa t}
    sv = SquareRootProcess(0.09, 2.0, 0.04, 0.3, 0.0)
    model = StochVolJump(100.0, R0, sv, Merton(0.1, 0.0, 0.05))
    _, regs = project_effective_coefficients(model, GRID, MCConfig(n_paths=100000, n_steps=50),
                                             return_regressions=True)
    for r in regs:
        m, se = r.means["var"], r.std_errors["var"]
        w = r.counts / r.counts.sum()
        pooled = float(np.sum(w * m))
        pooled_se = float(np.sqrt(np.sum((w * se) ** 2)))
        assert abs(pooled - (0.04 + 0.05 * math.exp(-2.0 * r.time))) <= 4 * pooled_se + 2e-4
        if r.time >= 0.5:
            mid = m.size // 2
            assert m[0] > m[mid] + 3 * se[0] and m[-1] > m[mid] + 3 * se[-1]


def test_sparse_bins_raise():
    model = StochVolJump(100.0, R0, SR, Merton(0.3, -0.1, 0.1))
    with pytest.raises(ProjectionError, match="bins"):
        project_effective_coefficients(model, GRID, MCConfig(n_paths=500, n_steps=50), min_count=200)


def test_local_only_models_need_no_projection():
    with pytest.raises(ValueError):
        project_effective_coefficients(LocalVol(100.0, R0, StateSurface.flat(0.2)), GRID, PROJ_MC)


def test_single_asset_basket_matches_direct_projection():
    sv = SquareRootProcess(0.04, 2.0, 0.04, 0.3, -0.5)
    basket = Basket((100.0,), R0, (sv,), ((1.0,),), (1.0,))
    single = StochVolJump(100.0, R0, sv, PointMasses((), ()))
    a = project_index(basket, GRID, PROJ_MC)
    b = project_effective_coefficients(single, GRID, PROJ_MC)
    np.testing.assert_allclose(a.local_vol, b.local_vol, rtol=1e-12)


def test_perfectly_correlated_basket_flat_vol():
    basket = Basket((100.0, 100.0), R0, (0.2, 0.2), ((1.0, 1.0), (1.0, 1.0)), (0.5, 0.5))
    coeffs = project_index(basket, GRID, PROJ_MC)
    np.testing.assert_allclose(coeffs.local_vol, 0.2, rtol=1e-9)
    assert coeffs.jump_tail is None


def test_common_atom_index_tail():
    basket = Basket((100.0, 100.0), R0, (0.2, 0.2), ((1.0, 0.4), (0.4, 1.0)), (0.5, 0.5),
                    BasketJumps(((-0.1, -0.1),), (0.5,)))
    coeffs = project_index(basket, GRID, PROJ_MC)
    atom = PointMasses((-0.1,), (0.5,))
    offsets = GRID.offsets()
    for sl in coeffs.jump_tail.slices:
        for table in sl.tables:
            np.testing.assert_allclose(table.values, atom.tail(offsets), rtol=1e-9, atol=1e-14)
