import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from forward_pide.levy_tails import (
    ZERO_MEASURE,
    DivergenceError,
    ExpDoubleTailTable,
    Kou,
    Merton,
    PointMasses,
    Tabulated,
    build_tail_table,
    check_integrability,
    exp_double_tail,
    lemma1_payoff_integral,
    measure_from_dict,
)

KOU = Kou(1.0, 0.4, 3.0, 2.0)


def test_point_mass_positive_branch():
    m = PointMasses((1.0,), (2.0,))
    assert exp_double_tail(m, 0.5) == pytest.approx(2 * (math.e - math.exp(0.5)), rel=1e-14)
    assert exp_double_tail(m, 0.5) == pytest.approx(2.13912, abs=5e-6)


def test_point_mass_above_atom_is_zero():
    assert exp_double_tail(PointMasses((1.0,), (2.0,)), 1.5) == 0.0


def test_point_mass_negative_branch():
    m = PointMasses((-1.0,), (1.0,))
    assert exp_double_tail(m, -0.5) == pytest.approx(math.exp(-0.5) - math.exp(-1), rel=1e-14)
    assert exp_double_tail(m, -0.5) == pytest.approx(0.23865, abs=5e-6)


def test_kou_closed_form_value():
    expected = 0.4 * math.exp(-2 * 0.2) / 2
    assert exp_double_tail(KOU, 0.2) == pytest.approx(expected, rel=1e-14)
    assert exp_double_tail(KOU, 0.2) == pytest.approx(0.13406, abs=5e-6)


def _tail_by_quadrature(m, z):
    # psi(z) = int_z^inf e^x nu([x, inf)) dx for z > 0, int_-inf^z e^x nu((-inf, x]) dx for z < 0
    if z > 0:
        up = lambda x: integrate.quad(m.density, x, np.inf)[0]
        return integrate.quad(lambda x: math.exp(x) * up(x), z, 40, points=[z + 1, z + 3],
                              epsabs=0, epsrel=1e-11, limit=200)[0]
    low = lambda x: integrate.quad(m.density, -np.inf, x)[0]
    return integrate.quad(lambda x: math.exp(x) * low(x), -40, z, points=[z - 3, z - 1],
                          epsabs=0, epsrel=1e-11, limit=200)[0]


@pytest.mark.parametrize("z", [-1.3, -0.2, 0.15, 0.9])
@pytest.mark.parametrize("measure", [KOU, Merton(0.7, -0.1, 0.25)])
def test_closed_forms_match_integration_by_parts_form(measure, z):
    assert exp_double_tail(measure, z) == pytest.approx(_tail_by_quadrature(measure, z), rel=1e-7, abs=1e-12)


def test_zero_convention_is_right_limit():
    right = float(exp_double_tail(KOU, 1e-12))
    assert exp_double_tail(KOU, 0.0) == pytest.approx(right, rel=1e-9)
    # left limit is stored separately
    assert KOU.left_limit_at_zero() == pytest.approx(float(exp_double_tail(KOU, -1e-12)), rel=1e-9)


def test_kou_divergence_names_condition():
    with pytest.raises(DivergenceError, match="exp_tail"):
        exp_double_tail(Kou(1.0, 0.4, 0.9, 2.0), 0.3)


def test_zero_measure_table_is_zero():
    t = build_tail_table(ZERO_MEASURE, (-1.0, 1.0, 11))
    assert np.all(t.values == 0) and t.left_limit == 0


def test_kou_table_matches_pointwise():
    t = build_tail_table(KOU, (-2.0, 2.0, 401))
    np.testing.assert_array_equal(t.values, exp_double_tail(KOU, t.z))
    assert t(3.0) == 0.0 and t(-3.0) == 0.0


def test_table_interpolation_is_linear():
    t = ExpDoubleTailTable(np.array([-1.0, 0.0, 1.0]), np.array([0.2, 1.0, 0.4]), 0.6)
    assert t(0.5) == pytest.approx(0.7)
    assert t(-0.5) == pytest.approx(0.4)  # left branch interpolates to psi(0-)


def test_tabulated_kou_density_matches_closed_form():
    # a piecewise-linear density sampling Kou, with the atom-free cell around 0 refined
    u = np.concatenate((np.linspace(-12, -1e-9, 120001), np.linspace(1e-9, 12, 120001)))
    tab = Tabulated(u, KOU.density(u))
    z = np.linspace(-2, 2, 41)
    np.testing.assert_allclose(tab.tail(z), KOU.tail(z), atol=1e-6)


def test_lemma1_zero_measure():
    assert lemma1_payoff_integral(ZERO_MEASURE, 100.0, 90.0) == 0.0


def test_lemma1_single_atom():
    m = PointMasses((1.0,), (2.0,))
    lhs = lemma1_payoff_integral(m, 100.0, 165.0)
    assert lhs == pytest.approx(200 * (math.e - 1.65), rel=1e-12)
    assert lhs == pytest.approx(100 * exp_double_tail(m, math.log(1.65)), rel=1e-12)


def test_lemma1_at_the_money_fixes_convention():
    lhs = lemma1_payoff_integral(KOU, 100.0, 100.0)
    assert lhs == pytest.approx(100 * exp_double_tail(KOU, 0.0), rel=1e-10)


def test_integrability_reports():
    assert check_integrability(Kou(1.0, 0.4, 2.5, 2.0)).passed
    bad = check_integrability(Kou(1.0, 0.4, 1.5, 2.0))
    assert not bad["H"].passed and "diverges" in bad["H"].detail
    assert check_integrability(Merton(5.0, 2.0, 3.0)).passed


def test_scaling_doubles_tail():
    z = np.linspace(-2, 2, 17)
    np.testing.assert_allclose(KOU.scaled(2.0).tail(z), 2 * KOU.tail(z), rtol=1e-15)


def test_table_csv(tmp_path):
    t = build_tail_table(KOU, (-1.0, 1.0, 5))
    path = tmp_path / "t.csv"
    t.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "z,psi" and len(lines) == 6
    assert float(lines[3].split(",")[1]) == t.values[2]


def test_measure_round_trip():
    for m in (KOU, Merton(0.3, -0.1, 0.2), PointMasses((0.1, -0.2), (1.0, 2.0))):
        assert measure_from_dict(m.to_dict()) == m


kou_params = st.tuples(
    st.floats(0.0, 5.0), st.floats(0.0, 1.0), st.floats(2.05, 20.0), st.floats(0.1, 20.0))
atoms = st.lists(st.tuples(st.floats(-2.0, 2.0), st.floats(0.0, 3.0)), min_size=1, max_size=6)


@settings(max_examples=60, deadline=None)
@given(kou_params)
def test_kou_tail_monotone_and_nonnegative(p):
    m = Kou(*p)
    zn = np.sort(np.random.default_rng(1).uniform(-3, 0, 50))
    zp = np.sort(np.random.default_rng(2).uniform(1e-9, 3, 50))
    vn, vp = m.tail(zn), m.tail(zp)
    assert np.all(vn >= 0) and np.all(vp >= 0)
    assert np.all(np.diff(vn) >= -1e-15)
    assert np.all(np.diff(vp) <= 1e-15)


@settings(max_examples=60, deadline=None)
@given(atoms)
def test_point_mass_tail_monotone(a):
    m = PointMasses(tuple(s for s, _ in a), tuple(w for _, w in a))
    z = np.linspace(-3, 3, 241)
    v = m.tail(z)
    assert np.all(v >= 0)
    assert np.all(np.diff(v[z < 0]) >= -1e-13)
    assert np.all(np.diff(v[z > 0]) <= 1e-13)


def test_lemma1_integrand_rearrangement():
    from forward_pide.levy_tails import lemma1_integrand, lemma1_integrand_raw
    z = np.linspace(-3, 3, 601)
    for y, K in ((100.0, 80.0), (100.0, 100.0), (80.0, 120.0)):
        np.testing.assert_allclose(lemma1_integrand(y, K, z), lemma1_integrand_raw(y, K, z), rtol=0, atol=1e-11 * y)


@pytest.mark.parametrize("z", [-1.2, 0.9])
def test_merton_far_tail_keeps_relative_accuracy(z):
    # both cdf terms are ~1e-40 here; their difference must not cancel to noise
    m = Merton(1.0, -0.1, 0.08)
    if z < 0:
        f = lambda x: (math.exp(z) - math.exp(x)) * m.density(x)
        ref = integrate.quad(f, -np.inf, z, epsabs=0, epsrel=1e-13)[0]
    else:
        f = lambda x: (math.exp(x) - math.exp(z)) * m.density(x)
        ref = integrate.quad(f, z, np.inf, epsabs=0, epsrel=1e-13)[0]
    assert ref < 1e-20
    assert exp_double_tail(m, z) == pytest.approx(ref, rel=1e-10)
