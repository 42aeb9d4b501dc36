import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import box_dual_energy, shooting_ground_state
from spikelab.entire import (
    DecayFit,
    ExponentPair,
    RadialGroundState,
    bootstrap_exponents,
    curvature_coefficient,
    decay_rate_fit,
    energy_from_masses,
    entire_energy,
    eta,
    eta_from_moments,
    gradient_pairing,
    least_energy_check,
    moments,
    radial_integral,
    radial_moments,
    radial_ray_t_star,
    solve_entire_ground_state,
)
from spikelab.errors import InvalidExponents

# frozen output of tests/oracles.shooting_ground_state(2, 3, 3, guess=(5, 3.5, 6, 6))
SHOOTING_U0, SHOOTING_V0 = 5.03042637, 3.52082711


# ---- exponents -------------------------------------------------------------


def test_exponent_pair_arithmetic():
    ex = ExponentPair(3, 3, 3)
    assert ex.hc_holds
    assert ex.beta_star == pytest.approx(12.0)
    assert ex.alpha_star == pytest.approx(12.0)
    assert not ExponentPair(3, 3, 6).hc_holds
    assert not ExponentPair(5, 5, 5).hc_holds


def test_exponent_pair_rejects_sublinear():
    with pytest.raises(InvalidExponents):
        ExponentPair(1.0, 2.0, 3)


@given(st.floats(1.05, 8), st.floats(1.05, 8), st.integers(3, 7))
def test_hc_flag_matches_inequality(p, q, N):
    ex = ExponentPair(p, q, N)
    assert ex.hc_holds == (1 / (p + 1) + 1 / (q + 1) > (N - 2) / N)
    if ex.hc_holds and math.isfinite(ex.beta_star) and math.isfinite(ex.alpha_star):
        assert p + 1 < ex.beta_star and q + 1 < ex.alpha_star


def test_hc_violation_is_rejected_by_solver():
    with pytest.raises(InvalidExponents) as info:
        solve_entire_ground_state(ExponentPair(5, 5, 5))
    assert info.value.tag == "HCViolated"


# ---- ground state ----------------------------------------------------------


def test_sech_soliton(gs_sech):
    r = gs_sech.r
    mask = r <= 10
    err = np.abs(gs_sech.U[mask] - math.sqrt(2) / np.cosh(r[mask])).max()
    assert err < 1e-8
    assert gs_sech.residual_norm < 1e-10


def test_symmetric_components_coincide(gs_333):
    assert np.abs(gs_333.U - gs_333.V).max() < 1e-10
    assert gs_333.residual_norm < 1e-10


def test_matches_shooting_oracle(gs_233):
    assert abs(gs_233.U[0] - SHOOTING_U0) < 1e-6
    assert abs(gs_233.V[0] - SHOOTING_V0) < 1e-6


def test_shooting_oracle_reproduces_frozen_values():
    (u0, v0), mismatch = shooting_ground_state(2, 3, 3, guess=[5, 3.5, 6, 6])
    assert mismatch < 1e-8
    assert abs(u0 - SHOOTING_U0) < 1e-7 and abs(v0 - SHOOTING_V0) < 1e-7


@pytest.mark.parametrize("fixture", ["gs_233", "gs_333", "gs_1523"])
def test_ground_state_shape(fixture, request):
    gs = request.getfixturevalue(fixture)
    assert gs.residual_norm < gs.tol
    inner = gs.r < 0.9 * gs.R_max
    for f in (gs.U, gs.V):
        assert np.all(f[inner] > 0)
        assert np.all(np.diff(f[inner]) < 0)
        # even symmetry: one-sided fourth-order slope at the origin vanishes
        h = gs.h
        slope = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * h)
        assert abs(slope) < 1e-3 * f[0] / h * h**2 + 1e-6


def test_pohozaev_identities(gs_233):
    r, U, V, N = gs_233.r, gs_233.U, gs_233.V, 3
    p, q = 2, 3
    dU, dV = np.gradient(U, r), np.gradient(V, r)
    lhs = radial_integral(r, dU * dV + U * V, N)
    a = radial_integral(r, U ** (p + 1), N)
    b = radial_integral(r, V ** (q + 1), N)
    assert abs(lhs - a) / a < 1e-5
    assert abs(a - b) / a < 1e-6


def test_grid_refinement_stable(gs_233):
    fine = solve_entire_ground_state(ExponentPair(2, 3, 3), M=4000)
    for x, y in zip(moments(gs_233)[:2], moments(fine)[:2]):
        assert abs(x - y) / abs(y) < 1e-6
    assert abs(gs_233.C_inf - fine.C_inf) / fine.C_inf < 1e-6


def test_least_energy_across_initializations():
    best, levels = least_energy_check(ExponentPair(2, 3, 3))
    assert len(levels) >= 2
    assert best.C_inf == min(levels)
    assert max(levels) - min(levels) < 1e-6 * min(levels)


def test_ray_maximizer_of_ground_state_is_one(gs_233):
    assert abs(radial_ray_t_star(gs_233) - 1.0) < 1e-6


def test_round_trip_serialization(gs_233, tmp_path):
    path = tmp_path / "gs.json"
    gs_233.save(path)
    back = RadialGroundState.load(path)
    assert np.array_equal(back.U, gs_233.U) and np.array_equal(back.V, gs_233.V)
    assert back.C_inf == gs_233.C_inf


def test_parameter_guards():
    with pytest.raises(ValueError):
        solve_entire_ground_state(ExponentPair(2, 3, 3), R_max=10)
    with pytest.raises(ValueError):
        solve_entire_ground_state(ExponentPair(2, 3, 3), M=100)


# ---- moments and energy ----------------------------------------------------


def _gaussian_moments():
    r = np.linspace(0, 20, 4001)
    U = np.exp(-(r**2) / 2)
    return radial_moments(r, U, U, 1.0, 1.0, 3)


def test_gaussian_masses():
    A0, B0, M2U, M2V = _gaussian_moments()
    assert abs(A0 - math.pi**1.5) / math.pi**1.5 < 1e-8
    assert abs(M2U - 1.5 * math.pi**1.5) / (1.5 * math.pi**1.5) < 1e-8


def test_symmetric_moments(gs_333):
    A0, B0, M2U, M2V = moments(gs_333)
    assert abs(A0 - B0) < 1e-10 * A0
    assert abs(M2U - M2V) < 1e-10 * M2U


def test_energy_arithmetic(gs_333):
    assert energy_from_masses(0.0, 0.0, 2.0, 3.0) == 0.0
    A0 = moments(gs_333)[0]
    assert entire_energy(gs_333) == pytest.approx(A0 / 2, rel=1e-10)


def test_energy_matches_box_dual_functional(gs_233):
    box = box_dual_energy(gs_233.profile("U"), gs_233.profile("V"), 2, 3, 3)
    assert abs(box - gs_233.C_inf) / gs_233.C_inf < 1e-4


# ---- decay -----------------------------------------------------------------


def _synthetic_state(U, V, p=2.0, q=3.0, N=3):
    r = np.linspace(0, 20, U.size)
    return RadialGroundState(ExponentPair(p, q, N), r, U, V, 0.0, 1e-10, 0)


def test_decay_fit_exact_exponential():
    r = np.linspace(0, 20, 2001)
    st_ = _synthetic_state(3 * np.exp(-2 * r), 3 * np.exp(-2 * r))
    fit = decay_rate_fit(st_, algebraic=False)
    assert isinstance(fit, DecayFit)
    assert fit.c_U == pytest.approx(2.0, abs=1e-10)
    assert fit.prefactor_U == pytest.approx(3.0, rel=1e-10)
    assert fit.fit_residual < 1e-10


def test_sech_decay_rate_approaches_one(gs_sech):
    rates = [decay_rate_fit(gs_sech, window=w, algebraic=False).c_U
             for w in ((0.1, 0.3), (0.3, 0.5), (0.5, 0.8))]
    assert abs(rates[-1] - 1) <= abs(rates[0] - 1) + 1e-12
    assert abs(rates[-1] - 1) < 1e-3


def test_far_field_rate_of_asymmetric_state(gs_233):
    fit = decay_rate_fit(gs_233)
    for c in (fit.c_U, fit.c_V):
        assert 0 < c <= 1 + 1e-6
        assert abs(c - 1) < 0.05


# ---- second moments --------------------------------------------------------


def test_eta_symmetric(gs_333):
    M2U = moments(gs_333)[2]
    assert abs(eta(gs_333, "minus")) < 1e-9 * M2U
    assert eta(gs_333, "plus") == pytest.approx((3 - 1) / (3 + 1) * M2U, rel=1e-10)


def test_eta_rejects_unknown_convention():
    with pytest.raises(ValueError):
        eta_from_moments(1.0, 1.0, 2.0, 3.0, "sideways")


def test_curvature_coefficient_is_second_moment_of_energy_density(gs_233):
    # independent quadrature of int e(U, V) |y|^2 with a second-order gradient
    r, U, V = gs_233.r, gs_233.U, gs_233.V
    dU, dV = np.gradient(U, r), np.gradient(V, r)
    density = dU * dV + U * V - U**3 / 3 - V**4 / 4
    K = radial_integral(r, density * r**2, 3)
    assert curvature_coefficient(gs_233) == pytest.approx(K, rel=1e-4)


def test_gradient_pairing_identities(gs_233):
    grad, a, b = gradient_pairing(gs_233)
    assert grad == pytest.approx(a, rel=1e-8)
    assert a == pytest.approx(b, rel=1e-8)


# ---- bootstrap -------------------------------------------------------------


def test_bootstrap_unbounded_after_one_step():
    res = bootstrap_exponents(ExponentPair(3, 3, 3))
    assert res.tag == "Unbounded"
    assert res.sequence == [(pytest.approx(12.0), pytest.approx(12.0))]


def test_bootstrap_increasing_in_hc_case():
    res = bootstrap_exponents(ExponentPair(1.5, 1.5, 5))
    assert res.tag == "Unbounded"
    assert res.increasing
    assert len(res.sequence) <= 10


def test_bootstrap_outside_hc_runs_to_cap():
    res = bootstrap_exponents(ExponentPair(5, 5, 5))
    assert res.tag == "MaxIter"


def test_bootstrap_immediate_regularity():
    with pytest.raises(InvalidExponents) as info:
        bootstrap_exponents(ExponentPair(1.5, 2, 3))
    assert info.value.tag == "ImmediateRegularity"


SWEEP = [(p, q, N) for N in (3, 4, 5, 6) for p, q in ((1.5, 1.5), (2, 3), (3, 3), (5, 5), (1.2, 9))]


@pytest.mark.parametrize("p,q,N", SWEEP)
def test_bootstrap_monotone_iff_hc(p, q, N):
    ex = ExponentPair(p, q, N)
    try:
        res = bootstrap_exponents(ex)
    except InvalidExponents as exc:
        assert exc.tag == "ImmediateRegularity"
        assert ex.hc_holds
        return
    assert (res.tag == "Unbounded") == ex.hc_holds
    assert res.increasing == ex.hc_holds


@settings(max_examples=40, deadline=None)
@given(st.floats(1.1, 6), st.floats(1.1, 6), st.integers(3, 6))
def test_bootstrap_tag_property(p, q, N):
    ex = ExponentPair(p, q, N)
    if abs(ex.hc_margin) < 1e-3:
        return
    try:
        res = bootstrap_exponents(ex)
    except InvalidExponents:
        assert ex.hc_holds
        return
    assert (res.tag == "Unbounded") == ex.hc_holds
