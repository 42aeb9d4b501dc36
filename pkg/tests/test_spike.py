import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikelab.dual import finalize_solution
from spikelab.entire import ExponentPair
from spikelab.errors import InsufficientSpan
from spikelab.geometry import ConformalMetric
from spikelab.spike import (
    ContinuationSeries,
    concentration_check,
    decay_check,
    expansion_fit,
    ray_level_deviation,
    rescaled_profile,
    run_continuation,
    summarize,
    track_maxima,
)

L = 10.0
EX23 = ExponentPair(2, 3, 3)


def flat_for(eps):
    n = int(round(2 * L / eps))
    return ConformalMetric(3, L, (n + n % 2,) * 3)


def periodic_distance(metric, x0):
    d = [np.minimum(abs(x - c), L - abs(x - c)) for x, c in zip(metric.nodes(), x0)]
    return np.sqrt(sum(di**2 for di in d))


@pytest.fixture(scope="module")
def flat_series(gs_233):
    eps = [L / k for k in (10, 14, 20, 28, 40)]
    return run_continuation(None, EX23, eps, seed_center=[0, 0, 0], ground_state=gs_233,
                            metric_for_eps=flat_for, min_nodes=1, eps_ratio=1.0, label="flat")


@pytest.fixture(scope="module")
def symmetric_series(gs_333):
    m = ConformalMetric(3, L, (32,) * 3)
    return run_continuation(m, ExponentPair(3, 3, 3), [L / 8, L / 10, L / 12], seed_center=[0, 0, 0],
                            ground_state=gs_333, min_nodes=1, eps_ratio=1.0)


# ---- continuation --------------------------------------------------------------


def test_flat_series_converges_to_limit(flat_series, gs_233):
    assert flat_series.failure is None
    assert len(flat_series.entries) == 5
    dev = flat_series.scaled_energies() / gs_233.C_inf - 1
    assert np.all(np.abs(dev) < 0.02)
    fit = expansion_fit(flat_series, C_inf=gs_233.C_inf)
    assert abs(fit.C2) * fit.eps_max**2 <= 0.05 * gs_233.C_inf


def test_limsup_liminf_certificates(flat_series, gs_233):
    dev = np.abs(flat_series.scaled_energies() - gs_233.C_inf)
    assert dev[-1] < 0.02 * gs_233.C_inf
    assert dev[-1] <= dev[0]


def test_flat_entries_are_certified(flat_series):
    for e in flat_series.entries:
        assert e.duality["passed"]
        assert e.sup_u >= 1.0
        assert max(e.residuals) < 1e-9


def test_sup_norms_bounded(flat_series):
    sups = np.array([max(e.sup_u, e.sup_v) for e in flat_series.entries])
    assert sups.max() <= 1.25 * sups.min()


def test_decay_rate_on_flat_series(flat_series, gs_233):
    e = flat_series.entries[-1]  # eps = L/40
    assert e.theta_u is not None
    assert abs(e.theta_u - gs_233.decay.c_U) < 0.15
    assert abs(e.theta_v - gs_233.decay.c_V) < 0.15
    assert e.decay_residual < 0.15


def test_profile_on_flat_series(flat_series):
    e = flat_series.entries[-1]
    assert e.profile is not None
    assert max(e.profile["deviation_u"], e.profile["deviation_v"]) < 0.05


def test_symmetric_run_has_coincident_maxima(symmetric_series):
    for e in symmetric_series.entries:
        assert e.p_eps == e.q_eps
    assert all(r == 0.0 for _, r in track_maxima(symmetric_series))


def test_rerun_is_bitwise_identical(symmetric_series, gs_333, tmp_path):
    m = ConformalMetric(3, L, (32,) * 3)
    again = run_continuation(m, ExponentPair(3, 3, 3), [L / 8, L / 10, L / 12], seed_center=[0, 0, 0],
                             ground_state=gs_333, min_nodes=1, eps_ratio=1.0)
    assert [e.energy_J for e in again.entries] == [e.energy_J for e in symmetric_series.entries]
    path = tmp_path / "series.json"
    symmetric_series.save(path)
    back = ContinuationSeries.load(path)
    assert [e.energy_J for e in back.entries] == [e.energy_J for e in symmetric_series.entries]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    symmetric_series.write_csv(a)
    back.write_csv(b)
    assert a.read_bytes() == b.read_bytes()


def test_eps_must_decrease(gs_233):
    with pytest.raises(ValueError):
        run_continuation(ConformalMetric(3, L, (16,) * 3), EX23, [0.5, 0.7], ground_state=gs_233)


# ---- planted fields --------------------------------------------------------------


def test_planted_maxima_offset(gs_233):
    m = ConformalMetric(3, L, (64,) * 3)
    eps = 0.5
    x0 = np.array([3.1, 4.2, 5.3])
    u = 2.0 * np.exp(-periodic_distance(m, x0) ** 2)
    v = 2.0 * np.exp(-periodic_distance(m, x0 + [2 * eps, 0, 0]) ** 2)
    sol = finalize_solution(m, eps, EX23, u, v)
    e = summarize(sol, gs_233, x0, profile=False, decay=False)
    h = L / 64
    assert abs(e.dist_over_eps - 2.0) < 0.2 * h / eps


def test_planted_profile_recovered(gs_233):
    # six nodes per eps: trigonometric interpolation is then accurate to ~1e-7
    m = ConformalMetric(3, L, (96,) * 3)
    eps = 0.6
    x0 = np.array([5.0, 5.0, 5.0])
    s = periodic_distance(m, x0) / eps
    u = gs_233.profile("U")(np.minimum(s, gs_233.R_max))
    v = gs_233.profile("V")(np.minimum(s, gs_233.R_max))
    sol = finalize_solution(m, eps, EX23, u, v)
    rep = rescaled_profile(sol, gs_233, z_max=5.0)
    assert max(rep.deviation_u, rep.deviation_v) < 1e-6


def test_planted_exponential_decay():
    m = ConformalMetric(3, L, (48,) * 3)
    eps = 0.4
    x0 = m.node_coords((24, 24, 24))
    f = np.exp(-periodic_distance(m, x0) / eps)
    sol = finalize_solution(m, eps, EX23, f, f)
    rep = decay_check(sol, center=x0, algebraic=False)
    assert rep.theta_u == pytest.approx(1.0, abs=1e-8)
    assert rep.residual_u < 1e-8


# ---- expansion fit -----------------------------------------------------------------


def test_expansion_fit_exact_quadratic():
    eps = np.array([0.4, 0.3, 0.2, 0.1])
    fit = expansion_fit(eps=eps, energies=eps**3 * (2 + 5 * eps**2), N=3, C_inf=2.0)
    assert fit.C0 == pytest.approx(2.0, abs=1e-10)
    assert fit.C2 == pytest.approx(5.0, abs=1e-10)
    assert fit.model_ok


def test_expansion_fit_requires_span():
    with pytest.raises(InsufficientSpan):
        expansion_fit(eps=[0.4, 0.3, 0.2], energies=[1, 1, 1], N=3)
    with pytest.raises(InsufficientSpan):
        expansion_fit(eps=[0.4, 0.3, 0.2, 0.15], energies=[1, 1, 1, 1], N=3)


def test_expansion_fit_convention_selection(gs_233):
    from spikelab.spike import curvature_predictions

    preds = curvature_predictions(gs_233, 1.0)
    eps = np.array([0.5, 0.35, 0.25, 0.125])
    for key in ("plus", "minus"):
        E = eps**3 * (gs_233.C_inf + preds[key] * eps**2)
        fit = expansion_fit(eps=eps, energies=E, N=3, ground_state=gs_233, S0=1.0)
        assert fit.matched_convention == key
    E = eps**3 * (gs_233.C_inf + 10 * preds["full"] * eps**2)
    assert expansion_fit(eps=eps, energies=E, N=3, ground_state=gs_233, S0=1.0).matched_convention == "Unmatched"


@settings(max_examples=30)
@given(st.floats(-2, 2), st.floats(1.2, 4))
def test_ray_level_deviation_fourth_order(a, p):
    d1 = ray_level_deviation(p, a, 0.02)
    d2 = ray_level_deviation(p, a, 0.01)
    if abs(d2) > 1e-14:
        assert 14 < d1 / d2 < 18


# ---- concentration --------------------------------------------------------------------


def test_flat_centers_equivalent(gs_233):
    m = ConformalMetric(3, L, (40,) * 3)
    eps = [L / 10, L / 14, L / 20]
    a = run_continuation(m, EX23, eps, seed_center=[0, 0, 0], ground_state=gs_233, min_nodes=1,
                         eps_ratio=1.0, profile=False, decay=False)
    b = run_continuation(m, EX23, eps, seed_center=m.node_coords((20, 20, 20)), ground_state=gs_233,
                         min_nodes=1, eps_ratio=1.0, profile=False, decay=False)
    for x, y in zip(a.entries, b.entries):
        assert abs(x.energy_J - y.energy_J) < 1e-6 * abs(x.energy_J)


def test_concentration_report_on_bump(gs_233):
    def bump_for(e):
        n = int(round(2 * L / e))
        return ConformalMetric(3, L, (n,) * 3, "bump", {"amplitude": 0.1, "center": [0.0] * 3,
                                                         "sharpness": 0.1})

    eps = [L / 10, L / 14, L / 20]
    top = run_continuation(None, EX23, eps, seed_center=[0, 0, 0], ground_state=gs_233,
                           metric_for_eps=bump_for, min_nodes=1, eps_ratio=1.0, profile=False)
    ctrl = run_continuation(None, EX23, eps, seed_center=[L / 2] * 3, ground_state=gs_233,
                            metric_for_eps=bump_for, min_nodes=1, eps_ratio=1.0, profile=False)
    rep = concentration_check(top, ctrl, bump_for(eps[-1]))
    assert rep.energy_ordering
    assert rep.S_ok
    assert rep.distance_nonincreasing
    d = [r for _, r in track_maxima(top)]
    assert d[-1] <= d[0]
