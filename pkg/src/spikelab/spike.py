"""Concentration experiments built on the perturbed solver.

An eps-series solves the eps-problem for decreasing eps, tracks the spike
maxima, checks profile convergence and far-field decay, and fits the energy
expansion c_eps / eps^N = C0 + C2 eps^2.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.ndimage import map_coordinates

from .dual import (
    check_resolution,
    distance_from,
    duality_check,
    finalize_solution,
    newton_solve,
    ray_profile,
    transplant,
)
from .entire import curvature_coefficient, eta
from .errors import AnnulusEmpty, InsufficientSpan, NonConvergence, PositivityLost, SpikeLabError
from .geometry import geodesic_distance, minimal_image, scalar_curvature, trig_line

SERIES_SCHEMA = "spikelab.series/1"
FIT_SCHEMA = "spikelab.expansion_fit/1"


# --------------------------------------------------------------------------
# profile and decay diagnostics


@dataclass
class ProfileReport:
    z: np.ndarray
    deviation_u: float
    deviation_v: float
    center_ratio_u: float
    center_ratio_v: float
    max_abs_u: float
    max_abs_v: float

    def to_dict(self):
        return {"deviation_u": self.deviation_u, "deviation_v": self.deviation_v,
                "center_ratio_u": self.center_ratio_u, "center_ratio_v": self.center_ratio_v,
                "max_abs_u": self.max_abs_u, "max_abs_v": self.max_abs_v}


def _ray_metric_length(metric, point, axis, offsets, order=8):
    """Metric length of the coordinate segment from point to point + s e_axis."""
    s = np.asarray(offsets, dtype=float)
    if metric.kind == "flat":
        return np.abs(s)
    nodes, weights = np.polynomial.legendre.leggauss(order)
    acc = np.zeros_like(s)
    for t, w in zip(0.5 * (nodes + 1.0), 0.5 * weights):
        pts = np.repeat(np.asarray(point, dtype=float)[None], len(s), axis=0)
        pts[:, axis] += t * s
        acc += w * np.exp(metric.psi(pts))
    return np.abs(s) * acc


def rescaled_profile(solution, ground_state, z_max=8.0, n_samples=161, min_nodes=8):
    """Compare u(p + eps z e_i), v(p + eps z e_i) with U, V along the 2N coordinate rays.

    Both components are sampled around the maximum p of u by trigonometric
    interpolation. The radial argument of U, V is the metric length of the
    ray segment over eps. Deviations are reported relative to U(0), V(0).
    """
    metric, eps = solution.metric, solution.eps
    check_resolution(metric, eps, min_nodes)
    z = np.linspace(-z_max, z_max, n_samples)
    p = np.asarray(solution.p_eps, dtype=float)
    Uf = ground_state.profile("U")
    Vf = ground_state.profile("V")
    U0, V0 = float(ground_state.U[0]), float(ground_state.V[0])
    cu = sfft.fftn(solution.u) / solution.u.size
    cv = sfft.fftn(solution.v) / solution.v.size
    dev_u = dev_v = abs_u = abs_v = 0.0
    for a in range(metric.N):
        r = _ray_metric_length(metric, p, a, eps * z) / eps
        us = trig_line(solution.u, metric.L, p, a, eps * z, coeffs=cu)
        vs = trig_line(solution.v, metric.L, p, a, eps * z, coeffs=cv)
        du = np.abs(us - Uf(r))
        dv = np.abs(vs - Vf(r))
        abs_u, abs_v = max(abs_u, du.max()), max(abs_v, dv.max())
        dev_u, dev_v = max(dev_u, du.max() / U0), max(dev_v, dv.max() / V0)
    u_c = trig_line(solution.u, metric.L, p, 0, [0.0], coeffs=cu)[0]
    v_c = trig_line(solution.v, metric.L, p, 0, [0.0], coeffs=cv)[0]
    return ProfileReport(z, float(dev_u), float(dev_v), float(u_c / U0), float(v_c / V0),
                         float(abs_u), float(abs_v))


@dataclass
class DecayReport:
    theta_u: float
    theta_v: float
    C_u: float
    C_v: float
    residual_u: float
    residual_v: float
    n_points: int

    @property
    def passed(self):
        return self.theta_u > 0 and self.theta_v > 0 and max(self.residual_u, self.residual_v) < 0.15

    def to_dict(self):
        return {**asdict(self), "passed": self.passed}


def _decay_fit(field_values, d_over_eps, N, algebraic):
    y = np.log(field_values)
    if algebraic:
        y = y + 0.5 * (N - 1) * np.log(d_over_eps)
    slope, icpt = np.polyfit(d_over_eps, y, 1)
    resid = float(np.max(np.abs(icpt + slope * d_over_eps - y)))
    return -float(slope), float(math.exp(icpt)), resid


def decay_check(solution, R=None, center=None, algebraic=True, inner=3.0, noise_factor=100.0):
    """Fit log u against d(., p_eps)/eps on the annulus 3 eps <= d <= min(R/2, L/4).

    Nodes whose value does not clear a noise floor (``noise_factor`` times
    the largest negative excursion of the field, or 1e-13 of its max) are
    dropped before the fit. With ``algebraic`` the far-field factor
    (d/eps)^{-(N-1)/2} is divided out first.
    """
    metric, eps = solution.metric, solution.eps
    R = 0.45 * metric.L if R is None else R
    center = solution.p_eps if center is None else center
    d = distance_from(metric, center, "segment")
    outer = min(0.5 * R, 0.25 * metric.L)
    ring = (d >= inner * eps) & (d <= outer)
    out = []
    n_used = 0
    for f in (solution.u, solution.v):
        floor = max(noise_factor * max(-f.min(), 0.0), 1e-13 * f.max())
        mask = ring & (f > floor)
        if np.count_nonzero(mask) < 3:
            raise AnnulusEmpty(f"fewer than 3 usable nodes in the decay annulus at eps={eps:.4g}")
        n_used = max(n_used, int(np.count_nonzero(mask)))
        out.append(_decay_fit(f[mask], d[mask] / eps, metric.N, algebraic))
    (tu, cu, ru), (tv, cv, rv) = out
    return DecayReport(tu, tv, cu, cv, ru, rv, n_used)


# --------------------------------------------------------------------------
# continuation series


@dataclass
class SeriesEntry:
    eps: float
    energy_J: float
    energy_I: float
    sup_u: float
    sup_v: float
    min_u: float
    min_v: float
    p_eps: list
    q_eps: list
    dist_over_eps: float
    S_at_p_eps: float
    dist_to_seed: float
    theta_u: float | None
    theta_v: float | None
    decay_residual: float | None
    residuals: list
    newton_iterations: int
    residual_history: list
    duality: dict
    ray_t_star: float | None
    grid_shape: list
    spacing: float
    profile: dict | None = None


@dataclass
class ContinuationSeries:
    metric_spec: dict
    exponents: object
    seed_center: list
    entries: list = field(default_factory=list)
    failure: dict | None = None
    label: str = ""
    C_inf: float | None = None

    @property
    def N(self):
        return self.exponents.N

    def eps(self):
        return np.array([e.eps for e in self.entries])

    def scaled_energies(self):
        return np.array([e.energy_J / e.eps**self.N for e in self.entries])

    def to_dict(self):
        return {
            "schema": SERIES_SCHEMA,
            "label": self.label,
            "exponents": self.exponents.to_dict(),
            "metric": self.metric_spec,
            "seed_center": [float(c) for c in self.seed_center],
            "C_inf": self.C_inf,
            "entries": [asdict(e) for e in self.entries],
            "failure": self.failure,
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def from_dict(cls, d):
        from .entire import ExponentPair

        e = d["exponents"]
        s = cls(d["metric"], ExponentPair(e["p"], e["q"], e["N"]), d["seed_center"],
                [SeriesEntry(**x) for x in d["entries"]], d.get("failure"), d.get("label", ""),
                d.get("C_inf"))
        return s

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def write_csv(self, path, header_comment=None):
        """Per-entry table: eps, energies, sup-norms, maxima, distances, curvature, decay rates.

        ``header_comment`` is written first as a ``#`` line.
        """
        N = self.N
        header = (["eps", "energy_J", "energy_I", "sup_u", "sup_v"]
                  + [f"p_eps_{i}" for i in range(N)] + [f"q_eps_{i}" for i in range(N)]
                  + ["dist_over_eps", "S_at_p_eps", "theta_u", "theta_v"])
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(header)
            for e in self.entries:
                w.writerow(["" if x is None else repr(x) for x in [e.eps, e.energy_J, e.energy_I, e.sup_u, e.sup_v,
                                              *e.p_eps, *e.q_eps, e.dist_over_eps, e.S_at_p_eps,
                                              e.theta_u, e.theta_v]])


def metric_spec(metric):
    return {"N": metric.N, "L": metric.L, "grid": list(metric.grid_shape), "kind": metric.kind,
            "params": metric.params}


def _rescale_about(field_values, metric, center, factor):
    """f(c + (x - c) * factor) by periodic cubic interpolation."""
    h = np.array(metric.spacing)
    X = metric.nodes()
    coords = [((c + minimal_image(x - c, metric.L) * factor) / hh) for x, c, hh in zip(X, center, h)]
    return map_coordinates(field_values, coords, order=3, mode="grid-wrap")


def run_continuation(metric, exponents, eps_list, seed_center=None, ground_state=None,
                     metric_for_eps=None, R=None, tol=1e-9, min_nodes=8, eps_ratio=10.0,
                     profile=True, decay=True, log=None, label="", **newton_kw):
    """Solve the eps-problem along a decreasing eps list with warm starts.

    Parameters
    ----------
    metric : ConformalMetric
        Metric for every entry unless ``metric_for_eps`` is given.
    metric_for_eps : callable, optional
        eps -> ConformalMetric, for series that refine the grid with eps.
    seed_center : array_like, optional
        First transplant center; defaults to the grid argmax of S.

    The first entry, and any entry whose grid differs from the previous one,
    starts from the transplanted ground state scaled along its dual ray,
    centered at the previous spike. Later entries on the same grid rescale
    the previous solution about its spike. The series stops at the first
    solver failure and keeps the converged entries.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    if ground_state is None:
        raise ValueError("run_continuation needs the whole-space ground state")
    if metric is None:
        metric = metric_for_eps(eps_list[0])
    if seed_center is None:
        m0 = metric_for_eps(eps_list[0]) if metric_for_eps else metric
        seed_center = m0.node_coords(m0.max_curvature_node())
    seed_center = np.asarray(seed_center, dtype=float)
    series = ContinuationSeries(metric_spec(metric), exponents, seed_center.tolist(), label=label,
                                C_inf=ground_state.C_inf)
    prev = None
    center = seed_center
    p, q = exponents.p, exponents.q
    for eps in eps_list:
        m = metric_for_eps(eps) if metric_for_eps else metric
        try:
            if prev is not None and prev.metric.grid_shape == m.grid_shape and prev.metric is m:
                # u_new(x) ~ u_prev(p + (x - p) eps_prev / eps)
                u0 = _rescale_about(prev.u, m, prev.p_eps, prev.eps / eps)
                v0 = _rescale_about(prev.v, m, prev.p_eps, prev.eps / eps)
            else:
                Rc = 0.45 * m.L if R is None else R
                U, V = transplant(ground_state, m, center, eps, Rc, min_nodes=min_nodes,
                                  eps_ratio=eps_ratio)
                ray = ray_profile((U**p, V**q), m, eps, exponents=exponents)
                u0, v0 = ray.t_star ** (1.0 / p) * U, ray.t_star ** (1.0 / q) * V
            u, v, hist, its = newton_solve(m, eps, exponents, u0, v0, tol=tol, **newton_kw)
        except (NonConvergence, PositivityLost, SpikeLabError) as exc:
            series.failure = {"eps": eps, "error": type(exc).__name__, "message": str(exc)}
            if log:
                log(f"series {label}: eps={eps:.5g} failed: {exc}")
            break
        sol = finalize_solution(m, eps, exponents, u, v, hist, its)
        series.entries.append(summarize(sol, ground_state, seed_center, R=R, profile=profile,
                                        decay=decay, min_nodes=min_nodes))
        if log:
            e = series.entries[-1]
            log(f"series {label}: eps={eps:.5g} grid={m.grid_shape[0]} J/eps^N={e.energy_J / eps**m.N:.10g} "
                f"newton={its} residual={max(e.residuals):.2e}")
        prev = sol
        center = sol.p_eps
    return series


def summarize(sol, ground_state, seed_center, R=None, profile=True, decay=True, min_nodes=8):
    m = sol.metric
    dual = duality_check(sol)
    d_pq = geodesic_distance(m, sol.p_eps, sol.q_eps)
    theta_u = theta_v = dres = None
    if decay:
        try:
            rep = decay_check(sol, R=R)
            theta_u, theta_v, dres = rep.theta_u, rep.theta_v, max(rep.residual_u, rep.residual_v)
        except AnnulusEmpty:
            pass
    prof = None
    if profile:
        try:
            prof = rescaled_profile(sol, ground_state, min_nodes=min_nodes).to_dict()
        except SpikeLabError:
            prof = None
    return SeriesEntry(
        eps=sol.eps, energy_J=sol.energy_J, energy_I=sol.energy_I,
        sup_u=sol.sup_u, sup_v=sol.sup_v, min_u=float(sol.u.min()), min_v=float(sol.v.min()),
        p_eps=[float(c) for c in sol.p_eps], q_eps=[float(c) for c in sol.q_eps],
        dist_over_eps=float(d_pq / sol.eps),
        S_at_p_eps=float(scalar_curvature(m, np.asarray(sol.p_eps))),
        dist_to_seed=float(geodesic_distance(m, sol.p_eps, seed_center)),
        theta_u=theta_u, theta_v=theta_v, decay_residual=dres,
        residuals=list(sol.residuals), newton_iterations=sol.newton_iterations,
        residual_history=list(sol.residual_history), duality=dual.to_dict(),
        ray_t_star=sol.ray_t_star, grid_shape=list(m.grid_shape), spacing=float(max(m.spacing)),
        profile=prof,
    )


def track_maxima(series):
    """[(eps, d_g(p_eps, q_eps) / eps)] for each entry."""
    return [(e.eps, e.dist_over_eps) for e in series.entries]


# --------------------------------------------------------------------------
# energy expansion


@dataclass
class ExpansionFit:
    C0: float
    C2: float
    covariance: list
    max_residual: float
    eps_max: float
    n_points: int
    predicted_C0: float
    predicted_C2: dict
    matched_convention: str
    full_coefficient_match: bool | None = None
    tolerance: float = 0.15

    @property
    def C0_relative_error(self):
        return abs(self.C0 - self.predicted_C0) / abs(self.predicted_C0) if self.predicted_C0 else None

    @property
    def model_ok(self):
        return self.max_residual < 0.05 * abs(self.C2) * self.eps_max**2

    def relative_C2_error(self, key):
        pred = self.predicted_C2.get(key)
        if pred is None or pred == 0:
            return None
        return abs(self.C2 - pred) / abs(pred)

    def to_dict(self):
        return {"schema": FIT_SCHEMA, **asdict(self), "C0_relative_error": self.C0_relative_error,
                "model_ok": self.model_ok,
                "relative_C2_error": {k: self.relative_C2_error(k) for k in self.predicted_C2}}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def curvature_predictions(ground_state, S0):
    """Predicted C2 = -S(p0) K / (6N) for K = eta(+), eta(-) and the full weight."""
    N = ground_state.exponents.N
    return {
        "plus": -S0 * eta(ground_state, "plus") / (6.0 * N),
        "minus": -S0 * eta(ground_state, "minus") / (6.0 * N),
        "full": -S0 * curvature_coefficient(ground_state) / (6.0 * N),
    }


def expansion_fit(series=None, ground_state=None, S0=None, eps=None, energies=None, N=None,
                  tolerance=0.15, C_inf=None):
    """Least-squares fit of c_eps / eps^N = C0 + C2 eps^2.

    Accepts a ContinuationSeries or raw arrays (eps, energies, N). The
    fitted C2 is compared with -S(p0) eta / (6N) under both sign conventions
    of eta; ``matched_convention`` is the unique convention within
    ``tolerance``, else ``Unmatched`` (or ``Ambiguous`` if both match). The
    full second-moment weight of the limit problem is compared as well and
    reported in ``full_coefficient_match``.
    """
    if series is not None:
        eps = series.eps()
        energies = np.array([e.energy_J for e in series.entries])
        N = series.N
    eps = np.asarray(eps, dtype=float)
    energies = np.asarray(energies, dtype=float)
    if len(eps) < 4:
        raise InsufficientSpan(f"need at least 4 eps values, got {len(eps)}")
    if eps.max() / eps.min() < 4.0 - 1e-12:
        raise InsufficientSpan(f"eps span {eps.max() / eps.min():.3g} is below 4")
    y = energies / eps**N
    X = np.column_stack([np.ones_like(eps), eps**2])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = max(len(eps) - 2, 1)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(X.T @ X)
    preds = {} if ground_state is None or S0 is None else curvature_predictions(ground_state, S0)
    if C_inf is None:
        C_inf = ground_state.C_inf if ground_state is not None else float("nan")
    C2 = float(coef[1])

    def within(pred):
        if pred == 0.0:
            return False
        return abs(C2 - pred) <= tolerance * abs(pred)

    matched = "Unmatched"
    if preds:
        hits = [k for k in ("plus", "minus") if within(preds[k])]
        if len(hits) == 1:
            matched = hits[0]
        elif len(hits) == 2:
            matched = "Ambiguous"
    return ExpansionFit(
        C0=float(coef[0]), C2=C2, covariance=cov.tolist(), max_residual=float(np.max(np.abs(resid))),
        eps_max=float(eps.max()), n_points=len(eps), predicted_C0=float(C_inf),
        predicted_C2={k: float(v) for k, v in preds.items()}, matched_convention=matched,
        full_coefficient_match=(bool(within(preds["full"])) if preds else None), tolerance=tolerance,
    )


def ray_level_deviation(p, a, eps):
    """(p/(p+1)) t^{(p+1)/p} - t^2/2 - (p-1)/(2(p+1)) at t = 1 + a eps^2.

    h(t) has a critical point at t = 1, so the deviation is O(eps^4).
    """
    t = 1.0 + a * np.asarray(eps, dtype=float) ** 2
    return (p / (p + 1.0)) * t ** ((p + 1.0) / p) - 0.5 * t**2 - (p - 1.0) / (2.0 * (p + 1.0))


# --------------------------------------------------------------------------
# concentration


@dataclass
class ConcentrationReport:
    distance_nonincreasing: bool
    final_distance_in_spacings: float
    final_distance_ok: bool
    energy_ordering: bool
    energy_gaps: list
    S_ratio_at_smallest: float
    S_ok: bool
    S_trajectory: list
    max_S: float
    note: str = ("energy ordering certifies the argmax-seeded branch as lower; it does not "
                 "certify that it is the global least-energy branch")

    @property
    def passed(self):
        return self.distance_nonincreasing and self.final_distance_ok and self.energy_ordering and self.S_ok

    def to_dict(self):
        return {**asdict(self), "passed": self.passed}


def concentration_check(argmax_series, control_series, metric, max_S=None, tol_spacings=2.0,
                        rel_slack=1e-9):
    """Concentration report for an argmax-seeded series against control series.

    (a) d(p_eps, argmax S) does not increase as eps decreases and ends below
    ``tol_spacings`` grid spacings; (b) the argmax-seeded energy is strictly
    below every control series at each shared eps; (c) S(p_eps) at the
    smallest eps is within 2% of max S.
    """
    if isinstance(control_series, ContinuationSeries):
        control_series = [control_series]
    if max_S is None:
        max_S = float(metric.scalar_curvature_grid().max())
    ents = argmax_series.entries
    d = [e.dist_to_seed for e in ents]
    scale = max(max(d), max(e.spacing for e in ents))
    nonincr = all(b <= a + rel_slack * scale for a, b in zip(d, d[1:]))
    final_sp = d[-1] / ents[-1].spacing
    gaps = []
    ordering = True
    for cs in control_series:
        ctrl = {round(e.eps, 15): e.energy_J for e in cs.entries}
        for e in ents:
            key = round(e.eps, 15)
            if key in ctrl:
                gap = ctrl[key] - e.energy_J
                gaps.append((e.eps, gap))
                ordering &= gap > 0
    if not gaps:
        ordering = False
    S_traj = [(e.eps, e.S_at_p_eps) for e in ents]
    ratio = ents[-1].S_at_p_eps / max_S if max_S else float("nan")
    return ConcentrationReport(
        distance_nonincreasing=bool(nonincr), final_distance_in_spacings=float(final_sp),
        final_distance_ok=bool(final_sp < tol_spacings), energy_ordering=bool(ordering),
        energy_gaps=gaps, S_ratio_at_smallest=float(ratio), S_ok=bool(abs(ratio - 1.0) < 0.02),
        S_trajectory=S_traj, max_S=float(max_S),
    )
