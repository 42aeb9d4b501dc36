"""Dual variational machinery and the Newton-Krylov solver for the eps-problem.

The discrete operator behind everything here is

    A u = eps^2 (-phi Lap(phi u) + phi Lap(phi) u) + b u,
    phi = e^{(N-2) psi / 2},  b = e^{N psi},

which is b times (-eps^2 Delta_g + 1). A is symmetric positive definite, so
T = (-eps^2 Delta_g + 1)^{-1} = A^{-1} b is self-adjoint in the b-weighted
pairing and the primal/dual energies agree to roundoff at discrete critical
points.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicSpline

from ._ray import ray_derivative, ray_maximizer, ray_value
from .entire import energy_from_masses
from .errors import KrylovStall, NonConvergence, NoPositiveMax, PositivityLost, SpikeUnresolved
from .geometry import ConformalMetric, minimal_image

SOLUTION_SCHEMA = "spikelab.perturbed_solution/1"


def _odd_pow(x, e):
    return np.sign(x) * np.abs(x) ** e


# --------------------------------------------------------------------------
# Helmholtz operator


class HelmholtzOperator:
    """A = b (-eps^2 Delta_g + 1) on the metric grid, with an FFT preconditioner.

    The preconditioner inverts the constant-coefficient operator
    eps^2 mean(phi^2) |k|^2 + mean(b) exactly.
    """

    def __init__(self, metric, eps):
        if not eps > 0:
            raise ValueError("eps must be positive")
        self.metric = metric
        self.eps = float(eps)
        self.phi, self.phi_lap_phi, self.b = metric.operator_factors()
        self.shape = metric.grid_shape
        ksq = np.zeros(self.shape[:-1] + (self.shape[-1] // 2 + 1,))
        for a, n in enumerate(self.shape):
            if a == len(self.shape) - 1:
                k = 2.0 * np.pi * sfft.rfftfreq(n, d=metric.L / n)
            else:
                k = 2.0 * np.pi * sfft.fftfreq(n, d=metric.L / n)
            sh = [1] * len(self.shape)
            sh[a] = -1
            ksq = ksq + k.reshape(sh) ** 2
        self._ksq = ksq
        eps2 = self.eps**2
        self._pre = 1.0 / (eps2 * np.mean(self.phi**2) * ksq + np.mean(self.b))
        self.krylov_iterations = 0

    def _lap(self, f):
        return sfft.irfftn(-self._ksq * sfft.rfftn(f), s=self.shape)

    def apply(self, u):
        """b(-eps^2 Delta_g u + u)."""
        return self.eps**2 * (self.phi_lap_phi * u - self.phi * self._lap(self.phi * u)) + self.b * u

    def unweighted(self, u):
        """(-eps^2 Delta_g + 1) u."""
        return self.apply(u) / self.b

    def precondition(self, r):
        return sfft.irfftn(self._pre * sfft.rfftn(r), s=self.shape)

    def solve_weighted(self, rhs, x0=None, tol=1e-11, maxiter=500):
        """Preconditioned CG for A x = rhs; stops at ||r|| <= tol ||rhs||."""
        rhs = np.asarray(rhs, dtype=float)
        nb = np.linalg.norm(rhs)
        if nb == 0.0:
            return np.zeros_like(rhs)
        x = self.precondition(rhs) if x0 is None else np.array(x0, dtype=float)
        r = rhs - self.apply(x)
        z = self.precondition(r)
        d = z.copy()
        rz = np.vdot(r, z)
        for it in range(maxiter + 1):
            if np.linalg.norm(r) <= tol * nb:
                self.krylov_iterations += it
                return x
            if it == maxiter:
                break
            Ad = self.apply(d)
            alpha = rz / np.vdot(d, Ad)
            x += alpha * d
            r -= alpha * Ad
            z = self.precondition(r)
            rz_new = np.vdot(r, z)
            d = z + (rz_new / rz) * d
            rz = rz_new
        raise KrylovStall(f"CG reached {maxiter} iterations at relative residual "
                          f"{np.linalg.norm(r) / nb:.3e}")

    def inverse(self, f, **kw):
        """T f = (-eps^2 Delta_g + 1)^{-1} f."""
        return self.solve_weighted(self.b * np.asarray(f, dtype=float), **kw)


def helmholtz_operator(metric, eps):
    """Cached operator per (metric, eps)."""
    key = ("helmholtz", float(eps))
    if key not in metric._cache:
        metric._cache[key] = HelmholtzOperator(metric, eps)
    return metric._cache[key]


def helmholtz_inverse(metric, eps, f, tol=1e-11, maxiter=500):
    """Solve (-eps^2 Delta_g + id) u = f on the periodic grid.

    Parameters
    ----------
    metric : ConformalMetric
    eps : float
    f : ndarray
        Right-hand side on the metric grid.
    tol : float
        Relative residual target of the weighted symmetric system.
    maxiter : int
        CG iteration cap; exceeding it raises ``KrylovStall``.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != metric.grid_shape:
        raise ValueError("field shape does not match metric grid")
    return helmholtz_operator(metric, eps).inverse(f, tol=tol, maxiter=maxiter)


# --------------------------------------------------------------------------
# energies


def primal_energy(u, v, metric, eps, exponents):
    """J = int (eps^2 g(grad u, grad v) + uv - |u|^{p+1}/(p+1) - |v|^{q+1}/(q+1)) sqrt(g)."""
    op = helmholtz_operator(metric, eps)
    p, q = exponents.p, exponents.q
    quad = np.sum(u * op.apply(v))
    pot = np.sum(op.b * (np.abs(u) ** (p + 1) / (p + 1) + np.abs(v) ** (q + 1) / (q + 1)))
    return float((quad - pot) * metric.cell_volume)


@dataclass
class DualPair:
    w1: np.ndarray
    w2: np.ndarray
    exponents: object
    metric: ConformalMetric
    eps: float

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=float)
        self.w2 = np.asarray(self.w2, dtype=float)
        if self.w1.shape != self.metric.grid_shape or self.w2.shape != self.metric.grid_shape:
            raise ValueError("dual fields must match the metric grid")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


def _dual_pieces(pair, tol=1e-11):
    """Fractional masses, cross integrals and the two Helmholtz solves."""
    op = helmholtz_operator(pair.metric, pair.eps)
    p, q = pair.exponents.p, pair.exponents.q
    dv = pair.metric.cell_volume
    mass_u = float(np.sum(op.b * np.abs(pair.w1) ** ((p + 1) / p)) * dv)
    mass_v = float(np.sum(op.b * np.abs(pair.w2) ** ((q + 1) / q)) * dv)
    Tw2 = op.inverse(pair.w2, tol=tol)
    Tw1 = op.inverse(pair.w1, tol=tol)
    cross_12 = float(np.sum(op.b * pair.w1 * Tw2) * dv)
    cross_21 = float(np.sum(op.b * pair.w2 * Tw1) * dv)
    return mass_u, mass_v, cross_12, cross_21, Tw1, Tw2


def dual_energy(pair):
    """I = int p/(p+1)|w1|^{(p+1)/p} + q/(q+1)|w2|^{(q+1)/q} - (1/2) int (w1 T w2 + w2 T w1)."""
    p, q = pair.exponents.p, pair.exponents.q
    mu, mv, c12, c21, _, _ = _dual_pieces(pair)
    return (p / (p + 1)) * mu + (q / (q + 1)) * mv - 0.5 * (c12 + c21)


def dual_cross_terms(pair):
    """(int w1 T w2 sqrt g, int w2 T w1 sqrt g)."""
    _, _, c12, c21, _, _ = _dual_pieces(pair)
    return c12, c21


def dual_gradient(pair):
    """Riesz representers of I' in the sqrt(g)-weighted pairing.

    Returns (sign(w1)|w1|^{1/p} - T w2, sign(w2)|w2|^{1/q} - T w1); the
    fractional power is continuous at zero.
    """
    op = helmholtz_operator(pair.metric, pair.eps)
    p, q = pair.exponents.p, pair.exponents.q
    g1 = _odd_pow(pair.w1, 1.0 / p) - op.inverse(pair.w2)
    g2 = _odd_pow(pair.w2, 1.0 / q) - op.inverse(pair.w1)
    return g1, g2


def weighted_pairing(metric, f, h):
    return float(np.sum(metric.sqrt_g_grid() * f * h) * metric.cell_volume)


# --------------------------------------------------------------------------
# transplant and ray


def smooth_cutoff(r, R):
    """Radial C-infinity cutoff: 1 on [0, R/2], 0 on [R, inf), monotone between."""
    t = np.clip((np.asarray(r, dtype=float) - 0.5 * R) / (0.5 * R), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t < 1.0, np.exp(-1.0 / np.maximum(1.0 - t, 1e-300)), 0.0)
        c = np.where(t > 0.0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
    return a / (a + c)


def distance_from(metric, center, mode="segment", order=8):
    """Distance from every grid node to ``center``.

    ``flat`` is the coordinate minimal-image distance. ``segment`` is the
    metric length of the minimal-image straight segment,
    |x - c| * int_0^1 e^{psi(c + t(x - c))} dt by Gauss-Legendre; it agrees
    with the geodesic distance to second order near the center and is
    exact on flat and constant metrics.
    """
    X = metric.nodes()
    c = np.asarray(center, dtype=float)
    D = [minimal_image(x - ci, metric.L) for x, ci in zip(X, c)]
    flat = np.sqrt(sum(d * d for d in D))
    if mode == "flat" or metric.kind == "flat":
        return flat
    if mode != "segment":
        raise ValueError(f"unknown distance mode {mode!r}")
    if metric.kind == "constant":
        return math.exp(metric.params["amplitude"]) * flat
    nodes, weights = np.polynomial.legendre.leggauss(order)
    psi = _point_psi(metric)
    acc = np.zeros_like(flat)
    D = np.stack(D, axis=-1)
    for t, w in zip(0.5 * (nodes + 1.0), 0.5 * weights):
        acc += w * np.exp(psi(c + t * D))
    return flat * acc


def _point_psi(metric):
    if metric.kind != "samples":
        return metric.psi
    from scipy.ndimage import map_coordinates, spline_filter

    coef = spline_filter(metric.psi_grid(), order=3, mode="grid-wrap")
    h = np.array(metric.spacing)

    def f(x):
        shp = x.shape[:-1]
        coords = (x.reshape(-1, metric.N) / h).T
        return map_coordinates(coef, coords, order=3, mode="grid-wrap", prefilter=False).reshape(shp)

    return f


def check_resolution(metric, eps, min_nodes=8):
    """Raise SpikeUnresolved when fewer than ``min_nodes`` nodes fall in [0, 3 eps]."""
    h = max(metric.spacing)
    nodes = int(math.floor(3.0 * eps / h + 1e-12)) + 1
    if nodes < min_nodes:
        raise SpikeUnresolved(f"only {nodes} nodes span [0, 3 eps] at eps={eps:.4g}, h={h:.4g}; "
                              f"need {min_nodes}")


def _radial_spline(ground_state, component):
    r = ground_state.r
    y = ground_state.U if component == "U" else ground_state.V
    # mirror a few nodes so the spline has zero slope at the origin
    return CubicSpline(np.concatenate([-r[1:4][::-1], r]), np.concatenate([y[1:4][::-1], y]))


def transplant(ground_state, metric, center, eps, R, min_nodes=8, eps_ratio=10.0,
               distance="segment"):
    """Cut-off, eps-rescaled copy of (U, V) centered at ``center``.

    Returns (phi_R(d) U(d/eps), phi_R(d) V(d/eps)) with d the metric length
    of the minimal-image segment to the center (``distance="flat"`` uses the
    coordinate distance instead). ``eps`` must not exceed
    R / eps_ratio; continuation runs that start at coarse eps lower the
    ratio since Newton repairs the truncated tail.
    """
    if not R < 0.5 * metric.L + 1e-12:
        raise ValueError("cutoff radius must be below L/2")
    if eps > R / eps_ratio * (1 + 1e-12):
        raise ValueError(f"need eps <= R/{eps_ratio:g}")
    check_resolution(metric, eps, min_nodes)
    d = distance_from(metric, center, distance)
    s = d / eps
    chi = smooth_cutoff(d, R)
    Rmax = ground_state.R_max
    out = []
    for comp in ("U", "V"):
        f = _radial_spline(ground_state, comp)
        val = np.where(s < Rmax, f(np.minimum(s, Rmax)), 0.0)
        out.append(chi * np.maximum(val, 0.0))
    return out[0], out[1]


@dataclass
class RayProfile:
    t: np.ndarray
    h: np.ndarray
    t_star: float
    mass_u: float
    mass_v: float
    cross: float
    p: float
    q: float

    def value(self, t):
        return ray_value(t, self.mass_u, self.mass_v, self.cross, self.p, self.q)

    def derivative(self, t):
        return ray_derivative(t, self.mass_u, self.mass_v, self.cross, self.p, self.q)


def ray_profile(w_star, metric, eps, t_grid=None, exponents=None):
    """h(t) = I(t w) along a ray, from one pair of Helmholtz solves.

    ``w_star`` is a DualPair or a tuple (w1, w2) together with ``exponents``.
    """
    if not isinstance(w_star, DualPair):
        w_star = DualPair(w_star[0], w_star[1], exponents, metric, eps)
    p, q = w_star.exponents.p, w_star.exponents.q
    mu, mv, c12, c21, _, _ = _dual_pieces(w_star)
    cross = c12 + c21
    t_star = ray_maximizer(mu, mv, cross, p, q)
    t = np.linspace(0.0, 3.0 * t_star, 301) if t_grid is None else np.asarray(t_grid, dtype=float)
    return RayProfile(t, ray_value(t, mu, mv, cross, p, q), t_star, mu, mv, cross, p, q)


# --------------------------------------------------------------------------
# perturbed solution


@dataclass
class PerturbedSolution:
    u: np.ndarray
    v: np.ndarray
    eps: float
    energy_J: float
    energy_I: float
    residuals: tuple
    p_eps: np.ndarray
    q_eps: np.ndarray
    newton_iterations: int
    exponents: object
    metric: ConformalMetric
    residual_history: list = field(default_factory=list)
    ray_t_star: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def sup_u(self):
        return float(self.u.max())

    @property
    def sup_v(self):
        return float(self.v.max())

    def summary(self):
        return {
            "eps": self.eps,
            "energy_J": self.energy_J,
            "energy_I": self.energy_I,
            "residuals": list(self.residuals),
            "p_eps": [float(c) for c in self.p_eps],
            "q_eps": [float(c) for c in self.q_eps],
            "sup_u": self.sup_u,
            "sup_v": self.sup_v,
            "newton_iterations": self.newton_iterations,
            "residual_history": list(self.residual_history),
            "ray_t_star": self.ray_t_star,
        }

    def to_dict(self, include_fields=False):
        m = self.metric
        d = {
            "schema": SOLUTION_SCHEMA,
            "exponents": self.exponents.to_dict(),
            "metric": {"N": m.N, "L": m.L, "grid": list(m.grid_shape), "kind": m.kind,
                       "params": m.params},
            **self.summary(),
            "meta": self.meta,
        }
        if include_fields:
            d["u"] = self.u.ravel().tolist()
            d["v"] = self.v.ravel().tolist()
        return d

    def save_json(self, path, include_fields=False):
        with open(path, "w") as fh:
            json.dump(self.to_dict(include_fields), fh)

    def dump_fields(self, path):
        write_field_dump(path, self.metric, self.eps, self.u, self.v)


def write_field_dump(path, metric, eps, u, v):
    """Little-endian binary: int64 N, int64 grid[N], float64 L, float64 eps, u, v (row-major)."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<q", metric.N))
        fh.write(struct.pack(f"<{metric.N}q", *metric.grid_shape))
        fh.write(struct.pack("<dd", metric.L, eps))
        for f in (u, v):
            fh.write(np.ascontiguousarray(f, dtype="<f8").tobytes(order="C"))


def read_field_dump(path):
    """Inverse of ``write_field_dump``: returns (N, grid_shape, L, eps, u, v)."""
    with open(path, "rb") as fh:
        (N,) = struct.unpack("<q", fh.read(8))
        shape = struct.unpack(f"<{N}q", fh.read(8 * N))
        L, eps = struct.unpack("<dd", fh.read(16))
        size = int(np.prod(shape))
        u = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape).astype(float)
        v = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape).astype(float)
    return N, tuple(shape), L, eps, u, v


def locate_maximum(f, metric):
    """Grid argmax refined by a per-axis three-point parabola.

    The parabola is fit to log f when the three samples are positive (exact
    for Gaussians), otherwise to f. Ties go to the lexicographically first
    node.
    """
    idx = np.unravel_index(int(np.argmax(f)), f.shape)
    x = metric.node_coords(idx)
    h = metric.spacing
    for a in range(metric.N):
        im = list(idx)
        ip = list(idx)
        im[a] = (idx[a] - 1) % f.shape[a]
        ip[a] = (idx[a] + 1) % f.shape[a]
        fm, f0, fp = f[tuple(im)], f[idx], f[tuple(ip)]
        if fm > 0 and f0 > 0 and fp > 0:
            fm, f0, fp = np.log(fm), np.log(f0), np.log(fp)
        den = fm - 2.0 * f0 + fp
        if den < 0:
            x[a] += 0.5 * h[a] * (fm - fp) / den
    x = x % metric.L
    # a tiny negative offset wraps to L in floating point
    return np.where(x >= metric.L - 1e-12 * metric.L, 0.0, x)


def _residual(op, u, v, p, q):
    return op.unweighted(u) - _odd_pow(v, q), op.unweighted(v) - _odd_pow(u, p)


def newton_solve(metric, eps, exponents, u, v, tol=1e-9, max_iter=40, damping_floor=2.0**-20,
                 positivity_slack=1e-4, gmres_restart=30, log=None, stats=None):
    """Damped inexact Newton-GMRES for the discrete system.

    Iterates whose minimum drops below ``-positivity_slack * max`` are
    rejected like non-decreasing residuals (step halved). Forcing terms
    follow the Eisenstat-Walker choice 2 rule. For p = q and a start with
    u = v (to 1e-8) the iterates are kept exactly on the diagonal.

    Returns (u, v, residual history, number of iterations). When ``stats``
    is a dict, the total number of inner GMRES iterations is accumulated
    under ``"krylov"``.
    """
    op = helmholtz_operator(metric, eps)
    p, q = exponents.p, exponents.q
    n = u.size
    shape = u.shape
    b = op.b
    symmetric = p == q and np.abs(u - v).max() <= 1e-8 * max(np.abs(u).max(), 1e-300)
    if symmetric:
        u = v = 0.5 * (u + v)
    Ru, Rv = _residual(op, u, v, p, q)
    res = max(np.abs(Ru).max(), np.abs(Rv).max())
    history = [float(res)]
    forcing = 0.1
    it = 0
    while res >= tol:
        if it >= max_iter:
            raise NonConvergence(f"Newton: residual {res:.3e} after {it} iterations",
                                 residual=res, iterations=it)
        qv = b * q * np.abs(v) ** (q - 1.0)
        pu = b * p * np.abs(u) ** (p - 1.0)

        def matvec(x):
            du = x[:n].reshape(shape)
            dv = x[n:].reshape(shape)
            return np.concatenate([(op.apply(du) - qv * dv).ravel(), (op.apply(dv) - pu * du).ravel()])

        def prec(x):
            return np.concatenate([op.precondition(x[:n].reshape(shape)).ravel(),
                                   op.precondition(x[n:].reshape(shape)).ravel()])

        J = spla.LinearOperator((2 * n, 2 * n), matvec=matvec, dtype=float)
        M = spla.LinearOperator((2 * n, 2 * n), matvec=prec, dtype=float)
        rhs = -np.concatenate([(b * Ru).ravel(), (b * Rv).ravel()])
        counter = [0]

        def count(_):
            counter[0] += 1

        step, info = spla.gmres(J, rhs, rtol=forcing, atol=0.0, restart=gmres_restart,
                                maxiter=40, M=M, callback=count, callback_type="pr_norm")
        if stats is not None:
            stats["krylov"] = stats.get("krylov", 0) + counter[0]
        if info < 0:
            raise KrylovStall(f"GMRES breakdown (info={info})")
        du, dv = step[:n].reshape(shape), step[n:].reshape(shape)
        if symmetric:
            # the exact step keeps u = v; projecting the inexact one keeps it bitwise
            du = dv = 0.5 * (du + dv)
        lam = 1.0
        while True:
            un, vn = u + lam * du, v + lam * dv
            floor = -positivity_slack * max(un.max(), vn.max())
            positive = min(un.min(), vn.min()) > floor
            if positive:
                Run, Rvn = _residual(op, un, vn, p, q)
                rn = max(np.abs(Run).max(), np.abs(Rvn).max())
                if rn < res:
                    break
            lam *= 0.5
            if lam < damping_floor:
                if not positive:
                    raise PositivityLost(f"positivity lost at damping floor (residual {res:.3e})")
                raise NonConvergence(f"Newton line search stalled at residual {res:.3e}",
                                     residual=res, iterations=it)
        ratio = rn / res
        forcing = min(0.1, max(0.9 * ratio**2, 1e-6))
        u, v, Ru, Rv, res = un, vn, Run, Rvn, rn
        history.append(float(res))
        it += 1
        if log is not None:
            log(f"  newton {it}: residual {res:.3e} step {lam:g}")
    return u, v, history, it


def solve_perturbed(metric, eps, exponents, init=None, ground_state=None, center=None, R=None,
                    tol=1e-9, min_nodes=8, eps_ratio=10.0, **newton_kw):
    """Positive spike solution of the eps-problem on ``metric``.

    Parameters
    ----------
    init : tuple of ndarray, optional
        Warm start (u, v). When omitted, the ground state is transplanted to
        ``center`` (default: grid argmax of the scalar curvature) with cutoff
        radius ``R`` (default 0.45 L) and scaled along its dual ray.
    """
    if init is None:
        if ground_state is None:
            raise ValueError("need either init or ground_state")
        if center is None:
            center = metric.node_coords(metric.max_curvature_node())
        if R is None:
            R = 0.45 * metric.L
        U, V = transplant(ground_state, metric, center, eps, R, min_nodes=min_nodes,
                          eps_ratio=eps_ratio)
        ray = ray_profile((U**exponents.p, V**exponents.q), metric, eps, exponents=exponents)
        u0 = ray.t_star ** (1.0 / exponents.p) * U
        v0 = ray.t_star ** (1.0 / exponents.q) * V
    else:
        u0, v0 = (np.array(f, dtype=float) for f in init)
    u, v, hist, its = newton_solve(metric, eps, exponents, u0, v0, tol=tol, **newton_kw)
    return finalize_solution(metric, eps, exponents, u, v, hist, its)


def finalize_solution(metric, eps, exponents, u, v, history=(), iterations=0):
    op = helmholtz_operator(metric, eps)
    Ru, Rv = _residual(op, u, v, exponents.p, exponents.q)
    J = primal_energy(u, v, metric, eps, exponents)
    pair = DualPair(_odd_pow(u, exponents.p), _odd_pow(v, exponents.q), exponents, metric, eps)
    mu, mv, c12, c21, _, _ = _dual_pieces(pair)
    p, q = exponents.p, exponents.q
    I = (p / (p + 1)) * mu + (q / (q + 1)) * mv - 0.5 * (c12 + c21)
    try:
        t_star = ray_maximizer(mu, mv, c12 + c21, p, q)
    except NoPositiveMax:
        t_star = None
    return PerturbedSolution(
        u=u, v=v, eps=float(eps), energy_J=J, energy_I=float(I),
        residuals=(float(np.abs(Ru).max()), float(np.abs(Rv).max())),
        p_eps=locate_maximum(u, metric), q_eps=locate_maximum(v, metric),
        newton_iterations=int(iterations), exponents=exponents, metric=metric,
        residual_history=list(history), ray_t_star=t_star,
    )


# --------------------------------------------------------------------------
# duality report


@dataclass
class DualityReport:
    T_residual_u: float
    T_residual_v: float
    gradient_norm: float
    energy_gap: float
    energy_gap_relative: float
    threshold: float

    @property
    def passed(self):
        return (self.T_residual_u < self.threshold and self.T_residual_v < self.threshold
                and self.gradient_norm < self.threshold and self.energy_gap_relative < 1e-8)

    def to_dict(self):
        return {"T_residual_u": self.T_residual_u, "T_residual_v": self.T_residual_v,
                "gradient_norm": self.gradient_norm, "energy_gap": self.energy_gap,
                "energy_gap_relative": self.energy_gap_relative, "threshold": self.threshold,
                "passed": self.passed}


def duality_check(solution, exponents=None):
    """Residuals of the primal/dual correspondence at a solution.

    Reports max|T v^q - u|, max|T u^p - v|, the max norm of the dual
    gradient at w = (u^p, v^q) and |I(w) - J(u, v)|.
    """
    exponents = solution.exponents if exponents is None else exponents
    metric, eps = solution.metric, solution.eps
    u, v = solution.u, solution.v
    p, q = exponents.p, exponents.q
    op = helmholtz_operator(metric, eps)
    w1, w2 = _odd_pow(u, p), _odd_pow(v, q)
    Tw2 = op.inverse(w2)
    Tw1 = op.inverse(w1)
    ru = float(np.abs(Tw2 - u).max())
    rv = float(np.abs(Tw1 - v).max())
    g1 = _odd_pow(w1, 1.0 / p) - Tw2
    g2 = _odd_pow(w2, 1.0 / q) - Tw1
    gnorm = float(max(np.abs(g1).max(), np.abs(g2).max()))
    dv = metric.cell_volume
    I = ((p / (p + 1)) * np.sum(op.b * np.abs(w1) ** ((p + 1) / p))
         + (q / (q + 1)) * np.sum(op.b * np.abs(w2) ** ((q + 1) / q))
         - 0.5 * np.sum(op.b * (w1 * Tw2 + w2 * Tw1))) * dv
    J = primal_energy(u, v, metric, eps, exponents)
    gap = float(abs(I - J))
    rel = gap / abs(J) if J != 0 else gap
    return DualityReport(ru, rv, gnorm, gap, rel, 1e-8 * max(1.0, float(np.abs(u).max())))


def predicted_energy(ground_state):
    """eps^{-N} c_eps in the limit: the whole-space level of the ground state."""
    A0, B0 = ground_state.moments[:2]
    return energy_from_masses(A0, B0, ground_state.exponents.p, ground_state.exponents.q)
