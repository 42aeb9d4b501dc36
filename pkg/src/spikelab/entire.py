"""Radial ground states of the limit system -dU+U=V^q, -dV+V=U^p in R^N.

The radial Laplacian u'' + (N-1)u'/r is discretized with fourth-order
central differences on a uniform grid, even reflection at r=0 and a
Dirichlet cut at R_max. Newton runs on the coupled system with a sparse
direct solve.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import simpson
from scipy.optimize import least_squares
from scipy.special import gamma, gammaincc

from ._ray import ray_maximizer
from .errors import (
    DecayNotResolved,
    InvalidExponents,
    NonConvergence,
    PositivityLost,
    WindowUnderflow,
)

GROUND_STATE_SCHEMA = "spikelab.ground_state/1"

# fourth-order central stencils on offsets -2..2
_D2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0


def sphere_area(N):
    """Surface area of the unit sphere S^{N-1} (2 for N=1)."""
    return 2.0 * math.pi ** (N / 2.0) / math.gamma(N / 2.0)


@dataclass(frozen=True)
class ExponentPair:
    p: float
    q: float
    N: int

    def __post_init__(self):
        if not (self.p > 1 and self.q > 1):
            raise InvalidExponents(f"need p, q > 1, got p={self.p}, q={self.q}")
        if int(self.N) != self.N or self.N < 1:
            raise InvalidExponents(f"N must be a positive integer, got {self.N}")

    @property
    def alpha(self):
        return (self.p + 1.0) / self.p

    @property
    def beta(self):
        return (self.q + 1.0) / self.q

    @property
    def beta_star(self):
        den = self.N * self.q - 2.0 * (self.q + 1.0)
        return math.inf if den <= 0 else self.N * (self.q + 1.0) / den

    @property
    def alpha_star(self):
        den = self.N * self.p - 2.0 * (self.p + 1.0)
        return math.inf if den <= 0 else self.N * (self.p + 1.0) / den

    @property
    def hc_margin(self):
        """1/(p+1) + 1/(q+1) - (N-2)/N; positive iff (HC) holds."""
        return 1.0 / (self.p + 1.0) + 1.0 / (self.q + 1.0) - (self.N - 2.0) / self.N

    @property
    def hc_holds(self):
        return self.hc_margin > 0

    @property
    def fixed_point(self):
        """Nontrivial fixed point N(pq-1)/(2p+2) of the bootstrap map for q_n."""
        return self.N * (self.p * self.q - 1.0) / (2.0 * self.p + 2.0)

    def to_dict(self):
        return {"p": self.p, "q": self.q, "N": self.N}


# --------------------------------------------------------------------------
# radial operator


def radial_laplacian(N, R, M):
    """Sparse matrix of u'' + (N-1)u'/r acting on nodes r_0..r_{M-1}.

    u_M = 0 is eliminated; the ghost u_{M+1} = -u_{M-1} (odd reflection about
    R) and u_{-k} = u_k at the origin.
    """
    h = R / M
    rows, cols, vals = [], [], []
    for i in range(M):
        r = i * h
        for k, off in enumerate(range(-2, 3)):
            if i == 0:
                c = N * _D2[k] / h**2
            else:
                c = _D2[k] / h**2 + (N - 1) / r * _D1[k] / h
            if c == 0.0:
                continue
            j = i + off
            sign = 1.0
            if j < 0:
                j = -j
            elif j == M:
                continue
            elif j == M + 1:
                j, sign = M - 1, -1.0
            rows.append(i)
            cols.append(j)
            vals.append(sign * c)
    return sp.csr_matrix((vals, (rows, cols)), shape=(M, M))


def radial_derivative(u, h):
    """Fourth-order first derivative of an even radial profile with u(R)=0."""
    n = len(u)
    ext = np.concatenate([u[2:0:-1], u, [-u[-2]] if n > 1 else []])
    # ext index of u_i is i+2; pad one extra odd ghost beyond R
    ext = np.concatenate([ext, [-u[-3]] if n > 2 else [0.0]])
    d = np.zeros(n)
    for k, off in enumerate(range(-2, 3)):
        if _D1[k] != 0.0:
            d += _D1[k] * ext[2 + off: 2 + off + n]
    return d / h


def _odd_pow(x, e):
    return np.sign(x) * np.abs(x) ** e


# --------------------------------------------------------------------------
# ground state container


@dataclass
class DecayFit:
    c_U: float
    c_V: float
    prefactor_U: float
    prefactor_V: float
    fit_residual: float
    window: tuple

    def to_dict(self):
        return {
            "c_U": self.c_U,
            "c_V": self.c_V,
            "prefactor_U": self.prefactor_U,
            "prefactor_V": self.prefactor_V,
            "fit_residual": self.fit_residual,
            "window": list(self.window),
        }


@dataclass
class RadialGroundState:
    exponents: ExponentPair
    r: np.ndarray
    U: np.ndarray
    V: np.ndarray
    residual_norm: float
    tol: float
    newton_iterations: int = 0
    decay: DecayFit | None = None
    moments: tuple | None = None
    C_inf: float | None = None
    ray_t_star: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def R_max(self):
        return float(self.r[-1])

    @property
    def M(self):
        return len(self.r) - 1

    @property
    def h(self):
        return float(self.r[1] - self.r[0])

    def profile(self, component="U"):
        """Callable r -> U(r) (cubic interpolation, zero beyond R_max)."""
        from scipy.interpolate import CubicSpline

        y = self.U if component == "U" else self.V
        rr = np.concatenate([-self.r[1:4][::-1], self.r])
        yy = np.concatenate([y[1:4][::-1], y])
        spline = CubicSpline(rr, yy)
        R = self.R_max

        def f(r):
            r = np.abs(np.asarray(r, dtype=float))
            out = spline(np.minimum(r, R))
            return np.where(r >= R, 0.0, out)

        return f

    def to_dict(self):
        return {
            "schema": GROUND_STATE_SCHEMA,
            "exponents": self.exponents.to_dict(),
            "grid": {"R_max": self.R_max, "M": self.M},
            "tol": self.tol,
            "residual_norm": self.residual_norm,
            "newton_iterations": self.newton_iterations,
            "r": self.r.tolist(),
            "U": self.U.tolist(),
            "V": self.V.tolist(),
            "moments": None if self.moments is None else dict(zip(("A0", "B0", "M2U", "M2V"), self.moments)),
            "C_inf": self.C_inf,
            "decay": None if self.decay is None else self.decay.to_dict(),
            "ray_t_star": self.ray_t_star,
            "meta": self.meta,
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != GROUND_STATE_SCHEMA:
            raise ValueError(f"unsupported ground state schema {d.get('schema')!r}")
        e = d["exponents"]
        dec = d.get("decay")
        mom = d.get("moments")
        return cls(
            exponents=ExponentPair(e["p"], e["q"], e["N"]),
            r=np.asarray(d["r"], dtype=float),
            U=np.asarray(d["U"], dtype=float),
            V=np.asarray(d["V"], dtype=float),
            residual_norm=d["residual_norm"],
            tol=d["tol"],
            newton_iterations=d.get("newton_iterations", 0),
            decay=None if dec is None else DecayFit(
                dec["c_U"], dec["c_V"], dec["prefactor_U"], dec["prefactor_V"],
                dec["fit_residual"], tuple(dec["window"])),
            moments=None if mom is None else (mom["A0"], mom["B0"], mom["M2U"], mom["M2V"]),
            C_inf=d.get("C_inf"),
            ray_t_star=d.get("ray_t_star"),
            meta=d.get("meta", {}),
        )

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# Newton solve


def _residual(L, U, V, p, q):
    F1 = -(L @ U) + U - _odd_pow(V, q)
    F2 = -(L @ V) + V - _odd_pow(U, p)
    return np.concatenate([F1, F2])


def _roundoff_floor(L, U, V):
    """Residual level reachable in double precision: 2 eps_mach ||L||_inf max(U, V)."""
    norm = float(np.abs(L).sum(axis=1).max()) + 1.0
    return 2.0 * np.finfo(float).eps * norm * max(np.max(np.abs(U)), np.max(np.abs(V)))


def _newton(L, U, V, p, q, tol, max_iter=60, damping_floor=2.0**-20):
    """Damped Newton; a stall below the roundoff floor counts as converged."""
    M = L.shape[0]
    A = (sp.identity(M, format="csr") - L).tocsc()
    F = _residual(L, U, V, p, q)
    res = np.max(np.abs(F))
    it = 0
    while res >= tol:
        if it >= max_iter:
            raise NonConvergence(f"radial Newton: residual {res:.3e} after {it} iterations",
                                 residual=res, iterations=it)
        J = sp.bmat([
            [A, sp.diags(-q * np.abs(V) ** (q - 1.0))],
            [sp.diags(-p * np.abs(U) ** (p - 1.0)), A],
        ], format="csc")
        step = spla.spsolve(J, -F)
        dU, dV = step[:M], step[M:]
        lam = 1.0
        scale = max(np.max(U), np.max(V))
        while True:
            Un, Vn = U + lam * dU, V + lam * dV
            if min(Un.min(), Vn.min()) > -1e-8 * scale:
                Fn = _residual(L, Un, Vn, p, q)
                rn = np.max(np.abs(Fn))
                if rn < res or rn < tol:
                    break
            lam *= 0.5
            if lam < damping_floor:
                if res < _roundoff_floor(L, U, V):
                    return U, V, res, it
                if min(Un.min(), Vn.min()) <= -1e-8 * scale:
                    raise PositivityLost("radial Newton: positivity lost at damping floor")
                raise NonConvergence(f"radial Newton stalled at residual {res:.3e}",
                                     residual=res, iterations=it)
        U, V, F, res = Un, Vn, Fn, rn
        it += 1
    return U, V, res, it


def _nehari_scaled_guess(r, N, p, q, width):
    """Gaussian (a phi, b phi) scaled so both tested identities hold."""
    phi = np.exp(-0.5 * (r / width) ** 2)
    w = r ** (N - 1)
    dphi = -r / width**2 * phi
    Q = simpson((dphi**2 + phi**2) * w, x=r)
    Ap = simpson(phi ** (p + 1) * w, x=r)
    Bq = simpson(phi ** (q + 1) * w, x=r)
    b = (Q ** (p + 1) / (Bq**p * Ap)) ** (1.0 / (p * q - 1.0))
    a = b**q * Bq / Q
    return a * phi, b * phi


def solve_entire_ground_state(exponents, R_max=20.0, M=2000, tol=1e-10, init="continuation",
                              width=1.0, continuation_steps=4):
    """Positive radial ground state of the limit system.

    Parameters
    ----------
    exponents : ExponentPair
        Must satisfy (HC).
    R_max, M : float, int
        Truncation radius and number of grid intervals.
    tol : float
        Max-norm tolerance on the discrete residual.
    init : {"continuation", "gaussian"}
        ``continuation`` starts from the symmetric pair with the same
        distance to the critical hyperbola and walks to (p, q) keeping
        1/(p+1)+1/(q+1) fixed. ``gaussian`` starts from a scaled Gaussian
        of the given ``width``.
    """
    if not exponents.hc_holds:
        raise InvalidExponents(
            f"(HC) violated: 1/(p+1)+1/(q+1) = "
            f"{1/(exponents.p+1) + 1/(exponents.q+1):.6g} <= (N-2)/N = {(exponents.N-2)/exponents.N:.6g}",
            tag="HCViolated")
    if R_max < 15:
        raise ValueError("R_max must be at least 15")
    if M < 400:
        raise ValueError("M must be at least 400")
    p, q, N = exponents.p, exponents.q, exponents.N
    r = np.linspace(0.0, R_max, M + 1)
    L = radial_laplacian(N, R_max, M)
    rin = r[:-1]
    total_it = 0

    if init == "gaussian" or p == q:
        U, V = _nehari_scaled_guess(rin, N, p, q, width)
        U, V, res, total_it = _newton(L, U, V, p, q, tol)
    elif init == "continuation":
        s = 1.0 / (p + 1.0) + 1.0 / (q + 1.0)
        m = 2.0 / s - 1.0
        U, V = _nehari_scaled_guess(rin, N, m, m, width)
        U, V, res, total_it = _newton(L, U, V, m, m, tol)
        a0, a1 = 1.0 / (m + 1.0), 1.0 / (p + 1.0)
        taus = list(np.linspace(0.0, 1.0, continuation_steps + 1)[1:])
        tau_prev = 0.0
        while taus:
            tau = taus[0]
            ap = a0 + tau * (a1 - a0)
            pt, qt = 1.0 / ap - 1.0, 1.0 / (s - ap) - 1.0
            try:
                U1, V1, res, it = _newton(L, U, V, pt, qt, tol)
            except (NonConvergence, PositivityLost):
                if tau - tau_prev < 1e-3:
                    raise
                taus.insert(0, 0.5 * (tau + tau_prev))
                continue
            U, V, tau_prev = U1, V1, tau
            total_it += it
            taus.pop(0)
        if p != q and (abs(pt - p) > 1e-12 or abs(qt - q) > 1e-12):
            U, V, res, it = _newton(L, U, V, p, q, tol)
            total_it += it
    else:
        raise ValueError(f"unknown init {init!r}")

    if min(U.min(), V.min()) <= 0:
        raise PositivityLost("converged radial state is not strictly positive")

    state = RadialGroundState(
        exponents=exponents,
        r=r,
        U=np.append(U, 0.0),
        V=np.append(V, 0.0),
        residual_norm=float(res),
        tol=max(tol, _roundoff_floor(L, U, V)),
        newton_iterations=total_it,
        meta={"init": init, "width": width},
    )
    state.moments = moments(state)
    state.C_inf = entire_energy(state)
    try:
        state.decay = decay_rate_fit(state)
    except WindowUnderflow:
        state.decay = None
    state.ray_t_star = radial_ray_t_star(state)
    return state


def radial_helmholtz_inverse(state, f):
    """(-Delta + 1)^{-1} f for a radial profile, same discretization as the solver."""
    M = state.M
    L = radial_laplacian(state.exponents.N, state.R_max, M)
    A = (sp.identity(M, format="csc") - L).tocsc()
    out = spla.spsolve(A, np.asarray(f, dtype=float)[:-1])
    return np.append(out, 0.0)


def radial_integral(r, f, N):
    """omega_{N-1} int_0^R f(r) r^{N-1} dr by composite Simpson."""
    return sphere_area(N) * simpson(f * r ** (N - 1), x=r)


def radial_ray_t_star(state):
    """Maximizer of t -> I_inf(t (U^p, V^q)) for the discrete radial state."""
    p, q, N = state.exponents.p, state.exponents.q, state.exponents.N
    r, U, V = state.r, state.U, state.V
    w1, w2 = U**p, V**q
    cross = radial_integral(r, w1 * radial_helmholtz_inverse(state, w2)
                            + w2 * radial_helmholtz_inverse(state, w1), N)
    A = radial_integral(r, U ** (p + 1), N)
    B = radial_integral(r, V ** (q + 1), N)
    return ray_maximizer(A, B, cross, p, q)


def least_energy_check(exponents, widths=(0.5, 1.0, 2.0), **kw):
    """Solve from Gaussian starts of several widths and compare C_inf.

    Returns the state with the lowest C_inf and the list of all values.
    """
    states = []
    for wd in widths:
        try:
            states.append(solve_entire_ground_state(exponents, init="gaussian", width=wd, **kw))
        except (NonConvergence, PositivityLost):
            continue
    try:
        states.append(solve_entire_ground_state(exponents, init="continuation", **kw))
    except (NonConvergence, PositivityLost):
        pass
    if not states:
        raise NonConvergence("no initialization converged")
    values = [s.C_inf for s in states]
    return states[int(np.argmin(values))], values


# --------------------------------------------------------------------------
# derived quantities


def _tail_integral(prefactor, rate, power, R, N, extra):
    """omega int_R^inf (prefactor e^{-rate r} r^{-(N-1)/2})^power r^{N-1+extra} dr."""
    if prefactor <= 0 or not np.isfinite(rate) or rate <= 0:
        return 0.0
    a = rate * power
    k = N - 1 + extra - 0.5 * (N - 1) * power
    s = k + 1.0
    if s <= 0:
        # integrand decays fast enough; crude bound with the endpoint value
        return sphere_area(N) * prefactor**power * math.exp(-a * R) * R**k / a
    return sphere_area(N) * prefactor**power * gamma(s) * gammaincc(s, a * R) / a**s


def radial_moments(r, U, V, p, q, N, decay=None):
    """(A0, B0, M2U, M2V) with an exponential tail correction beyond r[-1]."""
    A0 = radial_integral(r, U ** (p + 1), N)
    B0 = radial_integral(r, V ** (q + 1), N)
    M2U = radial_integral(r, U ** (p + 1) * r**2, N)
    M2V = radial_integral(r, V ** (q + 1) * r**2, N)
    if decay is not None:
        R = r[-1]
        tails = (
            _tail_integral(decay.prefactor_U, decay.c_U, p + 1, R, N, 0),
            _tail_integral(decay.prefactor_V, decay.c_V, q + 1, R, N, 0),
            _tail_integral(decay.prefactor_U, decay.c_U, p + 1, R, N, 2),
            _tail_integral(decay.prefactor_V, decay.c_V, q + 1, R, N, 2),
        )
        base = (A0, B0, M2U, M2V)
        for t, b in zip(tails, base):
            if t > 1e-3 * abs(b) and decay.fit_residual > 1e-2:
                raise DecayNotResolved(
                    f"tail {t:.3e} exceeds 0.1% of {b:.3e} and the decay fit is poor")
        A0, B0, M2U, M2V = (b + t for b, t in zip(base, tails))
    return A0, B0, M2U, M2V


def moments(state):
    if state.decay is None:
        try:
            decay = decay_rate_fit(state)
        except WindowUnderflow:
            decay = None
    else:
        decay = state.decay
    e = state.exponents
    return radial_moments(state.r, state.U, state.V, e.p, e.q, e.N, decay)


def entire_energy(state):
    """C_inf = (1/2 - 1/(p+1)) A0 + (1/2 - 1/(q+1)) B0."""
    if state.moments is None:
        state.moments = moments(state)
    A0, B0 = state.moments[0], state.moments[1]
    p, q = state.exponents.p, state.exponents.q
    return energy_from_masses(A0, B0, p, q)


def energy_from_masses(A0, B0, p, q):
    return (0.5 - 1.0 / (p + 1.0)) * A0 + (0.5 - 1.0 / (q + 1.0)) * B0


def _fit_log_tail(r, y, N, R_dirichlet, algebraic):
    """Fit log y = log C - c r [- (N-1)/2 log r] [+ log(1 - e^{-2c(R-r)})]."""
    if np.any(~(y > 0)) or np.any(~np.isfinite(np.log(y))):
        raise WindowUnderflow("samples in decay window are not representable positives")
    ly = np.log(y)
    alg = 0.5 * (N - 1) * np.log(r) if algebraic else 0.0
    target = ly + alg
    slope, icpt = np.polyfit(r, target, 1)
    if R_dirichlet is None:
        model = icpt + slope * r
        return -slope, math.exp(icpt), float(np.max(np.abs(model - target)))

    def resid(x):
        c = x[1]
        return x[0] - c * r + np.log(-np.expm1(-2.0 * c * (R_dirichlet - r))) - target

    sol = least_squares(resid, x0=[icpt, max(-slope, 1e-3)], xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return float(sol.x[1]), math.exp(sol.x[0]), float(np.max(np.abs(sol.fun)))


def decay_rate_fit(state, window=(0.5, 0.9), algebraic=True):
    """Exponential decay rates of U and V from the far-field window.

    The fit removes the far-field algebraic factor r^{-(N-1)/2} when
    ``algebraic`` is set and, for Dirichlet-truncated states (last sample
    exactly zero), the mirror image the cut at R_max imposes on the
    linearized tail. Synthetic untruncated profiles are fit as a pure
    exponential.
    """
    r = state.r
    R = r[-1]
    mask = (r >= window[0] * R) & (r <= window[1] * R)
    N = state.exponents.N
    R_d = R if (state.U[-1] == 0.0 and state.V[-1] == 0.0) else None
    cU, aU, resU = _fit_log_tail(r[mask], state.U[mask], N, R_d, algebraic)
    cV, aV, resV = _fit_log_tail(r[mask], state.V[mask], N, R_d, algebraic)
    return DecayFit(cU, cV, aU, aV, max(resU, resV), (window[0] * R, window[1] * R))


def eta(state, sign_convention="plus"):
    """(p-1)/(2(p+1)) M2U +/- (q-1)/(2(q+1)) M2V."""
    if state.moments is None:
        state.moments = moments(state)
    p, q = state.exponents.p, state.exponents.q
    return eta_from_moments(state.moments[2], state.moments[3], p, q, sign_convention)


def eta_from_moments(M2U, M2V, p, q, sign_convention="plus"):
    a = (p - 1.0) / (2.0 * (p + 1.0)) * M2U
    b = (q - 1.0) / (2.0 * (q + 1.0)) * M2V
    if sign_convention == "plus":
        return a + b
    if sign_convention == "minus":
        return a - b
    raise ValueError(f"sign_convention must be 'plus' or 'minus', got {sign_convention!r}")


def overlap_integral(state):
    """int U V dy, the extra moment in the full curvature coefficient."""
    return radial_integral(state.r, state.U * state.V, state.exponents.N)


def curvature_coefficient(state):
    """Second-order weight K with c_eps/eps^N = C_inf - eps^2 S K/(6N) + o(eps^2).

    K = int e(U,V)|y|^2 with e the primal energy density; by the moment
    identities of the limit system this equals eta_plus + N int U V.
    """
    return eta(state, "plus") + state.exponents.N * overlap_integral(state)


def gradient_pairing(state):
    """(int (U'V' + UV), int U^{p+1}, int V^{q+1}) over R^N, radially."""
    r, U, V = state.r, state.U, state.V
    h = state.h
    dU, dV = radial_derivative(U, h), radial_derivative(V, h)
    N = state.exponents.N
    p, q = state.exponents.p, state.exponents.q
    return (radial_integral(r, dU * dV + U * V, N),
            radial_integral(r, U ** (p + 1), N),
            radial_integral(r, V ** (q + 1), N))


# --------------------------------------------------------------------------
# integrability bootstrap


@dataclass
class BootstrapResult:
    sequence: list
    tag: str
    limit_estimate: tuple | None = None

    @property
    def increasing(self):
        seq = self.sequence
        return all(b[0] > a[0] and b[1] > a[1] for a, b in zip(seq, seq[1:]))


def bootstrap_exponents(exponents, n_max=200):
    """Iterate p_{n+1} = N q_n/(N q - 2 q_n), q_{n+1} = N p_{n+1}/(N p - 2 p_{n+1}).

    Starts from (p_1, q_1) = (beta*, alpha*). Tag ``Unbounded`` once a
    denominator turns nonpositive, otherwise ``MaxIter`` with the last pair
    as limit estimate.
    """
    p, q, N = exponents.p, exponents.q, exponents.N
    p1, q1 = exponents.beta_star, exponents.alpha_star
    if math.isinf(p1) or math.isinf(q1):
        raise InvalidExponents("beta* or alpha* is already infinite", tag="ImmediateRegularity")
    seq = [(p1, q1)]
    pn, qn = p1, q1
    for _ in range(n_max - 1):
        den = N * q - 2.0 * qn
        if den <= 0:
            return BootstrapResult(seq, "Unbounded")
        pn = N * qn / den
        den = N * p - 2.0 * pn
        if den <= 0:
            return BootstrapResult(seq, "Unbounded")
        qn = N * pn / den
        seq.append((pn, qn))
    return BootstrapResult(seq, "MaxIter", limit_estimate=seq[-1])
