"""Scalar algebra of the dual functional restricted to a ray t -> t*w.

Along a ray the fractional parts scale as t^((p+1)/p), t^((q+1)/q) and the
cross term as t^2, so three numbers describe the whole profile.
"""

import numpy as np

from .errors import NoPositiveMax


def ray_value(t, mass_u, mass_v, cross, p, q):
    """h(t) = p/(p+1) t^a A + q/(q+1) t^b B - t^2/2 C."""
    t = np.asarray(t, dtype=float)
    a = (p + 1.0) / p
    b = (q + 1.0) / q
    return (p / (p + 1.0)) * t**a * mass_u + (q / (q + 1.0)) * t**b * mass_v - 0.5 * t**2 * cross


def ray_derivative(t, mass_u, mass_v, cross, p, q):
    t = np.asarray(t, dtype=float)
    return t ** (1.0 / p) * mass_u + t ** (1.0 / q) * mass_v - t * cross


def ray_maximizer(mass_u, mass_v, cross, p, q, tol=1e-15, max_iter=200):
    """Locate the unique positive zero of h'(t) by safeguarded Newton.

    h'(t)/t = t^(1/p-1) A + t^(1/q-1) B - C is strictly decreasing, so a
    bracket plus Newton with bisection fallback always converges.
    """
    if not cross > 0:
        raise NoPositiveMax(f"cross term {cross!r} is not positive")
    if mass_u < 0 or mass_v < 0 or mass_u + mass_v <= 0:
        raise NoPositiveMax("fractional masses must be nonnegative and not both zero")

    def g(t):
        return t ** (1.0 / p - 1.0) * mass_u + t ** (1.0 / q - 1.0) * mass_v - cross

    def dg(t):
        return ((1.0 / p - 1.0) * t ** (1.0 / p - 2.0) * mass_u
                + (1.0 / q - 1.0) * t ** (1.0 / q - 2.0) * mass_v)

    lo, hi = 1.0, 1.0
    while g(lo) <= 0:
        lo *= 0.5
    while g(hi) >= 0:
        hi *= 2.0
    t = 0.5 * (lo + hi)
    for _ in range(max_iter):
        gt = g(t)
        if gt > 0:
            lo = t
        else:
            hi = t
        step = gt / dg(t)
        t_new = t - step
        if not (lo < t_new < hi):
            t_new = 0.5 * (lo + hi)
        if abs(t_new - t) <= tol * max(1.0, t):
            return t_new
        t = t_new
    return t
