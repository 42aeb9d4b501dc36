"""Conformally flat periodic metrics g = exp(2 psi) delta on the box [0, L)^N.

Everything geometric has a closed form for this family: sqrt(g) = e^{N psi},
Christoffel symbols are linear in grad psi, and the scalar curvature only
needs grad psi and the flat Laplacian of psi.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
from scipy.ndimage import map_coordinates, spline_filter
from scipy.optimize import minimize
from scipy.sparse.csgraph import dijkstra

METRIC_KINDS = ("flat", "constant", "cosine", "bump", "samples")


# --------------------------------------------------------------------------
# spectral helpers


def wavenumbers(n, L):
    """Angular wavenumbers for an n-point periodic grid with the Nyquist mode zeroed.

    Zeroing Nyquist keeps the first-derivative matrix real and skew.
    """
    k = 2.0 * np.pi * sfft.fftfreq(n, d=L / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    return k


def _axis_k(k, axis, ndim):
    shape = [1] * ndim
    shape[axis] = -1
    return k.reshape(shape)


def spectral_derivative(f, L, axis):
    n = f.shape[axis]
    k = wavenumbers(n, L)
    fh = sfft.fft(f, axis=axis)
    fh *= 1j * _axis_k(k, axis, f.ndim)
    return np.real(sfft.ifft(fh, axis=axis))


def spectral_gradient(f, L):
    return [spectral_derivative(f, L, a) for a in range(f.ndim)]


def spectral_laplacian(f, L):
    """Flat Laplacian with the full |k|^2 symbol (Nyquist included)."""
    fh = sfft.fftn(f)
    sym = np.zeros(f.shape)
    for a, n in enumerate(f.shape):
        k = 2.0 * np.pi * sfft.fftfreq(n, d=L / n)
        sym = sym + _axis_k(k, a, f.ndim) ** 2
    return np.real(sfft.ifftn(-sym * fh))


def _phase(n, L, x):
    """exp(i k x) for the n-point grid; the Nyquist entry is cos(k x) so real data stays real."""
    k = 2.0 * np.pi * sfft.fftfreq(n, d=L / n)
    ph = np.exp(1j * np.multiply.outer(np.asarray(x, dtype=float), k))
    if n % 2 == 0:
        ph[..., n // 2] = np.cos(k[n // 2] * np.asarray(x, dtype=float))
    return ph


def trig_interpolate(f, L, x, coeffs=None):
    """Trigonometric interpolant of periodic grid samples f at points x[..., N]."""
    fh = sfft.fftn(f) / f.size if coeffs is None else coeffs
    x = np.asarray(x, dtype=float)
    pts = x.reshape(-1, f.ndim)
    out = np.empty(len(pts))
    for m, pt in enumerate(pts):
        acc = fh
        for a in reversed(range(f.ndim)):
            acc = acc @ _phase(f.shape[a], L, pt[a])
        out[m] = acc.real
    return out.reshape(x.shape[:-1])


def trig_line(f, L, point, axis, offsets, coeffs=None):
    """Trigonometric interpolant along the line point + s e_axis, s in offsets."""
    fh = sfft.fftn(f) / f.size if coeffs is None else coeffs
    acc = fh
    for a in reversed(range(f.ndim)):
        if a != axis:
            acc = np.tensordot(acc, _phase(f.shape[a], L, point[a]), axes=([a], [0]))
            # tensordot drops axis a; later axes are already contracted
    x = point[axis] + np.asarray(offsets, dtype=float)
    return np.real(_phase(f.shape[axis], L, x) @ acc)


def minimal_image(d, L):
    """Wrap displacement components into [-L/2, L/2)."""
    return (np.asarray(d, dtype=float) + 0.5 * L) % L - 0.5 * L


# --------------------------------------------------------------------------
# metric


@dataclass
class ConformalMetric:
    """Periodic box of dimension N with metric exp(2 psi) times the identity.

    Parameters
    ----------
    N : int
        Spatial dimension.
    L : float
        Period along each axis.
    grid_shape : tuple of int
        Even number of nodes per axis, at least 8. Nodes sit at j L / n.
    kind : str
        One of ``flat``, ``constant``, ``cosine``, ``bump`` or ``samples``.
    params : dict
        ``constant``: amplitude. ``cosine``: amplitude, mode (integer
        vector). ``bump``: amplitude, center, sharpness.
    samples : ndarray, optional
        Grid values of psi for ``kind="samples"``.
    """

    N: int
    L: float
    grid_shape: tuple
    kind: str = "flat"
    params: dict = field(default_factory=dict)
    samples: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.grid_shape = tuple(int(n) for n in self.grid_shape)
        if len(self.grid_shape) != self.N:
            raise ValueError(f"grid_shape {self.grid_shape} does not have N={self.N} entries")
        if any(n < 8 or n % 2 for n in self.grid_shape):
            raise ValueError(f"grid entries must be even and >= 8, got {self.grid_shape}")
        if not self.L > 0:
            raise ValueError("L must be positive")
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}; expected one of {METRIC_KINDS}")
        p = dict(self.params)
        if self.kind == "constant":
            p.setdefault("amplitude", 0.0)
        elif self.kind == "cosine":
            p.setdefault("amplitude", 0.1)
            mode = np.asarray(p.get("mode", [1] + [0] * (self.N - 1)), dtype=int)
            if mode.shape != (self.N,):
                raise ValueError("cosine mode must have N integer entries")
            p["mode"] = mode.tolist()
        elif self.kind == "bump":
            p.setdefault("amplitude", 0.1)
            p.setdefault("center", [0.0] * self.N)
            p.setdefault("sharpness", 10.0 / self.L**2)
            if len(p["center"]) != self.N:
                raise ValueError("bump center must have N entries")
            p["center"] = [float(c) for c in p["center"]]
        elif self.kind == "samples":
            if self.samples is None:
                raise ValueError("kind='samples' requires psi samples")
            self.samples = np.asarray(self.samples, dtype=float)
            if self.samples.shape != self.grid_shape:
                raise ValueError("psi samples must match grid_shape")
        self.params = p

    # ---- grid ------------------------------------------------------------

    @property
    def spacing(self):
        return tuple(self.L / n for n in self.grid_shape)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    def axes(self):
        return [np.arange(n) * (self.L / n) for n in self.grid_shape]

    def nodes(self):
        """Coordinate arrays of all grid nodes, each of shape grid_shape."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def node_coords(self, index):
        return np.array([i * self.L / n for i, n in zip(index, self.grid_shape)])

    def with_grid(self, grid_shape):
        """Same analytic metric on a different grid (not for sampled psi)."""
        if self.kind == "samples":
            raise ValueError("cannot regrid a sampled metric")
        return ConformalMetric(self.N, self.L, tuple(grid_shape), self.kind, dict(self.params))

    # ---- psi and its derivatives at points ---------------------------------

    def _pts(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.N:
            raise ValueError(f"points must have trailing dimension N={self.N}")
        return x

    def _bump_terms(self, x):
        A = self.params["amplitude"]
        s = self.params["sharpness"]
        d0 = minimal_image(x - np.asarray(self.params["center"]), self.L)
        for k in itertools.product((-1, 0, 1), repeat=self.N):
            d = d0 + self.L * np.asarray(k, dtype=float)
            yield d, A * np.exp(-s * np.sum(d * d, axis=-1))

    def psi(self, x):
        x = self._pts(x)
        if self.kind == "flat":
            return np.zeros(x.shape[:-1])
        if self.kind == "constant":
            return np.full(x.shape[:-1], float(self.params["amplitude"]))
        if self.kind == "cosine":
            kvec = 2.0 * np.pi * np.asarray(self.params["mode"]) / self.L
            return self.params["amplitude"] * np.cos(x @ kvec)
        if self.kind == "bump":
            return sum(e for _, e in self._bump_terms(x))
        return self._trig_eval(self.samples, x)

    def grad_psi(self, x):
        x = self._pts(x)
        if self.kind in ("flat", "constant"):
            return np.zeros(x.shape)
        if self.kind == "cosine":
            kvec = 2.0 * np.pi * np.asarray(self.params["mode"]) / self.L
            return -self.params["amplitude"] * np.sin(x @ kvec)[..., None] * kvec
        if self.kind == "bump":
            s = self.params["sharpness"]
            return sum(-2.0 * s * d * e[..., None] for d, e in self._bump_terms(x))
        grads = spectral_gradient(self.samples, self.L)
        return np.stack([self._trig_eval(g, x) for g in grads], axis=-1)

    def hessian_psi(self, x):
        x = self._pts(x)
        eye = np.eye(self.N)
        if self.kind in ("flat", "constant"):
            return np.zeros(x.shape + (self.N,))
        if self.kind == "cosine":
            kvec = 2.0 * np.pi * np.asarray(self.params["mode"]) / self.L
            c = -self.params["amplitude"] * np.cos(x @ kvec)
            return c[..., None, None] * np.outer(kvec, kvec)
        if self.kind == "bump":
            s = self.params["sharpness"]
            return sum(e[..., None, None] * (4.0 * s * s * d[..., :, None] * d[..., None, :] - 2.0 * s * eye)
                       for d, e in self._bump_terms(x))
        out = np.empty(x.shape + (self.N,))
        for i in range(self.N):
            gi = spectral_derivative(self.samples, self.L, i)
            for j in range(self.N):
                out[..., i, j] = self._trig_eval(spectral_derivative(gi, self.L, j), x)
        return out

    def lap_psi(self, x):
        return np.trace(self.hessian_psi(x), axis1=-2, axis2=-1)

    def _trig_eval(self, f, x):
        return trig_interpolate(f, self.L, x)

    # ---- grid samples --------------------------------------------------------

    def psi_grid(self):
        if "psi" not in self._cache:
            if self.kind == "samples":
                self._cache["psi"] = self.samples.copy()
            else:
                self._cache["psi"] = self.psi(np.stack(self.nodes(), axis=-1))
        return self._cache["psi"]

    def grad_psi_grid(self):
        if "grad" not in self._cache:
            if self.kind == "samples":
                self._cache["grad"] = np.stack(spectral_gradient(self.samples, self.L), axis=-1)
            else:
                self._cache["grad"] = self.grad_psi(np.stack(self.nodes(), axis=-1))
        return self._cache["grad"]

    def lap_psi_grid(self):
        if "lap" not in self._cache:
            if self.kind == "samples":
                self._cache["lap"] = spectral_laplacian(self.samples, self.L)
            else:
                self._cache["lap"] = self.lap_psi(np.stack(self.nodes(), axis=-1))
        return self._cache["lap"]

    def sqrt_g_grid(self):
        return np.exp(self.N * self.psi_grid())

    def scalar_curvature_grid(self):
        return _curvature_formula(self.N, self.psi_grid(), self.grad_psi_grid(), self.lap_psi_grid())

    def max_curvature_node(self):
        """Grid index of max S; ties go to the lowest lexicographic index."""
        S = self.scalar_curvature_grid()
        return np.unravel_index(int(np.argmax(S)), S.shape)

    # ---- discrete Laplace-Beltrami -------------------------------------------

    def operator_factors(self):
        """(phi, phi * lap(phi), e^{N psi}) with phi = e^{(N-2) psi / 2}.

        div(phi^2 grad u) = phi lap(phi u) - phi lap(phi) u, so these three
        grid fields assemble the Laplace-Beltrami operator from one flat
        spectral Laplacian.
        """
        if "factors" not in self._cache:
            psi = self.psi_grid()
            phi = np.exp(0.5 * (self.N - 2) * psi)
            self._cache["factors"] = (phi, phi * spectral_laplacian(phi, self.L), np.exp(self.N * psi))
        return self._cache["factors"]


def _curvature_formula(N, psi, grad, lap):
    g2 = np.sum(grad * grad, axis=-1)
    return np.exp(-2.0 * psi) * (-2.0 * (N - 1) * lap - (N - 1) * (N - 2) * g2)


# --------------------------------------------------------------------------
# pointwise operations


def sqrt_g(metric, point):
    """Volume density e^{N psi} at a point."""
    return np.exp(metric.N * metric.psi(point))


def christoffel(metric, point):
    """Gamma[k, i, j] = delta_ik d_j psi + delta_jk d_i psi - delta_ij d_k psi."""
    g = np.asarray(metric.grad_psi(point), dtype=float)
    if g.ndim != 1:
        raise ValueError("christoffel takes a single point")
    eye = np.eye(metric.N)
    return (np.einsum("ki,j->kij", eye, g) + np.einsum("kj,i->kij", eye, g)
            - np.einsum("ij,k->kij", eye, g))


def scalar_curvature(metric, point):
    """S = e^{-2 psi}(-2(N-1) lap psi - (N-1)(N-2)|grad psi|^2)."""
    return _curvature_formula(metric.N, metric.psi(point), metric.grad_psi(point), metric.lap_psi(point))


def laplace_beltrami_apply(metric, u):
    """Delta_g u on the grid.

    Uses e^{-N psi} div(e^{(N-2) psi} grad u), which equals
    e^{-2 psi}(Delta u + (N-2) grad psi . grad u), in the form
    e^{-N psi}(phi Delta(phi u) - phi Delta(phi) u), phi = e^{(N-2) psi/2},
    with a spectral flat Laplacian. The discrete operator is exactly
    symmetric in the sqrt(g)-weighted pairing and annihilates constants.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != metric.grid_shape:
        raise ValueError("field shape does not match metric grid")
    phi, phi_lap_phi, b = metric.operator_factors()
    return (phi * spectral_laplacian(phi * u, metric.L) - phi_lap_phi * u) / b


# --------------------------------------------------------------------------
# geodesic distance


def _neighbor_offsets(N, reach=1):
    offs = []
    for o in itertools.product(range(-reach, reach + 1), repeat=N):
        if any(o) and math.gcd(*[abs(c) for c in o]) == 1:
            offs.append(o)
    return np.array(offs, dtype=int)


def grid_graph(metric, reach=1):
    """Sparse weighted graph on the periodic grid.

    Edges join nodes whose offset lies in {-reach..reach}^N (primitive
    offsets only); weight = Euclidean edge length times the average of
    e^psi at the two ends.
    """
    key = ("graph", reach)
    if key in metric._cache:
        return metric._cache[key]
    shape = metric.grid_shape
    size = int(np.prod(shape))
    idx = np.arange(size).reshape(shape)
    ep = np.exp(metric.psi_grid()).ravel()
    h = np.array(metric.spacing)
    rows, cols, vals = [], [], []
    for off in _neighbor_offsets(metric.N, reach):
        nb = np.roll(idx, shift=tuple(-off), axis=tuple(range(metric.N))).ravel()
        length = float(np.linalg.norm(off * h))
        rows.append(idx.ravel())
        cols.append(nb)
        vals.append(0.5 * (ep + ep[nb]) * length)
    G = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(size, size))
    metric._cache[key] = G
    return G


def _nearest_node(metric, x):
    return tuple(int(round(xi / (metric.L / n))) % n for xi, n in zip(x, metric.grid_shape))


def graph_distance(metric, a, b, reach=1, return_path=False):
    """Shortest-path length between the grid nodes nearest to a and b."""
    G = grid_graph(metric, reach)
    shape = metric.grid_shape
    ia = np.ravel_multi_index(_nearest_node(metric, a), shape)
    ib = np.ravel_multi_index(_nearest_node(metric, b), shape)
    dist, pred = dijkstra(G, directed=True, indices=ia, return_predecessors=True)
    if not return_path:
        return float(dist[ib])
    path = [ib]
    while path[-1] != ia:
        path.append(pred[path[-1]])
    path = [np.array(np.unravel_index(i, shape)) for i in reversed(path)]
    return float(dist[ib]), path


def _psi_interpolants(metric):
    """psi and grad psi at arbitrary points.

    Analytic kinds use their closed forms; sampled psi uses periodic cubic
    splines of the grid values and of the spectral gradient.
    """
    if metric.kind != "samples":
        return metric.psi, metric.grad_psi
    h = np.array(metric.spacing)
    psi = metric.psi_grid()
    grads = [spline_filter(g, order=3, mode="grid-wrap") for g in spectral_gradient(psi, metric.L)]
    psi = spline_filter(psi, order=3, mode="grid-wrap")

    def interp(f, x):
        coords = (np.asarray(x) / h).T
        return map_coordinates(f, coords, order=3, mode="grid-wrap", prefilter=False)

    return (lambda x: interp(psi, x)), (lambda x: np.stack([interp(g, x) for g in grads], axis=-1))


def geodesic_distance(metric, a, b, segments=48, local_fraction=0.125):
    """Approximate Riemannian distance between points a and b of the torus.

    Flat and constant metrics use the exact minimal-image formula. Otherwise
    a grid Dijkstra path gives the topology and an initial polyline, which
    is then straightened by minimizing its discrete length
    sum |x_{i+1} - x_i| exp(psi(midpoint)) over the interior vertices.
    Points closer than ``local_fraction * L`` start from the straight
    minimal-image segment instead of a graph path.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    flat = float(np.linalg.norm(minimal_image(b - a, metric.L)))
    if metric.kind == "flat":
        return flat
    if metric.kind == "constant":
        return math.exp(metric.params["amplitude"]) * flat
    if flat == 0.0:
        return 0.0
    h = np.array(metric.spacing)
    if flat < local_fraction * metric.L:
        poly = np.array([a, a + minimal_image(b - a, metric.L)])
    else:
        _, path = graph_distance(metric, a, b, return_path=True)
        # unwrap the node path into a continuous polyline from a to b
        pts = [a]
        for node in path[1:-1]:
            x = node * h
            pts.append(pts[-1] + minimal_image(x - pts[-1], metric.L))
        pts.append(pts[-1] + minimal_image(b - pts[-1], metric.L))
        poly = np.array(pts)
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    t = np.linspace(0.0, s[-1], segments + 1)
    init = np.stack([np.interp(t, s, poly[:, d]) for d in range(metric.N)], axis=1)
    start, end = init[0], init[-1]
    psi, grad_psi = _psi_interpolants(metric)
    n_dim = metric.N

    def length_and_grad(flat_inner):
        x = np.vstack([start, flat_inner.reshape(-1, n_dim), end])
        d = np.diff(x, axis=0)
        mid = 0.5 * (x[1:] + x[:-1])
        seg = np.linalg.norm(d, axis=1)
        w = np.exp(psi(mid))
        # d/dx of |d_i| w_i: tangent term from the segment, grad psi term from the midpoint
        g_seg = (w / np.maximum(seg, 1e-300))[:, None] * d
        g_mid = 0.5 * (seg * w)[:, None] * grad_psi(mid)
        grad = g_seg[:-1] - g_seg[1:] + g_mid[:-1] + g_mid[1:]
        return float(np.sum(seg * w)), grad.ravel()

    x0 = init[1:-1].ravel()
    res = minimize(length_and_grad, x0, jac=True, method="L-BFGS-B",
                   options={"maxiter": 2000, "ftol": 1e-14, "gtol": 1e-10})
    return min(float(res.fun), length_and_grad(x0)[0])
