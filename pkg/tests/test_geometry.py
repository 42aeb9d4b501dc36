import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (
    dense_sqrt_det,
    dijkstra_distance,
    fd_christoffel,
    fd_laplace_beltrami,
    ricci_scalar_from_christoffel,
)
from spikelab.geometry import (
    ConformalMetric,
    christoffel,
    geodesic_distance,
    graph_distance,
    laplace_beltrami_apply,
    minimal_image,
    scalar_curvature,
    spectral_laplacian,
    sqrt_g,
    trig_interpolate,
)

L = 10.0


def cosine(n=32, N=3, amplitude=0.2, mode=(1, 1, 0)):
    return ConformalMetric(N, L, (n,) * N, "cosine", {"amplitude": amplitude, "mode": list(mode)[:N]})


def bump(n=32, N=3, amplitude=0.1, sharpness=0.1):
    return ConformalMetric(N, L, (n,) * N, "bump",
                           {"amplitude": amplitude, "center": [0.0] * N, "sharpness": sharpness})


def smooth_field(metric):
    X = metric.nodes()
    return np.exp(np.sin(2 * np.pi * X[0] / L) + 0.5 * np.cos(2 * np.pi * (X[1] + X[-1]) / L))


# ---- construction ------------------------------------------------------------


@pytest.mark.parametrize("shape", [(7, 8, 8), (8, 8, 9), (6, 6, 6)])
def test_grid_validation(shape):
    with pytest.raises(ValueError):
        ConformalMetric(3, L, shape)


def test_unknown_kind():
    with pytest.raises(ValueError):
        ConformalMetric(3, L, (8, 8, 8), "spiral")


def test_samples_kind_matches_analytic():
    m = cosine(16)
    s = ConformalMetric(3, L, (16,) * 3, "samples", samples=m.psi_grid())
    x = np.array([1.3, 2.7, 9.1])
    assert s.psi(x) == pytest.approx(float(m.psi(x)), abs=1e-12)
    assert np.allclose(s.grad_psi(x), m.grad_psi(x), atol=1e-10)
    assert scalar_curvature(s, x) == pytest.approx(scalar_curvature(m, x), abs=1e-9)


@pytest.mark.parametrize("kind", ["cosine", "bump"])
def test_psi_periodic(kind, rng):
    m = cosine() if kind == "cosine" else bump()
    x = rng.uniform(0, L, (10, 3))
    for a in range(3):
        shift = np.zeros(3)
        shift[a] = L
        assert np.allclose(m.psi(x + shift), m.psi(x), atol=1e-14)


# ---- sqrt(g) -----------------------------------------------------------------


def test_sqrt_g_flat_and_constant():
    assert sqrt_g(ConformalMetric(3, L, (8,) * 3), [1, 2, 3]) == 1.0
    m = ConformalMetric(3, L, (8,) * 3, "constant", {"amplitude": 0.3})
    assert sqrt_g(m, [1, 2, 3]) == pytest.approx(math.exp(0.9), rel=1e-15)


def test_sqrt_g_matches_dense_determinant(rng):
    m = cosine()
    for x in rng.uniform(0, L, (5, 3)):
        ref = dense_sqrt_det(m.psi, x, 3)
        assert abs(sqrt_g(m, x) - ref) / ref < 1e-12


# ---- Christoffel symbols -------------------------------------------------------


@pytest.mark.parametrize("kind,params", [("flat", {}), ("constant", {"amplitude": 0.7})])
def test_christoffel_vanishes(kind, params):
    m = ConformalMetric(3, L, (8,) * 3, kind, params)
    assert np.all(christoffel(m, [1.0, 2.0, 3.0]) == 0.0)


def test_christoffel_matches_finite_differences(rng):
    m = cosine(128)
    for x in rng.uniform(0, L, (4, 3)):
        assert np.abs(christoffel(m, x) - fd_christoffel(m.psi, x, 3, L / 128)).max() < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, L), min_size=3, max_size=3))
def test_christoffel_lower_symmetry(x):
    G = christoffel(bump(), x)
    assert np.array_equal(G, np.swapaxes(G, 1, 2))


# ---- scalar curvature ----------------------------------------------------------


def test_curvature_flat_zero():
    assert scalar_curvature(ConformalMetric(3, L, (8,) * 3), [1, 2, 3]) == 0.0


@given(st.floats(-3, 3))
def test_curvature_constant_zero(c):
    m = ConformalMetric(3, L, (8,) * 3, "constant", {"amplitude": c})
    assert abs(scalar_curvature(m, [0.3, 4.0, 7.0])) < 1e-12


def test_curvature_matches_ricci_trace(rng):
    m = bump(128)
    for x in rng.uniform(0, L, (4, 3)):
        S = scalar_curvature(m, x)
        ref = ricci_scalar_from_christoffel(lambda y: christoffel(m, y), m.psi, x, 3, L / 128)
        assert abs(S - ref) / abs(ref) < 1e-4


def test_bump_curvature_peaks_at_center():
    m = bump(32)
    assert m.max_curvature_node() == (0, 0, 0)
    assert scalar_curvature(m, np.zeros(3)) > 0


# ---- Laplace-Beltrami ------------------------------------------------------------


def test_laplace_beltrami_fourier_mode():
    m = ConformalMetric(3, L, (16,) * 3)
    X = m.nodes()
    u = np.cos(2 * np.pi * X[0] / L)
    assert np.abs(laplace_beltrami_apply(m, u) + (2 * np.pi / L) ** 2 * u).max() < 1e-12


@pytest.mark.parametrize("metric", [cosine(16), bump(16)])
def test_laplace_beltrami_annihilates_constants(metric):
    assert np.abs(laplace_beltrami_apply(metric, np.full(metric.grid_shape, 2.5))).max() < 1e-12


def test_laplace_beltrami_second_order_oracle():
    errs = []
    for n in (32, 64):
        m = cosine(n)
        u = smooth_field(m)
        errs.append(np.abs(laplace_beltrami_apply(m, u) - fd_laplace_beltrami(m.psi_grid(), u, L / n)).max())
    assert 3.5 < errs[0] / errs[1] < 4.5


def _weighted(m, f, h):
    return float(np.sum(f * h * m.sqrt_g_grid()) * m.cell_volume)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_laplace_beltrami_self_adjoint(seed):
    m = bump(16, amplitude=0.3)
    rng = np.random.default_rng(seed)
    # smooth random fields: low-pass filtered noise
    f, h = (np.real(np.fft.ifftn(np.fft.fftn(rng.standard_normal(m.grid_shape))
                                  * np.exp(-spectral_laplacian_symbol(m)))) for _ in range(2))
    a = _weighted(m, f, laplace_beltrami_apply(m, h))
    b = _weighted(m, h, laplace_beltrami_apply(m, f))
    assert abs(a - b) <= 1e-10 * max(abs(a), abs(b))


def spectral_laplacian_symbol(m):
    k = 2 * np.pi * np.fft.fftfreq(m.grid_shape[0], d=L / m.grid_shape[0])
    return sum(kk**2 for kk in np.meshgrid(*([k] * m.N), indexing="ij"))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_divergence_theorem(seed):
    m = cosine(16)
    u = np.random.default_rng(seed).standard_normal(m.grid_shape)
    total = np.sum(laplace_beltrami_apply(m, u) * m.sqrt_g_grid()) * m.cell_volume
    assert abs(total) < 1e-10 * np.linalg.norm(u)


def test_spectral_laplacian_mode():
    x = np.arange(16) * L / 16
    f = np.sin(4 * np.pi * x / L)
    assert np.allclose(spectral_laplacian(f, L), -(4 * np.pi / L) ** 2 * f, atol=1e-12)


def test_trig_interpolation_exact_on_band_limited(rng):
    m = ConformalMetric(3, L, (16,) * 3)
    X = m.nodes()
    f = np.cos(2 * np.pi * X[0] / L) * np.sin(4 * np.pi * X[2] / L)
    x = rng.uniform(0, L, (6, 3))
    exact = np.cos(2 * np.pi * x[:, 0] / L) * np.sin(4 * np.pi * x[:, 2] / L)
    assert np.allclose(trig_interpolate(f, L, x), exact, atol=1e-12)


# ---- distances -----------------------------------------------------------------


def test_minimal_image():
    assert np.allclose(minimal_image(np.array([9.0, -6.0, 4.0]), L), [-1.0, 4.0, 4.0])


def test_flat_half_period():
    m = ConformalMetric(3, L, (8,) * 3)
    assert geodesic_distance(m, [0, 0, 0], [L / 2, 0, 0]) == pytest.approx(L / 2)


def test_constant_scaling():
    m = ConformalMetric(3, L, (8,) * 3, "constant", {"amplitude": 0.4})
    assert geodesic_distance(m, [1, 1, 1], [4, 5, 1]) == pytest.approx(math.exp(0.4) * 5.0)


def test_geodesic_matches_refined_dijkstra():
    # 2D so that the oracle grid can be twice as fine with a wide stencil
    m = ConformalMetric(2, L, (128, 128), "bump", {"amplitude": 0.3, "center": [5.0, 5.0],
                                                   "sharpness": 0.1})
    for a, b in (([1.0, 2.0], [8.0, 7.0]), ([5.0, 1.0], [5.0, 9.0])):
        ref = dijkstra_distance(m.psi, L, 256, 2, a, b, reach=3)
        assert abs(geodesic_distance(m, a, b) - ref) / ref < 0.02


def test_graph_distance_upper_bounds_geodesic():
    m = bump(24)
    a, b = [0.0, 0.0, 0.0], [5.0, 2.5, 0.0]
    assert graph_distance(m, a, b) >= geodesic_distance(m, a, b) * (1 - 1e-9)


@settings(max_examples=8, deadline=None)
@given(st.lists(st.floats(0, L), min_size=6, max_size=6))
def test_geodesic_symmetry_and_triangle(pts):
    m = bump(24, amplitude=0.2)
    a, b, c = np.array(pts[:2] + [0.0]), np.array(pts[2:4] + [1.0]), np.array(pts[4:] + [2.0])
    dab, dba = geodesic_distance(m, a, b), geodesic_distance(m, b, a)
    assert abs(dab - dba) <= 0.02 * max(dab, 1e-12)
    dbc, dac = geodesic_distance(m, b, c), geodesic_distance(m, a, c)
    assert dac <= (dab + dbc) * 1.02 + 1e-12
