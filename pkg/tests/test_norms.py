import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from torus_ons.extension import ExtensionOperator, extend, kernel
from torus_ons.norms import (
    DensityMatrix,
    MixedNormSpec,
    besov_norm,
    conjugate_exponent,
    default_besov_kmax,
    density,
    density_coefficients,
    mixed_norm,
    paraboloid_gram,
    periodized_power_potential,
    power_potential_multiplier,
    power_potential_table,
    psd_sqrt,
    sandwich_singular_values,
    schatten_norm,
    sobolev_schatten_norm,
    trace_pairing,
)
from torus_ons.spectral_core import (
    CoefficientVector,
    GridFunction,
    ResolutionError,
    TorusGrid,
    build_lattice,
    product_exact_grid,
)
from torus_ons.strichartz_lab import extremal_instance, random_orthonormal_family, random_weight


# ---------------------------------------------------------------------------
# oracles

def cell_fourier_1d(a, n):
    """int_{-1/2}^{1/2} |x|^{-a} e^{-2 pi i n x} dx in closed form via the incomplete gamma function."""
    if n == 0:
        return 2 * 0.5 ** (1 - a) / (1 - a)
    w = 2 * mpmath.pi * abs(n)
    val = 2 * mpmath.re((1j * w) ** (a - 1) * mpmath.gammainc(1 - a, 0, 1j * w / 2))
    return float(val)


def cell_mass_2d(a):
    """int over [-1/2,1/2]^2 of |x|^{-a} as a one-dimensional angular integral."""
    f = lambda th: (1 / (2 * mpmath.cos(th))) ** (2 - a) / (2 - a)
    return float(8 * mpmath.quad(f, [0, mpmath.pi / 4]))


def direct_mixed_norm(vals, p, q):
    """Independent single-loop implementation over time slices."""
    Gt = vals.shape[-1]
    slices = []
    for k in range(Gt):
        s = np.abs(vals[..., k]).ravel()
        slices.append(s.max() if math.isinf(q) else (np.sum(s**q) / s.size) ** (1 / q))
    slices = np.array(slices)
    return slices.max() if math.isinf(p) else (np.sum(slices**p) / Gt) ** (1 / p)


def dense_sandwich(W1, W2, op):
    """Full grid matrix of F -> W1 (K_N * (W2 F)) in an orthonormal basis of the grid."""
    g = op.grid
    K = kernel(op).values
    pts = np.indices(g.shape).reshape(g.d + 1, -1).T
    diff = (pts[:, None, :] - pts[None, :, :]) % np.array(g.shape)
    A = K[tuple(np.moveaxis(diff, -1, 0))]
    w1, w2 = W1.values.reshape(-1), W2.values.reshape(-1)
    return w1[:, None] * A * w2[None, :] * g.weight


# ---------------------------------------------------------------------------
# mixed norms

def test_mixed_norm_constant():
    g = TorusGrid(2, 6, 5)
    F = GridFunction(g, np.full(g.shape, -3 + 4j))
    for p, q in [(1, 1), (2, 7), (np.inf, 3), (4, np.inf)]:
        assert mixed_norm(F, MixedNormSpec(p, q)) == pytest.approx(5.0, rel=1e-14)


@given(st.sampled_from([1, 1.5, 2, 3, 7, np.inf]), st.sampled_from([1, 2, 4, np.inf]), st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_mixed_norm_matches_direct(p, q, seed):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal((5, 5, 7)) + 1j * rng.standard_normal((5, 5, 7))
    g = TorusGrid(2, 5, 7)
    got = mixed_norm(GridFunction(g, vals), MixedNormSpec(p, q))
    assert got == pytest.approx(direct_mixed_norm(vals, p, q), rel=1e-12)
    if p == q and not math.isinf(p):
        flat = (np.mean(np.abs(vals) ** p)) ** (1 / p)
        assert got == pytest.approx(flat, rel=1e-12)


def test_mixed_norm_rejects_small_exponent():
    with pytest.raises(ValueError):
        MixedNormSpec(0.5, 2)
    with pytest.raises(ValueError):
        MixedNormSpec(2, 2, (0.3, 0.3))


@given(st.integers(0, 2**31))
@settings(max_examples=25, deadline=None)
def test_mixed_norm_hoelder(seed):
    rng = np.random.default_rng(seed)
    g = TorusGrid(1, 16, 12)
    F = random_weight(g, rng)
    G = random_weight(g, rng)
    p1, q1, p2, q2 = rng.uniform(2.0, 8.0, 4)
    p, q = 1 / (1 / p1 + 1 / p2), 1 / (1 / q1 + 1 / q2)
    lhs = mixed_norm(F * G, MixedNormSpec(p, q))
    rhs = mixed_norm(F, MixedNormSpec(p1, q1)) * mixed_norm(G, MixedNormSpec(p2, q2))
    assert lhs <= rhs * (1 + 1e-12)


def test_window_covering():
    rng = np.random.default_rng(3)
    N = 4
    g = TorusGrid(1, 12, 40)
    F = random_weight(g, rng)
    p = 3.0
    total = mixed_norm(F, MixedNormSpec(p, 2)) ** p
    parts = sum(mixed_norm(F, MixedNormSpec(p, 2, (i / N, (i + 1) / N))) ** p for i in range(N))
    assert parts == pytest.approx(total, rel=1e-10)


def test_conjugate_exponent():
    assert conjugate_exponent(1) == np.inf
    assert conjugate_exponent(np.inf) == 1
    assert conjugate_exponent(4) == pytest.approx(4 / 3)


# ---------------------------------------------------------------------------
# Besov

def test_besov_single_mode_and_zero():
    g = TorusGrid(1, 256, 1)
    for k0 in (1, 3, 5):
        n0 = 2**k0  # the only radius where the dyadic symbol of block k0 equals 1 alone
        f = GridFunction(g, np.exp(2j * np.pi * n0 * g.x))
        for s, p in [(0.5, 2), (-0.3, 1), (1.0, np.inf)]:
            r = besov_norm(f, s, p)
            assert r.blocks[k0] == pytest.approx(2 ** (k0 * s), rel=1e-12)
            assert np.sum(r.blocks > 1e-12) == 1
    zero = besov_norm(GridFunction(g, np.zeros(256)), 1.0, 2)
    assert zero.norm == 0


def test_besov_resolution():
    assert default_besov_kmax(1024) == 7
    g = TorusGrid(1, 64, 1)
    with pytest.raises(ResolutionError):
        besov_norm(GridFunction(g, np.ones(64)), 0, 2, Kmax=5)


def test_besov_threshold_behaviour():
    """Below the critical power the blocks decay, above it they grow like 2^{k(a - 1/2)}."""
    g = TorusGrid(1, 1024, 1)
    for a, sign in [(0.4, -1), (0.6, 1)]:
        f = GridFunction(g, np.fft.ifft(power_potential_multiplier(1, a, g)) * g.Gx)
        b = besov_norm(f, 0.0, 2, Kmax=7).blocks
        steps = b[4:] / b[3:-1]
        assert np.all(np.sign(np.log(steps)) == sign)
        assert np.allclose(steps, 2 ** (a - 0.5), rtol=0.01)


# ---------------------------------------------------------------------------
# power potential coefficients

@pytest.mark.parametrize("a", [0.2, 0.5, 0.8])
def test_power_potential_1d_against_closed_form(a):
    table = power_potential_table(1, a, 40)
    for n in [0, 1, 2, 5, 17, 40]:
        assert table[40 + n] == pytest.approx(cell_fourier_1d(a, n), rel=1e-9, abs=1e-12)


def test_power_potential_2d_mass():
    for a in (0.5, 1.3):
        w0 = power_potential_table(2, a, 3)[3, 3]
        assert w0 == pytest.approx(cell_mass_2d(a), rel=1e-8)


def test_power_potential_2d_against_tensor_quadrature():
    # independent oracle: adaptive cartesian quadrature of the cell integral
    a = 0.7
    table = power_potential_table(2, a, 2)
    from scipy import integrate

    def coef(n1, n2):
        # the sine parts cancel by symmetry, leaving four copies of the first quadrant
        f = lambda y, x: math.hypot(x, y) ** (-a) * math.cos(2 * math.pi * n1 * x) * math.cos(2 * math.pi * n2 * y)
        val, _ = integrate.dblquad(f, 0, 0.5, 0, 0.5, epsabs=1e-11, epsrel=1e-11)
        return 4 * val

    for n in [(1, 0), (1, 1), (2, 1)]:
        assert table[2 + n[0], 2 + n[1]] == pytest.approx(coef(*n), rel=1e-6)


def test_power_potential_symmetry_and_positivity():
    lat = build_lattice(1, 16)
    w = periodized_power_potential(0.5, lat).a
    assert np.max(np.abs(w.imag)) < 1e-12
    assert np.max(np.abs(w - w[::-1])) < 1e-10
    half = w.real[16:]
    assert np.all(half > 0) and np.all(np.diff(half) < 0)
    w2 = periodized_power_potential(1.2, (2, 3)).a.real.reshape(7, 7)
    assert np.allclose(w2, w2.T, atol=1e-10) and np.allclose(w2, w2[::-1], atol=1e-10)
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            periodized_power_potential(bad, lat)


# ---------------------------------------------------------------------------
# density matrices

def test_density_examples(rng):
    lat = build_lattice(1, 3)
    g = TorusGrid(1, 16, 1)
    e0 = DensityMatrix(lat, [1.0], [CoefficientVector.indicator(lat, [0])])
    assert np.allclose(density(e0, g).space_values, 1.0)
    fam = random_orthonormal_family(lat, 3, rng)
    lam = np.array([0.3, 1.2, 2.0])
    gam = DensityMatrix(lat, lam, fam.vectors)
    rho = density(gam, g, t=0.37)
    assert np.mean(rho.space_values) == pytest.approx(lam.sum(), rel=1e-12)
    assert np.min(rho.space_values) >= -1e-12
    w, efam = extremal_instance(2, 2)
    rho = density(DensityMatrix(efam.lattice, w, efam.vectors), TorusGrid(2, 10, 1), t=0.123)
    assert np.allclose(rho.space_values, 25.0)


def test_density_matrix_validation(rng):
    lat = build_lattice(1, 2)
    with pytest.raises(ValueError):
        DensityMatrix(lat, [1.0, 1.0], np.ones((2, 5)))
    with pytest.raises(ValueError):
        DensityMatrix(lat, [1.0], np.eye(5)[:2])
    fam = random_orthonormal_family(lat, 2, rng)
    gam = DensityMatrix(lat, [0.5, 2.0], fam.vectors)
    back = DensityMatrix.from_matrix(gam.matrix(), lat)
    assert back.rank == 2
    assert np.max(np.abs(back.matrix() - gam.matrix())) < 1e-13
    assert DensityMatrix.zero(lat).trace() == 0


def test_density_coefficients_match_grid(rng):
    lat = build_lattice(2, 2)
    fam = random_orthonormal_family(lat, 3, rng)
    gam = DensityMatrix(lat, [1.0, 0.5, 0.25], fam.vectors)
    g = TorusGrid(2, 10, 1)
    rho = density(gam, g).space_values
    coef = np.fft.fftn(rho) / rho.size
    rc = density_coefficients(gam.matrix(), lat)
    for k in [(0, 0), (1, -2), (4, 3), (-4, -4)]:
        assert rc[k[0] + 4, k[1] + 4] == pytest.approx(coef[k[0] % 10, k[1] % 10], abs=1e-13)


# ---------------------------------------------------------------------------
# trace pairing

def test_trace_pairing_examples(rng):
    lat = build_lattice(1, 3)
    grid = product_exact_grid(1, 3)
    fam = random_orthonormal_family(lat, 3, rng)
    lam = np.array([1.0, 0.4, 2.5])
    gam = DensityMatrix(lat, lam, fam.vectors)
    one = GridFunction(grid, np.ones(grid.shape))
    tp = trace_pairing(gam, one, 0.0)
    assert tp.left == pytest.approx(lam.sum(), rel=1e-12)
    assert tp.right == pytest.approx(lam.sum(), rel=1e-12)
    V = GridFunction(grid, random_weight(grid, rng).values.real)
    tp = trace_pairing(gam, V, 1.0)
    assert tp.residual <= 1e-10 * (1 + abs(tp.left))
    assert abs(tp.left.imag) < 1e-12
    z = trace_pairing(DensityMatrix.zero(lat), V, 1.0)
    assert z.left == 0 and z.right == 0


# ---------------------------------------------------------------------------
# Schatten

def test_schatten_examples():
    assert schatten_norm([3, 4], 2) == pytest.approx(5)
    assert schatten_norm([3, 4], 1) == pytest.approx(7)
    assert schatten_norm([3, 4], np.inf) == 4
    with pytest.raises(ValueError):
        schatten_norm([-1, 2], 2)
    with pytest.raises(ValueError):
        schatten_norm([1, 2], 0.5)


@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=20), st.floats(1, 10), st.floats(1, 10))
@settings(max_examples=60, deadline=None)
def test_schatten_monotone_in_exponent(sv, a1, a2):
    lo, hi = min(a1, a2), max(a1, a2)
    assert schatten_norm(sv, lo) >= schatten_norm(sv, hi) * (1 - 1e-12)
    assert schatten_norm(sv, 2) ** 2 == pytest.approx(np.sum(np.square(sv)), rel=1e-12, abs=1e-300)


def test_psd_sqrt(rng):
    A = rng.standard_normal((6, 4)) + 1j * rng.standard_normal((6, 4))
    M = A @ A.conj().T  # rank 4, PSD
    R = psd_sqrt(M)
    assert np.max(np.abs(R @ R - M)) < 1e-10 * np.max(np.abs(M))


@pytest.mark.parametrize("N", [1, 2])
def test_sandwich_unit_weight(N):
    op = ExtensionOperator(build_lattice(1, N), product_exact_grid(1, N))
    one = GridFunction(op.grid, np.ones(op.grid.shape))
    sv = sandwich_singular_values(one, one, op)
    assert sv.size == 2 * N + 1
    assert np.max(np.abs(sv - 1)) < 1e-12


@pytest.mark.parametrize("seed", range(4))
def test_sandwich_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    N = 2
    op = ExtensionOperator(build_lattice(1, N), product_exact_grid(1, N))
    W1, W2 = random_weight(op.grid, rng), random_weight(op.grid, rng)
    sv = sandwich_singular_values(W1, W2, op)
    A = dense_sandwich(W1, W2, op)
    dense = np.linalg.svd(A, compute_uv=False)[: sv.size]
    assert np.allclose(sv, dense, rtol=1e-8)
    # Frobenius double-integral formula
    frob = np.sum(np.abs(A) ** 2)
    assert schatten_norm(sv, 2) ** 2 == pytest.approx(frob, rel=1e-8)
    # A and A* share singular values
    sw = sandwich_singular_values(W2.conj(), W1.conj(), op)
    assert np.allclose(np.sort(sw), np.sort(sv), rtol=1e-9, atol=1e-12)


def test_paraboloid_gram_is_gram(rng):
    op = ExtensionOperator(build_lattice(2, 1), product_exact_grid(2, 1))
    psi = random_weight(op.grid, rng).abs2()
    M = paraboloid_gram(psi, op)
    lat = op.lattice
    for m, n in [(0, 0), (1, 5), (8, 3)]:
        em = extend(op, CoefficientVector(lat, np.eye(lat.size)[m])).values
        en = extend(op, CoefficientVector(lat, np.eye(lat.size)[n])).values
        direct = np.sum(np.conj(em) * psi.values * en) * op.grid.weight
        assert M[m, n] == pytest.approx(direct, abs=1e-13)


def test_sobolev_schatten(rng):
    lat = build_lattice(1, 3)
    gam = DensityMatrix(lat, [2.0], [CoefficientVector.indicator(lat, [2])])
    assert sobolev_schatten_norm(gam, 1.0, 1) == pytest.approx(2.0 * 5.0)
    fam = random_orthonormal_family(lat, 2, rng)
    g2 = DensityMatrix(lat, [1.0, -0.5], fam.vectors)
    assert sobolev_schatten_norm(g2, 0.0, 1) == pytest.approx(1.5)
