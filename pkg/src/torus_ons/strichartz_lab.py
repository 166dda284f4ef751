"""Numerical experiments around orthonormal Strichartz estimates on the torus."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .extension import ExtensionOperator, extend_many, kernel_1d
from .norms import (
    MixedNormSpec,
    conjugate_exponent,
    mixed_norm,
    paraboloid_gram,
    sandwich_singular_values,
    schatten_norm,
    space_time_fourier,
)
from .spectral_core import (
    CoefficientVector,
    FrequencyLattice,
    GridFunction,
    TorusGrid,
    build_lattice,
    product_exact_grid,
)


@dataclass
class OrthonormalFamily:
    lattice: FrequencyLattice
    vectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = self.vectors
        if isinstance(v, (list, tuple)) and v and isinstance(v[0], CoefficientVector):
            v = np.array([c.a for c in v])
        self.vectors = np.asarray(v, dtype=complex).reshape(-1, self.lattice.size)
        dev = np.max(np.abs(self.gram() - np.eye(len(self)))) if len(self) else 0.0
        if dev > 1e-10:
            raise ValueError(f"family is not orthonormal (Gram deviation {dev:.3e})")

    def __len__(self):
        return self.vectors.shape[0]

    def gram(self) -> np.ndarray:
        return self.vectors.conj() @ self.vectors.T

    def galilean_shift(self, c: float) -> "OrthonormalFamily":
        """b_j(n) = a_j(n) exp(-2 pi i c |n|^2)."""
        ph = np.exp(-2j * np.pi * c * self.lattice.norms_sq)
        return OrthonormalFamily(self.lattice, self.vectors * ph)


@dataclass
class ExponentFit:
    slope: float
    intercept: float
    max_residual: float
    Ns: tuple
    values: tuple = ()


@dataclass
class EndpointReport:
    total: float
    term_I: float
    term_II: complex
    bound: float

    @property
    def residual(self) -> float:
        return abs(self.total - (self.term_I + self.term_II))


@dataclass
class DualityReport:
    R1: float
    R2: float
    pairing_residual: float
    pairing: float


# ---------------------------------------------------------------------------

def critical_alpha(rho: float, d: int) -> float:
    """alpha(rho) with 1/alpha = 1 - rho/d."""
    inv = 1.0 - rho / d
    return np.inf if inv <= 0 else 1.0 / inv


def admissible_points(d: int) -> dict:
    """(1/q, 1/p) coordinates of the points A, B, C."""
    return {
        "A": ((d - 1) / (d + 1), d / (d + 1)),
        "B": (1.0, 0.0),
        "C": ((d - 2) / d, 1.0),
    }


def p_star(d: int) -> float:
    return (d + 2) / d


def lp_weight_norm(weights, alpha: float) -> float:
    w = np.abs(np.asarray(weights, dtype=float))
    if np.isinf(alpha):
        return float(np.max(w))
    return float(np.sum(w**alpha) ** (1.0 / alpha))


def extremal_instance(d: int, N: int):
    """lambda_j = 1 on S_{d,N}, a_j = indicator of mode j."""
    lat = build_lattice(d, N)
    return np.ones(lat.size), OrthonormalFamily(lat, np.eye(lat.size))


def random_orthonormal_family(lattice: FrequencyLattice, rank: int, rng: np.random.Generator) -> OrthonormalFamily:
    Z = rng.standard_normal((lattice.size, rank)) + 1j * rng.standard_normal((lattice.size, rank))
    Q, _ = np.linalg.qr(Z)
    return OrthonormalFamily(lattice, Q.T)


def random_weight(grid: TorusGrid, rng: np.random.Generator, scale: float = 1.0) -> GridFunction:
    """Smooth W: complex Gaussian Fourier coefficients on |k_x| < Gx/4, |k_t| < Gt/4."""
    shape = grid.shape
    spec = np.zeros(shape, dtype=complex)
    kx = np.fft.fftfreq(grid.Gx, 1.0 / grid.Gx)
    kt = np.fft.fftfreq(grid.Gt, 1.0 / grid.Gt)
    mask_x = np.abs(kx) < grid.Gx / 4
    mask_t = np.abs(kt) < grid.Gt / 4
    mask = mask_t
    for _ in range(grid.d):
        mask = np.multiply.outer(mask_x, mask)
    count = int(np.count_nonzero(mask))
    coef = (rng.standard_normal(count) + 1j * rng.standard_normal(count)) / np.sqrt(2 * count)
    spec[mask] = coef * scale
    vals = np.fft.ifftn(spec) * grid.size
    return GridFunction(grid, vals)


def density_on_grid(weights, family: OrthonormalFamily, op: ExtensionOperator) -> np.ndarray:
    """sum_j lambda_j |E_N a_j|^2 as a space-time sample array."""
    if family.lattice != op.lattice:
        raise ValueError("family lattice does not match the operator")
    weights = np.asarray(weights, dtype=float)
    if weights.shape[0] != len(family):
        raise ValueError("one weight per family member required")
    out = np.zeros(op.grid.shape)
    for j0 in range(0, len(family), 16):
        ext = extend_many(op, family.vectors[j0:j0 + 16])
        out += np.tensordot(weights[j0:j0 + 16], np.abs(ext) ** 2, axes=1)
    return out


def lhs_functional(weights, family: OrthonormalFamily, spec: MixedNormSpec, op: ExtensionOperator) -> float:
    rho = density_on_grid(weights, family, op)
    return mixed_norm(GridFunction(op.grid, rho), spec)


def exponent_fit(Ns: Sequence[float], values: Sequence[float]) -> ExponentFit:
    Ns = np.asarray(Ns, dtype=float)
    values = np.asarray(values, dtype=float)
    if Ns.size < 3:
        raise ValueError("need at least three cutoffs")
    if np.unique(Ns).size < 2:
        raise ValueError("degenerate fit: all cutoffs equal")
    x, y = np.log(Ns), np.log(values)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return ExponentFit(float(slope), float(intercept), float(np.max(np.abs(resid))),
                       tuple(int(n) for n in Ns), tuple(float(v) for v in values))


def exponent_sweep(
    d: int,
    spec: MixedNormSpec,
    alpha: float,
    Ns: Sequence[int],
    instance_maker: Callable = extremal_instance,
    grid_maker: Callable = product_exact_grid,
) -> ExponentFit:
    """Least-squares slope of log(lhs / ||lambda||_alpha) against log N."""
    ratios = []
    for N in Ns:
        weights, fam = instance_maker(d, N)
        op = ExtensionOperator(fam.lattice, grid_maker(d, N))
        ratios.append(lhs_functional(weights, fam, spec, op) / lp_weight_norm(weights, alpha))
    return exponent_fit(Ns, ratios)


# ---------------------------------------------------------------------------
# duality

def weight_norm(W: GridFunction, spec: MixedNormSpec) -> float:
    """||W||_{L^{2p'}_t L^{2q'}_x} for the conjugate exponents of spec."""
    dual = MixedNormSpec(2 * conjugate_exponent(spec.p), 2 * conjugate_exponent(spec.q), spec.time_window)
    return mixed_norm(W, dual)


def duality_check(weights, family: OrthonormalFamily, W: GridFunction, spec: MixedNormSpec,
                  alpha: float, op: ExtensionOperator) -> DualityReport:
    lam_norm = lp_weight_norm(weights, alpha)
    if lam_norm <= 0:
        raise ValueError("weights vanish")
    wn = weight_norm(W, spec)
    if wn <= 0:
        raise ValueError("W vanishes")
    rho = density_on_grid(weights, family, op)
    R1 = mixed_norm(GridFunction(op.grid, rho), spec) / lam_norm
    sv = sandwich_singular_values(W, W, op)
    R2 = schatten_norm(sv, conjugate_exponent(alpha)) / wn**2
    psi = W.abs2()
    left = complex(np.sum(rho * psi.values) * op.grid.weight)
    Gamma = (family.vectors.T * np.asarray(weights, dtype=float)) @ family.vectors.conj()
    right = complex(np.sum(Gamma * paraboloid_gram(psi, op).T))
    return DualityReport(R1, R2, abs(left - right), left.real)


def duality_search(weights, family, spec, alpha, op, trials: int = 200, seed: int = 0) -> dict:
    """Random-W falsification of <rho, |W|^2> <= ||lambda||_alpha ||W E E* W*||_{C^alpha'}."""
    rng = np.random.default_rng(seed)
    lam_norm = lp_weight_norm(weights, alpha)
    rho = density_on_grid(weights, family, op)
    R1 = mixed_norm(GridFunction(op.grid, rho), spec) / lam_norm
    worst = -np.inf
    best_R2 = 0.0
    min_R2 = np.inf
    for _ in range(trials):
        W = random_weight(op.grid, rng)
        W = GridFunction(op.grid, W.values + 1.0)
        wn2 = weight_norm(W, spec) ** 2
        sv = sandwich_singular_values(W, W, op)
        R2 = schatten_norm(sv, conjugate_exponent(alpha)) / wn2
        pair = float(np.sum(rho * np.abs(W.values) ** 2) * op.grid.weight) / (lam_norm * wn2)
        worst = max(worst, pair / R2)
        best_R2 = max(best_R2, R2)
        min_R2 = min(min_R2, R2)
    return {"R1": R1, "max_R2": best_R2, "min_R2": min_R2, "max_pairing_over_R2": worst}


# ---------------------------------------------------------------------------
# endpoint d = 1

def pair_count(m1: int, m2: int, N: int) -> int:
    """Number of (n1, n2) in [-N, N]^2 with n1 - n2 = m1, n1^2 - n2^2 = m2 (m1 != 0)."""
    if m1 == 0:
        raise ValueError("m1 must be nonzero")
    if m2 % m1:
        return 0
    s = m2 // m1  # n1 + n2
    if (s + m1) % 2:
        return 0
    n1, n2 = (s + m1) // 2, (s - m1) // 2
    return int(abs(n1) <= N and abs(n2) <= N)


def l4l2_norm_sq(W: GridFunction) -> float:
    return mixed_norm(W, MixedNormSpec(4, 2)) ** 2


def endpoint_decomposition(W1: GridFunction, W2: GridFunction, N: int, op: ExtensionOperator) -> EndpointReport:
    """||W1 E E* W2||_{C^2}^2 split into the diagonal term I and the off-diagonal term II."""
    if op.lattice.d != 1:
        raise ValueError("endpoint decomposition is one-dimensional")
    if op.lattice.N != N:
        raise ValueError("operator cutoff does not match N")
    g = op.grid
    psi1 = space_time_fourier(np.abs(W1.values) ** 2)
    psi2 = space_time_fourier(np.abs(W2.values) ** 2)
    term_I = float((2 * N + 1) * psi1[0, 0].real * psi2[0, 0].real)
    term_II = 0.0 + 0.0j
    for m1 in range(-2 * N, 2 * N + 1):
        if m1 == 0:
            continue
        for m2 in range(-N * N, N * N + 1):
            if pair_count(m1, m2, N):
                ix, it = m1 % g.Gx, m2 % g.Gt
                term_II += np.conj(psi1[ix, it]) * psi2[ix, it]
    sv = sandwich_singular_values(W1, W2, op)
    total = float(np.sum(sv**2))
    bound = 6 * N * l4l2_norm_sq(W1) * l4l2_norm_sq(W2)
    return EndpointReport(total, term_I, complex(term_II), float(bound))


# ---------------------------------------------------------------------------
# dyadic time shells

@dataclass
class DyadicRow:
    j: int
    lo: float
    hi: float
    norm: float
    frobenius_oracle: float


@dataclass
class DyadicProfile:
    rows: list
    alpha: float
    fit: ExponentFit | None

    @property
    def norms(self) -> np.ndarray:
        return np.array([r.norm for r in self.rows])


def dyadic_shell_range(N: int, Gt: int) -> range:
    """Shells [2^{j-1}, 2^j) covering one grid step up to 1/N (top shell clipped at 1/N)."""
    j_hi = math.ceil(math.log2(1.0 / N) - 1e-12)
    j_lo = math.floor(math.log2(1.0 / Gt) + 1e-12) + 1
    return range(j_lo, j_hi + 1)


def _window_points(grid: TorusGrid, N: int):
    """Time indices with t in I_N = [-1/(2N), 1/(2N)]."""
    tc = grid.centered_t()
    return np.nonzero(np.abs(tc) <= 1.0 / (2 * N) + 1e-12)[0]


def shell_kernels(op: ExtensionOperator, N: int):
    """Yield (j, lo, hi, K_{N,j} values on all space-time offsets) for the dyadic shells."""
    g = op.grid
    tc = np.abs(g.centered_t())
    # K_N on the full grid (spatial axes then time), evaluated directly
    K1 = kernel_1d(N, g.x, g.t)  # (Gx, Gt)
    K = K1
    for _ in range(g.d - 1):
        K = K[..., None, :] * K1.reshape((1,) * (K.ndim - 1) + (g.Gx, g.Gt))
    top = 1.0 / N
    for j in dyadic_shell_range(N, g.Gt):
        lo, hi = 2.0 ** (j - 1), min(2.0**j, top)
        m = (tc >= lo - 1e-12) & (tc < hi - 1e-12)
        yield j, lo, hi, K * m


def _dense_window_operator(Kj: np.ndarray, W1v: np.ndarray, W2v: np.ndarray, grid: TorusGrid, tidx: np.ndarray) -> np.ndarray:
    """Matrix of F -> W1 (K_j * (W2 F)) restricted to window samples, in an orthonormal basis."""
    d = grid.d
    space = np.indices(grid.space_shape).reshape(d, -1).T
    S = np.tile(space, (len(tidx), 1))
    T = np.repeat(tidx, len(space))
    dS = (S[:, None, :] - S[None, :, :]) % grid.Gx
    dT = (T[:, None] - T[None, :]) % grid.Gt
    A = Kj[tuple(np.moveaxis(dS, -1, 0)) + (dT,)]
    idx = tuple(S.T) + (T,)
    w1, w2 = W1v[idx], W2v[idx]
    return (w1[:, None] * A * w2[None, :]) * grid.weight


def shell_pair_measure(grid: TorusGrid, N: int, lo: float, hi: float) -> float:
    """Discrete measure of {(t, t') in I_N^2 : lo <= |t - t'| < hi} on the time grid."""
    tidx = _window_points(grid, N)
    tc = grid.centered_t()[tidx]
    diff = np.abs(tc[:, None] - tc[None, :])
    diff = np.minimum(diff, 1.0 - diff)
    m = (diff >= lo - 1e-12) & (diff < hi - 1e-12)
    return float(np.count_nonzero(m)) / grid.Gt**2


def dyadic_schatten_profile(W1: GridFunction, W2: GridFunction, N: int, alpha: float,
                            op: ExtensionOperator, max_dense: int = 6000) -> DyadicProfile:
    """Schatten-alpha norm of W1 1_{I_N} (K_{N,j} * (1_{I_N} W2 .)) for every dyadic shell j."""
    g = op.grid
    tidx = _window_points(g, N)
    npts = len(tidx) * g.Gx**g.d
    if npts > max_dense:
        raise ValueError(f"dense route needs {npts} window points (limit {max_dense})")
    rows = []
    for j, lo, hi, Kj in shell_kernels(op, N):
        A = _dense_window_operator(Kj, W1.values, W2.values, g, tidx)
        if alpha == 2:
            nrm = float(np.linalg.norm(A))
        else:
            nrm = schatten_norm(np.linalg.svd(A, compute_uv=False), alpha)
        oracle = math.sqrt((2 * N + 1) ** g.d * shell_pair_measure(g, N, lo, hi))
        rows.append(DyadicRow(j, lo, hi, nrm, oracle))
    if not rows:
        raise ValueError("empty dyadic range")
    pos = [r for r in rows if r.norm > 0]
    fit = exponent_fit([2.0**r.j for r in pos], [r.norm for r in pos]) if len(pos) >= 3 else None
    return DyadicProfile(rows, alpha, fit)


def local_dual_slope(d: int, alpha: float, mu: float) -> float:
    """Exponent of 2^j in the per-shell bound: (1/2 - d(1 - mu)/2) 2/alpha + 1 - 2/alpha."""
    return (0.5 - 0.5 * d * (1 - mu)) * 2 / alpha + 1 - 2 / alpha
