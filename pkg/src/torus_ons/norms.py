"""Mixed Lebesgue, Besov and Schatten norms; densities of finite-rank operators."""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special

from .extension import ExtensionOperator, extend_many
from .spectral_core import (
    CoefficientVector,
    FrequencyLattice,
    GridFunction,
    ResolutionError,
    TorusGrid,
    bessel,
    build_lattice,
    bump,
    coefficients_to_grid,
    dyadic,
)


class EigensolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# mixed norms

@dataclass(frozen=True)
class MixedNormSpec:
    """L^p_t L^q_x with an optional half-open time window [t0, t1) on the time torus."""

    p: float
    q: float
    time_window: tuple = (0.0, 1.0)

    def __post_init__(self):
        if not (self.p >= 1 and self.q >= 1):
            raise ValueError(f"exponents must be >= 1, got p={self.p}, q={self.q}")
        t0, t1 = self.time_window
        if not 0 < t1 - t0 <= 1:
            raise ValueError(f"window length must lie in (0, 1], got {t1 - t0}")

    def window_mask(self, grid: TorusGrid) -> np.ndarray:
        t0, t1 = self.time_window
        length = t1 - t0
        if length >= 1:
            return np.ones(grid.Gt, dtype=bool)
        rel = np.mod(grid.t - t0, 1.0)
        # snap samples that sit on the window edges up to roundoff
        rel = np.where(np.isclose(rel, 1.0, atol=1e-12), 0.0, rel)
        return rel < length - 1e-12


def conjugate_exponent(p: float) -> float:
    if p == 1:
        return np.inf
    if np.isinf(p):
        return 1.0
    return p / (p - 1.0)


def _lq_space(vals: np.ndarray, q: float, d: int) -> np.ndarray:
    """Normalized L^q_x norm of each time slice; vals has time as the last axis."""
    a = np.abs(vals).reshape(-1, vals.shape[-1])
    if np.isinf(q):
        return np.max(a, axis=0)
    return np.mean(a**q, axis=0) ** (1.0 / q)


def mixed_norm(F: GridFunction, spec: MixedNormSpec) -> float:
    g = F.grid
    mask = spec.window_mask(g)
    if not np.any(mask):
        raise ValueError("time window contains no grid samples")
    inner = _lq_space(F.values[..., mask], spec.q, g.d)
    if np.isinf(spec.p):
        return float(np.max(inner))
    return float((np.sum(inner**spec.p) / g.Gt) ** (1.0 / spec.p))


# ---------------------------------------------------------------------------
# Besov

@dataclass
class BesovResult:
    norm: float
    argmax: int
    blocks: np.ndarray

    @property
    def saturated(self) -> bool:
        """True when the sup sits at the top block, i.e. truncation may hide growth."""
        return self.argmax == len(self.blocks) - 1


def default_besov_kmax(Gx: int) -> int:
    k = 0
    while 2 ** (k + 2) < Gx / 2:
        k += 1
    return k


def besov_norm(f: GridFunction, s: float, p: float, Kmax: int | None = None) -> BesovResult:
    """max_{k <= Kmax} 2^{ks} ||P_k f||_{L^p} with the dyadic partition of spectral_core."""
    g = f.grid
    if not g.is_space_only:
        raise ValueError("besov_norm needs a space grid function")
    if Kmax is None:
        Kmax = default_besov_kmax(g.Gx)
    if not 2 ** (Kmax + 1) < g.Gx / 2:
        raise ResolutionError(f"Gx={g.Gx} does not resolve dyadic block {Kmax}")
    vals = f.space_values
    spec = np.fft.fftn(vals)
    freqs = g.space_frequencies()
    blocks = np.empty(Kmax + 1)
    for k in range(Kmax + 1):
        Pk = np.fft.ifftn(spec * dyadic(k)(freqs))
        if np.isinf(p):
            nrm = np.max(np.abs(Pk))
        else:
            nrm = np.mean(np.abs(Pk) ** p) ** (1.0 / p)
        blocks[k] = 2.0 ** (k * s) * nrm
    k = int(np.argmax(blocks))
    return BesovResult(float(blocks[k]), k, blocks)


# ---------------------------------------------------------------------------
# Fourier coefficients of |x|^{-a} on the unit cell

def _radial_kernel(d: int, z: np.ndarray) -> np.ndarray:
    """Angular average so that int f(|x|) e^{-i xi.x} dx = int f(r) r^{d-1} omega(|xi| r) dr."""
    z = np.asarray(z, dtype=float)
    if d == 1:
        return 2.0 * np.cos(z)
    if d == 2:
        return 2.0 * np.pi * special.j0(z)
    if d == 3:
        return 4.0 * np.pi * np.sinc(z / np.pi)
    out = np.full_like(z, 2.0 * np.pi ** (d / 2) / special.gamma(d / 2))
    nz = z > 0
    out[nz] = (2 * np.pi) ** (d / 2) * z[nz] ** (1 - d / 2) * special.jv(d / 2 - 1, z[nz])
    return out


def _composite_gauss(a: float, b: float, panels: int, order: int = 16):
    x, w = leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    h = np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + 0.5 * h[:, None] * x[None, :]).ravel()
    weights = (0.5 * h[:, None] * w[None, :]).ravel()
    return nodes, weights


def _graded_gauss(panels: int, levels: int = 40, order: int = 16):
    """Composite Gauss rule on [0, 1], uniform panels plus geometric refinement toward 0."""
    x, w = leggauss(order)
    first = 1.0 / panels
    edges = [0.0] + [first * 2.0**-k for k in range(levels, 0, -1)] + list(np.linspace(first, 1.0, panels))
    edges = np.array(edges)
    h = np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + 0.5 * h[:, None] * x[None, :]).ravel()
    weights = (0.5 * h[:, None] * w[None, :]).ravel()
    return nodes, weights


# smooth radial partition: the singular piece lives in the ball of radius 1/4
_CUT = 1.0 / 8.0


def _singular_part(d: int, a: float, radii: np.ndarray) -> np.ndarray:
    """int chi(|x|) |x|^{-a} e^{-2 pi i n.x} dx as a function of |n| (graded radial rule).

    r = R u^beta with beta = 1/(d - a) turns r^{d-1-a} dr into a constant times du.
    """
    R = 2 * _CUT
    beta = 1.0 / (d - a)
    rmax = float(np.max(radii)) if radii.size else 0.0
    panels = int(np.ceil(2.0 * rmax * R * beta)) + 16
    u, wu = _graded_gauss(panels)
    r = R * u**beta
    jac = R ** (d - a) * beta
    chi = bump(r / _CUT)
    out = np.empty(radii.shape)
    chunk = max(1, 4_000_000 // max(u.size, 1))
    for i in range(0, radii.size, chunk):
        z = 2 * np.pi * np.outer(radii[i:i + chunk], r)
        out[i:i + chunk] = _radial_kernel(d, z) @ (wu * chi) * jac
    return out


def _smooth_part(d: int, a: float, band: int) -> np.ndarray:
    """int (1 - chi(|x|)) |x|^{-a} e^{-2 pi i n.x} over the unit cell, all |n_i| <= band.

    Returned in FFT-free layout: array indexed by (n_1 + band, ..., n_d + band).
    """
    panels = 2 * band + 16
    x, w = _composite_gauss(-0.5, 0.5, panels, order=12)
    mesh = np.meshgrid(*([x] * d), indexing="ij")
    r = np.sqrt(sum(m**2 for m in mesh))
    with np.errstate(divide="ignore"):
        f = np.where(r > 0, (1.0 - bump(r / _CUT)) * r ** (-a), 0.0)
    n = np.arange(-band, band + 1)
    E = np.exp(-2j * np.pi * np.outer(x, n)) * w[:, None]   # (nodes, modes)
    out = f.astype(complex)
    for ax in range(d):
        out = np.tensordot(out, E, axes=([0], [0]))  # contract leading axis, append mode axis
    return out.real  # f is even in every coordinate


@functools.lru_cache(maxsize=64)
def _power_potential_table(d: int, a: float, band: int) -> np.ndarray:
    n = np.arange(-band, band + 1)
    mesh = np.meshgrid(*([n] * d), indexing="ij")
    rad = np.sqrt(sum(m.astype(float) ** 2 for m in mesh))
    uniq, inv = np.unique(rad.ravel(), return_inverse=True)
    near = _singular_part(d, a, uniq)[inv].reshape(rad.shape)
    table = near + _smooth_part(d, a, band)
    table.setflags(write=False)
    return table


def power_potential_table(d: int, a: float, band: int) -> np.ndarray:
    """ŵ(n) for all n in [-band, band]^d, indexed by n + band."""
    if not 0 < a < d:
        raise ValueError(f"need 0 < a < d, got a={a}, d={d}")
    return _power_potential_table(int(d), float(a), int(band))


def periodized_power_potential(a: float, lattice) -> CoefficientVector:
    """Fourier coefficients of |x|^{-a} restricted to [-1/2, 1/2]^d and extended periodically.

    `lattice` is a FrequencyLattice or a (d, band) pair.
    """
    if not isinstance(lattice, FrequencyLattice):
        lattice = build_lattice(*lattice)
    table = power_potential_table(lattice.d, a, lattice.N)
    idx = tuple((lattice.modes + lattice.N).T)
    return CoefficientVector(lattice, table[idx])


def power_potential_multiplier(d: int, a: float, grid: TorusGrid) -> np.ndarray:
    """ŵ evaluated on the FFT bins of a space grid (shape (Gx,)*d)."""
    band = (grid.Gx - 1) // 2
    table = power_potential_table(d, a, band)
    freqs = grid.space_frequencies()
    out = np.zeros(grid.space_shape)
    inside = np.all(np.abs(freqs) <= band, axis=-1)
    idx = tuple(np.moveaxis(freqs[inside] + band, -1, 0))
    out[inside] = table[idx]
    return out


# ---------------------------------------------------------------------------
# finite-rank density matrices

@dataclass
class DensityMatrix:
    """gamma = sum_j weights[j] |f_j><f_j| with orbitals stored as rows of coefficient arrays."""

    lattice: FrequencyLattice
    weights: np.ndarray
    orbitals: np.ndarray = field(repr=False)
    orthonormal: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        orb = self.orbitals
        if isinstance(orb, (list, tuple)) and orb and isinstance(orb[0], CoefficientVector):
            if any(o.lattice != self.lattice for o in orb):
                raise ValueError("orbital lattice mismatch")
            orb = np.array([o.a for o in orb])
        orb = np.asarray(orb, dtype=complex).reshape(-1, self.lattice.size) if np.size(orb) else np.zeros((0, self.lattice.size), complex)
        if orb.shape[0] != self.weights.shape[0]:
            raise ValueError("one weight per orbital required")
        self.orbitals = orb
        if self.orthonormal and self.gram_deviation() > 1e-10:
            raise ValueError(f"orbitals are not orthonormal (deviation {self.gram_deviation():.3e})")

    @property
    def rank(self) -> int:
        return self.weights.shape[0]

    def orbital(self, j: int) -> CoefficientVector:
        return CoefficientVector(self.lattice, self.orbitals[j])

    def gram(self) -> np.ndarray:
        return self.orbitals.conj() @ self.orbitals.T

    def gram_deviation(self) -> float:
        if self.rank == 0:
            return 0.0
        return float(np.max(np.abs(self.gram() - np.eye(self.rank))))

    def matrix(self) -> np.ndarray:
        """Dense Hermitian matrix in the Fourier basis of the lattice."""
        return (self.orbitals.T * self.weights) @ self.orbitals.conj()

    def trace(self) -> float:
        return float(np.sum(self.weights * np.sum(np.abs(self.orbitals) ** 2, axis=1)))

    def propagate(self, t: float) -> "DensityMatrix":
        ph = np.exp(2j * np.pi * t * self.lattice.norms_sq)
        return DensityMatrix(self.lattice, self.weights, self.orbitals * ph, self.orthonormal)

    def conjugate_by(self, symbol) -> "DensityMatrix":
        """m(D) gamma m(D) for a real multiplier; orbitals lose orthonormality in general."""
        m = symbol(self.lattice.modes)
        return DensityMatrix(self.lattice, self.weights, self.orbitals * m, orthonormal=False)

    @classmethod
    def from_matrix(cls, G: np.ndarray, lattice: FrequencyLattice, rel_tol: float = 1e-12) -> "DensityMatrix":
        """Compress a Hermitian matrix into orthonormal eigen-orbitals, dropping tiny eigenvalues."""
        G = 0.5 * (G + G.conj().T)
        try:
            lam, vec = np.linalg.eigh(G)
        except np.linalg.LinAlgError as exc:
            raise EigensolverError(str(exc)) from exc
        scale = max(np.max(np.abs(lam)), 1e-300) if lam.size else 1.0
        keep = np.abs(lam) > rel_tol * scale
        order = np.argsort(-np.abs(lam[keep]), kind="stable")
        return cls(lattice, lam[keep][order], vec[:, keep][:, order].T, orthonormal=True)

    @classmethod
    def zero(cls, lattice: FrequencyLattice) -> "DensityMatrix":
        return cls(lattice, np.zeros(0), np.zeros((0, lattice.size)), orthonormal=True)


def density(gamma: DensityMatrix, grid: TorusGrid, t: float | None = None) -> GridFunction:
    """rho(x) = sum_j lambda_j |f_j(x)|^2 on a space grid (orbitals evolved to time t if given)."""
    if grid.d != gamma.lattice.d:
        raise ValueError("grid dimension does not match the lattice")
    space = grid.space()
    g = gamma.propagate(t) if t is not None else gamma
    rho = np.zeros(space.space_shape)
    for lam, a in zip(g.weights, g.orbitals):
        f = coefficients_to_grid(CoefficientVector(g.lattice, a), space).space_values
        rho += lam * np.abs(f) ** 2
    return GridFunction(space, rho)


def density_coefficients(G: np.ndarray, lattice: FrequencyLattice) -> dict:
    """Fourier coefficients of the density of a dense gamma: rho^(k) = sum_{m - n = k} G_mn."""
    modes = lattice.modes
    diff = modes[:, None, :] - modes[None, :, :]
    band = 2 * lattice.N
    shape = (2 * band + 1,) * lattice.d
    out = np.zeros(shape, dtype=complex)
    idx = tuple(np.moveaxis(diff + band, -1, 0))
    np.add.at(out, idx, G)
    return out


def space_time_fourier(values: np.ndarray) -> np.ndarray:
    """Normalized DFT over all axes of a space-time sample array."""
    return np.fft.fftn(values) / values.size


def paraboloid_gram(psi: GridFunction, op: ExtensionOperator) -> np.ndarray:
    """M_mn = <E e_m, psi E e_n> = psi^(m - n, |m|^2 - |n|^2)."""
    if psi.grid != op.grid:
        raise ValueError("grid mismatch")
    g = op.grid
    ph = space_time_fourier(psi.values)
    modes = op.lattice.modes
    ns = op.lattice.norms_sq
    dx = (modes[:, None, :] - modes[None, :, :]) % g.Gx
    dt = (ns[:, None] - ns[None, :]) % g.Gt
    return ph[tuple(np.moveaxis(dx, -1, 0)) + (dt,)]


@dataclass
class TracePairing:
    left: complex
    right: complex

    @property
    def residual(self) -> float:
        return abs(self.left - self.right)


def trace_pairing(gamma0: DensityMatrix, V: GridFunction, s: float) -> TracePairing:
    """Both sides of int rho_{U <D>^-s g0 <D>^-s U*} V dx dt = Tr(g0 int U* <D>^-s V <D>^-s U dt).

    Left: space-time quadrature of the evolved smoothed density against V.
    Right: trace of gamma0 against the paraboloid Gram matrix of V.
    """
    op = ExtensionOperator(gamma0.lattice, V.grid)
    smoothed = gamma0.conjugate_by(bessel(-s))
    left = 0.0 + 0.0j
    if smoothed.rank:
        ext = extend_many(op, smoothed.orbitals)
        rho = np.tensordot(smoothed.weights, np.abs(ext) ** 2, axes=1)
        left = complex(np.sum(rho * V.values) * V.grid.weight)
    m = bessel(-s)(op.lattice.modes)
    A = paraboloid_gram(V, op) * np.outer(m, m)
    right = complex(np.sum(gamma0.matrix() * A.T)) if gamma0.rank else 0.0j
    return TracePairing(left, right)


# ---------------------------------------------------------------------------
# Schatten norms

def schatten_norm(sv, alpha: float) -> float:
    sv = np.asarray(sv, dtype=float)
    if np.any(sv < 0):
        raise ValueError("singular values must be nonnegative")
    if alpha < 1:
        raise ValueError("Schatten exponent must be >= 1")
    if sv.size == 0:
        return 0.0
    if np.isinf(alpha):
        return float(np.max(sv))
    top = np.max(sv)
    if top == 0:
        return 0.0
    return float(top * np.sum((sv / top) ** alpha) ** (1.0 / alpha))


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Hermitian square root with eigenvalues clamped at max(eig) * 1e-14."""
    try:
        lam, Q = np.linalg.eigh(0.5 * (M + M.conj().T))
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(str(exc)) from exc
    floor = max(np.max(lam), 0.0) * 1e-14
    lam = np.where(lam > floor, lam, 0.0)
    return (Q * np.sqrt(lam)) @ Q.conj().T


def sandwich_singular_values(W1: GridFunction, W2: GridFunction, op: ExtensionOperator) -> np.ndarray:
    """Nonzero singular values of F -> W1 E_N E_N^*(W2 F), via the (2N+1)^d Gram matrices."""
    M1 = paraboloid_gram(W1.abs2(), op)
    M2 = paraboloid_gram(W2.abs2(), op)
    R = psd_sqrt(M1)
    S = R @ M2 @ R
    try:
        ev = np.linalg.eigvalsh(0.5 * (S + S.conj().T))
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(str(exc)) from exc
    return np.sort(np.sqrt(np.clip(ev, 0.0, None)))[::-1]


def sobolev_schatten_norm(gamma: DensityMatrix, s: float, alpha: float) -> float:
    """|| <D>^s gamma <D>^s ||_{C^alpha} for a finite-rank gamma."""
    m = bessel(s)(gamma.lattice.modes)
    G = gamma.matrix() * np.outer(m, m)
    sv = np.linalg.svd(G, compute_uv=False)
    return schatten_norm(sv, alpha)
