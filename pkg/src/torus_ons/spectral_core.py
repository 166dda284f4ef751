"""Frequency lattices, uniform torus grids and Fourier multipliers on T^d."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np


class ResolutionError(ValueError):
    """The grid cannot represent the requested band without aliasing."""


@dataclass(frozen=True)
class FrequencyLattice:
    """The mode set Z^d ∩ [-N, N]^d in lexicographic order."""

    d: int
    N: int
    modes: np.ndarray = field(repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.modes.shape[0]

    @property
    def norms_sq(self) -> np.ndarray:
        return np.sum(self.modes**2, axis=1)

    def index(self, n) -> int:
        n = np.asarray(n, dtype=int).reshape(self.d)
        if np.any(np.abs(n) > self.N):
            raise KeyError(f"mode {tuple(n)} outside the lattice")
        # lexicographic rank in base 2N+1
        idx = 0
        for c in n:
            idx = idx * (2 * self.N + 1) + int(c) + self.N
        return idx


def build_lattice(d: int, N: int) -> FrequencyLattice:
    if d < 1 or N < 1:
        raise ValueError(f"need d >= 1 and N >= 1, got d={d}, N={N}")
    modes = np.array(list(itertools.product(range(-N, N + 1), repeat=d)), dtype=int)
    modes.setflags(write=False)
    return FrequencyLattice(d, N, modes)


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid x_i = i/Gx per axis, t_k = k/Gt; Gt = 1 is a space-only grid."""

    d: int
    Gx: int
    Gt: int = 1

    def __post_init__(self):
        if self.d < 1 or self.Gx < 1 or self.Gt < 1:
            raise ValueError(f"invalid grid {self}")

    @property
    def shape(self) -> tuple:
        return (self.Gx,) * self.d + (self.Gt,)

    @property
    def space_shape(self) -> tuple:
        return (self.Gx,) * self.d

    @property
    def size(self) -> int:
        return self.Gx**self.d * self.Gt

    @property
    def weight(self) -> float:
        return 1.0 / self.size

    @property
    def is_space_only(self) -> bool:
        return self.Gt == 1

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.Gx) / self.Gx

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.Gt) / self.Gt

    def centered_t(self) -> np.ndarray:
        """Time samples mapped to [-1/2, 1/2)."""
        k = np.arange(self.Gt)
        k = np.where(k >= (self.Gt + 1) // 2, k - self.Gt, k)
        return k / self.Gt

    def space_points(self) -> np.ndarray:
        """Array of shape (Gx,)*d + (d,) holding the spatial sample points."""
        axes = np.meshgrid(*([self.x] * self.d), indexing="ij")
        return np.stack(axes, axis=-1)

    def space_frequencies(self) -> np.ndarray:
        """Integer frequency of each FFT bin, shape (Gx,)*d + (d,)."""
        k = np.fft.fftfreq(self.Gx, 1.0 / self.Gx).round().astype(int)
        axes = np.meshgrid(*([k] * self.d), indexing="ij")
        return np.stack(axes, axis=-1)

    def exact_for(self, x_band: float, t_band: float = 0.0) -> bool:
        """True if trig polynomials with |x-freq| <= x_band, |t-freq| <= t_band integrate exactly."""
        return x_band < self.Gx / 2 and (t_band < self.Gt / 2 or (self.Gt == 1 and t_band == 0))

    def space(self) -> "TorusGrid":
        return TorusGrid(self.d, self.Gx, 1)


def product_exact_grid(d: int, N: int) -> TorusGrid:
    """Grid on which L^2 pairings of products of two cutoff-N extensions are exact."""
    return TorusGrid(d, 4 * N + 2, 4 * N * N + 2)


@dataclass(frozen=True)
class GridFunction:
    grid: TorusGrid
    values: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape == self.grid.space_shape and self.grid.Gt == 1:
            v = v[..., None]
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function contains NaN or Inf")
        object.__setattr__(self, "values", v)

    @property
    def space_values(self) -> np.ndarray:
        """Values with the time axis dropped (space-only grids)."""
        if self.grid.Gt != 1:
            raise ValueError("not a space-only grid function")
        return self.values[..., 0]

    def __mul__(self, other: "GridFunction") -> "GridFunction":
        _check_same_grid(self, other)
        return GridFunction(self.grid, self.values * other.values)

    def abs2(self) -> "GridFunction":
        return GridFunction(self.grid, np.abs(self.values) ** 2)

    def conj(self) -> "GridFunction":
        return GridFunction(self.grid, np.conj(self.values))


def _check_same_grid(f: GridFunction, g: GridFunction):
    if f.grid != g.grid:
        raise ValueError(f"grid mismatch: {f.grid} vs {g.grid}")


@dataclass(frozen=True)
class CoefficientVector:
    lattice: FrequencyLattice
    a: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=complex).reshape(-1)
        if a.shape[0] != self.lattice.size:
            raise ValueError(f"expected {self.lattice.size} coefficients, got {a.shape[0]}")
        object.__setattr__(self, "a", a)

    def norm(self) -> float:
        return float(np.linalg.norm(self.a))

    def inner(self, other: "CoefficientVector") -> complex:
        """<self, other> in l^2, conjugate-linear in the first slot."""
        if other.lattice != self.lattice:
            raise ValueError("lattice mismatch")
        return complex(np.vdot(self.a, other.a))

    @classmethod
    def indicator(cls, lattice: FrequencyLattice, n) -> "CoefficientVector":
        a = np.zeros(lattice.size, dtype=complex)
        a[lattice.index(n)] = 1.0
        return cls(lattice, a)


def quadrature_integral(F: GridFunction) -> complex:
    """Normalized-measure integral over the grid (pairwise summation)."""
    return complex(np.sum(F.values) * F.grid.weight)


# ---------------------------------------------------------------------------
# multipliers

def _smooth_step(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def bump(r):
    """C^inf radial bump: 1 on r <= 1, 0 on r >= 2."""
    r = np.asarray(r, dtype=float)
    a = _smooth_step(2.0 - r)
    b = _smooth_step(r - 1.0)
    return a / (a + b)


@dataclass(frozen=True)
class MultiplierSymbol:
    """Fourier multiplier m(n); kind is 'cutoff', 'dyadic' or 'bessel'."""

    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in ("cutoff", "dyadic", "bessel"):
            raise ValueError(f"unknown multiplier kind {self.kind!r}")
        if not np.isfinite(self.param):
            raise ValueError("multiplier parameter must be finite")
        if self.kind == "dyadic" and (self.param < 0 or int(self.param) != self.param):
            raise ValueError("dyadic index must be a nonnegative integer")

    def __call__(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=float)
        if self.kind == "cutoff":
            return (np.max(np.abs(n), axis=-1) <= self.param).astype(float)
        r2 = np.sum(n**2, axis=-1)
        if self.kind == "bessel":
            return (1.0 + r2) ** (self.param / 2.0)
        k = int(self.param)
        r = np.sqrt(r2)
        if k == 0:
            return bump(r)
        return bump(r / 2.0**k) - bump(r / 2.0 ** (k - 1))

    @property
    def band(self) -> float:
        """Largest |n| in the support (inf for Bessel potentials)."""
        if self.kind == "cutoff":
            return float(self.param)
        if self.kind == "dyadic":
            return 2.0 ** (int(self.param) + 1)
        return np.inf


def cutoff(N) -> MultiplierSymbol:
    return MultiplierSymbol("cutoff", N)


def dyadic(k) -> MultiplierSymbol:
    return MultiplierSymbol("dyadic", k)


def bessel(s) -> MultiplierSymbol:
    return MultiplierSymbol("bessel", s)


def _check_resolved(f: GridFunction, band=None, tol=1e-10):
    G = f.grid.Gx
    if band is not None and not band < G / 2:
        raise ResolutionError(f"band {band} not resolved by Gx={G}")
    if G % 2 == 0:
        # energy in the Nyquist bin means the band reaches G/2
        c = np.fft.fftn(f.space_values) / G**f.grid.d
        nyq = np.zeros(c.shape, dtype=bool)
        for ax in range(f.grid.d):
            sl = [slice(None)] * f.grid.d
            sl[ax] = G // 2
            nyq[tuple(sl)] = True
        scale = max(np.max(np.abs(c)), 1e-300)
        if np.max(np.abs(c[nyq])) > tol * scale:
            raise ResolutionError("function has content at the Nyquist frequency")


def apply_multiplier(sym: MultiplierSymbol, f, band=None):
    """Multiply Fourier coefficients by sym(n); accepts coefficients or a space grid function."""
    if isinstance(f, CoefficientVector):
        return CoefficientVector(f.lattice, sym(f.lattice.modes) * f.a)
    if not isinstance(f, GridFunction) or not f.grid.is_space_only:
        raise TypeError("apply_multiplier needs a CoefficientVector or a space-only GridFunction")
    _check_resolved(f, band)
    freqs = f.grid.space_frequencies()
    spec = np.fft.fftn(f.space_values) * sym(freqs)
    return GridFunction(f.grid, np.fft.ifftn(spec))


def coefficients_to_grid(c: CoefficientVector, grid: TorusGrid) -> GridFunction:
    """Synthesize sum_n c_n e^{2 pi i n.x} on a space grid."""
    lat = c.lattice
    if grid.d != lat.d:
        raise ValueError("dimension mismatch")
    if not lat.N < grid.Gx / 2:
        raise ResolutionError(f"cutoff {lat.N} not resolved by Gx={grid.Gx}")
    spec = np.zeros(grid.space_shape, dtype=complex)
    idx = tuple((lat.modes % grid.Gx).T)
    spec[idx] = c.a
    vals = np.fft.ifftn(spec) * grid.Gx**grid.d
    return GridFunction(TorusGrid(grid.d, grid.Gx, 1), vals)


def grid_to_coefficients(f: GridFunction, lattice: FrequencyLattice) -> CoefficientVector:
    """Fourier coefficients of a space grid function at the lattice modes."""
    if f.grid.d != lattice.d:
        raise ValueError("dimension mismatch")
    if not lattice.N < f.grid.Gx / 2:
        raise ResolutionError(f"cutoff {lattice.N} not resolved by Gx={f.grid.Gx}")
    spec = np.fft.fftn(f.space_values) / f.grid.Gx**f.grid.d
    idx = tuple((lattice.modes % f.grid.Gx).T)
    return CoefficientVector(lattice, spec[idx])
