"""Fourier extension/restriction on the paraboloid modes (n, |n|^2) of T^{d+1}.

E_N a(x, t) = sum_{n in S_{d,N}} a_n exp(2 pi i (x.n + t|n|^2)) and its L^2 adjoint.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral_core import (
    CoefficientVector,
    FrequencyLattice,
    GridFunction,
    ResolutionError,
    TorusGrid,
)


@dataclass(frozen=True)
class ExtensionOperator:
    lattice: FrequencyLattice
    grid: TorusGrid

    def __post_init__(self):
        lat, g = self.lattice, self.grid
        if lat.d != g.d:
            raise ValueError(f"lattice dimension {lat.d} != grid dimension {g.d}")
        if not g.Gx > 2 * lat.N:
            raise ResolutionError(f"need Gx > 2N, got Gx={g.Gx}, N={lat.N}")
        if not g.Gt > 2 * lat.N**2:
            raise ResolutionError(f"need Gt > 2N^2, got Gt={g.Gt}, N={lat.N}")

    @property
    def _spatial_index(self):
        return tuple((self.lattice.modes % self.grid.Gx).T)

    def phases(self) -> np.ndarray:
        """exp(2 pi i t_k |n|^2), shape (Gt, M)."""
        return np.exp(2j * np.pi * np.outer(self.grid.t, self.lattice.norms_sq))


def _to_time_last(arr: np.ndarray) -> np.ndarray:
    return np.moveaxis(arr, 0, -1)


def extend_many(op: ExtensionOperator, A: np.ndarray) -> np.ndarray:
    """E_N applied to each row of A (shape (J, M)); returns shape (J,) + grid.shape."""
    g = op.grid
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    spec = np.zeros((A.shape[0], g.Gt) + g.space_shape, dtype=complex)
    ph = op.phases()
    idx = op._spatial_index
    for j in range(A.shape[0]):
        spec[j][(slice(None),) + idx] = ph * A[j]
    axes = tuple(range(2, 2 + g.d))
    vals = np.fft.ifftn(spec, axes=axes) * g.Gx**g.d
    return np.moveaxis(vals, 1, -1)


def extend(op: ExtensionOperator, a: CoefficientVector) -> GridFunction:
    if a.lattice != op.lattice:
        raise ValueError("coefficient lattice does not match the operator")
    return GridFunction(op.grid, extend_many(op, a.a)[0])


def restrict(op: ExtensionOperator, F: GridFunction) -> CoefficientVector:
    """E_N^* F(n) = integral of F against exp(-2 pi i (x.n + t|n|^2))."""
    if F.grid != op.grid:
        raise ValueError("grid function does not live on the operator grid")
    g = op.grid
    spec = np.fft.fftn(F.values, axes=tuple(range(g.d))) / g.Gx**g.d
    # (M, Gt): spatial Fourier coefficient of each time slice
    per_t = spec[op._spatial_index]
    coef = np.mean(per_t * np.conj(op.phases()).T, axis=1)
    return CoefficientVector(op.lattice, coef)


def kernel(op: ExtensionOperator) -> GridFunction:
    ones = CoefficientVector(op.lattice, np.ones(op.lattice.size))
    return extend(op, ones)


def kernel_convolve(op: ExtensionOperator, F: GridFunction) -> GridFunction:
    """(K_N * F)(z) = integral of K_N(z - z') F(z') dz' by circular FFT convolution."""
    if F.grid != op.grid:
        raise ValueError("grid mismatch")
    K = kernel(op).values
    conv = np.fft.ifftn(np.fft.fftn(K) * np.fft.fftn(F.values)) * op.grid.weight
    return GridFunction(op.grid, conv)


def free_propagate(a: CoefficientVector, t: float) -> CoefficientVector:
    """a_n -> a_n exp(2 pi i t |n|^2)."""
    return CoefficientVector(a.lattice, a.a * np.exp(2j * np.pi * t * a.lattice.norms_sq))


def kernel_1d(N: int, x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Direct sum K_N(x, t) in one dimension on the outer grid x by t."""
    n = np.arange(-N, N + 1)
    ex = np.exp(2j * np.pi * np.outer(x, n))          # (X, n)
    et = np.exp(2j * np.pi * np.outer(n**2, t))       # (n, T)
    return ex @ et


def dispersive_ratio(d: int, N: int, grid: TorusGrid, return_profile: bool = False):
    """sup of |t|^{d/2} |K_N(x, t)| over grid points with 0 < |t| <= 1/N.

    K_N factorizes over coordinates, so the sup over x in T^d is the d-th power
    of the one-dimensional sup.
    """
    if grid.d != d:
        raise ValueError("grid dimension mismatch")
    tc = grid.centered_t()
    sel = (np.abs(tc) > 0) & (np.abs(tc) <= 1.0 / N + 1e-15)
    if not np.any(sel):
        raise ValueError("no time samples with 0 < |t| <= 1/N")
    if np.count_nonzero(sel) < 32:
        raise ResolutionError(f"need >= 32 samples in 0 < |t| <= 1/N, got {np.count_nonzero(sel)}")
    ts = tc[sel]
    K1 = np.abs(kernel_1d(N, grid.x, ts))
    sup_x = np.max(K1, axis=0) ** d
    prof = np.abs(ts) ** (d / 2) * sup_x
    k = int(np.argmax(prof))
    if return_profile:
        return float(prof[k]), ts, prof
    return float(prof[k])


def dispersive_grid(d: int, N: int) -> TorusGrid:
    """Default sampling for dispersive sweeps: x and t steps both 1/(32N)."""
    return TorusGrid(d, 32 * N, 32 * N)
