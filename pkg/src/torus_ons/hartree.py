"""Periodic Hartree dynamics for finite-rank density matrices on the cutoff-N band.

The flow i d/dt gamma = [K + w_a * rho_gamma, gamma] is discretized in the Fourier basis
of S_{d,N}.  With the propagator phase exp(2 pi i t |n|^2) the kinetic operator is
K = diag(-2 pi |n|^2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .norms import (
    DensityMatrix,
    density,
    density_coefficients,
    power_potential_multiplier,
    power_potential_table,
)
from .spectral_core import (
    CoefficientVector,
    FrequencyLattice,
    GridFunction,
    TorusGrid,
    coefficients_to_grid,
    grid_to_coefficients,
)


class BlowUpError(RuntimeError):
    """An orbital norm left the admissible range."""


class DivergenceError(RuntimeError):
    """Picard iterates stopped contracting."""


BLOWUP_NORM = 10.0


@dataclass(frozen=True)
class HartreeConfig:
    d: int
    N: int
    a: float
    dt: float
    T: float
    scheme: str = "strang"
    monitor_every: int = 10
    coupling: float = 1.0
    potential_step: str = "galerkin"

    def __post_init__(self):
        if self.N < 1 or self.d < 1:
            raise ValueError("need d >= 1 and N >= 1")
        if not 0 < self.a < self.d:
            raise ValueError(f"need 0 < a < d, got a={self.a}")
        if self.dt == 0 or not math.isfinite(self.dt):
            raise ValueError("dt must be finite and nonzero")
        if self.T < 0:
            raise ValueError("T must be nonnegative")
        if self.scheme not in ("strang", "picard"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.potential_step not in ("galerkin", "pointwise"):
            raise ValueError(f"unknown potential step {self.potential_step!r}")
        if self.monitor_every < 1:
            raise ValueError("monitor_every must be >= 1")
        steps = self.T / abs(self.dt)
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError("T must be an integer multiple of |dt|")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / abs(self.dt)))


@dataclass
class HartreeState:
    time: float
    gamma: DensityMatrix


@dataclass
class ConservationReport:
    dt: float
    max_gram_deviation: float
    mass_drift: np.ndarray
    energy_drift: float
    trace_drift: float
    truncation_loss: float = 0.0

    def as_dict(self) -> dict:
        return {
            "dt": self.dt,
            "max_gram_deviation": self.max_gram_deviation,
            "max_mass_drift": float(np.max(self.mass_drift)) if self.mass_drift.size else 0.0,
            "energy_drift": self.energy_drift,
            "trace_drift": self.trace_drift,
            "truncation_loss": self.truncation_loss,
        }


@dataclass
class TrajectoryRecord:
    time: float
    masses: np.ndarray
    gram_deviation: float
    energy: float
    trace: float


@dataclass
class Trajectory:
    states: list = field(default_factory=list)
    records: list = field(default_factory=list)

    CSV_COLUMNS = ("time", "gram_deviation", "energy", "trace")

    def csv_rows(self):
        rank = len(self.records[0].masses) if self.records else 0
        header = list(self.CSV_COLUMNS) + [f"mass_{j}" for j in range(rank)]
        rows = [[r.time, r.gram_deviation, r.energy, r.trace, *r.masses] for r in self.records]
        return header, rows


# ---------------------------------------------------------------------------
# potential

def hartree_potential(rho: GridFunction, a: float, coupling: float = 1.0) -> GridFunction:
    """(w_a * rho)(x) as the Fourier multiplier ŵ(n) rho^(n) on a space grid."""
    g = rho.grid
    if not g.is_space_only:
        raise ValueError("hartree_potential needs a space grid function")
    vals = rho.space_values
    if np.max(np.abs(np.imag(vals))) > 1e-12 * max(1.0, np.max(np.abs(vals))):
        raise ValueError("density must be real")
    mult = power_potential_multiplier(g.d, a, g) * coupling
    V = np.fft.ifftn(np.fft.fftn(np.real(vals)) * mult)
    return GridFunction(g, V.real)


class _BandModel:
    """Precomputed index maps for densities and potentials on the cutoff-N lattice."""

    def __init__(self, lattice: FrequencyLattice, a: float, coupling: float):
        self.lattice = lattice
        self.band = 2 * lattice.N
        self.w = power_potential_table(lattice.d, a, self.band) * coupling
        diff = lattice.modes[:, None, :] - lattice.modes[None, :, :] + self.band
        self.diff_idx = tuple(np.moveaxis(diff, -1, 0))
        self.kinetic = -2.0 * np.pi * lattice.norms_sq

    def rho_hat(self, G: np.ndarray) -> np.ndarray:
        return density_coefficients(G, self.lattice)

    def potential_matrix(self, rho_hat: np.ndarray) -> np.ndarray:
        """H_V[m, n] = V^(m - n) with V^ = ŵ rho^."""
        return (self.w * rho_hat)[self.diff_idx]

    def interaction_energy(self, rho_hat: np.ndarray) -> float:
        return 0.5 * float(np.sum(self.w * np.abs(rho_hat) ** 2))


def _expm_hermitian(H: np.ndarray, tau: float) -> np.ndarray:
    """exp(-i tau H) for Hermitian H."""
    lam, Q = np.linalg.eigh(0.5 * (H + H.conj().T))
    return (Q * np.exp(-1j * tau * lam)) @ Q.conj().T


def _weighted_matrix(weights, orbitals) -> np.ndarray:
    return (orbitals.T * weights) @ orbitals.conj()


# ---------------------------------------------------------------------------
# energy

def energy(state: HartreeState, a: float, coupling: float = 1.0) -> float:
    """-2 pi sum_j lambda_j sum_n |n|^2 |a_jn|^2 + (1/2) int (w_a * rho) rho dx."""
    g = state.gamma
    model = _BandModel(g.lattice, a, coupling)
    kin = float(np.sum(g.weights * (np.abs(g.orbitals) ** 2 @ model.kinetic)))
    return kin + model.interaction_energy(model.rho_hat(g.matrix()))


# ---------------------------------------------------------------------------
# splitting

def _kinetic(orbitals: np.ndarray, lattice: FrequencyLattice, tau: float) -> np.ndarray:
    return orbitals * np.exp(2j * np.pi * tau * lattice.norms_sq)


def _galerkin_potential_step(weights, orbitals, model: _BandModel, dt: float,
                             tol: float = 1e-15, max_iter: int = 100) -> np.ndarray:
    """Unitary step exp(-i dt H_V) with V frozen at the mean density of both endpoints.

    The symmetric choice of V makes the step exactly reversible; the fixed point is found
    by simple iteration (contraction factor O(dt)).
    """
    rho0 = model.rho_hat(_weighted_matrix(weights, orbitals))
    U = _expm_hermitian(model.potential_matrix(rho0), dt)
    new = orbitals @ U.T
    for _ in range(max_iter):
        rho1 = model.rho_hat(_weighted_matrix(weights, new))
        U = _expm_hermitian(model.potential_matrix(0.5 * (rho0 + rho1)), dt)
        nxt = orbitals @ U.T
        change = np.max(np.abs(nxt - new))
        new = nxt
        if change <= tol:
            break
    return new


def _pointwise_potential_step(weights, orbitals, lattice, a, coupling, dt):
    """Multiply by exp(-i dt V) on a 4N+2 grid, then truncate back to the cutoff-N band."""
    grid = TorusGrid(lattice.d, 4 * lattice.N + 2, 1)
    gamma = DensityMatrix(lattice, weights, orbitals, orthonormal=False)
    V = hartree_potential(density(gamma, grid), a, coupling).space_values
    phase = np.exp(-1j * dt * V)
    out = np.empty_like(orbitals)
    for j, orb in enumerate(orbitals):
        f = coefficients_to_grid(CoefficientVector(lattice, orb), grid).space_values
        out[j] = grid_to_coefficients(GridFunction(grid, f * phase), lattice).a
    return out


def step_strang(state: HartreeState, dt: float, a: float, coupling: float = 1.0,
                potential_step: str = "galerkin", model: _BandModel | None = None) -> HartreeState:
    """Half kinetic, full potential with a shared frozen V, half kinetic."""
    g = state.gamma
    lat = g.lattice
    orb = _kinetic(g.orbitals, lat, dt / 2)
    if potential_step == "galerkin":
        model = model or _BandModel(lat, a, coupling)
        orb = _galerkin_potential_step(g.weights, orb, model, dt)
    else:
        orb = _pointwise_potential_step(g.weights, orb, lat, a, coupling, dt)
    orb = _kinetic(orb, lat, dt / 2)
    return HartreeState(state.time + dt, DensityMatrix(lat, g.weights, orb, orthonormal=False))


def _record(state: HartreeState, model: _BandModel) -> TrajectoryRecord:
    g = state.gamma
    masses = np.sum(np.abs(g.orbitals) ** 2, axis=1)
    kin = float(np.sum(g.weights * (np.abs(g.orbitals) ** 2 @ model.kinetic)))
    E = kin + model.interaction_energy(model.rho_hat(g.matrix()))
    return TrajectoryRecord(state.time, masses, g.gram_deviation(), E, g.trace())


def evolve(config: HartreeConfig, gamma0: DensityMatrix):
    """Run the configured scheme; returns (Trajectory, ConservationReport)."""
    if gamma0.lattice.d != config.d or gamma0.lattice.N != config.N:
        raise ValueError("initial state lattice does not match the configuration")
    if gamma0.gram_deviation() > 1e-10:
        raise ValueError("initial orbitals must be orthonormal")
    model = _BandModel(gamma0.lattice, config.a, config.coupling)
    if config.scheme == "picard":
        return _evolve_picard(config, gamma0, model)

    state = HartreeState(0.0, gamma0)
    traj = Trajectory([state], [_record(state, model)])
    first = traj.records[0]
    max_gram = first.gram_deviation
    for step in range(1, config.n_steps + 1):
        state = step_strang(state, config.dt, config.a, config.coupling, config.potential_step, model)
        norms = np.sqrt(np.sum(np.abs(state.gamma.orbitals) ** 2, axis=1))
        if np.any(~np.isfinite(norms)) or np.any(norms > BLOWUP_NORM):
            raise BlowUpError(f"orbital norm {np.max(norms):.3e} at t={state.time:.6g}")
        if step % config.monitor_every == 0 or step == config.n_steps:
            rec = _record(state, model)
            traj.states.append(state)
            traj.records.append(rec)
            max_gram = max(max_gram, rec.gram_deviation)
    return traj, _report(config, traj, max_gram)


def _report(config, traj: Trajectory, max_gram: float) -> ConservationReport:
    first, recs = traj.records[0], traj.records
    masses = np.array([r.masses for r in recs])
    mass_drift = np.max(np.abs(masses - first.masses), axis=0)
    energy_drift = max(abs(r.energy - first.energy) for r in recs)
    trace_drift = max(abs(r.trace - first.trace) for r in recs)
    loss = float(np.max(1.0 - masses[-1])) if config.potential_step == "pointwise" else 0.0
    return ConservationReport(config.dt, max_gram, mass_drift, energy_drift, trace_drift, max(loss, 0.0))


# ---------------------------------------------------------------------------
# Duhamel / Picard

@dataclass
class PicardResult:
    gamma: DensityMatrix
    distances: list
    times: np.ndarray
    matrices: np.ndarray = field(repr=False)

    @property
    def final_matrix(self) -> np.ndarray:
        return self.matrices[-1]

    @property
    def ratios(self) -> np.ndarray:
        d = np.asarray(self.distances)
        return d[1:] / d[:-1]


def _free_flow(G0: np.ndarray, lattice: FrequencyLattice, times: np.ndarray) -> np.ndarray:
    ph = np.exp(2j * np.pi * np.outer(times, lattice.norms_sq))  # (K, M)
    return ph[:, :, None] * G0[None] * ph[:, None, :].conj()


def picard_iterate(gamma0: DensityMatrix, T: float, a: float, iters: int, dt: float = 1e-3,
                   coupling: float = 1.0, tol: float = 1e-14) -> PicardResult:
    """Iterate gamma <- U(t) gamma0 U(t)* - i int_0^t U(t-s) [V(s), gamma(s)] U(t-s)* ds.

    V(s) is the Hartree potential of the previous iterate; the time integral uses the
    cumulative trapezoid rule on the dt grid.  Iterates are dense Hermitian matrices on the
    cutoff band; the returned DensityMatrix is their eigen-compression at time T.
    """
    if not 0 <= T <= 1:
        raise ValueError("Picard iteration is restricted to T <= 1")
    if iters < 1:
        raise ValueError("need at least one iteration")
    lat = gamma0.lattice
    K = int(round(T / dt))
    if abs(K * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("T must be an integer multiple of dt")
    times = np.arange(K + 1) * dt
    model = _BandModel(lat, a, coupling)
    G0 = gamma0.matrix()
    free = _free_flow(G0, lat, times)
    ph = np.exp(2j * np.pi * np.outer(times, lat.norms_sq))
    cur = free
    distances = []
    growth = 0
    for _ in range(iters):
        # interaction-picture integrand B(s) = U(s)* [V(s), gamma(s)] U(s)
        B = np.empty_like(cur)
        for k in range(K + 1):
            H = model.potential_matrix(model.rho_hat(cur[k]))
            C = H @ cur[k] - cur[k] @ H
            B[k] = ph[k].conj()[:, None] * C * ph[k][None, :]
        integral = np.zeros_like(B)
        if K:
            integral[1:] = np.cumsum(0.5 * (B[1:] + B[:-1]) * dt, axis=0)
        inner = G0[None] - 1j * integral
        nxt = ph[:, :, None] * inner * ph[:, None, :].conj()
        dist = float(np.max(np.linalg.norm(nxt - cur, axis=(1, 2))))
        if distances and dist > distances[-1]:
            growth += 1
            if growth >= 2:
                raise DivergenceError(f"iterate distance grew twice in a row: {distances[-1]:.3e} -> {dist:.3e}")
        else:
            growth = 0
        distances.append(dist)
        cur = nxt
        if dist <= tol:
            break
    gamma_T = DensityMatrix.from_matrix(cur[-1], lat)
    return PicardResult(gamma_T, distances, times, cur)


def _evolve_picard(config: HartreeConfig, gamma0: DensityMatrix, model: _BandModel):
    """Picard trajectory; each monitor state keeps the top rank(gamma0) eigenpairs.

    Energy and trace are read from the uncompressed matrix; the largest discarded
    eigenvalue is reported as the truncation loss.
    """
    if config.dt < 0:
        raise ValueError("the Picard scheme runs forward in time only")
    res = picard_iterate(gamma0, config.T, config.a, iters=32, dt=config.dt, coupling=config.coupling)
    rank = gamma0.rank
    traj = Trajectory()
    max_gram, loss = 0.0, 0.0
    for k, t in enumerate(res.times):
        if k % config.monitor_every and k != len(res.times) - 1:
            continue
        G = res.matrices[k]
        full = DensityMatrix.from_matrix(G, gamma0.lattice, rel_tol=0.0)
        loss = max(loss, float(np.max(np.abs(full.weights[rank:]), initial=0.0)))
        g = DensityMatrix(gamma0.lattice, full.weights[:rank], full.orbitals[:rank])
        kin = float(np.real(np.sum(model.kinetic * np.diag(G))))
        E = kin + model.interaction_energy(model.rho_hat(G))
        rec = TrajectoryRecord(float(t), np.sum(np.abs(g.orbitals) ** 2, axis=1), g.gram_deviation(),
                               E, float(np.real(np.trace(G))))
        traj.states.append(HartreeState(float(t), g))
        traj.records.append(rec)
        max_gram = max(max_gram, rec.gram_deviation)
    report = _report(config, traj, max_gram)
    report.truncation_loss = loss
    return traj, report


def cutoff_distance(A: DensityMatrix | np.ndarray, B: DensityMatrix | np.ndarray) -> float:
    """Hilbert-Schmidt distance between two operators on the same cutoff band."""
    A = A.matrix() if isinstance(A, DensityMatrix) else A
    B = B.matrix() if isinstance(B, DensityMatrix) else B
    return float(np.linalg.norm(A - B))
