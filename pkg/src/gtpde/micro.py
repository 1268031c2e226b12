"""Microscopic Burgers particle model.

Particles live on the periodic interval [0, 2*pi) and advance by a density
drift plus Brownian noise,

    x_p(n+1) = x_p(n) + m*h / (Z * d_pm) + sqrt(2*nu*h) * W_n,

where d_pm is the span from the m-th left neighbor to the m-th right neighbor
of particle p.  Lifting turns a density field into particles, restriction
turns particles back into a histogram density.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericsError
from . import kernels

TWO_PI = 2.0 * np.pi


@dataclass
class MicroParams:
    """Parameters of the particle motion.

    Attributes:
        nu: kinematic viscosity, > 0.
        h: micro time step, > 0.
        Z: resolution factor, particles per unit of macroscopic mass.
        m: neighbor order used for the coupling span d_pm.
        domain_length: length of the periodic domain (2*pi).
    """

    nu: float
    h: float
    Z: float
    m: int = 16
    domain_length: float = TWO_PI

    def validate(self) -> None:
        if not self.nu > 0:
            raise ConfigError(f"nu must be > 0, got {self.nu}")
        if not self.h > 0:
            raise ConfigError(f"h must be > 0, got {self.h}")
        if not self.Z >= 1:
            raise ConfigError(f"Z must be >= 1, got {self.Z}")
        if not (isinstance(self.m, (int, np.integer)) and self.m >= 1):
            raise ConfigError(f"m must be a positive integer, got {self.m}")

    @property
    def noise_scale(self) -> float:
        return float(np.sqrt(2.0 * self.nu * self.h))

    @property
    def drift_coef(self) -> float:
        """Numerator of the drift displacement, m*h/Z."""
        return float(self.m) * self.h / self.Z


@dataclass
class DensityField:
    """Macro field sampled on a uniform periodic grid of cell centers."""

    values: np.ndarray
    grid_x: np.ndarray
    t: float = 0.0
    dx: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.grid_x = np.asarray(self.grid_x, dtype=float)
        if self.dx == 0.0 and self.grid_x.size > 1:
            self.dx = float(self.grid_x[1] - self.grid_x[0])

    def validate(self) -> None:
        if self.values.shape != self.grid_x.shape:
            raise ConfigError("values and grid_x must have matching shapes")
        if np.any(~np.isfinite(self.values)):
            raise NumericsError("density field contains non-finite values")
        if np.any(self.values < 0):
            i = int(np.argmin(self.values))
            raise ConfigError(
                f"negative density {self.values[i]:.6g} at grid point "
                f"x={self.grid_x[i]:.6g} (index {i})"
            )


def uniform_grid(n: int, length: float = TWO_PI) -> np.ndarray:
    """Cell centers of a uniform periodic grid: (i + 1/2) * length / n."""
    dx = length / n
    return (np.arange(n) + 0.5) * dx


@dataclass
class ParticleEnsemble:
    """Particle positions grouped by interval ("tooth").

    positions is globally sorted; since intervals are disjoint and ordered,
    the slice of particles of interval i is given by the offsets derived from
    counts.  mode is "full" for a whole-domain simulation (periodic neighbor
    lookup, intervals only used as histogram bins) or "teeth" for gap-tooth
    dynamics (interval-local neighbors).
    """

    positions: np.ndarray
    counts: np.ndarray
    intervals: np.ndarray  # (N, 2) left/right edges, ascending, disjoint
    mode: str = "teeth"
    rng: np.random.Generator | None = None
    pending_anti_pos: np.ndarray = field(default_factory=lambda: np.empty(0))
    pending_anti_tooth: np.ndarray = field(
        default_factory=lambda: np.empty(0, dtype=np.int64)
    )
    # fractional apportionment remainders [tooth, direction, {anti, down}]
    appor_carry: np.ndarray | None = None

    @property
    def n_particles(self) -> int:
        return int(self.positions.size)

    @property
    def total_count(self) -> int:
        """Real particles minus outstanding anti-particles (conserved quantity)."""
        return int(self.positions.size) - int(self.pending_anti_pos.size)

    @property
    def offsets(self) -> np.ndarray:
        out = np.zeros(self.counts.size + 1, dtype=np.int64)
        np.cumsum(self.counts, out=out[1:])
        return out

    @property
    def tooth_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.counts.size, dtype=np.int64), self.counts)

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(
            self.positions.copy(),
            self.counts.copy(),
            self.intervals,
            self.mode,
            self.rng,
            self.pending_anti_pos.copy(),
            self.pending_anti_tooth.copy(),
            None if self.appor_carry is None else self.appor_carry.copy(),
        )


def intervals_from_grid(grid_x: np.ndarray, dx: float) -> np.ndarray:
    """Full-cover cells [x_i - dx/2, x_i + dx/2) for a uniform center grid."""
    left = grid_x - 0.5 * dx
    return np.stack([left, left + dx], axis=1)


def _check_intervals(intervals: np.ndarray) -> np.ndarray:
    intervals = np.asarray(intervals, dtype=float)
    if intervals.ndim != 2 or intervals.shape[1] != 2 or intervals.shape[0] == 0:
        raise ConfigError("intervals must be a nonempty (N, 2) array")
    widths = intervals[:, 1] - intervals[:, 0]
    if np.any(widths <= 0):
        raise ConfigError("intervals must have positive width")
    if np.any(intervals[1:, 0] < intervals[:-1, 1] - 1e-15):
        raise ConfigError("intervals must be disjoint and ascending")
    return intervals


def lift(
    rho0: DensityField,
    Z: float,
    intervals: np.ndarray,
    rng: np.random.Generator,
    mode: str = "teeth",
) -> ParticleEnsemble:
    """Lift a density field to particles.

    Interval i receives round(rho0(x_i) * |interval_i| * Z) particles with
    i.i.d. uniform positions inside the interval.  Rounding is half-to-even
    so total mass is unbiased.

    Args:
        rho0: density sampled at the interval centers (same ordering).
        Z: resolution factor.
        intervals: (N, 2) array of disjoint ascending [left, right) intervals.
        rng: seeded generator; consumed deterministically.
        mode: "teeth" or "full" (stored on the ensemble).

    Returns:
        ParticleEnsemble with sorted positions.
    """
    intervals = _check_intervals(intervals)
    rho0.validate()
    if intervals.shape[0] != rho0.values.size:
        raise ConfigError(
            f"{intervals.shape[0]} intervals but {rho0.values.size} density values"
        )
    widths = intervals[:, 1] - intervals[:, 0]
    counts = np.rint(rho0.values * widths * Z).astype(np.int64)
    total = int(counts.sum())
    u = rng.random(total)
    positions = np.empty(total, dtype=float)
    offsets = np.zeros(counts.size + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    for i in range(counts.size):
        lo, hi = offsets[i], offsets[i + 1]
        seg = intervals[i, 0] + widths[i] * u[lo:hi]
        seg.sort()
        positions[lo:hi] = seg
    return ParticleEnsemble(positions, counts, intervals, mode=mode, rng=rng)


def restrict(
    ensemble: ParticleEnsemble,
    intervals: np.ndarray | None = None,
    Z: float | None = None,
    t: float = 0.0,
) -> DensityField:
    """Histogram restriction: density_i = count_i / (|interval_i| * Z)."""
    if Z is None:
        raise ConfigError("restrict requires the resolution factor Z")
    if intervals is None:
        intervals = ensemble.intervals
        counts = ensemble.counts
    else:
        intervals = _check_intervals(intervals)
        edges = np.append(intervals[:, 0], intervals[-1, 1])
        idx = np.searchsorted(ensemble.positions, edges)
        counts = np.diff(idx)
    widths = intervals[:, 1] - intervals[:, 0]
    values = counts / (widths * Z)
    centers = 0.5 * (intervals[:, 0] + intervals[:, 1])
    dx = float(centers[1] - centers[0]) if centers.size > 1 else float(widths[0])
    return DensityField(values=values, grid_x=centers, t=t, dx=dx)


def micro_step(
    ensemble: ParticleEnsemble,
    params: MicroParams,
    rng: np.random.Generator | None = None,
) -> ParticleEnsemble:
    """Advance every particle by one step of the microscopic model.

    Neighbor spans d_pm are evaluated synchronously from the pre-step
    positions.  In "full" mode neighbors wrap around the periodic domain and
    positions are wrapped back into [0, L).  In "teeth" mode neighbors are
    interval-local (clamped to the extreme particle near an edge; periodic
    within the tooth when there is a single interval) and positions may land
    outside their interval; redistribution is the caller's job.
    """
    params.validate()
    rng = rng or ensemble.rng
    if rng is None:
        raise ConfigError("micro_step needs a random generator")
    n = ensemble.n_particles
    if n == 0:
        return ensemble.copy()
    order = np.argsort(ensemble.positions, kind="stable")
    pos_sorted = ensemble.positions[order]
    noise = rng.standard_normal(n) * params.noise_scale
    if ensemble.mode == "full":
        new_sorted = kernels.step_full_positions(
            pos_sorted, noise, params.m, params.drift_coef,
            params.domain_length, params.domain_length,
        )
        # step_full_positions returns wrapped, unsorted-by-move positions
        new = np.empty_like(new_sorted)
        new[order] = new_sorted
        out = ensemble.copy()
        out.positions = np.sort(new)
        edges = np.append(ensemble.intervals[:, 0], ensemble.intervals[-1, 1])
        out.counts = np.diff(np.searchsorted(out.positions, edges))
        out.rng = rng
        return out
    offsets = ensemble.offsets
    wrap = ensemble.counts.size == 1
    widths = ensemble.intervals[:, 1] - ensemble.intervals[:, 0]
    cap = float(widths.max())
    disp = kernels.tooth_drift(
        pos_sorted, offsets, params.m, params.drift_coef, cap, wrap
    )
    new_sorted = (pos_sorted + disp) + noise
    new = np.empty_like(new_sorted)
    new[order] = new_sorted
    out = ensemble.copy()
    out.positions = new
    out.rng = rng
    return out


def simulate_full(
    rho0: DensityField,
    params: MicroParams,
    t_end: float,
    record_dt: float,
    rng: np.random.Generator,
) -> list[DensityField]:
    """Whole-domain particle simulation of the microscopic model.

    Lifts rho0 on its own grid, steps to t_end and records the restricted
    density every record_dt (which must be an integer multiple of h).

    Returns:
        List of DensityField snapshots, the first at t=0.
    """
    params.validate()
    if t_end < 0:
        raise ConfigError("t_end must be >= 0")
    n_sub = _steps_per_record(record_dt, params.h) if t_end > 0 else 0
    intervals = intervals_from_grid(rho0.grid_x, rho0.dx)
    ens = lift(rho0, params.Z, intervals, rng, mode="full")
    if ens.n_particles < 2 * params.m + 1:
        raise ConfigError(
            f"lift produced {ens.n_particles} particles; need at least "
            f"{2 * params.m + 1} for neighbor order m={params.m}"
        )
    L = params.domain_length
    edges = np.append(intervals[:, 0], intervals[-1, 1])
    out = [restrict(ens, Z=params.Z, t=0.0)]
    if t_end <= 0:
        return out
    n_records = int(round(t_end / record_dt))
    if abs(n_records * record_dt - t_end) > 1e-9 * max(t_end, 1.0):
        raise ConfigError("t_end must be an integer multiple of record_dt")
    pos = ens.positions
    scale = params.noise_scale
    for k in range(1, n_records + 1):
        for _ in range(n_sub):
            noise = rng.standard_normal(pos.size) * scale
            pos = kernels.step_full_positions(
                pos, noise, params.m, params.drift_coef, L, L
            )
        counts = np.diff(np.searchsorted(pos, edges))
        ens = ParticleEnsemble(pos, counts, intervals, mode="full", rng=rng)
        out.append(restrict(ens, Z=params.Z, t=k * record_dt))
    if out[-1].values.sum() * 0 != 0:
        raise NumericsError("non-finite density after simulation")
    return out


def _steps_per_record(record_dt: float, h: float) -> int:
    n_sub = int(round(record_dt / h))
    if n_sub < 1 or abs(n_sub * h - record_dt) > 1e-9 * record_dt:
        raise ConfigError(
            f"record_dt={record_dt} is not an integer multiple of h={h}"
        )
    return n_sub
