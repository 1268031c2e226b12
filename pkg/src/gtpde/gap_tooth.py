"""Gap-tooth scheme: sparse particle simulation with flux redistribution.

Particles are simulated only inside N small "teeth" covering a fraction
alpha of the domain.  A particle that leaves its tooth with exit depth
delta is redirected by the quadratic flux interpolation: per outflux batch a
fraction (1 - alpha^2) re-enters the same tooth, alpha*(1+alpha)/2 jumps to
the downstream tooth, and alpha*(1-alpha)/2 is realized as anti-particles
placed in the upstream tooth, each of which annihilates the nearest real
particle there.  Total particle count is conserved exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, NumericsError
from .kernels import pyref
from .micro import (TWO_PI, DensityField, MicroParams, ParticleEnsemble,
                    lift, micro_step, restrict)


@dataclass
class ToothGrid:
    """Geometry of N equally spaced teeth covering a fraction alpha."""

    N: int
    alpha: float
    domain_length: float = TWO_PI

    def validate(self) -> None:
        if not (isinstance(self.N, (int, np.integer)) and self.N >= 1):
            raise ConfigError(f"N must be a positive integer, got {self.N}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")

    @property
    def d(self) -> float:
        """Tooth spacing."""
        return self.domain_length / self.N

    @property
    def width(self) -> float:
        return self.alpha * self.d

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.d

    @property
    def left_edges(self) -> np.ndarray:
        return self.centers - 0.5 * self.width

    @property
    def intervals(self) -> np.ndarray:
        left = self.left_edges
        return np.stack([left, left + self.width], axis=1)

    @property
    def covered_fraction(self) -> float:
        return self.N * self.width / self.domain_length

    @property
    def frac_anti(self) -> float:
        return self.alpha * (1.0 - self.alpha) / 2.0

    @property
    def frac_down(self) -> float:
        return self.alpha * (1.0 + self.alpha) / 2.0


@dataclass
class FluxBatch:
    """Exit events of one step: source tooth, direction and exit depth.

    direction is +1 for right-going (crossed the right edge) and -1 for
    left-going.  Depths are already clamped to the tooth width.
    """

    tooth: np.ndarray
    direction: np.ndarray
    delta: np.ndarray
    n_teeth: int

    @property
    def n_events(self) -> int:
        return int(self.tooth.size)


def apportion_counts(n_out: int, alpha: float) -> tuple[int, int, int]:
    """Split one outflux batch into (n_anti, n_down, n_same).

    n_anti = round(n_out * alpha*(1-alpha)/2) anti-particles upstream,
    n_down = round(n_out * alpha*(1+alpha)/2) downstream, and
    n_same = n_out + n_anti - n_down closes the balance exactly.
    """
    grid_like = np.asarray([n_out], dtype=np.int64)
    fa = alpha * (1.0 - alpha) / 2.0
    fd = alpha * (1.0 + alpha) / 2.0
    n_anti, n_down, n_same = pyref._apportion(grid_like, fa, fd)
    return int(n_anti[0]), int(n_down[0]), int(n_same[0])


def split_exits(ensemble: ParticleEnsemble, grid: ToothGrid
                ) -> tuple[ParticleEnsemble, FluxBatch]:
    """Separate particles that left their tooth from those that stayed.

    Expects an ensemble produced by micro_step in "teeth" mode (positions may
    lie outside their tooth, tooth assignment still the pre-move one).
    """
    tooth_of = ensemble.tooth_of
    left = grid.left_edges
    w = grid.width
    l_of = left[tooth_of]
    r_of = l_of + w
    pos = ensemble.positions
    is_left = pos < l_of
    is_right = pos >= r_of
    stay = ~(is_left | is_right)
    delta = np.concatenate([pos[is_right] - r_of[is_right],
                            l_of[is_left] - pos[is_left]])
    tooth = np.concatenate([tooth_of[is_right], tooth_of[is_left]])
    direction = np.concatenate([
        np.ones(int(is_right.sum()), dtype=np.int8),
        -np.ones(int(is_left.sum()), dtype=np.int8),
    ])
    batch = FluxBatch(tooth, direction, delta, grid.N)
    order = np.lexsort((pos[stay], tooth_of[stay]))
    stays = ParticleEnsemble(
        pos[stay][order],
        np.bincount(tooth_of[stay], minlength=grid.N).astype(np.int64),
        grid.intervals,
        mode="teeth",
        rng=ensemble.rng,
        pending_anti_pos=ensemble.pending_anti_pos.copy(),
        pending_anti_tooth=ensemble.pending_anti_tooth.copy(),
    )
    return stays, batch


def redistribute(batch: FluxBatch, grid: ToothGrid,
                 ensemble: ParticleEnsemble) -> ParticleEnsemble:
    """Re-insert exited particles per the flux interpolation law.

    Args:
        batch: exit events collected by split_exits.
        grid: tooth geometry.
        ensemble: the staying particles (sorted), plus any anti-particles
            pending from earlier rounds.

    Returns:
        Ensemble with every particle inside a tooth; conservation is exact:
        real count minus pending antis is unchanged.
    """
    grid.validate()
    total_before = ensemble.total_count + batch.n_events
    rp, rt, ap, at, _ = pyref.redistribute_events(
        batch.tooth, batch.direction, batch.delta, grid.left_edges,
        grid.width, grid.N, grid.frac_anti, grid.frac_down,
    )
    all_pos = np.concatenate([ensemble.positions, rp])
    all_tooth = np.concatenate([ensemble.tooth_of, rt])
    order = np.lexsort((all_pos, all_tooth))
    all_pos = all_pos[order]
    all_tooth = all_tooth[order]
    counts = np.bincount(all_tooth, minlength=grid.N).astype(np.int64)
    offsets = np.zeros(grid.N + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    anti_pos = np.concatenate([ap, ensemble.pending_anti_pos])
    anti_tooth = np.concatenate([at, ensemble.pending_anti_tooth])
    if anti_pos.size:
        if all_pos.size == 0:
            raise NumericsError(
                "anti-particles outstanding but every tooth is empty"
            )
        alive, anti_pos, anti_tooth = pyref._annihilate(
            all_pos, all_tooth, offsets, anti_pos, anti_tooth
        )
        all_pos = all_pos[alive]
        all_tooth = all_tooth[alive]
        counts = np.bincount(all_tooth, minlength=grid.N).astype(np.int64)
    out = ParticleEnsemble(all_pos, counts, grid.intervals, mode="teeth",
                           rng=ensemble.rng, pending_anti_pos=anti_pos,
                           pending_anti_tooth=anti_tooth)
    if out.total_count != total_before:
        raise NumericsError(
            f"redistribution broke conservation: {total_before} -> "
            f"{out.total_count}"
        )
    return out


def drift_compensation(grid: ToothGrid, params: MicroParams) -> float:
    """Finite-step correction of the advective boundary flux.

    With a per-step noise jump sigma comparable to the tooth width, the net
    drift-induced boundary crossing rate is attenuated by
    erf(width / (sigma * sqrt(2))); boosting the drift coefficient by its
    inverse restores the macroscopic advection speed.
    """
    from scipy.special import erf

    s = params.noise_scale / grid.width
    b = float(erf(1.0 / (s * np.sqrt(2.0)))) if s > 0 else 1.0
    return 1.0 / max(b, 1e-6)


def gap_tooth_step(ensemble: ParticleEnsemble, grid: ToothGrid,
                   params: MicroParams,
                   rng: np.random.Generator | None = None,
                   drift_boost: float = 1.0,
                   _stats: dict | None = None) -> ParticleEnsemble:
    """One micro step per tooth followed by flux redistribution.

    drift_boost scales the drift coefficient (see drift_compensation); the
    default 1.0 leaves the bare micro model untouched so that a step with no
    exits is identical to micro_step.
    """
    params.validate()
    grid.validate()
    rng = rng or ensemble.rng
    if rng is None:
        raise ConfigError("gap_tooth_step needs a random generator")
    total_before = ensemble.total_count
    if ensemble.appor_carry is None:
        ensemble.appor_carry = np.zeros((grid.N, 2, 2))
    noise = rng.standard_normal(ensemble.n_particles) * params.noise_scale
    pos, counts, pend_pos, pend_tooth, stats = kernels.step_teeth(
        ensemble.positions, ensemble.counts, noise, grid.left_edges,
        grid.width, params.m, params.drift_coef * drift_boost, grid.frac_anti,
        grid.frac_down, ensemble.pending_anti_pos, ensemble.pending_anti_tooth,
        ensemble.appor_carry,
    )
    out = ParticleEnsemble(pos, counts, grid.intervals, mode="teeth", rng=rng,
                           pending_anti_pos=pend_pos,
                           pending_anti_tooth=pend_tooth,
                           appor_carry=ensemble.appor_carry)
    if out.total_count != total_before:
        raise NumericsError(
            f"gap-tooth step broke conservation: {total_before} -> "
            f"{out.total_count}"
        )
    if _stats is not None:
        for k, v in stats.items():
            _stats[k] = _stats.get(k, 0) + v
    return out


@dataclass
class GapToothResult:
    """Output of simulate_gap_tooth."""

    fields: list
    particle_records: list  # (record index, t, positions, counts)
    stats: dict


def tooth_density(counts: np.ndarray, grid: ToothGrid, Z: float,
                  t: float = 0.0) -> DensityField:
    """Per-tooth density count / (alpha*d*Z) at the tooth centers."""
    values = counts / (grid.width * Z)
    return DensityField(values=values, grid_x=grid.centers, t=t, dx=grid.d)


def simulate_gap_tooth(rho0, grid: ToothGrid, params: MicroParams,
                       t_end: float, record_dt: float,
                       rng: np.random.Generator,
                       particle_stride: int = 1,
                       compensate_drift: bool = True) -> GapToothResult:
    """Run the gap-tooth scheme from a macroscopic initial condition.

    Args:
        rho0: initial density; a callable x -> rho or a DensityField sampled
            at the tooth centers.
        grid, params: geometry and micro parameters; record_dt must be an
            integer multiple of params.h.
        t_end: final time (multiple of record_dt).
        rng: seeded generator.
        particle_stride: keep raw particle positions every this many records
            (1 = every record; the initial and final records are always kept).
        compensate_drift: apply the finite-step advective flux correction.

    Returns:
        GapToothResult with per-tooth density fields and particle snapshots.
    """
    params.validate()
    grid.validate()
    if callable(rho0):
        values = np.asarray(rho0(grid.centers), dtype=float)
        rho0 = DensityField(values=values, grid_x=grid.centers, dx=grid.d)
    elif rho0.values.size != grid.N:
        raise ConfigError("rho0 must be sampled at the tooth centers")
    ens = lift(rho0, params.Z, grid.intervals, rng, mode="teeth")
    boost = drift_compensation(grid, params) if compensate_drift else 1.0
    fields = [tooth_density(ens.counts, grid, params.Z, t=0.0)]
    records = [(0, 0.0, ens.positions.copy(), ens.counts.copy())]
    stats: dict = {}
    if t_end > 0:
        n_records = int(round(t_end / record_dt))
        if abs(n_records * record_dt - t_end) > 1e-9 * max(t_end, 1.0):
            raise ConfigError("t_end must be an integer multiple of record_dt")
        n_sub = int(round(record_dt / params.h))
        if n_sub < 1 or abs(n_sub * params.h - record_dt) > 1e-9 * record_dt:
            raise ConfigError(
                f"record_dt={record_dt} is not an integer multiple of h={params.h}"
            )
        total0 = ens.total_count
        for k in range(1, n_records + 1):
            for _ in range(n_sub):
                ens = gap_tooth_step(ens, grid, params, rng,
                                     drift_boost=boost, _stats=stats)
            if ens.total_count != total0:
                raise NumericsError("conservation lost during simulation")
            t = k * record_dt
            fields.append(tooth_density(ens.counts, grid, params.Z, t=t))
            if k % particle_stride == 0 or k == n_records:
                records.append((k, t, ens.positions.copy(), ens.counts.copy()))
    n_exit = stats.get("n_exit", 0)
    if n_exit and stats.get("n_pending", 0) > 0.01 * n_exit:
        warnings.warn(
            f"{stats['n_pending']} anti-particles are still awaiting "
            "annihilation (teeth emptied); results are suspect",
            stacklevel=2,
        )
    return GapToothResult(fields=fields, particle_records=records, stats=stats)


# Per-step noise jump as a fraction of the tooth width at which the
# redistribution exchange reproduces the physical diffusivity.  All transport
# between teeth flows through the alpha-weighted flux channels, whose
# diffusive exchange rate scales like alpha^2 * (crossings per step) * d^2/h;
# matching that to nu fixes sigma/width near the root of 2*G(1/s) = s with
# G(z) the integral of the normal tail (s ~ 0.72), shifted to 0.95 by the
# measured mode-decay rate of the implemented scheme (deep-jump wrapping and
# annihilation siting slow the exchange relative to the ideal-crossing count).
SIGMA_OVER_WIDTH = 0.95


def default_step(grid: ToothGrid, nu: float, record_dt: float,
                 sigma_over_width: float = SIGMA_OVER_WIDTH) -> float:
    """Consistency-calibrated micro step for a tooth grid.

    Returns the exact divisor of record_dt closest to the step h* at which
    sqrt(2*nu*h) = sigma_over_width * tooth_width.  Larger steps starve the
    inter-tooth exchange, smaller steps over-transport boundary noise.
    """
    w = grid.width
    h_target = (sigma_over_width * w) ** 2 / (2.0 * nu)
    if h_target >= record_dt:
        n_sub = 1
    else:
        n_sub = max(1, int(round(record_dt / h_target)))
    return record_dt / n_sub
