"""Geometric multi-BS channel simulator.

Produces seeded user trajectories along a street polyline, per-slot multipath
parameter sets for every base station, and the wideband frequency-domain
channel

    h[n] = sum_l alpha_l * exp(-j 2 pi f_n tau_l) * exp(j 2 pi nu_l t_s) * a(phi_l, theta_l)

with t_s = slot * slot_duration_s and f_n the absolute subcarrier frequencies.

Conventions:
- Angles are measured on the BS-to-UE direction vector; azimuth in the ground
  plane via atan2(dy, dx), elevation against the horizontal.
- Doppler is positive when the user moves toward the BS:
  nu = -(v . u_hat) * f_c / c with u_hat the unit BS-to-UE direction.
- Path 0 is line of sight with amplitude 1/distance; the remaining paths reuse
  the LoS geometry plus per-trajectory angle offsets and excess delay, scaled
  down by nlos_gain_db and rotated by a fixed random phase.
- Each path carries an independent two-state blockage chain; a blocked path
  contributes nothing, and a fully blocked BS yields an all-zero channel.

Within one slot all parameters are constant; anything random is derived from
(cfg.seed, trajectory index) so repeated calls are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .scenario import SPEED_OF_LIGHT, UE_HEIGHT_M, ScenarioConfig

# Domain separators so trajectory geometry, path randomness, and observation
# noise (module dataset) never share a random stream.
_TRAJ_STREAM = 11
_PATH_STREAM = 13

NLOS_ANGLE_STD_RAD = np.deg2rad(10.0)
NLOS_EXCESS_DELAY_MEAN_S = 100e-9


@dataclass
class Trajectory:
    positions: np.ndarray  # (n_slots, 3) meters
    velocities: np.ndarray  # (n_slots, 3) meters/second
    traj_index: int = 0

    @property
    def n_slots(self) -> int:
        return self.positions.shape[0]


@dataclass
class PathSet:
    """Multipath parameters for one (BS, slot); row l is path l, LoS first."""

    gains: np.ndarray  # (L,) complex
    delays_s: np.ndarray  # (L,) seconds
    dopplers_hz: np.ndarray  # (L,) hertz
    azimuths_rad: np.ndarray  # (L,)
    elevations_rad: np.ndarray  # (L,)
    blocked: np.ndarray  # (L,) bool
    bs: int = 0
    slot: int = 0


@dataclass
class ChannelSlice:
    h_freq: np.ndarray  # (n_ports, n_subcarriers) complex
    bs: int
    slot: int


def _polyline_arrays(cfg: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    pts = np.asarray(cfg.street_segments, dtype=np.float64)
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    if np.any(seg_len == 0.0) or seg_len.sum() == 0.0:
        raise ConfigError("street polyline is degenerate (zero-length segment)")
    return pts, seg_len


def _point_on_polyline(pts: np.ndarray, seg_len: np.ndarray, arc: np.ndarray):
    """Map arc lengths to positions and unit tangents on the polyline."""
    cum = np.concatenate(([0.0], np.cumsum(seg_len)))
    arc = np.clip(arc, 0.0, cum[-1])
    idx = np.clip(np.searchsorted(cum, arc, side="right") - 1, 0, len(seg_len) - 1)
    frac = (arc - cum[idx]) / seg_len[idx]
    p0 = pts[idx]
    p1 = pts[idx + 1]
    pos2d = p0 + frac[:, None] * (p1 - p0)
    tangent2d = (p1 - p0) / seg_len[idx][:, None]
    return pos2d, tangent2d


def build_trajectory(cfg: ScenarioConfig, n_slots: int, traj_index: int = 0) -> Trajectory:
    """Walk the street polyline at constant speed for n_slots slots.

    The start offset along the street (and a coin flip on direction) come
    from (cfg.seed, traj_index), so distinct indices give distinct but
    reproducible walks.
    """
    cfg.validate()
    if n_slots < cfg.history_len + cfg.horizon:
        raise ConfigError(
            f"n_slots={n_slots} too short for history_len={cfg.history_len} "
            f"+ horizon={cfg.horizon}"
        )
    pts, seg_len = _polyline_arrays(cfg)
    total = float(seg_len.sum())
    span = (n_slots - 1) * cfg.ue_speed_mps * cfg.slot_duration_s
    if span > total:
        raise ConfigError(
            f"trajectory covers {span:.2f} m but the street is only {total:.2f} m long"
        )
    rng = np.random.default_rng([cfg.seed, _TRAJ_STREAM, traj_index])
    start = rng.uniform(0.0, total - span)
    reverse = bool(rng.random() < 0.5)

    arc = start + np.arange(n_slots, dtype=np.float64) * cfg.ue_speed_mps * cfg.slot_duration_s
    if reverse:
        arc = total - arc
    pos2d, tan2d = _point_on_polyline(pts, seg_len, arc)
    if reverse:
        tan2d = -tan2d

    positions = np.column_stack([pos2d, np.full(n_slots, UE_HEIGHT_M)])
    velocities = np.column_stack([tan2d * cfg.ue_speed_mps, np.zeros(n_slots)])
    return Trajectory(positions=positions, velocities=velocities, traj_index=traj_index)


def array_response(cfg: ScenarioConfig, azimuth_rad, elevation_rad) -> np.ndarray:
    """Half-wavelength planar array response, one entry per port.

    Ports enumerate an n_h x n_v grid row-major (k = n_v_idx * n_h + n_h_idx);
    every entry has unit magnitude, so the vector norm is sqrt(n_ports).
    Accepts scalars or broadcasting arrays and appends the port axis last.
    """
    n_h, n_v = cfg.array_shape
    az = np.asarray(azimuth_rad, dtype=np.float64)
    el = np.asarray(elevation_rad, dtype=np.float64)
    u = np.sin(az) * np.cos(el)
    v = np.sin(el)
    h_idx = np.tile(np.arange(n_h), n_v)
    v_idx = np.repeat(np.arange(n_v), n_h)
    phase = np.pi * (u[..., None] * h_idx + v[..., None] * v_idx)
    return np.exp(1j * phase)


class PathSimulator:
    """Per-trajectory path evolution for all base stations.

    NLoS angle offsets, excess delays, and phases are drawn once per
    (BS, path) at construction; blockage chains are rolled out for the whole
    trajectory up front. paths_at(slot) is then a pure lookup plus geometry.
    """

    def __init__(self, cfg: ScenarioConfig, trajectory: Trajectory):
        cfg.validate()
        self.cfg = cfg
        self.trajectory = trajectory
        n_bs = cfg.n_bs
        n_paths = cfg.n_paths_per_bs
        n_slots = trajectory.n_slots
        rng = np.random.default_rng([cfg.seed, _PATH_STREAM, trajectory.traj_index])

        n_nlos = n_paths - 1
        self._az_offsets = rng.normal(0.0, NLOS_ANGLE_STD_RAD, size=(n_bs, n_nlos))
        self._el_offsets = rng.normal(0.0, NLOS_ANGLE_STD_RAD, size=(n_bs, n_nlos))
        self._excess_delays = rng.exponential(NLOS_EXCESS_DELAY_MEAN_S, size=(n_bs, n_nlos))
        self._nlos_phases = rng.uniform(0.0, 2.0 * np.pi, size=(n_bs, n_nlos))

        on = cfg.blockage_on_rate
        off = cfg.blockage_off_rate
        stationary = on / (on + off) if (on + off) > 0.0 else 0.0
        blocked = np.empty((n_slots, n_bs, n_paths), dtype=bool)
        blocked[0] = rng.random((n_bs, n_paths)) < stationary
        flips = rng.random((n_slots - 1, n_bs, n_paths)) if n_slots > 1 else None
        for t in range(1, n_slots):
            prev = blocked[t - 1]
            blocked[t] = np.where(prev, flips[t - 1] >= off, flips[t - 1] < on)
        self._blocked = blocked

        self._bs_positions = np.asarray(cfg.bs_positions, dtype=np.float64)

    def paths_at(self, slot: int) -> tuple[PathSet, ...]:
        cfg = self.cfg
        traj = self.trajectory
        if not 0 <= slot < traj.n_slots:
            raise ConfigError(f"slot {slot} outside trajectory of {traj.n_slots} slots")
        ue = traj.positions[slot]
        vel = traj.velocities[slot]
        out = []
        for b in range(cfg.n_bs):
            vec = ue - self._bs_positions[b]
            dist = float(np.linalg.norm(vec))
            if dist == 0.0:
                raise ConfigError(f"UE coincides with BS {b} at slot {slot}; angles undefined")
            u_hat = vec / dist
            az = float(np.arctan2(vec[1], vec[0]))
            el = float(np.arctan2(vec[2], np.hypot(vec[0], vec[1])))
            doppler = -float(np.dot(vel, u_hat)) * cfg.carrier_hz / SPEED_OF_LIGHT
            los_delay = dist / SPEED_OF_LIGHT
            los_amp = 1.0 / dist

            n_paths = cfg.n_paths_per_bs
            gains = np.empty(n_paths, dtype=np.complex128)
            delays = np.empty(n_paths, dtype=np.float64)
            azs = np.empty(n_paths, dtype=np.float64)
            els = np.empty(n_paths, dtype=np.float64)
            gains[0] = los_amp
            delays[0] = los_delay
            azs[0] = az
            els[0] = el
            if n_paths > 1:
                nlos_amp = los_amp * 10.0 ** (cfg.nlos_gain_db / 20.0)
                gains[1:] = nlos_amp * np.exp(1j * self._nlos_phases[b])
                delays[1:] = los_delay + self._excess_delays[b]
                azs[1:] = az + self._az_offsets[b]
                els[1:] = el + self._el_offsets[b]
            out.append(
                PathSet(
                    gains=gains,
                    delays_s=delays,
                    dopplers_hz=np.full(n_paths, doppler),
                    azimuths_rad=azs,
                    elevations_rad=els,
                    blocked=self._blocked[slot, b].copy(),
                    bs=b,
                    slot=slot,
                )
            )
        return tuple(out)


def evolve_paths(cfg: ScenarioConfig, trajectory: Trajectory, slot: int) -> tuple[PathSet, ...]:
    """One-shot per-slot path parameters; see PathSimulator for bulk use."""
    return PathSimulator(cfg, trajectory).paths_at(slot)


def synth_channel(paths: PathSet, cfg: ScenarioConfig, slot: int) -> ChannelSlice:
    """Sum unblocked paths into the (n_ports, n_subcarriers) channel matrix."""
    freqs = cfg.subcarrier_frequencies()
    h = np.zeros((cfg.n_ports, cfg.n_subcarriers), dtype=np.complex128)
    keep = ~paths.blocked
    if np.any(keep):
        t_s = slot * cfg.slot_duration_s
        gains = paths.gains[keep]
        delays = paths.delays_s[keep]
        dopplers = paths.dopplers_hz[keep]
        steer = array_response(cfg, paths.azimuths_rad[keep], paths.elevations_rad[keep])
        delay_phase = np.exp(-2j * np.pi * np.outer(delays, freqs))
        doppler_phase = np.exp(2j * np.pi * dopplers * t_s)
        weights = gains * doppler_phase
        h = np.einsum("l,lf,lp->pf", weights, delay_phase, steer, optimize=True)
    return ChannelSlice(h_freq=h, bs=paths.bs, slot=slot)
