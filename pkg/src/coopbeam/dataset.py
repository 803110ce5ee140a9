"""Window datasets: dual-view CSI tensors, noise injection, splits, file IO.

A sample covers history_len slots of all base stations and predicts the joint
label horizon slots past the window end. The stored tensor is

    x[t, b, view, reim, port, subcarrier]   view 0 = delay, view 1 = frequency

built from the noisy frequency-domain channel; labels and gain vectors always
come from the noiseless channel.

The in-memory dataset keeps one noisy CSI array per trajectory and
materializes window tensors on demand. Because windows slide with stride 1,
consecutive windows of one trajectory share most slots; iter_shared_chunks
exposes that structure (slot tensor + per-window slot indices) so a model can
run its per-slot front-end once per distinct slot instead of once per window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import container
from .codebook import beam_gain, gain_vector, joint_label, make_codebook
from .errors import ConfigError, DataFormatError, GenerationAuditError
from .scenario import ScenarioConfig, load_scenario_text
from .simulator import PathSimulator, build_trajectory, synth_channel

_NOISE_STREAM = 17
MIXED_SNR_RANGE_DB = (-10.0, 20.0)

# Fraction of windows whose labels are re-derived through the scalar
# beam_gain route at generation time.
AUDIT_FRACTION = 0.05


def to_delay_domain(h_freq: np.ndarray) -> np.ndarray:
    """Unitary DFT along subcarriers: h_delay = h_freq @ F^H (scaled ifft)."""
    h_freq = np.asarray(h_freq)
    n = h_freq.shape[-1]
    return np.fft.ifft(h_freq, axis=-1) * math.sqrt(n)


def to_freq_domain(h_delay: np.ndarray) -> np.ndarray:
    h_delay = np.asarray(h_delay)
    n = h_delay.shape[-1]
    return np.fft.fft(h_delay, axis=-1) / math.sqrt(n)


def add_observation_noise(h_freq: np.ndarray, snr_db, rng) -> tuple[np.ndarray, bool]:
    """AWGN at per-entry variance mean(|h|^2) * 10^(-snr/10).

    Returns (noisy, degenerate). An all-zero channel has no reference power
    and is returned unchanged with degenerate = True; snr_db of None or +inf
    means no noise.
    """
    h_freq = np.asarray(h_freq)
    power = float(np.mean(np.abs(h_freq) ** 2))
    if power == 0.0:
        return h_freq.copy(), True
    if snr_db is None or math.isinf(snr_db):
        return h_freq.copy(), False
    var = power * 10.0 ** (-float(snr_db) / 10.0)
    scale = math.sqrt(var / 2.0)
    noise = rng.standard_normal(h_freq.shape) + 1j * rng.standard_normal(h_freq.shape)
    return h_freq + scale * noise, False


@dataclass
class CsiWindow:
    x: np.ndarray  # (t_h, n_bs, 2, 2, n_ports, n_subc) float32
    y_now: int
    y_next: int
    s_next: int
    gains_next: np.ndarray  # (n_classes,) float32
    hist_labels: np.ndarray  # (t_h,) int32
    snr_db: float


@dataclass
class Batch:
    """A batch in window form (x) or shared-slot form (slots + slot_map)."""

    y_now: np.ndarray  # (B,) int32, 1-based
    y_next: np.ndarray  # (B,) int32
    s_next: np.ndarray  # (B,) float32
    hist_labels: np.ndarray  # (B, t_h) int32
    gains_next: np.ndarray  # (B, n_classes) float32
    x: np.ndarray | None = None  # (B, t_h, n_bs, 2, 2, P, F) float32
    slots: np.ndarray | None = None  # (S, n_bs, 2, 2, P, F) float32
    slot_map: np.ndarray | None = None  # (B, t_h) int32 indices into slots

    @property
    def size(self) -> int:
        return self.y_now.shape[0]


@dataclass
class TrajectoryData:
    traj_id: int
    snr_db: float  # +inf when generated without noise
    freq_noisy: np.ndarray  # (n_slots, n_bs, n_ports, n_subc) complex64
    labels: np.ndarray  # (n_slots,) int32, 1-based
    gains: np.ndarray  # (n_slots, n_classes) float32

    @property
    def n_slots(self) -> int:
        return self.labels.shape[0]


def _dual_view(freq: np.ndarray) -> np.ndarray:
    """(..., n_bs, P, F) complex -> (..., n_bs, 2, 2, P, F) float32."""
    delay = to_delay_domain(freq)
    out = np.empty(freq.shape[:-2] + (2, 2) + freq.shape[-2:], dtype=np.float32)
    out[..., 0, 0, :, :] = delay.real
    out[..., 0, 1, :, :] = delay.imag
    out[..., 1, 0, :, :] = freq.real
    out[..., 1, 1, :, :] = freq.imag
    return out


class WindowDataset:
    """Sliding windows (stride 1) over per-trajectory CSI kept in memory."""

    def __init__(self, cfg: ScenarioConfig, trajectories: list[TrajectoryData]):
        self.cfg = cfg
        self.trajectories = trajectories
        t_h, delta = cfg.history_len, cfg.horizon
        traj_pos, t_end = [], []
        for pos, traj in enumerate(trajectories):
            n_win = traj.n_slots - t_h - delta + 1
            if n_win < 1:
                raise ConfigError(
                    f"trajectory {traj.traj_id} has {traj.n_slots} slots, too few for "
                    f"history {t_h} + horizon {delta}"
                )
            traj_pos.extend([pos] * n_win)
            t_end.extend(range(t_h - 1, t_h - 1 + n_win))
        self._traj_pos = np.asarray(traj_pos, dtype=np.int32)
        self._t_end = np.asarray(t_end, dtype=np.int32)
        self.y_now = np.array(
            [trajectories[p].labels[t] for p, t in zip(self._traj_pos, self._t_end)],
            dtype=np.int32,
        )
        self.y_next = np.array(
            [trajectories[p].labels[t + delta] for p, t in zip(self._traj_pos, self._t_end)],
            dtype=np.int32,
        )
        self.s_next = (self.y_next != self.y_now).astype(np.int32)

    @property
    def n_windows(self) -> int:
        return self._traj_pos.shape[0]

    def __len__(self) -> int:
        return self.n_windows

    @property
    def n_classes(self) -> int:
        return self.cfg.n_classes

    @property
    def traj_ids(self) -> list[int]:
        return [t.traj_id for t in self.trajectories]

    def flip_fraction(self) -> float:
        return float(np.mean(self.s_next))

    def gains_next(self, i: int) -> np.ndarray:
        traj = self.trajectories[self._traj_pos[i]]
        return traj.gains[self._t_end[i] + self.cfg.horizon]

    def window(self, i: int) -> CsiWindow:
        if not 0 <= i < self.n_windows:
            raise IndexError(f"window {i} out of range 0..{self.n_windows - 1}")
        cfg = self.cfg
        traj = self.trajectories[self._traj_pos[i]]
        t_end = int(self._t_end[i])
        lo = t_end - cfg.history_len + 1
        freq = traj.freq_noisy[lo : t_end + 1]
        return CsiWindow(
            x=_dual_view(freq),
            y_now=int(self.y_now[i]),
            y_next=int(self.y_next[i]),
            s_next=int(self.s_next[i]),
            gains_next=traj.gains[t_end + cfg.horizon],
            hist_labels=traj.labels[lo : t_end + 1].astype(np.int32),
            snr_db=traj.snr_db,
        )

    def _batch_common(self, idx: np.ndarray) -> dict:
        cfg = self.cfg
        t_h = cfg.history_len
        hist = np.empty((len(idx), t_h), dtype=np.int32)
        gains = np.empty((len(idx), cfg.n_classes), dtype=np.float32)
        for row, i in enumerate(idx):
            traj = self.trajectories[self._traj_pos[i]]
            t_end = int(self._t_end[i])
            hist[row] = traj.labels[t_end - t_h + 1 : t_end + 1]
            gains[row] = traj.gains[t_end + cfg.horizon]
        return dict(
            y_now=self.y_now[idx],
            y_next=self.y_next[idx],
            s_next=self.s_next[idx].astype(np.float32),
            hist_labels=hist,
            gains_next=gains,
        )

    def window_batch(self, idx: np.ndarray) -> Batch:
        """Materialize x for an arbitrary set of window indices."""
        idx = np.asarray(idx, dtype=np.int64)
        if len(idx) == 0:
            raise ConfigError("window_batch needs at least one index")
        cfg = self.cfg
        t_h = cfg.history_len
        x = np.empty(
            (len(idx), t_h, cfg.n_bs, 2, 2, cfg.n_ports, cfg.n_subcarriers), np.float32
        )
        for row, i in enumerate(idx):
            traj = self.trajectories[self._traj_pos[i]]
            t_end = int(self._t_end[i])
            x[row] = _dual_view(traj.freq_noisy[t_end - t_h + 1 : t_end + 1])
        return Batch(x=x, **self._batch_common(idx))

    def shared_chunk(self, idx: np.ndarray) -> Batch:
        """Batch of windows from ONE trajectory sharing a slot tensor."""
        idx = np.asarray(idx, dtype=np.int64)
        pos = self._traj_pos[idx]
        if len(set(pos.tolist())) != 1:
            raise ConfigError("shared_chunk needs windows from a single trajectory")
        cfg = self.cfg
        t_h = cfg.history_len
        traj = self.trajectories[pos[0]]
        ends = self._t_end[idx].astype(np.int64)
        lo = int(ends.min()) - t_h + 1
        hi = int(ends.max())
        slots = _dual_view(traj.freq_noisy[lo : hi + 1])
        slot_map = (ends[:, None] - np.arange(t_h - 1, -1, -1)[None, :] - lo).astype(np.int32)
        return Batch(slots=slots, slot_map=slot_map, **self._batch_common(idx))

    def iter_window_batches(self, batch_size: int, rng=None):
        """Window-form batches; shuffled when an rng is given."""
        order = np.arange(self.n_windows)
        if rng is not None:
            order = rng.permutation(self.n_windows)
        for i0 in range(0, len(order), batch_size):
            yield self.window_batch(order[i0 : i0 + batch_size])

    def iter_shared_chunks(self, batch_size: int, rng=None):
        """Shared-slot batches of consecutive windows within one trajectory.

        Chunk order is shuffled when an rng is given; window order inside a
        chunk stays contiguous so the slot tensor is small.
        """
        chunks = []
        start = 0
        while start < self.n_windows:
            pos = self._traj_pos[start]
            end = start
            while (
                end + 1 < self.n_windows
                and self._traj_pos[end + 1] == pos
                and end + 1 - start < batch_size
            ):
                end += 1
            chunks.append(np.arange(start, end + 1))
            start = end + 1
        if rng is not None:
            chunks = [chunks[j] for j in rng.permutation(len(chunks))]
        for idx in chunks:
            yield self.shared_chunk(idx)

    def iter_eval_batches(self, batch_size: int):
        yield from self.iter_shared_chunks(batch_size)

    def subset_by_positions(self, positions) -> "WindowDataset":
        return WindowDataset(self.cfg, [self.trajectories[p] for p in positions])


def build_windows(
    cfg: ScenarioConfig,
    n_trajectories: int,
    n_slots: int,
    snr_db,
    seed: int | None = None,
    audit_fraction: float = AUDIT_FRACTION,
) -> WindowDataset:
    """Simulate trajectories and assemble the sliding-window dataset.

    snr_db: a number (dB), None or +inf for no noise, or "mixed" for one
    uniform draw per trajectory from MIXED_SNR_RANGE_DB. `seed` overrides
    cfg.seed for the whole generation when given.
    """
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    cfg.validate()
    if n_trajectories < 1:
        raise ConfigError(f"n_trajectories must be >= 1, got {n_trajectories}")
    if n_slots < cfg.history_len + cfg.horizon:
        raise ConfigError(
            f"n_slots={n_slots} cannot hold history {cfg.history_len} + horizon {cfg.horizon}"
        )
    mixed = isinstance(snr_db, str)
    if mixed and snr_db != "mixed":
        raise ConfigError(f"snr_db must be a number, None, or 'mixed', got {snr_db!r}")

    book = make_codebook(cfg.n_ports, cfg.n_beam)
    t_h, delta = cfg.history_len, cfg.horizon
    n_win_per_traj = n_slots - t_h - delta + 1
    audit_stride = max(1, int(round(1.0 / audit_fraction))) if audit_fraction > 0 else 0

    trajectories = []
    for k in range(n_trajectories):
        traj = build_trajectory(cfg, n_slots, traj_index=k)
        sim = PathSimulator(cfg, traj)
        clean = np.empty(
            (n_slots, cfg.n_bs, cfg.n_ports, cfg.n_subcarriers), dtype=np.complex128
        )
        for t in range(n_slots):
            for ps in sim.paths_at(t):
                clean[t, ps.bs] = synth_channel(ps, cfg, t).h_freq

        labels = np.empty(n_slots, dtype=np.int32)
        gains = np.empty((n_slots, cfg.n_classes), dtype=np.float32)
        for t in range(n_slots):
            gv = gain_vector(clean[t], book)
            labels[t] = gv.best_class
            gains[t] = gv.gains

        rng = np.random.default_rng([cfg.seed, _NOISE_STREAM, k])
        traj_snr = float(rng.uniform(*MIXED_SNR_RANGE_DB)) if mixed else snr_db
        noisy = np.empty_like(clean, dtype=np.complex64)
        for t in range(n_slots):
            for b in range(cfg.n_bs):
                noisy_slice, _ = add_observation_noise(clean[t, b], traj_snr, rng)
                noisy[t, b] = noisy_slice.astype(np.complex64)

        if audit_stride:
            _audit_trajectory(cfg, book, clean, labels, gains, k, audit_stride, n_win_per_traj)

        stored_snr = float("inf") if traj_snr is None else float(traj_snr)
        trajectories.append(
            TrajectoryData(
                traj_id=k,
                snr_db=stored_snr,
                freq_noisy=noisy,
                labels=labels,
                gains=gains,
            )
        )
    return WindowDataset(cfg, trajectories)


def _audit_trajectory(cfg, book, clean, labels, gains, traj_id, stride, n_win) -> None:
    """Re-derive a sample of labels through the scalar beam_gain route."""
    t_h, delta = cfg.history_len, cfg.horizon
    for w in range(0, n_win, stride):
        t_next = t_h - 1 + w + delta
        redone = np.empty(cfg.n_classes, dtype=np.float64)
        for b in range(cfg.n_bs):
            for m in range(1, cfg.n_beam + 1):
                redone[joint_label(b + 1, m, cfg.n_beam) - 1] = beam_gain(
                    clean[t_next, b], book[:, m - 1]
                )
        best = int(np.argmax(redone)) + 1
        if best != int(labels[t_next]):
            raise GenerationAuditError(
                f"trajectory {traj_id} slot {t_next}: audit label {best} != stored {labels[t_next]}"
            )
        ref = gains[t_next].astype(np.float64)
        scale = max(float(np.max(redone)), 1e-300)
        if float(np.max(np.abs(redone - ref))) > 1e-6 * scale:
            raise GenerationAuditError(
                f"trajectory {traj_id} slot {t_next}: audit gains deviate from stored gains"
            )


def split(
    dataset: WindowDataset, fractions, seed: int
) -> tuple[WindowDataset, WindowDataset, WindowDataset]:
    """Trajectory-level train/val/test split with largest-remainder rounding."""
    if len(fractions) != 3:
        raise ConfigError(f"need exactly 3 fractions, got {len(fractions)}")
    total = float(sum(fractions))
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {total}")
    if any(f < 0 for f in fractions):
        raise ConfigError(f"fractions must be nonnegative, got {fractions}")
    n = len(dataset.trajectories)
    quotas = [f * n for f in fractions]
    counts = [int(math.floor(q)) for q in quotas]
    remainder = n - sum(counts)
    order = sorted(range(3), key=lambda j: (-(quotas[j] - counts[j]), j))
    for j in order[:remainder]:
        counts[j] += 1
    if any(c == 0 for c in counts):
        raise ConfigError(f"fractions {tuple(fractions)} leave an empty split on {n} trajectories")
    perm = np.random.default_rng(seed).permutation(n)
    out = []
    at = 0
    for c in counts:
        out.append(dataset.subset_by_positions(perm[at : at + c].tolist()))
        at += c
    return tuple(out)


def subsample(dataset: WindowDataset, fraction: float, seed: int) -> WindowDataset:
    """Keep a seeded subset of ceil(fraction * n_trajectories) trajectories."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return dataset
    n = len(dataset.trajectories)
    keep = math.ceil(fraction * n)
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset_by_positions(sorted(perm[:keep].tolist()))


# --- file round-trip ---


def save_dataset(dataset: WindowDataset, path: str | Path) -> None:
    cfg = dataset.cfg
    snrs = {t.snr_db for t in dataset.trajectories}
    if len(snrs) > 1:
        snr_mode, snr_db = container.SNR_MODE_MIXED, 0.0
    elif math.isinf(next(iter(snrs))):
        snr_mode, snr_db = container.SNR_MODE_CLEAN, 0.0
    else:
        snr_mode, snr_db = container.SNR_MODE_FIXED, float(next(iter(snrs)))
    text = cfg.canonical_text()
    header = container.DatasetHeader(
        t_h=cfg.history_len,
        n_bs=cfg.n_bs,
        n_ports=cfg.n_ports,
        n_subc=cfg.n_subcarriers,
        n_beam=cfg.n_beam,
        n_classes=cfg.n_classes,
        n_samples=dataset.n_windows,
        seed=cfg.seed,
        snr_mode=snr_mode,
        snr_db=snr_db,
        scenario_hash=cfg.content_hash(),
        scenario_text=text,
    )
    rec = container.record_dtype(
        cfg.history_len, cfg.n_bs, cfg.n_ports, cfg.n_subcarriers, cfg.n_classes
    )
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(container.pack_dataset_header(header))
        buf = np.empty(1, dtype=rec)
        for i in range(dataset.n_windows):
            w = dataset.window(i)
            buf[0]["x"] = w.x
            buf[0]["gains_next"] = w.gains_next
            buf[0]["y_now"] = w.y_now
            buf[0]["y_next"] = w.y_next
            buf[0]["s_next"] = w.s_next
            buf[0]["hist_labels"] = w.hist_labels
            buf[0]["traj_id"] = dataset.trajectories[dataset._traj_pos[i]].traj_id
            buf[0]["snr_db"] = math.nan if math.isinf(w.snr_db) else w.snr_db
            fh.write(buf.tobytes())


class FileWindowDataset:
    """Read-only window dataset backed by a CBW1 file (memory-mapped)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        if not self.path.exists():
            raise DataFormatError(f"dataset file not found: {self.path}")
        self.header = container.unpack_dataset_header(self.path)
        self.records = container.open_records(self.path, self.header)
        self.cfg = load_scenario_text(self.header.scenario_text)
        self.y_now = np.asarray(self.records["y_now"], dtype=np.int32)
        self.y_next = np.asarray(self.records["y_next"], dtype=np.int32)
        self.s_next = np.asarray(self.records["s_next"], dtype=np.int32)

    @property
    def n_windows(self) -> int:
        return int(self.header.n_samples)

    def __len__(self) -> int:
        return self.n_windows

    @property
    def n_classes(self) -> int:
        return int(self.header.n_classes)

    def flip_fraction(self) -> float:
        return float(np.mean(self.s_next))

    def window(self, i: int) -> CsiWindow:
        if not 0 <= i < self.n_windows:
            raise IndexError(f"window {i} out of range 0..{self.n_windows - 1}")
        r = self.records[i]
        snr = float(r["snr_db"])
        return CsiWindow(
            x=np.asarray(r["x"], dtype=np.float32),
            y_now=int(r["y_now"]),
            y_next=int(r["y_next"]),
            s_next=int(r["s_next"]),
            gains_next=np.asarray(r["gains_next"], dtype=np.float32),
            hist_labels=np.asarray(r["hist_labels"], dtype=np.int32),
            snr_db=float("inf") if math.isnan(snr) else snr,
        )

    def window_batch(self, idx: np.ndarray) -> Batch:
        idx = np.asarray(idx, dtype=np.int64)
        sel = self.records[idx]
        return Batch(
            x=np.asarray(sel["x"], dtype=np.float32),
            y_now=np.asarray(sel["y_now"], dtype=np.int32),
            y_next=np.asarray(sel["y_next"], dtype=np.int32),
            s_next=np.asarray(sel["s_next"], dtype=np.float32),
            hist_labels=np.asarray(sel["hist_labels"], dtype=np.int32),
            gains_next=np.asarray(sel["gains_next"], dtype=np.float32),
        )

    def iter_window_batches(self, batch_size: int, rng=None):
        order = np.arange(self.n_windows)
        if rng is not None:
            order = rng.permutation(self.n_windows)
        for i0 in range(0, len(order), batch_size):
            yield self.window_batch(order[i0 : i0 + batch_size])

    def iter_shared_chunks(self, batch_size: int, rng=None):
        # File records are materialized per window; no slot sharing to exploit.
        yield from self.iter_window_batches(batch_size, rng)

    def iter_eval_batches(self, batch_size: int):
        yield from self.iter_window_batches(batch_size)


def load_dataset(path: str | Path) -> FileWindowDataset:
    return FileWindowDataset(path)
