"""DFT beam codebook, wideband beam gains, and flat joint BS-beam labels.

The codebook is shared by every base station. Classes are 1-based: beam m at
BS b maps to y = (b-1) * n_beam + m, so y runs from 1 to n_bs * n_beam.
Ties in gain always resolve to the lowest class index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


def make_codebook(n_ports: int, n_beam: int) -> np.ndarray:
    """Columns f_m[k] = exp(-j 2 pi k (m-1) / n_beam) / sqrt(n_ports), unit norm."""
    if n_ports < 1 or n_beam < 1:
        raise ConfigError(f"need n_ports >= 1 and n_beam >= 1, got {n_ports}, {n_beam}")
    k = np.arange(n_ports)[:, None]
    m = np.arange(n_beam)[None, :]
    return np.exp(-2j * np.pi * k * m / n_beam) / np.sqrt(n_ports)


def beam_gain(h_freq: np.ndarray, beam: np.ndarray) -> float:
    """Wideband gain sum_n |f^H h[n]|^2 for one beam against one channel."""
    h_freq = np.asarray(h_freq)
    beam = np.asarray(beam)
    if h_freq.ndim != 2 or beam.ndim != 1 or h_freq.shape[0] != beam.shape[0]:
        raise ConfigError(
            f"shape mismatch: channel {h_freq.shape} vs beam {beam.shape}"
        )
    proj = beam.conj() @ h_freq
    return float(np.sum(np.abs(proj) ** 2))


def joint_label(b: int, m: int, n_beam: int) -> int:
    if n_beam < 1:
        raise ConfigError(f"n_beam must be >= 1, got {n_beam}")
    if m < 1 or m > n_beam:
        raise ConfigError(f"beam index {m} outside 1..{n_beam}")
    if b < 1:
        raise ConfigError(f"BS index {b} must be >= 1")
    return (b - 1) * n_beam + m


def split_label(c: int, n_beam: int, n_bs: int) -> tuple[int, int]:
    if c < 1 or c > n_bs * n_beam:
        raise ConfigError(f"class {c} outside 1..{n_bs * n_beam}")
    return (c - 1) // n_beam + 1, (c - 1) % n_beam + 1


@dataclass
class GainVector:
    """All joint-class gains for one slot, with the argmax precomputed."""

    gains: np.ndarray  # (n_bs * n_beam,) nonnegative
    best_class: int  # 1-based, lowest index on ties
    best_gain: float

    @classmethod
    def from_gains(cls, gains: np.ndarray) -> "GainVector":
        gains = np.asarray(gains, dtype=np.float64)
        best = int(np.argmax(gains))  # np.argmax returns the first maximum
        return cls(gains=gains, best_class=best + 1, best_gain=float(gains[best]))


def gain_vector(slices, codebook: np.ndarray) -> GainVector:
    """Gains for every (BS, beam) pair; slices must be ordered by BS index.

    Accepts ChannelSlice objects or bare (n_ports, n_subcarriers) arrays.
    """
    mats = [getattr(s, "h_freq", s) for s in slices]
    if not mats:
        raise ConfigError("gain_vector needs at least one channel slice")
    n_beam = codebook.shape[1]
    per_bs = []
    for b, h in enumerate(mats):
        h = np.asarray(h)
        if h.ndim != 2 or h.shape[0] != codebook.shape[0]:
            raise ConfigError(f"slice for BS {b} has shape {h.shape}, wanted ({codebook.shape[0]}, n_f)")
        proj = codebook.conj().T @ h  # (n_beam, n_f)
        per_bs.append(np.sum(np.abs(proj) ** 2, axis=1))
    return GainVector.from_gains(np.concatenate(per_bs))


def received_power_check(
    h_freq: np.ndarray, beam: np.ndarray, symbol_power: float, noise_var: float
) -> float:
    """Per-subcarrier received power sum_n (|h[n]^H f|^2 P + sigma^2).

    With beam-independent P and sigma^2 this is an affine map of beam_gain,
    so both quantities share their argmax over any codebook.
    """
    if symbol_power <= 0:
        raise ConfigError(f"symbol_power must be > 0, got {symbol_power}")
    if noise_var < 0:
        raise ConfigError(f"noise_var must be >= 0, got {noise_var}")
    h_freq = np.asarray(h_freq)
    if h_freq.ndim != 2 or h_freq.shape[0] != np.asarray(beam).shape[0]:
        raise ConfigError(f"shape mismatch: channel {h_freq.shape} vs beam {np.asarray(beam).shape}")
    proj = np.abs(np.asarray(beam).conj() @ h_freq) ** 2
    return float(np.sum(proj * symbol_power + noise_var))
