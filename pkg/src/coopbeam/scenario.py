"""Scenario configuration: deployment geometry, RF numerology, mobility.

A scenario pins everything the simulator needs to produce channels: base
station positions, the street polyline the user walks along, carrier and
subcarrier layout, antenna count, path and blockage statistics, and the
master seed. Scenarios round-trip through a flat ``key = value`` text format
so they can live next to generated datasets.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path

from .errors import ConfigError

SPEED_OF_LIGHT = 299_792_458.0

# Users hold the terminal at roughly chest height; the street polyline is 2-D
# and this constant supplies the missing z coordinate.
UE_HEIGHT_M = 1.5

PRESET_NAMES = ("umi_like", "uma_like")


def port_grid(n_ports: int) -> tuple[int, int]:
    """Split a port count into a (horizontal, vertical) rectangular grid.

    Picks the smallest divisor of ``n_ports`` that is >= sqrt(n_ports) as the
    horizontal extent, so 32 ports map to 8x4 and 8 ports to 4x2.
    """
    if n_ports < 1:
        raise ConfigError(f"n_ports must be >= 1, got {n_ports}")
    root = math.sqrt(n_ports)
    for cand in range(1, n_ports + 1):
        if n_ports % cand == 0 and cand >= root:
            return cand, n_ports // cand
    return n_ports, 1


@dataclass
class ScenarioConfig:
    n_bs: int = 4
    n_beam: int = 32
    n_ports: int = 32
    n_subcarriers: int = 64
    history_len: int = 16
    horizon: int = 1
    slot_duration_s: float = 0.01
    carrier_hz: float = 28e9
    subcarrier_spacing_hz: float = 120e3
    ue_speed_mps: float = 10.0
    n_paths_per_bs: int = 6
    blockage_on_rate: float = 0.03
    blockage_off_rate: float = 0.25
    nlos_gain_db: float = -12.0
    seed: int = 42
    bs_positions: tuple[tuple[float, float, float], ...] = (
        (-24.0, 12.0, 10.0),
        (-8.0, -12.0, 10.0),
        (8.0, 12.0, 10.0),
        (24.0, -12.0, 10.0),
    )
    street_segments: tuple[tuple[float, float], ...] = ((-60.0, 0.0), (60.0, 0.0))

    @property
    def n_classes(self) -> int:
        return self.n_bs * self.n_beam

    @property
    def array_shape(self) -> tuple[int, int]:
        return port_grid(self.n_ports)

    def subcarrier_frequencies(self) -> "np.ndarray":
        """Absolute subcarrier frequencies f_n = f_c + (n - N_f/2) * scs, n = 1..N_f."""
        import numpy as np

        n = np.arange(1, self.n_subcarriers + 1, dtype=np.float64)
        return self.carrier_hz + (n - self.n_subcarriers / 2.0) * self.subcarrier_spacing_hz

    def street_length(self) -> float:
        total = 0.0
        for (x0, y0), (x1, y1) in zip(self.street_segments, self.street_segments[1:]):
            total += math.hypot(x1 - x0, y1 - y0)
        return total

    def validate(self) -> None:
        if self.n_bs < 1:
            raise ConfigError(f"n_bs must be >= 1, got {self.n_bs}")
        if self.n_beam < 2:
            raise ConfigError(f"n_beam must be >= 2, got {self.n_beam}")
        if self.n_ports < 2:
            raise ConfigError(f"n_ports must be >= 2, got {self.n_ports}")
        if self.n_subcarriers < 1:
            raise ConfigError(f"n_subcarriers must be >= 1, got {self.n_subcarriers}")
        if self.history_len < 1:
            raise ConfigError(f"history_len must be >= 1, got {self.history_len}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        for name in ("slot_duration_s", "carrier_hz", "subcarrier_spacing_hz"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.ue_speed_mps < 0:
            raise ConfigError(f"ue_speed_mps must be >= 0, got {self.ue_speed_mps}")
        if self.n_paths_per_bs < 1:
            raise ConfigError(f"n_paths_per_bs must be >= 1, got {self.n_paths_per_bs}")
        for name in ("blockage_on_rate", "blockage_off_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {rate}")
        if len(self.bs_positions) != self.n_bs:
            raise ConfigError(
                f"bs_positions has {len(self.bs_positions)} entries but n_bs={self.n_bs}"
            )
        for pos in self.bs_positions:
            if len(pos) != 3:
                raise ConfigError(f"each BS position needs 3 coordinates, got {pos}")
        if len(self.street_segments) < 2:
            raise ConfigError("street polyline needs at least 2 points")
        for (x0, y0), (x1, y1) in zip(self.street_segments, self.street_segments[1:]):
            if math.hypot(x1 - x0, y1 - y0) == 0.0:
                raise ConfigError(f"street polyline has a zero-length segment at ({x0}, {y0})")

    def canonical_text(self) -> str:
        return save_scenario_text(self)

    def content_hash(self) -> bytes:
        """sha256 over the canonical text form; stored in dataset headers."""
        return hashlib.sha256(self.canonical_text().encode("utf-8")).digest()


def _format_value(value) -> str:
    if isinstance(value, bool):
        raise ConfigError("boolean scenario fields are not supported")
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, tuple):
        return "; ".join(",".join(repr(float(c)) for c in point) for point in value)
    raise ConfigError(f"cannot serialize scenario value {value!r}")


def save_scenario_text(cfg: ScenarioConfig) -> str:
    lines = []
    for field in fields(ScenarioConfig):
        lines.append(f"{field.name} = {_format_value(getattr(cfg, field.name))}")
    return "\n".join(lines) + "\n"


def save_scenario(cfg: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(save_scenario_text(cfg), encoding="utf-8")


def _parse_point_list(name: str, raw: str, width: int) -> tuple:
    points = []
    for chunk in raw.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        coords = [part.strip() for part in chunk.split(",")]
        if len(coords) != width:
            raise ConfigError(
                f"{name}: expected {width} coordinates per point, got {len(coords)} in {chunk!r}"
            )
        try:
            points.append(tuple(float(c) for c in coords))
        except ValueError as exc:
            raise ConfigError(f"{name}: bad coordinate in {chunk!r}") from exc
    return tuple(points)


def load_scenario_text(text: str) -> ScenarioConfig:
    field_map = {f.name: f for f in fields(ScenarioConfig)}
    seen: dict[str, object] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        key, raw_value = (part.strip() for part in line.split("=", 1))
        if key not in field_map:
            raise ConfigError(f"line {lineno}: unknown scenario key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate scenario key {key!r}")
        ftype = field_map[key].type
        try:
            if key == "bs_positions":
                seen[key] = _parse_point_list(key, raw_value, 3)
            elif key == "street_segments":
                seen[key] = _parse_point_list(key, raw_value, 2)
            elif ftype == "int":
                seen[key] = int(raw_value)
            else:
                seen[key] = float(raw_value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {raw_value!r}") from exc
    missing = sorted(set(field_map) - set(seen))
    if missing:
        raise ConfigError(f"scenario text is missing keys: {', '.join(missing)}")
    cfg = ScenarioConfig(**seen)
    cfg.validate()
    return cfg


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}")
    return load_scenario_text(path.read_text(encoding="utf-8"))


def load_preset(name: str) -> ScenarioConfig:
    """Load a packaged scenario preset by name (see PRESET_NAMES)."""
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")
    text = resources.files("coopbeam.presets").joinpath(f"{name}.txt").read_text("utf-8")
    return load_scenario_text(text)


def resolve_scenario(spec: str) -> ScenarioConfig:
    """Accept either a preset name or a path to a scenario text file."""
    if spec in PRESET_NAMES:
        return load_preset(spec)
    return load_scenario(spec)


def with_seed(cfg: ScenarioConfig, seed: int) -> ScenarioConfig:
    return replace(cfg, seed=seed)
