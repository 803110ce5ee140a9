"""Shared fixtures: a tiny scenario that keeps channel synthesis and model
forward passes fast enough for per-test dataset generation."""

from __future__ import annotations

import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from coopbeam.dataset import build_windows
from coopbeam.model import CrsModel, ModelConfig, ModelDims
from coopbeam.scenario import ScenarioConfig


def tiny_scenario(**overrides) -> ScenarioConfig:
    base = ScenarioConfig(
        n_bs=2,
        n_beam=8,
        n_ports=8,
        n_subcarriers=16,
        history_len=4,
        horizon=1,
        slot_duration_s=0.04,
        ue_speed_mps=25.0,
        n_paths_per_bs=3,
        blockage_on_rate=0.02,
        blockage_off_rate=0.3,
        nlos_gain_db=-18.0,
        seed=7,
        bs_positions=((-20.0, 10.0, 10.0), (20.0, -10.0, 10.0)),
        street_segments=((-60.0, 0.0), (60.0, 0.0)),
    )
    return replace(base, **overrides)


def tiny_model_config(**overrides) -> ModelConfig:
    base = ModelConfig(d_c=8, d=16, n_layers=1, n_heads=2, rank_r=4)
    return replace(base, **overrides)


@pytest.fixture(scope="session")
def tiny_cfg() -> ScenarioConfig:
    return tiny_scenario()


@pytest.fixture(scope="session")
def tiny_dataset(tiny_cfg):
    """8 trajectories x 10 slots -> 48 windows of the tiny scenario."""
    return build_windows(tiny_cfg, n_trajectories=8, n_slots=10, snr_db=10.0, seed=7)


@pytest.fixture()
def tiny_model(tiny_cfg) -> CrsModel:
    return CrsModel(ModelDims.from_scenario(tiny_cfg), tiny_model_config(), seed=3)


def assert_batches_equal(a, b):
    np.testing.assert_array_equal(a.y_now, b.y_now)
    np.testing.assert_array_equal(a.y_next, b.y_next)
    np.testing.assert_array_equal(a.s_next, b.s_next)
    np.testing.assert_array_equal(a.hist_labels, b.hist_labels)
    np.testing.assert_array_equal(a.gains_next, b.gains_next)
