"""Scenario config: field validation, text round-trip, presets, numerology."""

from dataclasses import replace

import numpy as np
import pytest

from coopbeam.errors import ConfigError
from coopbeam.scenario import (
    PRESET_NAMES,
    ScenarioConfig,
    load_preset,
    load_scenario_text,
    port_grid,
    resolve_scenario,
    save_scenario_text,
    with_seed,
)

from conftest import tiny_scenario


class TestPortGrid:
    def test_32_ports_make_8_by_4(self):
        assert port_grid(32) == (8, 4)

    def test_8_ports_make_4_by_2(self):
        assert port_grid(8) == (4, 2)

    def test_perfect_square_is_square(self):
        assert port_grid(16) == (4, 4)

    def test_single_port(self):
        assert port_grid(1) == (1, 1)

    def test_grid_multiplies_back(self):
        for n in (2, 4, 6, 12, 30, 32, 64):
            h, v = port_grid(n)
            assert h * v == n
            assert h >= v

    def test_zero_ports_rejected(self):
        with pytest.raises(ConfigError):
            port_grid(0)


class TestNumerology:
    def test_default_class_count(self):
        cfg = ScenarioConfig()
        assert cfg.n_classes == 128

    def test_subcarrier_frequencies_match_formula(self):
        cfg = tiny_scenario()
        freqs = cfg.subcarrier_frequencies()
        assert freqs.shape == (cfg.n_subcarriers,)
        for n in range(1, cfg.n_subcarriers + 1):
            want = cfg.carrier_hz + (n - cfg.n_subcarriers / 2.0) * cfg.subcarrier_spacing_hz
            assert freqs[n - 1] == pytest.approx(want, rel=0, abs=1e-6)

    def test_subcarriers_straddle_carrier(self):
        cfg = ScenarioConfig()
        freqs = cfg.subcarrier_frequencies()
        assert freqs[0] < cfg.carrier_hz < freqs[-1]
        steps = np.diff(freqs)
        np.testing.assert_allclose(steps, cfg.subcarrier_spacing_hz, rtol=1e-12)

    def test_street_length_default(self):
        assert ScenarioConfig().street_length() == pytest.approx(120.0)


class TestValidation:
    @pytest.mark.parametrize(
        "field,value",
        [
            ("n_bs", 0),
            ("n_beam", 1),
            ("n_ports", 1),
            ("n_subcarriers", 0),
            ("history_len", 0),
            ("horizon", 0),
            ("slot_duration_s", 0.0),
            ("carrier_hz", -1.0),
            ("subcarrier_spacing_hz", 0.0),
            ("ue_speed_mps", -1.0),
            ("n_paths_per_bs", 0),
            ("blockage_on_rate", 1.5),
            ("blockage_off_rate", -0.1),
        ],
    )
    def test_bad_field_rejected(self, field, value):
        cfg = replace(ScenarioConfig(), **{field: value})
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_bs_position_count_must_match(self):
        cfg = replace(ScenarioConfig(), n_bs=3)
        with pytest.raises(ConfigError, match="bs_positions"):
            cfg.validate()

    def test_degenerate_street_rejected(self):
        cfg = replace(
            tiny_scenario(), street_segments=((0.0, 0.0), (0.0, 0.0))
        )
        with pytest.raises(ConfigError, match="zero-length"):
            cfg.validate()

    def test_defaults_are_valid(self):
        ScenarioConfig().validate()


class TestTextRoundTrip:
    def test_round_trip_is_identity(self):
        cfg = tiny_scenario()
        assert load_scenario_text(save_scenario_text(cfg)) == cfg

    def test_round_trip_default(self):
        cfg = ScenarioConfig()
        assert load_scenario_text(save_scenario_text(cfg)) == cfg

    def test_comments_and_blanks_ignored(self):
        text = "# leading comment\n\n" + save_scenario_text(ScenarioConfig()) + "\n# trailing\n"
        assert load_scenario_text(text) == ScenarioConfig()

    def test_unknown_key_reports_line(self):
        text = save_scenario_text(ScenarioConfig()) + "bogus_key = 3\n"
        with pytest.raises(ConfigError, match="bogus_key"):
            load_scenario_text(text)

    def test_duplicate_key_rejected(self):
        text = save_scenario_text(ScenarioConfig()) + "n_bs = 4\n"
        with pytest.raises(ConfigError, match="duplicate"):
            load_scenario_text(text)

    def test_missing_key_rejected(self):
        text = "n_bs = 4\n"
        with pytest.raises(ConfigError, match="missing"):
            load_scenario_text(text)

    def test_bad_value_reports_line(self):
        text = save_scenario_text(ScenarioConfig()).replace(
            "carrier_hz = 28000000000.0", "carrier_hz = not_a_number"
        )
        with pytest.raises(ConfigError, match="carrier_hz"):
            load_scenario_text(text)


class TestPresets:
    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_preset_loads_and_validates(self, name):
        cfg = load_preset(name)
        cfg.validate()
        assert cfg.n_classes == 128

    def test_presets_share_dimensions_and_dynamics(self):
        umi = load_preset("umi_like")
        uma = load_preset("uma_like")
        for field in (
            "n_bs", "n_beam", "n_ports", "n_subcarriers", "history_len",
            "horizon", "slot_duration_s", "carrier_hz", "subcarrier_spacing_hz",
            "ue_speed_mps", "n_paths_per_bs",
        ):
            assert getattr(umi, field) == getattr(uma, field), field

    def test_presets_differ_in_height_blockage_nlos(self):
        umi = load_preset("umi_like")
        uma = load_preset("uma_like")
        assert umi.bs_positions[0][2] != uma.bs_positions[0][2]
        assert umi.blockage_on_rate != uma.blockage_on_rate
        assert umi.nlos_gain_db != uma.nlos_gain_db

    def test_unknown_preset_rejected(self):
        with pytest.raises(ConfigError, match="unknown preset"):
            load_preset("suburbia")

    def test_resolve_accepts_path(self, tmp_path):
        cfg = tiny_scenario()
        path = tmp_path / "scn.txt"
        path.write_text(save_scenario_text(cfg), encoding="utf-8")
        assert resolve_scenario(str(path)) == cfg

    def test_resolve_missing_path_rejected(self):
        with pytest.raises(ConfigError, match="not found"):
            resolve_scenario("/nonexistent/scenario.txt")


class TestContentHash:
    def test_stable_across_instances(self):
        assert ScenarioConfig().content_hash() == ScenarioConfig().content_hash()

    def test_sensitive_to_any_field(self):
        base = ScenarioConfig().content_hash()
        assert with_seed(ScenarioConfig(), 43).content_hash() != base
        assert replace(ScenarioConfig(), nlos_gain_db=-13.0).content_hash() != base

    def test_with_seed_changes_only_seed(self):
        cfg = with_seed(tiny_scenario(), 99)
        assert cfg.seed == 99
        assert cfg.n_bs == tiny_scenario().n_bs
