"""DFT codebook, wideband beam gains, joint labels, received-power identity."""

import numpy as np
import pytest

from coopbeam.codebook import (
    GainVector,
    beam_gain,
    gain_vector,
    joint_label,
    make_codebook,
    received_power_check,
    split_label,
)
from coopbeam.errors import ConfigError

from oracles import brute_beam_gain, brute_codebook, brute_gain_vector


def random_scene(rng, n_bs=2, n_ports=8, n_f=16):
    return [
        rng.standard_normal((n_ports, n_f)) + 1j * rng.standard_normal((n_ports, n_f))
        for _ in range(n_bs)
    ]


class TestMakeCodebook:
    def test_first_beam_is_uniform(self):
        book = make_codebook(8, 4)
        np.testing.assert_allclose(book[:, 0], 1.0 / np.sqrt(8), atol=1e-15)

    def test_entry_magnitude_32_ports(self):
        book = make_codebook(32, 32)
        np.testing.assert_allclose(np.abs(book), 1.0 / np.sqrt(32), rtol=1e-12)

    def test_columns_unit_norm(self):
        book = make_codebook(8, 5)
        np.testing.assert_allclose(np.linalg.norm(book, axis=0), 1.0, rtol=1e-12)

    def test_square_codebook_orthonormal(self):
        book = make_codebook(16, 16)
        gram = book.conj().T @ book
        np.testing.assert_allclose(gram, np.eye(16), atol=1e-12)

    @pytest.mark.parametrize("n_ports,n_beam", [(4, 7), (8, 8), (32, 32), (1, 1)])
    def test_matches_bruteforce(self, n_ports, n_beam):
        np.testing.assert_allclose(
            make_codebook(n_ports, n_beam), brute_codebook(n_ports, n_beam), atol=1e-14
        )

    def test_rejects_nonpositive_sizes(self):
        with pytest.raises(ConfigError):
            make_codebook(0, 4)
        with pytest.raises(ConfigError):
            make_codebook(4, 0)


class TestBeamGain:
    def test_zero_channel_zero_gain(self):
        book = make_codebook(8, 4)
        assert beam_gain(np.zeros((8, 16), dtype=complex), book[:, 1]) == 0.0

    def test_channel_equal_to_beam_gives_subcarrier_count(self):
        book = make_codebook(8, 4)
        h = np.tile(book[:, 2][:, None], (1, 16))
        assert beam_gain(h, book[:, 2]) == pytest.approx(16.0, rel=1e-12)

    def test_matched_steering_hits_port_times_subcarrier_product(self):
        # A channel whose columns are sqrt(n_ports) * f concentrates all power
        # on beam f: each subcarrier contributes n_ports, totalling n_f * n_ports.
        book = make_codebook(32, 32)
        h = np.tile(np.sqrt(32) * book[:, 5][:, None], (1, 64))
        assert beam_gain(h, book[:, 5]) == pytest.approx(2048.0, rel=1e-12)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(23)
        book = make_codebook(8, 6)
        for _ in range(10):
            h = rng.standard_normal((8, 16)) + 1j * rng.standard_normal((8, 16))
            m = int(rng.integers(0, 6))
            got = beam_gain(h, book[:, m])
            want = brute_beam_gain(h, book[:, m])
            assert got == pytest.approx(want, rel=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ConfigError, match="shape"):
            beam_gain(np.zeros((8, 16)), np.zeros(4))


class TestJointLabels:
    def test_corner_values(self):
        assert joint_label(1, 1, 32) == 1
        assert joint_label(4, 32, 32) == 128
        assert joint_label(2, 5, 32) == 37

    def test_bijection_over_all_classes(self):
        for c in range(1, 129):
            b, m = split_label(c, n_beam=32, n_bs=4)
            assert joint_label(b, m, 32) == c
        for b in range(1, 5):
            for m in range(1, 33):
                assert split_label(joint_label(b, m, 32), 32, 4) == (b, m)

    def test_out_of_range_rejected(self):
        with pytest.raises(ConfigError):
            joint_label(1, 0, 32)
        with pytest.raises(ConfigError):
            joint_label(1, 33, 32)
        with pytest.raises(ConfigError):
            joint_label(0, 1, 32)
        with pytest.raises(ConfigError):
            split_label(0, 32, 4)
        with pytest.raises(ConfigError):
            split_label(129, 32, 4)


class TestGainVector:
    def test_matches_per_pair_bruteforce(self):
        rng = np.random.default_rng(31)
        book = make_codebook(8, 6)
        for _ in range(5):
            mats = random_scene(rng, n_bs=3, n_ports=8)
            got = gain_vector(mats, book)
            want_gains, want_best = brute_gain_vector(mats, book)
            np.testing.assert_allclose(got.gains, want_gains, rtol=1e-9)
            assert got.best_class == want_best

    def test_all_zero_scene_defaults_to_first_class(self):
        book = make_codebook(8, 4)
        gv = gain_vector([np.zeros((8, 16))] * 2, book)
        assert gv.best_class == 1
        assert gv.best_gain == 0.0

    def test_single_hot_bs_lands_in_its_block(self):
        book = make_codebook(8, 4)
        rng = np.random.default_rng(3)
        hot = rng.standard_normal((8, 16)) + 1j * rng.standard_normal((8, 16))
        gv = gain_vector([np.zeros((8, 16)), hot, np.zeros((8, 16))], book)
        assert 5 <= gv.best_class <= 8  # classes of the second station

    def test_tie_breaks_to_lowest_class(self):
        gains = np.asarray([1.0, 3.0, 3.0, 0.5])
        assert GainVector.from_gains(gains).best_class == 2

    def test_empty_scene_rejected(self):
        with pytest.raises(ConfigError, match="at least one"):
            gain_vector([], make_codebook(8, 4))

    def test_wrong_port_count_rejected(self):
        with pytest.raises(ConfigError, match="shape"):
            gain_vector([np.zeros((4, 16))], make_codebook(8, 4))


class TestReceivedPowerCheck:
    def test_affine_in_beam_gain(self):
        rng = np.random.default_rng(41)
        book = make_codebook(8, 4)
        h = rng.standard_normal((8, 16)) + 1j * rng.standard_normal((8, 16))
        p_x, sigma2 = 2.5, 0.7
        for m in range(4):
            got = received_power_check(h, book[:, m], p_x, sigma2)
            want = p_x * beam_gain(h, book[:, m]) + 16 * sigma2
            assert got == pytest.approx(want, rel=1e-9)

    def test_argmax_agrees_with_beam_gain(self):
        rng = np.random.default_rng(43)
        book = make_codebook(8, 8)
        for _ in range(25):
            h = rng.standard_normal((8, 16)) + 1j * rng.standard_normal((8, 16))
            p_x = float(rng.uniform(0.1, 10.0))
            sigma2 = float(rng.uniform(0.0, 5.0))
            powers = [received_power_check(h, book[:, m], p_x, sigma2) for m in range(8)]
            gains = [beam_gain(h, book[:, m]) for m in range(8)]
            assert int(np.argmax(powers)) == int(np.argmax(gains))

    def test_validates_inputs(self):
        h = np.zeros((8, 16))
        beam = np.zeros(8)
        with pytest.raises(ConfigError):
            received_power_check(h, beam, 0.0, 1.0)
        with pytest.raises(ConfigError):
            received_power_check(h, beam, 1.0, -1.0)
        with pytest.raises(ConfigError):
            received_power_check(np.zeros((4, 16)), beam, 1.0, 1.0)
