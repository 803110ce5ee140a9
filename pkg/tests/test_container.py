"""Binary container formats: header packing, record layout, checkpoints."""

import hashlib
import struct

import numpy as np
import pytest

from coopbeam.container import (
    CHECKPOINT_MAGIC,
    DATASET_MAGIC,
    DatasetHeader,
    load_checkpoint,
    pack_dataset_header,
    record_dtype,
    save_checkpoint,
    unpack_dataset_header,
)
from coopbeam.errors import DataFormatError
from coopbeam.scenario import ScenarioConfig


def make_header(n_samples=0, scenario=None) -> DatasetHeader:
    cfg = scenario or ScenarioConfig()
    text = cfg.canonical_text()
    return DatasetHeader(
        t_h=cfg.history_len,
        n_bs=cfg.n_bs,
        n_ports=cfg.n_ports,
        n_subc=cfg.n_subcarriers,
        n_beam=cfg.n_beam,
        n_classes=cfg.n_classes,
        n_samples=n_samples,
        seed=cfg.seed,
        snr_mode=0,
        snr_db=10.0,
        scenario_hash=hashlib.sha256(text.encode("utf-8")).digest(),
        scenario_text=text,
    )


class TestRecordLayout:
    def test_fields_are_little_endian_f32_and_i32(self):
        rec = record_dtype(t_h=4, n_bs=2, n_ports=8, n_subc=16, n_classes=16)
        assert rec["x"].base == np.dtype("<f4")
        assert rec["x"].shape == (4, 2, 2, 2, 8, 16)
        assert rec["gains_next"].base == np.dtype("<f4")
        assert rec["gains_next"].shape == (16,)
        for field in ("y_now", "y_next", "s_next", "traj_id"):
            assert rec[field] == np.dtype("<i4")
        assert rec["hist_labels"].base == np.dtype("<i4")
        assert rec["snr_db"] == np.dtype("<f4")


class TestDatasetHeader:
    def test_pack_unpack_round_trip(self, tmp_path):
        header = make_header()
        path = tmp_path / "empty.cbw"
        path.write_bytes(pack_dataset_header(header))
        assert unpack_dataset_header(path) == header

    def test_pack_is_deterministic(self):
        assert pack_dataset_header(make_header()) == pack_dataset_header(make_header())

    def test_magic_leads_the_file(self):
        assert pack_dataset_header(make_header()).startswith(DATASET_MAGIC)

    def test_bad_magic_rejected(self, tmp_path):
        raw = bytearray(pack_dataset_header(make_header()))
        raw[:4] = b"XXXX"
        path = tmp_path / "bad.cbw"
        path.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError, match="magic"):
            unpack_dataset_header(path)

    def test_bad_version_rejected(self, tmp_path):
        raw = bytearray(pack_dataset_header(make_header()))
        struct.pack_into("<I", raw, 4, 99)
        path = tmp_path / "vers.cbw"
        path.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError, match="version"):
            unpack_dataset_header(path)

    def test_truncated_header_rejected(self, tmp_path):
        path = tmp_path / "trunc.cbw"
        path.write_bytes(pack_dataset_header(make_header())[:10])
        with pytest.raises(DataFormatError, match="truncated"):
            unpack_dataset_header(path)

    def test_wrong_body_size_rejected(self, tmp_path):
        path = tmp_path / "short.cbw"
        path.write_bytes(pack_dataset_header(make_header(n_samples=3)))
        with pytest.raises(DataFormatError, match="samples"):
            unpack_dataset_header(path)

    def test_tampered_scenario_text_rejected(self, tmp_path):
        raw = bytearray(pack_dataset_header(make_header()))
        raw[-1] ^= 0xFF
        path = tmp_path / "tamper.cbw"
        path.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError, match="hash"):
            unpack_dataset_header(path)

    def test_hash_text_mismatch_rejected_on_pack(self):
        header = make_header()
        header = DatasetHeader(**{**header.__dict__, "scenario_hash": b"\x00" * 32})
        with pytest.raises(DataFormatError, match="hash"):
            pack_dataset_header(header)


class TestCheckpoint:
    def blocks(self):
        rng = np.random.default_rng(2)
        return [
            ("layer.w", rng.standard_normal((3, 4)).astype(np.float32), True),
            ("layer.b", rng.standard_normal(4), False),  # f64 block
            ("scalar", np.float32(1.5), True),
        ]

    def test_round_trip_bit_identical(self, tmp_path):
        path = tmp_path / "model.cbp"
        blocks = self.blocks()
        meta = {"model": {"d": 16}, "note": "x"}
        save_checkpoint(path, blocks, meta)
        loaded, got_meta = load_checkpoint(path)
        assert got_meta == meta
        assert set(loaded) == {"layer.w", "layer.b", "scalar"}
        for name, arr, trainable in blocks:
            got, got_train = loaded[name]
            assert got_train == trainable
            assert got.dtype == np.asarray(arr).dtype
            np.testing.assert_array_equal(got, np.asarray(arr))

    def test_save_is_deterministic(self, tmp_path):
        a, b = tmp_path / "a.cbp", tmp_path / "b.cbp"
        save_checkpoint(a, self.blocks(), {"k": 1})
        save_checkpoint(b, self.blocks(), {"k": 1})
        assert a.read_bytes() == b.read_bytes()

    def test_magic_leads_the_file(self, tmp_path):
        path = tmp_path / "m.cbp"
        save_checkpoint(path, [], {})
        assert path.read_bytes().startswith(CHECKPOINT_MAGIC)

    def test_unsupported_dtype_rejected(self, tmp_path):
        with pytest.raises(DataFormatError, match="dtype"):
            save_checkpoint(tmp_path / "x.cbp", [("w", np.zeros(3, dtype=np.int32), True)], {})

    def test_truncated_data_rejected(self, tmp_path):
        path = tmp_path / "t.cbp"
        save_checkpoint(path, self.blocks(), {})
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(DataFormatError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        path = tmp_path / "g.cbp"
        save_checkpoint(path, self.blocks(), {})
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(DataFormatError, match="trailing"):
            load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bm.cbp"
        save_checkpoint(path, [], {})
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError, match="magic"):
            load_checkpoint(path)
