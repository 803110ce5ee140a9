"""Bit-exact binary containers: dataset files ("CBW1") and checkpoints ("CBP1").

Both formats are little-endian regardless of host. A dataset file is a fixed
header (dims, sample count, seed, SNR mode, sha256 of the generating scenario
text, then the scenario text itself) followed by contiguous per-sample
records; sizes must match the byte length exactly. A checkpoint is a JSON
metadata blob followed by named parameter blocks, each carrying a
trainability flag, dtype code, and shape.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError

DATASET_MAGIC = b"CBW1"
CHECKPOINT_MAGIC = b"CBP1"
FORMAT_VERSION = 1

SNR_MODE_FIXED = 0
SNR_MODE_MIXED = 1
SNR_MODE_CLEAN = 2

# magic, version, header_len, t_h, n_bs, n_views, n_reim, n_ports, n_subc,
# n_beam, n_classes, n_samples, seed, snr_mode, snr_db, scenario_hash,
# scenario_len
_DATASET_FIXED = struct.Struct("<4sIIIIIIIIIIQqId32sI")

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


@dataclass
class DatasetHeader:
    t_h: int
    n_bs: int
    n_ports: int
    n_subc: int
    n_beam: int
    n_classes: int
    n_samples: int
    seed: int
    snr_mode: int
    snr_db: float
    scenario_hash: bytes
    scenario_text: str


def record_dtype(t_h: int, n_bs: int, n_ports: int, n_subc: int, n_classes: int) -> np.dtype:
    """One stored sample: f32 tensors for x and gains, i32 labels."""
    return np.dtype(
        [
            ("x", "<f4", (t_h, n_bs, 2, 2, n_ports, n_subc)),
            ("gains_next", "<f4", (n_classes,)),
            ("y_now", "<i4"),
            ("y_next", "<i4"),
            ("s_next", "<i4"),
            ("hist_labels", "<i4", (t_h,)),
            ("traj_id", "<i4"),
            ("snr_db", "<f4"),
        ]
    )


def pack_dataset_header(header: DatasetHeader) -> bytes:
    text = header.scenario_text.encode("utf-8")
    if hashlib.sha256(text).digest() != header.scenario_hash:
        raise DataFormatError("scenario hash does not match scenario text")
    header_len = _DATASET_FIXED.size + len(text)
    fixed = _DATASET_FIXED.pack(
        DATASET_MAGIC,
        FORMAT_VERSION,
        header_len,
        header.t_h,
        header.n_bs,
        2,
        2,
        header.n_ports,
        header.n_subc,
        header.n_beam,
        header.n_classes,
        header.n_samples,
        header.seed,
        header.snr_mode,
        header.snr_db,
        header.scenario_hash,
        len(text),
    )
    return fixed + text


def unpack_dataset_header(path: Path) -> DatasetHeader:
    size = path.stat().st_size
    with path.open("rb") as fh:
        fixed = fh.read(_DATASET_FIXED.size)
        if len(fixed) < _DATASET_FIXED.size:
            raise DataFormatError(f"{path}: truncated header")
        (
            magic,
            version,
            header_len,
            t_h,
            n_bs,
            n_views,
            n_reim,
            n_ports,
            n_subc,
            n_beam,
            n_classes,
            n_samples,
            seed,
            snr_mode,
            snr_db,
            scen_hash,
            scen_len,
        ) = _DATASET_FIXED.unpack(fixed)
        if magic != DATASET_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}, expected {DATASET_MAGIC!r}")
        if version != FORMAT_VERSION:
            raise DataFormatError(f"{path}: unsupported version {version}")
        if (n_views, n_reim) != (2, 2):
            raise DataFormatError(f"{path}: unexpected view/reim dims {(n_views, n_reim)}")
        if header_len != _DATASET_FIXED.size + scen_len:
            raise DataFormatError(f"{path}: inconsistent header length")
        text_bytes = fh.read(scen_len)
    if len(text_bytes) != scen_len:
        raise DataFormatError(f"{path}: truncated scenario text")
    if hashlib.sha256(text_bytes).digest() != scen_hash:
        raise DataFormatError(f"{path}: scenario hash mismatch")
    rec = record_dtype(t_h, n_bs, n_ports, n_subc, n_classes)
    expected = header_len + n_samples * rec.itemsize
    if size != expected:
        raise DataFormatError(
            f"{path}: size {size} does not match declared {n_samples} samples ({expected})"
        )
    return DatasetHeader(
        t_h=t_h,
        n_bs=n_bs,
        n_ports=n_ports,
        n_subc=n_subc,
        n_beam=n_beam,
        n_classes=n_classes,
        n_samples=n_samples,
        seed=seed,
        snr_mode=snr_mode,
        snr_db=snr_db,
        scenario_hash=scen_hash,
        scenario_text=text_bytes.decode("utf-8"),
    )


def open_records(path: Path, header: DatasetHeader) -> np.memmap:
    rec = record_dtype(
        header.t_h, header.n_bs, header.n_ports, header.n_subc, header.n_classes
    )
    offset = _DATASET_FIXED.size + len(header.scenario_text.encode("utf-8"))
    return np.memmap(path, dtype=rec, mode="r", offset=offset, shape=(header.n_samples,))


# --- checkpoints ---

_CKPT_FIXED = struct.Struct("<4sII")  # magic, version, meta_len
_BLOCK_HEAD = struct.Struct("<HBBB")  # name_len, trainable, dtype_code, ndim


def save_checkpoint(path: str | Path, blocks, meta: dict) -> None:
    """blocks: iterable of (name, array, trainable). Arrays stored little-endian."""
    path = Path(path)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(_CKPT_FIXED.pack(CHECKPOINT_MAGIC, FORMAT_VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        blocks = list(blocks)
        fh.write(struct.pack("<I", len(blocks)))
        for name, arr, trainable in blocks:
            arr = np.asarray(arr)
            if arr.dtype == np.float32:
                code = 0
            elif arr.dtype == np.float64:
                code = 1
            else:
                raise DataFormatError(f"block {name!r}: unsupported dtype {arr.dtype}")
            name_b = name.encode("utf-8")
            fh.write(_BLOCK_HEAD.pack(len(name_b), int(bool(trainable)), code, arr.ndim))
            fh.write(name_b)
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes())


def load_checkpoint(path: str | Path):
    """Returns (blocks, meta) with blocks = dict name -> (array, trainable)."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _CKPT_FIXED.size:
        raise DataFormatError(f"{path}: truncated checkpoint")
    magic, version, meta_len = _CKPT_FIXED.unpack_from(data, 0)
    if magic != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    pos = _CKPT_FIXED.size
    try:
        meta = json.loads(data[pos : pos + meta_len].decode("utf-8"))
    except ValueError as exc:
        raise DataFormatError(f"{path}: bad metadata JSON") from exc
    pos += meta_len
    (n_blocks,) = struct.unpack_from("<I", data, pos)
    pos += 4
    blocks: dict[str, tuple[np.ndarray, bool]] = {}
    for _ in range(n_blocks):
        if pos + _BLOCK_HEAD.size > len(data):
            raise DataFormatError(f"{path}: truncated block header")
        name_len, trainable, code, ndim = _BLOCK_HEAD.unpack_from(data, pos)
        pos += _BLOCK_HEAD.size
        if pos + name_len + 4 * ndim > len(data):
            raise DataFormatError(f"{path}: truncated block descriptor")
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        if code not in _DTYPE_CODES:
            raise DataFormatError(f"{path}: block {name!r} has unknown dtype code {code}")
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        dtype = _DTYPE_CODES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        raw = data[pos : pos + nbytes]
        if len(raw) != nbytes:
            raise DataFormatError(f"{path}: block {name!r} data truncated")
        pos += nbytes
        arr = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        if name in blocks:
            raise DataFormatError(f"{path}: duplicate block {name!r}")
        blocks[name] = (arr, bool(trainable))
    if pos != len(data):
        raise DataFormatError(f"{path}: {len(data) - pos} trailing bytes")
    return blocks, meta
