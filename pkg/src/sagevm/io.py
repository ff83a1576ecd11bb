"""Binary dataset / checkpoint / field formats, PGM and CSV export.

All binary formats are little-endian. Datasets and fields store 4-byte reals,
checkpoints 8-byte reals. Every file starts with a 4-byte magic and a u32
format version; a version mismatch is refused.

Dataset (``SGDS``)::

    magic, u32 version, u32 n_x, u32 n_z, f32 dx, f32 dz, u32 n_records
    per record: f32[N] x_obs | u32 n_bits, u8[ceil(n_bits/8)] mask bits (LSB first) | f32[N] image

Sidecar (``SGDT``)::

    magic, u32 version, u32 n_x, u32 n_z, u32 n_records, then f32[N] per record

Field (``SGFL``)::

    magic, u32 version, u32 n_x, u32 n_z, f32 dx, f32 dz, f32[N]

Checkpoint (``SGCK``)::

    magic, u32 version, u32 json_len, json descriptor (utf-8), 32-byte config hash,
    f64 data_scale, f64 x_scale, f64 y_scale, u32 n_z, f64[n_z] depth offset,
    u64 n_params, f64[n_params]
"""
from __future__ import annotations

import csv
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError
from .grid import GridSpec

VERSION = 1
DATASET_MAGIC = b"SGDS"
SIDECAR_MAGIC = b"SGDT"
FIELD_MAGIC = b"SGFL"
CHECKPOINT_MAGIC = b"SGCK"

DATASET_HEADER = struct.Struct("<4sIIIffI")
SIDECAR_HEADER = struct.Struct("<4sIIII")
FIELD_HEADER = struct.Struct("<4sIIIff")


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write(path, payload: bytes, force: bool = True):
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    if not path.parent.is_dir():
        raise FormatError(f"output directory {path.parent} does not exist")
    if path.exists() and not force:
        raise FormatError(f"{path} exists; pass --force to overwrite")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def _check_magic(blob, magic, version, path):
    if len(blob) < 8 or blob[:4] != magic:
        raise FormatError(f"{path}: not a {magic.decode()} file")
    got = struct.unpack_from("<I", blob, 4)[0]
    if got != version:
        raise FormatError(f"{path}: format version {got}, expected {version}")


def mask_bytes(n_x: int) -> int:
    return (n_x + 7) // 8


def dataset_nbytes(grid: GridSpec, n_records: int) -> int:
    rec = 4 * grid.size + 4 + mask_bytes(grid.n_x) + 4 * grid.size
    return DATASET_HEADER.size + n_records * rec


def sidecar_nbytes(grid: GridSpec, n_records: int) -> int:
    return SIDECAR_HEADER.size + n_records * 4 * grid.size


def encode_dataset(data) -> bytes:
    g = data.grid
    parts = [DATASET_HEADER.pack(DATASET_MAGIC, VERSION, g.n_x, g.n_z, g.dx, g.dz, len(data))]
    bits = struct.pack("<I", g.n_x)
    for r in range(len(data)):
        parts.append(np.asarray(data.x_obs[r], dtype="<f4").tobytes())
        parts.append(bits)
        parts.append(np.packbits(data.wells[r].astype(np.uint8), bitorder="little").tobytes())
        parts.append(np.asarray(data.images[r], dtype="<f4").tobytes())
    return b"".join(parts)


def encode_sidecar(data) -> bytes:
    g = data.grid
    head = SIDECAR_HEADER.pack(SIDECAR_MAGIC, VERSION, g.n_x, g.n_z, len(data))
    return head + np.asarray(data.truth, dtype="<f4").tobytes()


def write_dataset(data, path, sidecar_path=None, force: bool = False):
    atomic_write(path, encode_dataset(data), force)
    if sidecar_path is not None and data.truth is not None:
        atomic_write(sidecar_path, encode_sidecar(data), force)


def read_dataset(path, sidecar_path=None):
    from .training import Dataset

    blob = _read(path)
    _check_magic(blob, DATASET_MAGIC, VERSION, path)
    if len(blob) < DATASET_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    _, _, n_x, n_z, dx, dz, n = DATASET_HEADER.unpack_from(blob)
    grid = GridSpec(n_x, n_z, float(dx), float(dz))
    if len(blob) != dataset_nbytes(grid, n):
        raise FormatError(f"{path}: payload length {len(blob)} inconsistent with header ({dataset_nbytes(grid, n)})")
    size = grid.size
    x_obs = np.zeros((n, size), dtype=np.float32)
    images = np.zeros((n, size), dtype=np.float32)
    wells = np.zeros((n, n_x), dtype=np.uint8)
    at = DATASET_HEADER.size
    nb = mask_bytes(n_x)
    for r in range(n):
        x_obs[r] = np.frombuffer(blob, "<f4", size, at)
        at += 4 * size
        bits = struct.unpack_from("<I", blob, at)[0]
        if bits != n_x:
            raise FormatError(f"{path}: record {r} mask has {bits} bits, expected {n_x}")
        at += 4
        wells[r] = np.unpackbits(np.frombuffer(blob, np.uint8, nb, at), count=n_x, bitorder="little")
        at += nb
        images[r] = np.frombuffer(blob, "<f4", size, at)
        at += 4 * size
    truth = read_sidecar(sidecar_path, grid, n) if sidecar_path is not None else None
    return Dataset(grid, x_obs, wells, images, truth)


def read_sidecar(path, grid: GridSpec, n_records: int) -> np.ndarray:
    blob = _read(path)
    _check_magic(blob, SIDECAR_MAGIC, VERSION, path)
    _, _, n_x, n_z, n = SIDECAR_HEADER.unpack_from(blob)
    if (n_x, n_z, n) != (grid.n_x, grid.n_z, n_records):
        raise FormatError(f"{path}: sidecar does not match its dataset")
    if len(blob) != sidecar_nbytes(grid, n):
        raise FormatError(f"{path}: payload length inconsistent with header")
    return np.frombuffer(blob, "<f4", n * grid.size, SIDECAR_HEADER.size).reshape(n, grid.size).astype(np.float32)


def encode_field(grid: GridSpec, values) -> bytes:
    head = FIELD_HEADER.pack(FIELD_MAGIC, VERSION, grid.n_x, grid.n_z, grid.dx, grid.dz)
    return head + np.asarray(values, dtype="<f4").reshape(-1).tobytes()


def write_field(path, grid: GridSpec, values, force: bool = True):
    atomic_write(path, encode_field(grid, grid.check(values)), force)


def read_field(path):
    blob = _read(path)
    _check_magic(blob, FIELD_MAGIC, VERSION, path)
    _, _, n_x, n_z, dx, dz = FIELD_HEADER.unpack_from(blob)
    grid = GridSpec(n_x, n_z, float(dx), float(dz))
    if len(blob) != FIELD_HEADER.size + 4 * grid.size:
        raise FormatError(f"{path}: payload length inconsistent with header")
    return grid, np.frombuffer(blob, "<f4", grid.size, FIELD_HEADER.size).astype(np.float32)


def encode_checkpoint(ckpt) -> bytes:
    desc = dict(ckpt.model.descriptor())
    desc["meta"] = ckpt.meta
    text = json.dumps(desc, sort_keys=True).encode("utf-8")
    norm = ckpt.normalizer
    offset = np.asarray(norm.offset, dtype="<f8")
    params = np.asarray(ckpt.model.params, dtype="<f8")
    return b"".join([
        CHECKPOINT_MAGIC, struct.pack("<II", VERSION, len(text)), text,
        bytes(ckpt.config_hash).ljust(32, b"\0")[:32],
        struct.pack("<dddI", ckpt.data_scale, norm.x_scale, norm.y_scale, offset.shape[0]),
        offset.tobytes(), struct.pack("<Q", params.shape[0]), params.tobytes(),
    ])


def write_checkpoint(ckpt, path, force: bool = True):
    atomic_write(path, encode_checkpoint(ckpt), force)


def read_checkpoint(path):
    from .denoisers import AffineDenoiser, ConvDenoiser
    from .training import Checkpoint, Normalizer

    blob = _read(path)
    _check_magic(blob, CHECKPOINT_MAGIC, VERSION, path)
    try:
        (n_json,) = struct.unpack_from("<I", blob, 8)
        at = 12
        desc = json.loads(blob[at:at + n_json].decode("utf-8"))
        at += n_json
        chash = blob[at:at + 32]
        at += 32
        scale, x_scale, y_scale, n_z = struct.unpack_from("<dddI", blob, at)
        at += 28
        offset = np.frombuffer(blob, "<f8", n_z, at).astype(np.float64)
        at += 8 * n_z
        (n_params,) = struct.unpack_from("<Q", blob, at)
        at += 8
        if len(blob) != at + 8 * n_params:
            raise FormatError(f"{path}: parameter payload length inconsistent with header")
        params = np.frombuffer(blob, "<f8", n_params, at).astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint ({exc})") from exc
    meta = desc.pop("meta", {})
    family = desc.get("family")
    if family == "affine":
        model = AffineDenoiser(desc["n"], desc["edges"], params)
    elif family == "conv":
        grid = GridSpec(desc["n_x"], desc["n_z"])
        model = ConvDenoiser(grid, desc["widths"], desc["kernel"], data_scale=scale, params=params,
                             dtype=np.dtype(desc.get("precision", "float64")),
                             precond=desc.get("precond", "edm"))
    else:
        raise FormatError(f"{path}: unknown denoiser family {family!r}")
    return Checkpoint(model, Normalizer(offset, x_scale, y_scale), chash, meta)


def to_pgm(values2d) -> bytes:
    """8-bit binary PGM (P5). Rows are depth, columns lateral position; min/max scaled."""
    a = np.asarray(values2d, dtype=np.float64).T
    lo, hi = a.min(), a.max()
    scaled = np.zeros(a.shape) if hi == lo else (a - lo) / (hi - lo) * 255.0
    pix = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    return f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii") + pix.tobytes()


def write_pgm(path, values2d):
    atomic_write(path, to_pgm(values2d))


def read_pgm(path) -> np.ndarray:
    blob = _read(path)
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], np.uint8, w * h).reshape(h, w)


def write_csv(path, header, rows):
    path = Path(path)
    if not path.parent.is_dir():
        raise FormatError(f"output directory {path.parent} does not exist")
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)
