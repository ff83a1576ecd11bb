from __future__ import annotations

import csv
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sagevm import io
from sagevm.cli import main
from sagevm.config import SCHEMA, load_config, parse_config
from sagevm.errors import ConfigError, FormatError
from sagevm.grid import GridSpec
from sagevm.imaging import ImagingParams
from sagevm.prior import LayeredModelParams
from sagevm.training import Normalizer, TrainConfig, make_dataset, train

TINY = ["--set", "grid.n_x=4", "--set", "grid.n_z=8", "--set", "wells.n_wells=2", "--set", "data.n_records=2",
        "--set", "prior.n_layers=3"]


def _dataset(n=3, grid=GridSpec(5, 6), seed=0):
    return make_dataset(n, grid, LayeredModelParams(3, 1500, 3000), ImagingParams(), 2, seed)


# ---- binary formats ----

def test_dataset_round_trip_and_size(tmp_path):
    data = _dataset()
    path, side = tmp_path / "d.sgds", tmp_path / "d.truth"
    io.write_dataset(data, path, side)
    n = 30
    # header 28 bytes; per record: f32 x_obs, u32 bit count, 1 mask byte for 5 columns, f32 image
    assert path.stat().st_size == 28 + 3 * (4 * n + 4 + 1 + 4 * n) == io.dataset_nbytes(data.grid, 3)
    assert side.stat().st_size == 20 + 3 * 4 * n == io.sidecar_nbytes(data.grid, 3)
    back = io.read_dataset(path, side)
    assert back.grid == data.grid
    for name in ("x_obs", "wells", "images", "truth"):
        assert getattr(back, name).tobytes() == getattr(data, name).tobytes()
    assert io.read_dataset(path).truth is None


def test_empty_dataset_has_valid_header(tmp_path):
    data = _dataset(0)
    io.write_dataset(data, tmp_path / "e.sgds", tmp_path / "e.truth")
    assert (tmp_path / "e.sgds").stat().st_size == 28
    assert len(io.read_dataset(tmp_path / "e.sgds", tmp_path / "e.truth")) == 0


def test_dataset_header_fields(tmp_path):
    data = _dataset(2)
    io.write_dataset(data, tmp_path / "d.sgds", tmp_path / "d.truth")
    magic, version, nx, nz, dx, dz, n = struct.unpack_from("<4sIIIffI", (tmp_path / "d.sgds").read_bytes())
    assert (magic, version, nx, nz, dx, dz, n) == (b"SGDS", 1, 5, 6, 1.0, 1.0, 2)


def test_version_and_length_refused(tmp_path):
    data = _dataset(2)
    path = tmp_path / "d.sgds"
    io.write_dataset(data, path, tmp_path / "d.truth")
    blob = bytearray(path.read_bytes())
    blob[4:8] = struct.pack("<I", 2)
    (tmp_path / "v.sgds").write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="version"):
        io.read_dataset(tmp_path / "v.sgds")
    (tmp_path / "t.sgds").write_bytes(path.read_bytes()[:-3])
    with pytest.raises(FormatError):
        io.read_dataset(tmp_path / "t.sgds")
    (tmp_path / "m.sgds").write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(FormatError):
        io.read_dataset(tmp_path / "m.sgds")


def test_refuse_overwrite_and_missing_dir(tmp_path):
    data = _dataset(1)
    io.write_dataset(data, tmp_path / "d.sgds", tmp_path / "d.truth")
    with pytest.raises(FormatError, match="force"):
        io.write_dataset(data, tmp_path / "d.sgds", tmp_path / "d.truth")
    with pytest.raises(FormatError, match="does not exist"):
        io.write_dataset(data, tmp_path / "nope" / "d.sgds")


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 1000))
def test_field_round_trip(nx, nz, seed):
    import tempfile
    from pathlib import Path
    grid = GridSpec(nx, nz, 2.5, 0.5)
    values = np.random.default_rng(seed).normal(size=nx * nz).astype(np.float32)
    with tempfile.TemporaryDirectory() as d:
        io.write_field(Path(d) / "f.sgfl", grid, values)
        g2, v2 = io.read_field(Path(d) / "f.sgfl")
        assert (Path(d) / "f.sgfl").stat().st_size == 24 + 4 * nx * nz
    assert g2 == grid and v2.tobytes() == values.tobytes()


@pytest.mark.parametrize("family", ["affine", "conv"])
def test_checkpoint_round_trip(tmp_path, family):
    data = _dataset(4, GridSpec(4, 6))
    ckpt, _ = train(TrainConfig(family=family, steps=2, n_bins=3, precision="float32"), data)
    ckpt.meta["note"] = "x"
    io.write_checkpoint(ckpt, tmp_path / "c.sgck")
    back = io.read_checkpoint(tmp_path / "c.sgck")
    assert back.model.params.tobytes() == ckpt.model.params.tobytes()
    assert back.model.descriptor() == ckpt.model.descriptor()
    assert back.config_hash == ckpt.config_hash and back.meta == ckpt.meta
    assert back.data_scale == ckpt.data_scale
    assert back.normalizer.offset.tobytes() == ckpt.normalizer.offset.tobytes()
    assert (back.normalizer.x_scale, back.normalizer.y_scale) == (ckpt.normalizer.x_scale, ckpt.normalizer.y_scale)
    x = np.random.default_rng(0).normal(size=(2, 24))
    assert back.model(x, x, 1.0, 0.3).tobytes() == ckpt.model(x, x, 1.0, 0.3).tobytes()
    assert io.encode_checkpoint(back) == io.encode_checkpoint(ckpt)


def test_pgm(tmp_path):
    vals = np.arange(12.0).reshape(3, 4)
    io.write_pgm(tmp_path / "a.pgm", vals)
    blob = (tmp_path / "a.pgm").read_bytes()
    assert blob.startswith(b"P5\n")
    img = io.read_pgm(tmp_path / "a.pgm")
    assert img.shape == (4, 3)  # rows are depth
    assert img.min() == 0 and img.max() == 255
    io.write_pgm(tmp_path / "c.pgm", np.ones((2, 2)))
    assert np.all(io.read_pgm(tmp_path / "c.pgm") == 0)


# ---- config ----

def test_config_defaults_materialised():
    cfg = parse_config("")
    assert set(cfg.values) == set(SCHEMA)
    assert cfg["sampler.n_samples"] == 16 and cfg["wells.n_wells"] == 5
    assert parse_config(cfg.dumps()).values == cfg.values


def test_config_parsing_and_overrides():
    cfg = parse_config("# comment\ntrain.lr = 0.01  # trailing\n\ntrain.widths = 8, 16\n", ["train.lr=0.5"])
    assert cfg["train.lr"] == 0.5 and cfg["train.widths"] == (8, 16)


@pytest.mark.parametrize("text", ["nosuch.key = 1", "train.lr = abc", "train.lr", "train.objective = magic",
                                  "wells.n_wells = 0", "eval.window = 4", "sampler.mode = other",
                                  "prior.v_min = 5000", "train.normalize = maybe", "sigma.p_std = -1",
                                  "train.lr = nan"])
def test_config_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_file_errors(tmp_path):
    with pytest.raises(FormatError):
        load_config(tmp_path / "missing.cfg")
    (tmp_path / "a.cfg").write_text("grid.n_x = 8\n")
    assert load_config(tmp_path / "a.cfg")["grid.n_x"] == 8


# ---- command line ----

def _simulate(tmp_path, name="d.sgds", extra=()):
    return main(["simulate", "--out", str(tmp_path / name), "--seed", "3", *TINY, *extra])


def test_cli_simulate_sizes_and_determinism(tmp_path, capsys):
    assert _simulate(tmp_path) == 0
    assert _simulate(tmp_path, "e.sgds") == 0
    grid = GridSpec(4, 8)
    assert (tmp_path / "d.sgds").stat().st_size == io.dataset_nbytes(grid, 2) == 28 + 2 * (128 + 4 + 1 + 128)
    assert (tmp_path / "d.sgds").read_bytes() == (tmp_path / "e.sgds").read_bytes()
    assert (tmp_path / "d.sgds.truth").read_bytes() == (tmp_path / "e.sgds.truth").read_bytes()
    assert _simulate(tmp_path) == 4  # exists, no --force
    assert _simulate(tmp_path, extra=["--force"]) == 0
    assert main(["simulate", "--out", str(tmp_path / "no" / "d.sgds"), *TINY]) == 4


def test_cli_invalid_key_fails_before_work(tmp_path):
    assert main(["simulate", "--out", str(tmp_path / "d.sgds"), "--set", "bogus.key=1"]) == 2
    assert not (tmp_path / "d.sgds").exists()


def test_cli_train_and_collapse(tmp_path):
    _simulate(tmp_path)
    common = ["--data", str(tmp_path / "d.sgds"), "--no-timing", *TINY, "--set", "train.steps=10",
              "--set", "train.keep_prob=1", "--set", "train.widths=4,8"]
    assert main(["train", "--out", str(tmp_path / "s.sgck"), "--set", "train.objective=sage", *common]) == 0
    assert main(["train", "--out", str(tmp_path / "n.sgck"), "--set", "train.objective=naive", *common]) == 0
    rows = list(csv.reader(open(tmp_path / "s.sgck.loss.csv")))
    assert rows[0] == ["step", "loss", "grad_norm", "seconds"] and len(rows) == 11
    assert (tmp_path / "s.sgck.loss.csv").read_bytes() == (tmp_path / "n.sgck.loss.csv").read_bytes()


def test_cli_supervised_needs_sidecar(tmp_path):
    _simulate(tmp_path)
    (tmp_path / "d.sgds.truth").unlink()
    code = main(["train", "--data", str(tmp_path / "d.sgds"), "--out", str(tmp_path / "c.sgck"), *TINY,
                 "--set", "train.objective=supervised", "--set", "train.steps=1"])
    assert code == 2 and not (tmp_path / "c.sgck").exists()
    # masked objectives never need it
    assert main(["train", "--data", str(tmp_path / "d.sgds"), "--out", str(tmp_path / "c.sgck"), *TINY,
                 "--set", "train.steps=1"]) == 0


def _trained(tmp_path):
    _simulate(tmp_path)
    main(["train", "--data", str(tmp_path / "d.sgds"), "--out", str(tmp_path / "c.sgck"), "--no-timing", *TINY,
          "--set", "train.steps=3", "--set", "train.widths=4,8"])
    return ["--checkpoint", str(tmp_path / "c.sgck"), "--data", str(tmp_path / "d.sgds"), *TINY,
            "--set", "sampler.n_steps=4"]


def test_cli_sample_outputs(tmp_path):
    args = _trained(tmp_path)
    assert main(["sample", *args, "--out-dir", str(tmp_path / "e16"), "--seed", "1"]) == 0
    names = sorted(p.name for p in (tmp_path / "e16").iterdir())
    assert len([n for n in names if n.startswith("sample_")]) == 16
    assert "mean.pgm" in names and "std.pgm" in names
    assert main(["sample", *args, "--out-dir", str(tmp_path / "e1"), "--n-samples", "1"]) == 0
    assert not (tmp_path / "e1" / "std.pgm").exists() and (tmp_path / "e1" / "mean.pgm").exists()
    assert main(["sample", *args, "--out-dir", str(tmp_path / "f16"), "--seed", "1"]) == 0
    for p in (tmp_path / "e16").glob("sample_*"):
        assert p.read_bytes() == (tmp_path / "f16" / p.name).read_bytes()
    assert main(["sample", *args, "--out-dir", str(tmp_path / "e16")]) == 4


def test_cli_sample_from_image(tmp_path):
    args = _trained(tmp_path)
    io.write_field(tmp_path / "img.sgfl", GridSpec(4, 8), np.ones(32, np.float32))
    assert main(["sample", "--checkpoint", str(tmp_path / "c.sgck"), "--image", str(tmp_path / "img.sgfl"),
                 *TINY, "--set", "sampler.n_steps=3", "--n-samples", "2", "--out-dir", str(tmp_path / "o")]) == 0
    assert main(["sample", *args, "--image", str(tmp_path / "img.sgfl"), "--out-dir", str(tmp_path / "p")]) == 2


def test_cli_eval_truth_copies(tmp_path):
    args = _trained(tmp_path)
    main(["sample", *args, "--out-dir", str(tmp_path / "e"), "--n-samples", "2", "--record", "1"])
    data = io.read_dataset(tmp_path / "d.sgds", tmp_path / "d.sgds.truth")
    for p in (tmp_path / "e").glob("sample_*"):
        io.write_field(p, data.grid, data.truth[1])
    assert main(["eval", "--ensemble", str(tmp_path / "e"), "--sidecar", str(tmp_path / "d.sgds.truth"),
                 "--out", str(tmp_path / "m.csv"), "--set", "eval.window=3"]) == 0
    row = next(csv.DictReader(open(tmp_path / "m.csv")))
    assert float(row["ssim"]) == 1.0 and float(row["rmse"]) == 0.0
    assert main(["eval", "--ensemble", str(tmp_path / "e"), "--out", str(tmp_path / "x.csv")]) == 2


def test_cli_eval_oracle_columns(tmp_path):
    cfg = tmp_path / "lg.cfg"
    cfg.write_text("grid.n_x = 4\ngrid.n_z = 8\nprior.kind = gaussian\nprior.kernel_length = 2\n"
                   "imaging.noise_std = 0.2\nwells.n_wells = 1\ndata.n_records = 2\n")
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "d.sgds")])
    main(["train", "--config", str(cfg), "--data", str(tmp_path / "d.sgds"), "--out", str(tmp_path / "c.sgck"),
          "--set", "train.steps=2", "--set", "train.widths=4,8"])
    main(["sample", "--config", str(cfg), "--checkpoint", str(tmp_path / "c.sgck"), "--data",
          str(tmp_path / "d.sgds"), "--set", "sampler.n_steps=3", "--n-samples", "4", "--out-dir",
          str(tmp_path / "e")])
    assert main(["eval", "--ensemble", str(tmp_path / "e"), "--oracle-config", str(cfg),
                 "--set", "eval.window=3", "--out", str(tmp_path / "m.csv")]) == 0
    header = next(csv.reader(open(tmp_path / "m.csv")))
    for col in ("mean_abs_standardized_error", "covariance_rel_frobenius", "mean_coverage"):
        assert col in header


def test_cli_gradcheck(capsys):
    assert main(["gradcheck", "--family", "affine", "--n-x", "2", "--n-z", "2"]) == 0
    out = capsys.readouterr().out
    assert "worst coordinate" in out and "OK" in out
    assert main(["gradcheck", "--family", "conv", "--n-x", "4", "--n-z", "6", "--n-coords", "50"]) == 0
    assert main(["gradcheck", "--family", "oracle"]) == 2
    assert main(["gradcheck", "--family", "affine", "--n-x", "2", "--n-z", "2", "--threshold", "1e-30"]) == 3
