"""``sagevm`` command line: simulate | train | sample | eval | gradcheck.

Exit codes: 0 success, 2 configuration/usage error, 3 numerical error, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import load_config
from .errors import CapabilityError, ConfigError, DivergenceError, FormatError, SageError
from .evaluation import (analytic_posterior, compare_to_analytic, condition_on_support, posterior_stats,
                         rmse, ssim)
from .grid import GridSpec
from .imaging import imaging_matrix
from .inference import posterior_samples
from .training import make_dataset, train

MANIFEST = "ensemble.json"
GRADCHECK_THRESHOLDS = {"affine": 1e-6, "conv": 1e-5}


def _config(args):
    return load_config(args.config, args.set or ())


def _sidecar_default(path) -> Path:
    return Path(str(path) + ".truth")


def cmd_simulate(args) -> int:
    cfg = _config(args)
    grid = cfg.grid()
    out = Path(args.out)
    sidecar = Path(args.sidecar) if args.sidecar else _sidecar_default(out)
    for path in (out, sidecar):
        if not path.parent.is_dir():
            raise FormatError(f"output directory {path.parent} does not exist")
        if path.exists() and not args.force:
            raise FormatError(f"{path} exists; pass --force to overwrite")
    data = make_dataset(cfg["data.n_records"], grid, cfg.prior(), cfg.imaging(), cfg["wells.n_wells"], args.seed)
    io.write_dataset(data, out, sidecar, force=True)
    print(f"wrote {len(data)} records to {out} (ground truth: {sidecar})")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    tc = cfg.train(args.seed)
    sidecar = None
    if tc.objective == "supervised":
        sidecar = Path(args.sidecar) if args.sidecar else _sidecar_default(args.data)
        if not sidecar.exists():
            raise CapabilityError(f"objective=supervised needs the ground-truth sidecar ({sidecar} not found)")
    out = Path(args.out)
    loss_csv = Path(args.loss_csv) if args.loss_csv else Path(str(out) + ".loss.csv")
    for path in (out, loss_csv):
        if not path.parent.is_dir():
            raise FormatError(f"output directory {path.parent} does not exist")
        if path.exists() and not args.force:
            raise FormatError(f"{path} exists; pass --force to overwrite")
    # the sidecar is opened only for the supervised objective
    data = io.read_dataset(args.data, sidecar)
    try:
        ckpt, history = train(tc, data)
    except DivergenceError as exc:
        if exc.last_good is not None:
            rescue = Path(str(out) + ".last-good")
            io.write_checkpoint(exc.last_good, rescue)
            print(f"last finite parameters saved to {rescue}", file=sys.stderr)
        raise
    io.write_checkpoint(ckpt, out)
    rows = [(r.step, repr(r.loss), repr(r.grad_norm), 0.0 if args.no_timing else round(r.seconds, 6))
            for r in history]
    io.write_csv(loss_csv, ("step", "loss", "grad_norm", "seconds"), rows)
    final = history[-1].loss if history else float("nan")
    print(f"trained {tc.family}/{tc.objective} for {tc.steps} steps, final loss {final:.6g}; wrote {out}")
    return 0


def _prepare_out_dir(path: Path, force: bool):
    if not path.parent.is_dir():
        raise FormatError(f"output directory {path.parent} does not exist")
    if path.exists() and any(path.iterdir()) and not force:
        raise FormatError(f"{path} is not empty; pass --force to overwrite")
    path.mkdir(exist_ok=True)
    for old in path.glob("sample_*.sgfl"):
        old.unlink()
    for name in ("mean.pgm", "std.pgm"):
        (path / name).unlink(missing_ok=True)


def cmd_sample(args) -> int:
    cfg = _config(args)
    if (args.data is None) == (args.image is None):
        raise ConfigError("give exactly one of --data (with --record) or --image")
    ckpt = io.read_checkpoint(args.checkpoint)
    if args.data is not None:
        data = io.read_dataset(args.data)
        if not 0 <= args.record < len(data):
            raise ConfigError(f"record {args.record} out of range for {len(data)} records")
        grid = data.grid
        image = data.images[args.record]
        wells, x_obs = data.wells[args.record], data.x_obs[args.record]
    else:
        grid, image = io.read_field(args.image)
        wells = x_obs = None
    n = args.n_samples if args.n_samples is not None else cfg["sampler.n_samples"]
    if n < 1:
        raise ConfigError("n_samples must be >= 1")
    out = Path(args.out_dir)
    _prepare_out_dir(out, args.force)
    samples = posterior_samples(ckpt, grid, image, cfg.sampler(), n, args.seed, wells, x_obs,
                                cfg["sampler.mode"], cfg["sampler.ambient_columns"])
    width = max(3, len(str(n - 1)))
    for k in range(n):
        io.write_field(out / f"sample_{k:0{width}d}.sgfl", grid, samples[k])
    mean, std = posterior_stats(samples, with_std=n >= 2)
    io.write_pgm(out / "mean.pgm", mean.reshape(grid.shape))
    if std is not None:
        io.write_pgm(out / "std.pgm", std.reshape(grid.shape))
    manifest = {
        "checkpoint": str(Path(args.checkpoint).resolve()),
        "data": str(Path(args.data).resolve()) if args.data else None,
        "record": args.record if args.data else None,
        "image": str(Path(args.image).resolve()) if args.image else None,
        "n_samples": n,
        "seed": args.seed,
        "mode": cfg["sampler.mode"],
    }
    io.atomic_write(out / MANIFEST, (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode())
    print(f"wrote {n} samples to {out}")
    return 0


def _load_ensemble(path: Path):
    try:
        manifest = json.loads((path / MANIFEST).read_text())
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read ensemble manifest in {path}: {exc}") from exc
    files = sorted(path.glob("sample_*.sgfl"))
    if len(files) != manifest["n_samples"]:
        raise FormatError(f"{path}: expected {manifest['n_samples']} sample files, found {len(files)}")
    fields = [io.read_field(f) for f in files]
    grid = fields[0][0]
    return manifest, grid, np.stack([v for _, v in fields]).astype(np.float64)


def _ssim_or_nan(a, b, grid, window) -> float:
    if min(grid.shape) < window:
        print(f"note: grid {grid.n_x}x{grid.n_z} is smaller than the SSIM window; ssim reported as nan",
              file=sys.stderr)
        return float("nan")
    return ssim(a.reshape(grid.shape), b.reshape(grid.shape), window)


def cmd_eval(args) -> int:
    if args.sidecar is None and args.oracle_config is None:
        raise ConfigError("eval needs ground truth: pass --sidecar TRUTH_FILE or --oracle-config CONFIG "
                          "(a prior.kind = gaussian config describing the generating problem)")
    cfg = _config(args)
    manifest, grid, samples = _load_ensemble(Path(args.ensemble))
    window, level = cfg["eval.window"], cfg["eval.level"]
    mean, std = posterior_stats(samples, with_std=samples.shape[0] >= 2)
    header, row = ["n_samples"], [samples.shape[0]]
    data = io.read_dataset(manifest["data"]) if manifest.get("data") else None
    if args.sidecar is not None:
        if data is None:
            raise CapabilityError("sidecar evaluation needs an ensemble drawn from a dataset record")
        truth = io.read_sidecar(args.sidecar, data.grid, len(data))[manifest["record"]].astype(np.float64)
        header += ["ssim", "rmse", "mean_std"]
        row += [_ssim_or_nan(mean, truth, grid, window), rmse(mean, truth),
                float(std.mean()) if std is not None else float("nan")]
    if args.oracle_config is not None:
        ocfg = load_config(args.oracle_config)
        if ocfg["prior.kind"] != "gaussian":
            raise ConfigError("oracle evaluation needs prior.kind = gaussian")
        if ocfg.grid().shape != grid.shape:
            raise ConfigError("oracle config grid does not match the ensemble")
        prior = ocfg.prior()
        imaging = ocfg.imaging()
        if data is not None:
            image = data.images[manifest["record"]]
            wells, x_obs = data.wells[manifest["record"]], data.x_obs[manifest["record"]]
        else:
            _, image = io.read_field(manifest["image"])
            wells, x_obs = np.zeros(grid.n_x, np.uint8), None
        post = analytic_posterior(prior, imaging_matrix(imaging, grid), imaging.noise_std, image)
        if wells.any() and manifest["mode"] != "zero":
            post = condition_on_support(post, np.repeat(wells, grid.n_z).astype(bool), x_obs)
        rep = compare_to_analytic(samples, post, level)
        free = post.std > 0
        z = np.abs(rep["standardized_mean_error"][free])
        header += ["mean_abs_standardized_error", "max_abs_standardized_error", "covariance_rel_frobenius",
                   "mean_coverage", "oracle_ssim", "oracle_rmse"]
        row += [float(z.mean()) if z.size else 0.0, float(z.max()) if z.size else 0.0,
                rep["covariance_rel_frobenius"], float(rep["coverage"][free].mean()) if free.any() else 1.0,
                _ssim_or_nan(mean, post.mean, grid, window), rmse(mean, post.mean)]
    io.write_csv(args.out, header, [[repr(float(v)) if isinstance(v, float) else v for v in row]])
    for name, value in zip(header, row):
        print(f"{name}: {value}")
    return 0


def cmd_gradcheck(args) -> int:
    from .denoisers.gradcheck import gradcheck

    if args.family not in GRADCHECK_THRESHOLDS:
        raise CapabilityError(f"family {args.family!r} has no trainable parameters to check")
    grid = GridSpec(args.n_x, args.n_z)
    rep = gradcheck(args.family, grid, seed=args.seed, n_coords=args.n_coords, h=args.h)
    limit = args.threshold if args.threshold is not None else GRADCHECK_THRESHOLDS[args.family]
    print(f"family: {args.family}  grid: {grid.n_x}x{grid.n_z}  seed: {args.seed}  coordinates: {args.n_coords}")
    print(f"max relative error: {rep['max_rel_error']:.3e} (threshold {limit:.1e})")
    print(f"median relative error: {rep['median_rel_error']:.3e}")
    print(f"worst coordinate: {rep['worst_coordinate']} analytic {rep['worst_analytic']:.12e} "
          f"numeric {rep['worst_numeric']:.12e}")
    if not rep["max_rel_error"] < limit:
        print("FAIL", file=sys.stderr)
        return 3
    print("OK")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sagevm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config file of 'namespace.key = value' lines")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("simulate", help="simulate a training dataset and its ground-truth sidecar")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--sidecar", help="ground-truth file (default: OUT.truth)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a denoiser")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--sidecar", help="ground truth, read only for objective=supervised (default: DATA.truth)")
    p.add_argument("--out", required=True)
    p.add_argument("--loss-csv", help="loss history (default: OUT.loss.csv)")
    p.add_argument("--no-timing", action="store_true", help="write 0 in the seconds column")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw a posterior ensemble")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--record", type=int, default=0)
    p.add_argument("--image", help="condition image as a field file (no wells)")
    p.add_argument("--n-samples", type=int)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score an ensemble against ground truth or the analytic posterior")
    common(p)
    p.add_argument("--ensemble", required=True)
    p.add_argument("--sidecar")
    p.add_argument("--oracle-config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of a denoiser family's gradient")
    p.add_argument("--family", required=True, choices=("affine", "conv", "oracle"))
    p.add_argument("--n-x", type=int, default=4)
    p.add_argument("--n-z", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-coords", type=int, default=200)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
