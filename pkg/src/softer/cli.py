"""Command-line interface.

Exit codes:

    0  success
    1  unexpected failure
    2  usage error or invalid option value
    3  unreadable or non-finite data, too few draws
    4  numerical failure in the sampler
    5  checksum, manifest or version mismatch
    6  dimension mismatch
    7  asymmetric predictor in a symmetric mode
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BenchSpec, Scenario, gen_dataset, make_truth, run_benchmark, write_results
from .calibration import CalibrationTarget, Hyperparameters, calibrate, solve_calibration
from .diagnostics import DiagnosticError, monitored_traces, predict, psrf_table, summarize
from .fileio import (
    ChecksumError,
    DataError,
    VersionError,
    apply_transform,
    file_checksum,
    load_chain,
    load_dataset,
    read_manifest,
    save_chain,
    write_manifest,
    write_tensor_csv,
    write_tensor_file,
)
from .gig import GigError
from .model import Dataset, NumericError, SamplerSettings, SofterConfig, default_config
from .symmetric import SymmetryError
from .tensor import ShapeError

log = logging.getLogger("softer")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_CHECKSUM, EXIT_SHAPE, EXIT_SYMMETRY = range(8)


def _dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"dims must look like 16x16, got {text!r}")
    if not dims or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"invalid dims {text!r}")
    return dims


def _write_coef(path: Path, B: np.ndarray) -> None:
    """Matrices as plain CSV grids (heat-map ready); higher orders as one tensor record."""
    if B.ndim == 2:
        np.savetxt(path, B, delimiter=",", fmt="%.17g")
    else:
        write_tensor_csv(path, B[None])


def _dump(doc: dict, path: Path | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path is None:
        print(text)
    else:
        path.write_text(text + "\n")


# --- subcommands ----------------------------------------------------------

def cmd_calibrate(args) -> int:
    target = CalibrationTarget(args.v_star, args.av_star)
    if args.k == 2:
        h = calibrate(target, a_taugamma=args.a_taugamma, a_sigma=args.a_sigma, a_lambda=args.a_lambda,
                      alpha=args.alpha, D=args.d, K=2)
    else:
        base = Hyperparameters(D=args.d, alpha=args.alpha, a_lambda=args.a_lambda,
                               b_lambda=args.a_lambda ** (1 / (2 * args.k)), a_taugamma=args.a_taugamma,
                               a_sigma=args.a_sigma)
        h = solve_calibration(target, base, args.k)
    _dump(h.to_dict(), None)
    return EXIT_OK


def cmd_simulate(args) -> int:
    seq = np.random.SeedSequence(args.seed)
    truth_rng, data_rng = (np.random.Generator(np.random.PCG64(s)) for s in seq.spawn(2))
    params = {"rank": args.rank} if args.rank else {}
    if args.truth_file:
        params["path"] = args.truth_file
    truth = make_truth(args.truth, args.dims, params, truth_rng)
    scen = Scenario("sim", truth, args.n, args.tau2, args.holdout, symmetric=args.symmetric_x)
    train, hold = gen_dataset(scen, data_rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for tag, ds in (("train", train), ("holdout", hold)):
        np.savetxt(out / f"{tag}_y.csv", ds.y, fmt="%.17g", header="y", comments="")
        if args.format == "binary":
            write_tensor_file(out / f"{tag}_X.soft", ds.predictors)
        else:
            write_tensor_csv(out / f"{tag}_X.csv", ds.predictors)
    _write_coef(out / "truth.csv", truth)
    print(f"wrote {train.n} training and {hold.n} holdout units to {out}")
    return EXIT_OK


def _build_config(args, dims: tuple[int, ...]) -> SofterConfig:
    if args.config:
        config = SofterConfig.from_dict(json.loads(Path(args.config).read_text()))
        if config.dims != dims:
            raise ShapeError(f"config dims {config.dims} differ from data dims {dims}")
    else:
        config = default_config(dims, D=args.d if args.d else 3)
    s = config.sampler
    overrides = {k: getattr(args, k) for k in ("iterations", "burn_in", "thin", "chains", "seed",
                                               "checkpoint_every", "zeta_move")
                 if getattr(args, k) is not None}
    sampler = SamplerSettings(**{**s.__dict__, **overrides})
    changes = {"sampler": sampler}
    if args.d and args.config:
        changes["hyper"] = replace(config.hyper, D=args.d)
    if args.hard:
        changes["hard_mode"] = True
    if args.symmetry:
        changes["symmetry"] = args.symmetry
    if args.sym_tol is not None:
        changes["sym_tol"] = args.sym_tol
    return replace(config, **changes)


def _input_checksums(args) -> dict:
    out = {"outcomes": file_checksum(args.y), "tensors": file_checksum(args.x)}
    if args.covariates:
        out["covariates"] = file_checksum(args.covariates)
    return out


def cmd_fit(args) -> int:
    from .sampler import fit, run_chain

    ds, transform = load_dataset(args.y, args.x, args.covariates, standardize=args.standardize,
                                 symmetry=args.symmetry or "none",
                                 sym_tol=args.sym_tol if args.sym_tol is not None else 0.0)
    config = _build_config(args, ds.dims)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    checkpointing = config.sampler.checkpoint_every > 0 or args.resume
    if checkpointing:
        chains = []
        for c in range(config.sampler.chains):
            ck = out / f"chain{c}.ckpt"
            chains.append(run_chain(config, ds, c, checkpoint_path=ck, resume=args.resume and ck.exists()))
    else:
        chains = fit(config, ds, workers=args.workers)
    paths = []
    for c, samples in enumerate(chains):
        p = out / f"chain{c}.chn"
        save_chain(samples, p)
        paths.append(p)
    summary = summarize(chains, level=args.level)
    _write_summary(summary, out)
    write_manifest(out / "manifest.json", config, _input_checksums(args), [p.name for p in paths],
                   transform, extra={"chain_checksums": {p.name: file_checksum(p) for p in paths},
                                     "level": args.level})
    print(f"fit {len(chains)} chains x {chains[0].n_draws} draws; "
          f"{int(summary.selected.sum())} entries selected; results in {out}")
    return EXIT_OK


def _write_summary(summary, out: Path) -> None:
    _dump(summary.to_dict(), out / "summary.json")
    _write_coef(out / "posterior_mean.csv", summary.posterior_mean_B)
    _write_coef(out / "ci_lower.csv", summary.ci_lower)
    _write_coef(out / "ci_upper.csv", summary.ci_upper)
    _write_coef(out / "selected.csv", summary.selected.astype(float))


def _load_run_chains(run: Path) -> tuple[dict, list]:
    manifest = read_manifest(run / "manifest.json")
    chains = []
    for name in manifest["chains"]:
        p = run / name
        if file_checksum(p) != manifest["chain_checksums"][name]:
            raise ChecksumError(f"{p} does not match the manifest checksum")
        chains.append(load_chain(p))
    if any(c.config_hash != manifest["config_hash"] for c in chains):
        raise ChecksumError("chain configuration hash differs from the manifest")
    return manifest, chains


def _chains_from_args(args) -> list:
    if args.run:
        return _load_run_chains(Path(args.run))[1]
    if not args.chains:
        raise argparse.ArgumentError(None, "give --run or --chains")
    return [load_chain(p) for p in args.chains]


def cmd_summarize(args) -> int:
    chains = _chains_from_args(args)
    summary = summarize(chains, level=args.level)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_summary(summary, out)
    _dump(summary.to_dict(), None)
    return EXIT_OK


def cmd_predict(args) -> int:
    run = Path(args.run)
    manifest, chains = _load_run_chains(run)
    transform = manifest.get("transform")
    ds, _ = load_dataset(args.y, args.x, args.covariates, symmetry=manifest["config"]["symmetry"],
                         sym_tol=manifest["config"].get("sym_tol", 0.0))
    model_ds = apply_transform(ds, transform, outcomes=False)
    pred = predict(chains, model_ds)
    if transform:
        pred = pred * transform["y_sd"] + transform["y_mean"]
    if args.out:
        np.savetxt(args.out, pred, fmt="%.17g", header="prediction", comments="")
    doc = {"n": int(ds.n)}
    if args.y is not None:
        doc["mse"] = float(np.mean((ds.y - pred) ** 2))
    _dump(doc, None)
    return EXIT_OK


def cmd_bench(args) -> int:
    spec = BenchSpec.from_dict(json.loads(Path(args.spec).read_text()))
    rows, timings = run_benchmark(spec, workers=args.workers)
    write_results(rows, args.out)
    timing_path = args.timing or str(Path(args.out).with_suffix("")) + "_timing.csv"
    write_results(timings, timing_path, columns=("scenario", "method", "D", "replicate", "seconds"))
    print(f"wrote {len(rows)} result rows to {args.out} and timings to {timing_path}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    chains = _chains_from_args(args)
    table = psrf_table(chains, split=args.split, count=args.monitor)
    width = max(len(k) for k in table)
    print(f"{'parameter':<{width}}  psrf")
    for name, value in table.items():
        print(f"{name:<{width}}  {value:.4f}")
    print(f"max psrf {max(table.values()):.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        traces = monitored_traces(chains, args.monitor)
        names = list(traces)
        with open(out / "traces.csv", "w") as fh:
            fh.write("chain,draw," + ",".join(f'"{n}"' for n in names) + "\n")
            for c in range(len(chains)):
                cols = np.column_stack([traces[n][c] for n in names])
                for i, row in enumerate(cols):
                    fh.write(f"{c},{i}," + ",".join(repr(float(v)) for v in row) + "\n")
        (out / "psrf.json").write_text(json.dumps(table, indent=2) + "\n")
    return EXIT_OK


# --- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="softer", description="Bayesian soft tensor regression")
    p.add_argument("--version", action="version", version=f"softer {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="hyperparameters matching a prior variance target")
    c.add_argument("--v-star", type=float, default=1.0)
    c.add_argument("--av-star", type=float, default=0.1)
    c.add_argument("--d", type=int, default=3)
    c.add_argument("--alpha", type=float, default=1.0)
    c.add_argument("--k", type=int, default=2, help="number of tensor modes")
    c.add_argument("--a-taugamma", type=float, default=3.0)
    c.add_argument("--a-sigma", type=float, default=0.5)
    c.add_argument("--a-lambda", type=float, default=3.0)
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("simulate", help="generate a simulated dataset")
    s.add_argument("--truth", choices=("diagonal", "squares", "lowrank", "symmetric", "file"), default="diagonal")
    s.add_argument("--truth-file")
    s.add_argument("--dims", type=_dims, default=(16, 16))
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--rank", type=int)
    s.add_argument("--tau2", type=float, default=0.5)
    s.add_argument("--holdout", type=int, default=1000)
    s.add_argument("--symmetric-x", action="store_true", help="symmetric predictors with zero diagonals")
    s.add_argument("--format", choices=("binary", "csv"), default="binary")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="run the sampler")
    f.add_argument("--y", required=True, help="outcomes CSV")
    f.add_argument("--x", required=True, help="tensor file (SOFT1 binary or dims-header CSV)")
    f.add_argument("--covariates")
    f.add_argument("--config", help="JSON document mirroring SofterConfig")
    f.add_argument("--d", type=int)
    f.add_argument("--hard", action="store_true", help="hard PARAFAC (no softening)")
    f.add_argument("--symmetry", choices=("none", "symmetric", "semi-symmetric"))
    f.add_argument("--sym-tol", type=float)
    f.add_argument("--iterations", type=int)
    f.add_argument("--burn-in", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--chains", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--zeta-move", choices=("normalize", "slice"))
    f.add_argument("--checkpoint-every", type=int)
    f.add_argument("--resume", action="store_true")
    f.add_argument("--standardize", action="store_true")
    f.add_argument("--level", type=float, default=0.95)
    f.add_argument("--workers", type=int)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    for name, func, helptext in (("summarize", cmd_summarize, "posterior summary of saved chains"),
                                 ("diagnose", cmd_diagnose, "PSRF table and trace CSVs")):
        q = sub.add_parser(name, help=helptext)
        q.add_argument("--run", help="output directory of 'softer fit'")
        q.add_argument("--chains", nargs="+")
        q.add_argument("--out")
        if name == "summarize":
            q.add_argument("--level", type=float, default=0.95)
        else:
            q.add_argument("--split", action="store_true")
            q.add_argument("--monitor", type=int, default=32, help="number of B entries monitored")
        q.set_defaults(func=func)

    r = sub.add_parser("predict", help="posterior predictive means for new data")
    r.add_argument("--run", required=True)
    r.add_argument("--x", required=True)
    r.add_argument("--covariates")
    r.add_argument("--y", help="outcomes; when given the MSE is reported")
    r.add_argument("--out")
    r.set_defaults(func=cmd_predict)

    b = sub.add_parser("bench", help="run a benchmark grid")
    b.add_argument("--spec", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--timing")
    b.add_argument("--workers", type=int)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except argparse.ArgumentError as exc:
        print(f"softer: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (ChecksumError, VersionError) as exc:
        print(f"softer: {exc}", file=sys.stderr)
        return EXIT_CHECKSUM
    except (NumericError, GigError, FloatingPointError) as exc:
        print(f"softer: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ShapeError as exc:
        print(f"softer: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except SymmetryError as exc:
        print(f"softer: {exc}", file=sys.stderr)
        return EXIT_SYMMETRY
    except (DataError, DiagnosticError, FileNotFoundError) as exc:
        print(f"softer: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"softer: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
