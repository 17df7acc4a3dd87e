"""``ncrecon`` command-line entry point.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def _config(args):
    from .config import TrainConfig, load_config

    cfg = load_config(args.config) if args.config else TrainConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.n_iter is not None:
        changes["n_iter"] = args.n_iter
    return cfg.replace(**changes) if changes else cfg


def cmd_simulate(args) -> int:
    from .ddss import load_cases
    from .simulation import write_case

    cfg = _config(args)
    if args.seed is not None:
        cfg = cfg.replace(data_seed=args.seed)
    out = Path(args.out)
    for split in ("train", "eval"):
        for i, case in enumerate(load_cases(cfg.replace(dataset=""), split)):
            write_case(out / split / f"case_{i:04d}", case)
    print(f"wrote {cfg.n_train} train and {cfg.n_eval} eval cases to {out}")
    return EXIT_OK


def cmd_trajectory(args) -> int:
    from .core import save_array
    from .trajectory import SamplingSpec, generate_vd_trajectory

    spec = SamplingSpec(image_shape=(args.size, args.size), accel=args.accel,
                        seed=0 if args.seed is None else args.seed)
    traj = generate_vd_trajectory(spec)
    save_array(args.out, traj.coords.astype("float32"))
    print(f"wrote {len(traj)} samples to {args.out}")
    return EXIT_OK


def cmd_nufft_selftest(args) -> int:
    import numpy as np

    from .core import adjoint_mismatch
    from .nufft import NufftOperator, ndft_oracle, nufft_adjoint, nufft_forward, plan_nufft

    rng = np.random.default_rng(0 if args.seed is None else args.seed)
    n, m = args.size, args.samples
    coords = rng.uniform(-n / 2, n / 2, size=(m, 2))
    plan = plan_nufft((n, n), coords, args.oversampling, args.width)
    x = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    y = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    ref_f, ref_a = ndft_oracle(coords, x), ndft_oracle(coords, y, (n, n), "adjoint")
    err_f = np.max(np.abs(nufft_forward(plan, x) - ref_f)) / np.max(np.abs(ref_f))
    err_a = np.max(np.abs(nufft_adjoint(plan, y) - ref_a)) / np.max(np.abs(ref_a))
    dot = max(adjoint_mismatch(NufftOperator(plan), np.random.default_rng(s)) for s in range(20))
    ok = err_f <= args.tol and err_a <= args.tol and dot <= 1e-4
    print(json.dumps({"forward_max_rel_err": err_f, "adjoint_max_rel_err": err_a,
                      "adjoint_identity": dot, "pass": bool(ok)}))
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_reconstruct(args) -> int:
    from .core import save_array
    from .experiment import CLASSICAL, reconstruct_classical
    from .metrics import evaluate
    from .problem import prepare_problem
    from .simulation import read_case

    case = read_case(args.case)
    problem = prepare_problem(case)
    if args.method == "varnet":
        from .ddss import load_checkpoint

        if not args.checkpoint:
            raise ValueError("--checkpoint is required for --method varnet")
        net, _ = load_checkpoint(args.checkpoint)
        x = net.reconstruct(problem.op, problem.y)
    elif args.method in CLASSICAL:
        x = reconstruct_classical(args.method, problem, _config(args))
    else:
        raise ValueError(f"unknown method {args.method!r}")
    image = problem.to_physical(x).astype("complex64")
    save_array(args.out, image)
    if case.truth is not None:
        print(json.dumps(evaluate(case.truth, image)))
    return EXIT_OK


def cmd_train(args) -> int:
    from .ddss import train, write_history

    cfg = _config(args)
    if args.mode:
        cfg = cfg.replace(mode=args.mode)
    res = train(cfg, out_dir=args.out)
    write_history(Path(args.out) / "metrics.csv", res.history)
    last = res.history[-1] if res.history else {}
    print(json.dumps({k: v for k, v in last.items() if k != "time_s"}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    import csv

    from .ddss import load_checkpoint
    from .metrics import evaluate
    from .problem import prepare_problem
    from .simulation import read_case

    net, _ = load_checkpoint(args.checkpoint)
    root = Path(args.cases)
    dirs = sorted(p for p in root.iterdir() if (p / "manifest.json").exists()) if root.is_dir() else []
    if not dirs:
        raise FileNotFoundError(f"no cases found under {root}")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "psnr", "ssim", "nmse"])
        for d in dirs:
            case = read_case(d)
            if case.truth is None:
                raise ValueError(f"case {d} has no ground truth to evaluate against")
            p = prepare_problem(case)
            m = evaluate(case.truth, p.to_physical(net.reconstruct(p.op, p.y)))
            w.writerow([d.name, repr(m["psnr"]), repr(m["ssim"]), repr(m["nmse"])])
    print(f"wrote {len(dirs)} rows to {args.out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    from .experiment import METHODS, ExperimentPlan, run_experiment

    cfg = _config(args)
    methods = tuple(args.methods.split(",")) if args.methods else METHODS
    values = tuple(args.values.split(",")) if args.values else ()
    plan = ExperimentPlan(methods, cfg, Path(args.out), args.sweep, values,
                          train_missing=args.train_missing,
                          model_dir=Path(args.model_dir) if args.model_dir else None)
    report, checks = run_experiment(plan)
    print(report.table())
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return EXIT_OK


def _global_flags(p: argparse.ArgumentParser, default) -> None:
    p.add_argument("--seed", type=int, default=default, help="override the run seed")
    p.add_argument("--threads", type=int, default=default, help="BLAS/FFT thread count")
    p.add_argument("--config", default=default, help="key = value configuration file")
    p.add_argument("--n-iter", type=int, dest="n_iter", default=default, help="override the unroll count")
    p.add_argument("-v", "--verbose", action="store_true",
                   default=False if default is None else default)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ncrecon", description="Non-Cartesian MRI reconstruction toolkit")
    _global_flags(p, None)
    # the same flags after the subcommand; SUPPRESS keeps them from clobbering earlier values
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="write a synthetic train/eval dataset")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("trajectory", parents=[common], help="write a variable-density trajectory")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--accel", type=float, default=2.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_trajectory)

    s = sub.add_parser("nufft-selftest", parents=[common], help="compare the NUFFT against the exact NDFT")
    s.add_argument("--size", type=int, default=16)
    s.add_argument("--samples", type=int, default=200)
    s.add_argument("--oversampling", type=float, default=2.0)
    s.add_argument("--width", type=int, default=4)
    s.add_argument("--tol", type=float, default=1e-3)
    s.set_defaults(func=cmd_nufft_selftest)

    s = sub.add_parser("reconstruct", parents=[common], help="reconstruct one case directory")
    s.add_argument("--method", required=True,
                   choices=["adjoint", "gridding", "cgsense", "l1wavelet", "varnet"])
    s.add_argument("--case", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--checkpoint")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("train", parents=[common], help="train a VarNet")
    s.add_argument("--mode", choices=["ddss", "kdss", "ssdu", "supervised"])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on case directories")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--cases", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("experiment", parents=[common], help="method comparison or sweep")
    s.add_argument("--out", required=True)
    s.add_argument("--methods", help="comma-separated subset of methods")
    s.add_argument("--sweep", choices=["n_iter", "lambda_pdc"])
    s.add_argument("--values", help="comma-separated sweep values")
    s.add_argument("--model-dir", dest="model_dir", help="shared directory of trained models")
    s.add_argument("--train-missing", action="store_true", dest="train_missing",
                   help="train models that have no finished checkpoint instead of failing")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_INVALID
        # must happen before numpy/scipy load their thread pools
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .ddss import TrainingAborted

    try:
        return args.func(args)
    except (TrainingAborted, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, FileNotFoundError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
