"""Command-line entry point: ``ksembed run``, ``ksembed grid`` and ``ksembed verify``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict

from threadpoolctl import threadpool_limits

from ksembed.bench import METHODS, emit_report, parse_kernel, run_benchmark
from ksembed.data import load_dataset, load_wine_quality, preprocess, train_test_split
from ksembed.errors import InvalidArgumentError
from ksembed.sampling import SamplerConfig
from ksembed.taylor import truncation_degree
from ksembed.verify import SUITES, run_suite

log = logging.getLogger("ksembed")


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="training data file")
    p.add_argument("--test-data", help="separate test file (same format)")
    p.add_argument("--test-fraction", type=float, default=0.0, help="hold out this fraction when no test file is given")
    p.add_argument("--format", choices=("csv", "libsvm", "wine"), default="csv",
                   help="wine: the Wine Quality red/white directory or one combined CSV")
    p.add_argument("--target-column", type=int, default=-1)
    p.add_argument("--header", action="store_true", help="skip the first CSV line")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--normalize", action="store_true", help="standardize each feature")
    p.add_argument("--clip", type=float, help="winsorize (standardized) features to [-clip, clip]")


def _add_sampler_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--share-sketches", action="store_true", help="reuse sketches across rounds")
    p.add_argument("--max-jl-dim", type=int, help="cap on the JL width d' of the sampler")
    p.add_argument("--max-sketch-dim", type=int, help="cap on the sketch width m' of the sampler")
    p.add_argument("--max-internal-dim", type=int, help="cap on the internal width of the sketch trees")


def _sampler_config(args) -> SamplerConfig:
    config = SamplerConfig(share_sketches=args.share_sketches)
    changes = {}
    if args.max_jl_dim is not None:
        changes.update(max_jl_dim=args.max_jl_dim, min_jl_dim=min(config.min_jl_dim, args.max_jl_dim))
    if args.max_sketch_dim is not None:
        changes.update(max_sketch_dim=args.max_sketch_dim, min_sketch_dim=min(config.min_sketch_dim, args.max_sketch_dim))
    if args.max_internal_dim is not None:
        changes.update(max_internal_dim=args.max_internal_dim)
    return config.replace(**changes)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ksembed", description="Kernel subspace embeddings and approximate KRR.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one KRR benchmark and write a JSON report")
    _add_data_args(run)
    run.add_argument("--bandwidth", type=float, help="Gaussian bandwidth sigma; features are divided by it")
    run.add_argument("--kernel", required=True, help="poly:q=3 | gaussian:r=1.0 | invpoly:q=20 | taylor:coeffs=1/0.5")
    run.add_argument("--method", choices=METHODS, default="adaptive")
    run.add_argument("--eps", type=float, default=1.0 / 3.0)
    run.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    size = run.add_mutually_exclusive_group()
    size.add_argument("--mu", type=float, help="statistical-dimension estimate; sets s by the sample-size rule")
    size.add_argument("--s", type=int, help="number of sampled rows")
    run.add_argument("--seed", type=int, default=0)
    _add_sampler_args(run)
    run.add_argument("--out", help="report path (JSON array); stdout if omitted")

    grid = sub.add_parser("grid", help="pick lambda and bandwidth on a validation split, then report the best run")
    _add_data_args(grid)
    grid.add_argument("--kernel", default="gaussian", help="kernel family; gaussian gets r and q from the scaled data")
    grid.add_argument("--method", choices=METHODS, default="adaptive")
    grid.add_argument("--eps", type=float, default=1.0 / 3.0)
    grid.add_argument("--lambdas", type=_float_list, default=[1e-3, 1e-2, 1e-1, 1.0])
    grid.add_argument("--bandwidths", type=_float_list, help="Gaussian bandwidths to try (default: no rescaling)")
    size = grid.add_mutually_exclusive_group(required=True)
    size.add_argument("--mu", type=float)
    size.add_argument("--s", type=int)
    grid.add_argument("--val-fraction", type=float, default=0.2)
    grid.add_argument("--seed", type=int, default=0)
    _add_sampler_args(grid)
    grid.add_argument("--out", help="write every validation run plus the final run (JSON array)")

    ver = sub.add_parser("verify", help="run an oracle battery")
    ver.add_argument("--suite", choices=SUITES + ("all",), default="all")
    ver.add_argument("--seed", type=int, default=0)
    return parser


def _read(path, args):
    if args.format == "wine":
        return load_wine_quality(path)
    return load_dataset(path, args.format, args.target_column, header=args.header, delimiter=args.delimiter)


def _load_raw(args):
    train = _read(args.data, args)
    test = None
    if args.test_data:
        test = _read(args.test_data, args)
    elif args.test_fraction > 0:
        train, test = train_test_split(train, args.test_fraction, args.seed)
    return train, test


def _prepare(train, test, normalize: bool, bandwidth, clip=None):
    if normalize or bandwidth or clip:
        scale = None if bandwidth is None else 1.0 / bandwidth
        train = preprocess(train, normalize=normalize, scale=scale, clip=clip)
        if test is not None:
            test = train.like(test)
    return train, test


def _kernel_for(text: str, train, test):
    kernel = parse_kernel(text, train.features)
    if kernel.family == "gaussian" and test is not None and "r=" not in text:
        # radius read off the training data; widen it to cover the test points
        r = max(kernel.radius, test.max_sq_norm)
        q = kernel.q if "q=" in text else truncation_degree(r, train.n)
        kernel = parse_kernel(f"gaussian:r={r!r},q={q}")
    return kernel


def _write(reports, path) -> None:
    if path:
        emit_report(reports, path)
        log.info("wrote %s", path)
    else:
        json.dump([asdict(r) for r in reports], sys.stdout, indent=2)
        sys.stdout.write("\n")


def _cmd_run(args) -> int:
    train, test = _prepare(*_load_raw(args), args.normalize, args.bandwidth, args.clip)
    kernel = _kernel_for(args.kernel, train, test)
    config = _sampler_config(args)
    report = run_benchmark(
        train, args.method, kernel, args.eps, args.lam, mu=args.mu, s=args.s, seed=args.seed, test=test, config=config
    )
    _write([report], args.out)
    return 0


def _cmd_grid(args) -> int:
    raw_train, raw_test = _load_raw(args)
    fit_part, val_part = train_test_split(raw_train, args.val_fraction, args.seed + 1)
    config = _sampler_config(args)
    bandwidths = args.bandwidths or [None]
    reports, best = [], None
    for bw in bandwidths:
        fit_ds, val_ds = _prepare(fit_part, val_part, args.normalize, bw, args.clip)
        kernel = _kernel_for(args.kernel, fit_ds, val_ds)
        for lam in args.lambdas:
            rep = run_benchmark(
                fit_ds, args.method, kernel, args.eps, lam, mu=args.mu, s=args.s, seed=args.seed, test=val_ds,
                config=config,
            )
            rep.extra.update(stage="validation", bandwidth=bw)
            reports.append(rep)
            log.info("bandwidth=%s lambda=%g validation rmse=%.4f", bw, lam, rep.test_rmse)
            if best is None or rep.test_rmse < best[0]:
                best = (rep.test_rmse, bw, lam)
    _, bw, lam = best
    train, test = _prepare(raw_train, raw_test, args.normalize, bw, args.clip)
    kernel = _kernel_for(args.kernel, train, test)
    final = run_benchmark(
        train, args.method, kernel, args.eps, lam, mu=args.mu, s=args.s, seed=args.seed, test=test, config=config
    )
    final.extra.update(stage="final", bandwidth=bw)
    reports.append(final)
    print(f"best bandwidth={bw} lambda={lam:g}", file=sys.stderr)
    _write(reports, args.out)
    return 0


def _cmd_verify(args) -> int:
    suites = SUITES if args.suite == "all" else (args.suite,)
    failures = 0
    for suite in suites:
        for name, ok, detail in run_suite(suite, seed=args.seed):
            failures += not ok
            print(f"[{'PASS' if ok else 'FAIL'}] {suite}: {name} ({detail})")
    print(f"{failures} failure(s)")
    return 1 if failures else 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    threads = os.environ.get("KSEMBED_THREADS")
    limit = None
    if threads:
        try:
            limit = max(1, int(threads))
        except ValueError:
            print(f"ksembed: KSEMBED_THREADS must be an integer, got {threads!r}", file=sys.stderr)
            return 2
    try:
        with threadpool_limits(limits=limit):
            if args.command == "run":
                return _cmd_run(args)
            if args.command == "grid":
                return _cmd_grid(args)
            return _cmd_verify(args)
    except (InvalidArgumentError, OSError) as exc:
        print(f"ksembed: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
