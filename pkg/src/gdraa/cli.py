"""Command-line entry point: ``gdraa <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import tempfile
from pathlib import Path

import numpy as np

from .buffers import MAX_WORKERS
from .collectives import COLLECTIVES
from .errors import GdraaError
from .harness import metrics
from .harness.checks import seeded_grads, verify_allreduce
from .harness.problems import SyntheticProblem
from .harness.ssgd import SsgdConfig, train_distributed, train_serial
from .jobserver import JobSpec, run_socket_job
from .simulator import (FDR56_BANDWIDTH, FDR56_LATENCY, ClusterSpec, calibrated_compute, closed_form_comm_time,
                        scaling_run, simulate_iteration, write_scaling_csv)

TRAJECTORY_TOL = 1e-5
SIM_COLLECTIVES = {"gdraa": "gdraa", "ring": "ring", "ps": "ps", "param_server": "ps"}


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _collectives(name: str) -> list[str]:
    return list(COLLECTIVES) if name == "all" else [SIM_COLLECTIVES[name]]


def _add_common(p: argparse.ArgumentParser, workers: str, elements: str) -> None:
    p.add_argument("--workers", type=_int_list, default=_int_list(workers),
                   help="worker count, or a comma-separated list")
    p.add_argument("--elements", type=_int_list, default=_int_list(elements),
                   help="gradient length, or a comma-separated list")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", type=Path, help="write results to this CSV file")


def cmd_allreduce_check(args) -> int:
    failures = 0
    rows = []
    for collective in _collectives(args.collective):
        for n in args.workers:
            for length in args.elements:
                grads = seeded_grads(n, length, args.seed, args.width)
                kwargs = {"alpha": args.alpha, "beta": args.beta, "seed": args.seed} if collective == "gdraa" else {}
                res = verify_allreduce(grads, collective, args.width, **kwargs)
                rows.append((collective, n, length, res.rel_error, int(res.ok)))
                status = "ok" if res.ok else "FAIL " + "; ".join(res.violations[:3])
                print(f"{collective:6s} N={n:<3d} L={length:<8d} rel_err={res.rel_error:.2e}  {status}")
                failures += not res.ok
    if args.csv:
        with args.csv.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("collective", "n_workers", "elements", "rel_error", "ok"))
            w.writerows(rows)
    print(f"{len(rows) - failures}/{len(rows)} cases passed")
    return 1 if failures else 0


def cmd_simulate(args) -> int:
    length = args.elements[0]
    base = ClusterSpec(1, length, args.width, args.alpha, args.beta, batch=args.batch)
    if args.target_time:
        base = ClusterSpec(1, length, args.width, args.alpha, args.beta, batch=args.batch,
                           compute_model=calibrated_compute(args.target_time, args.iterations, args.batch))
    print(f"per-iteration communication, L={length}, width={args.width}, alpha={args.alpha:g}, beta={args.beta:g}")
    print(f"{'collective':>10s} {'N':>3s} {'engine_s':>14s} {'closed_form_s':>14s}")
    bad = 0
    for collective in _collectives(args.collective):
        for n in args.workers:
            spec = base.with_workers(n)
            engine = simulate_iteration(spec, collective).comm_time
            closed = closed_form_comm_time(spec, collective)
            print(f"{collective:>10s} {n:3d} {engine:14.9g} {closed:14.9g}")
            if length % n == 0 and abs(engine - closed) > 1e-9:
                bad += 1
    rows = []
    for collective in _collectives(args.collective):
        rows += scaling_run(base, args.workers, args.iterations, collective)
    print(f"\nscaling over {args.iterations} single-worker iterations (weak scaling)")
    print(f"{'collective':>10s} {'N':>3s} {'time_s':>14s} {'speedup':>8s}")
    for r in rows:
        print(f"{r.collective:>10s} {r.n_workers:3d} {r.sim_time_s:14.6g} {r.speedup:8.3f}")
    if args.csv:
        write_scaling_csv(rows, args.csv)
    if bad:
        print(f"{bad} engine/closed-form mismatches", file=sys.stderr)
    return 1 if bad else 0


def cmd_run_local(args) -> int:
    spec = JobSpec.from_file(args.job) if args.job else JobSpec()
    spec = spec.replace(n_workers=args.workers[0], length=args.elements[0], max_iterations=args.iterations,
                        seed=args.seed, task=args.task)
    with tempfile.TemporaryDirectory() as tmp:
        spec = spec.replace(output_dir=str(args.output or tmp))
        run = run_socket_job(spec, heartbeat_period=args.heartbeat)
        report = run.report
        for line in report.log:
            print(line)
        if args.csv:
            report.to_csv(args.csv)
        if report.server_counters.get("data_bytes_received", 0) or report.server_counters.get("data_bytes_sent", 0):
            print("job server handled gradient data", file=sys.stderr)
            return 1
        if not report.completed:
            print(f"run {report.status}; straggler rank {report.straggler}: {report.error}", file=sys.stderr)
            return 1
        digests = {}
        for r in report.records:
            digests.setdefault(r.iteration, set()).add(r.digest)
        split = [i for i, d in digests.items() if len(d) != 1]
        if split:
            print(f"workers disagree on the averaged gradient at iterations {split}", file=sys.stderr)
            return 1
    print(f"{len(report.records)} iteration records, {len(report.checkpoints)} checkpoints, "
          f"control bytes at job server {report.server_counters['control_bytes_received']}")
    return 0


def cmd_train(args) -> int:
    n = args.workers[0]
    problem = SyntheticProblem(args.problem, args.elements[0], args.samples, args.seed, args.noise)
    config = SsgdConfig(args.lr, args.momentum, args.weight_decay, args.policy, args.power, args.iterations,
                        args.batch)
    serial = train_serial(problem, config, n * args.batch, seed=args.seed)
    dist = train_distributed(problem, config, n, SIM_COLLECTIVES[args.collective], seed=args.seed,
                             heartbeat_period=0.25)
    gap = float(np.max(np.abs(serial.trajectory - dist.trajectory)))
    print(f"{args.problem}: N={n} b={args.batch} iterations={args.iterations} collective={args.collective}")
    print(f"final loss {dist.final_loss:.6g}  optimum {dist.optimal_loss:.6g}  gap {dist.loss_gap:.3g}")
    print(f"max trajectory gap vs serial batch-{n * args.batch}: {gap:.3g}")
    if args.csv:
        dist.write_csv(args.csv)
    if gap > TRAJECTORY_TOL:
        print(f"trajectory gap exceeds {TRAJECTORY_TOL:g}", file=sys.stderr)
        return 1
    return 0


def cmd_pcr(args) -> int:
    pcr = metrics.compute_pcr(args.time, args.price)
    print(f"pcr({args.time:g} min, {args.price:g} k$) = {pcr:.4e} (3 s.f. {metrics.significant(pcr):.8f})")
    if args.scaling:
        checks = metrics.check_printed_speedups()
        print(f"{'N':>3s} {'T_min':>6s} {'speedup':>8s} {'printed':>8s}")
        times = dict(metrics.REPORTED_TIMES)
        for c in checks:
            flag = "" if c.consistent else "  inconsistent"
            print(f"{c.n_workers:3d} {times[c.n_workers]:6g} {c.computed:8.2f} {c.printed:8.2f}{flag}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gdraa", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("allreduce-check", help="compare every collective against the mean oracle")
    _add_common(p, "1,2,3,4,8,16,32", "1,7,1000")
    p.add_argument("--collective", choices=["all", *COLLECTIVES], default="all")
    p.add_argument("--alpha", type=float, default=0.0, help="loopback latency, simulated seconds")
    p.add_argument("--beta", type=float, default=math.inf, help="loopback bandwidth, bytes/second")
    p.add_argument("--width", type=int, default=4, choices=[2, 4, 8], help="element width in bytes")
    p.set_defaults(func=cmd_allreduce_check)

    p = sub.add_parser("simulate", help="alpha-beta cost model and scaling table")
    _add_common(p, "1,2,4,8,16,32", "250000000")
    p.add_argument("--collective", choices=["all", *SIM_COLLECTIVES], default="all")
    p.add_argument("--alpha", type=float, default=FDR56_LATENCY)
    p.add_argument("--beta", type=float, default=FDR56_BANDWIDTH)
    p.add_argument("--width", type=int, default=4)
    p.add_argument("--iterations", type=int, default=1000, help="single-worker iterations to cover")
    p.add_argument("--batch", type=float, default=1.0)
    p.add_argument("--target-time", type=float, default=4841 * 60.0,
                   help="calibrate compute so the N=1 run takes this many seconds (0: no compute)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run-local", help="multi-process job over TCP on this host")
    _add_common(p, str(4), str(1000))
    p.add_argument("--collective", choices=["gdraa"], default="gdraa")
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--task", choices=["synthetic", "least-squares", "logistic"], default="synthetic")
    p.add_argument("--job", type=Path, help="key = value job file; flags override it")
    p.add_argument("--output", type=Path, help="directory for per-rank result files")
    p.add_argument("--heartbeat", type=float, default=1.0)
    p.set_defaults(func=cmd_run_local)

    p = sub.add_parser("train", help="distributed SSGD on a synthetic convex problem vs the serial oracle")
    _add_common(p, str(4), str(10))
    p.add_argument("--collective", choices=list(SIM_COLLECTIVES), default="gdraa")
    p.add_argument("--problem", choices=["least-squares", "logistic"], default="least-squares")
    p.add_argument("--samples", type=int, default=512)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--batch", type=int, default=8, help="per-worker batch")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=0.001)
    p.add_argument("--policy", choices=["constant", "poly"], default="poly")
    p.add_argument("--power", type=float, default=1.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pcr", help="price-and-convergence ratio and scaling-table check")
    p.add_argument("--time", type=float, default=metrics.REFERENCE_TIME_MIN, help="minutes")
    p.add_argument("--price", type=float, default=metrics.REFERENCE_PRICE_KUSD, help="thousands of dollars")
    p.add_argument("--scaling", action="store_true", help="also recompute the reported speedups")
    p.set_defaults(func=cmd_pcr)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    for n in getattr(args, "workers", []):
        if not 1 <= n <= MAX_WORKERS:
            print(f"--workers must be in [1, {MAX_WORKERS}]", file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except GdraaError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
