"""Command-line front-end: data generation, training, planning, tracking,
benchmarking and plotting.

Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 fall while tracking.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields

import numpy as np

from quadplan import centopt, gait, ik
from quadplan import io as qio
from quadplan.centopt import CentroidalInfeasible, OptSettings, QPError
from quadplan.ik import IkWeights
from quadplan.model import model_from_config
from quadplan.sim import run_tracking, tracking_metrics
from quadplan.surrogate import Dataset, NetworkSource, TrainHyper, TrainingDiverged, compute_stats, train
from quadplan.surrogate.features import N_FEATURES, N_TARGETS
from quadplan.wbc import AllocationError, gains_from_config

log = logging.getLogger("quadplan")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_FALL = 0, 2, 3, 4
THREADS_ENV = "QUADPLAN_THREADS"

# durations of the benchmark motions: 10 walk cycles, 50 marathon cycles, 10 jumps
BENCH_TASKS = {"walk": 10, "marathon": 50, "jump": 10}


class Fell(RuntimeError):
    pass


# ---------------------------------------------------------------- configuration

def section_dataclass(cp: configparser.ConfigParser, section: str, cls, **override):
    """Instantiate ``cls`` from ``[section]``, typed by the field defaults."""
    base = cls()
    kwargs = {}
    if cp.has_section(section):
        names = {f.name.lower(): f.name for f in fields(cls)}
        for key in cp[section]:
            if key not in names:
                raise ValueError(f"unknown key '{key}' in [{section}]")
            name = names[key]
            default = getattr(base, name)
            if isinstance(default, bool):
                kwargs[name] = cp[section].getboolean(key)
            elif isinstance(default, int):
                kwargs[name] = cp[section].getint(key)
            else:
                kwargs[name] = cp[section].getfloat(key)
    kwargs.update({k: v for k, v in override.items() if v is not None})
    return cls(**kwargs)


def _data_settings(cp):
    sec = cp["data"] if cp.has_section("data") else {}
    unknown = set(sec) - {"task", "n", "cycles"}
    if unknown:
        raise ValueError(f"unknown key(s) {sorted(unknown)} in [data]")
    return {"task": sec.get("task", "walk"), "n": int(sec.get("n", 60)), "cycles": int(sec.get("cycles", 3))}


def _sim_settings(cp):
    sec = cp["sim"] if cp.has_section("sim") else {}
    unknown = set(sec) - {"disturbance_std", "disturbance_tau", "feedforward", "com_reference"}
    if unknown:
        raise ValueError(f"unknown key(s) {sorted(unknown)} in [sim]")
    return {"disturbance_std": float(sec.get("disturbance_std", 0.1)),
            "disturbance_tau": float(sec.get("disturbance_tau", 0.2)),
            "feedforward": sec.get("feedforward", "momentum"),
            "com_reference": sec.get("com_reference", "kinematic")}


class Context:
    """Parsed configuration shared by every command."""

    def __init__(self, config_path, seed: int):
        self.cp = qio.load_config(config_path)
        self.hash = qio.config_hash(self.cp)
        self.seed = seed
        self.model = model_from_config(self.cp)
        self.opt = section_dataclass(self.cp, "opt", OptSettings)
        self.ik = section_dataclass(self.cp, "ik", IkWeights)
        self.gains = gains_from_config(self.cp)
        self.data = _data_settings(self.cp)
        self.sim = _sim_settings(self.cp)

    def stamp(self, **extra) -> dict:
        return {"config_hash": self.hash, "seed": self.seed, "format_version": qio.FORMAT_VERSION, **extra}


def make_description(task: str, model, rng: np.random.Generator, count: int):
    if task == "walk":
        return gait.random_walk(model, rng, n_cycles=count)
    if task == "jump":
        return gait.random_jumps(model, rng, n_jumps=count)
    if task == "marathon":
        return gait.gen_marathon(model, n_steps=count, rng=rng)
    if task == "standing":
        return gait.gen_standing(model, duration=float(count))
    raise ValueError(f"unknown task '{task}'")


def description_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


# ---------------------------------------------------------------- pipelines

def optimizer_plan(desc, model, opt: OptSettings, weights: IkWeights):
    traj = centopt.solve(desc, model, opt)
    t0 = time.perf_counter()
    plan = ik.rollout(desc, ik.TrajectorySource(traj), model, weights)
    return traj, plan, time.perf_counter() - t0


def network_plan(desc, net, model, weights: IkWeights):
    t0 = time.perf_counter()
    src = NetworkSource(net, desc, centopt.initial_state(desc, model).com)
    plan = ik.rollout(desc, src, model, weights)
    elapsed = time.perf_counter() - t0
    plan.plan_time = elapsed
    return plan, elapsed


def _gen_one(job):
    from quadplan.surrogate import trajectory_rows
    cfg_text, seed, index, task, cycles = job
    cp = configparser.ConfigParser()
    cp.read_string(cfg_text)
    model = model_from_config(cp)
    opt = section_dataclass(cp, "opt", OptSettings)
    weights = section_dataclass(cp, "ik", IkWeights)
    desc = make_description(task, model, description_rng(seed, index), cycles)
    traj, plan, _ = optimizer_plan(desc, model, opt, weights)
    X, Y = trajectory_rows(desc, traj, plan)
    return X, Y, bool(traj.converged)


def _config_text(cp: configparser.ConfigParser) -> str:
    import io as _io
    buf = _io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def generate_dataset(ctx: Context, n: int, task: str, cycles: int, threads: int = 1) -> Dataset:
    """Solve ``n`` seeded descriptions and record one row per time step.

    Descriptions draw from independent generators keyed by (seed, index), so
    the output does not depend on ``threads``.
    """
    if n < 1:
        raise ValueError("--n must be at least 1")
    text = _config_text(ctx.cp)
    jobs = [(text, ctx.seed, i, task, cycles) for i in range(n)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_gen_one, jobs))
    else:
        results = []
        for i, job in enumerate(jobs):
            results.append(_gen_one(job))
            log.info("description %d/%d: %d rows", i + 1, n, results[-1][0].shape[0])
    X = np.vstack([r[0] for r in results])
    Y = np.vstack([r[1] for r in results])
    groups = [r[0].shape[0] for r in results]
    hyper = section_dataclass(ctx.cp, "train", TrainHyper)
    stats = compute_stats(X, Y, hyper.noise_pos, hyper.noise_vel)
    meta = ctx.stamp(task=task, cycles=cycles, descriptions=n, dt=gait.DT, model_hash=ctx.model.digest(),
                     description_seeds=[[ctx.seed, i] for i in range(n)],
                     converged=[r[2] for r in results], stats=stats)
    return Dataset(X, Y, groups, meta)


# ---------------------------------------------------------------- commands

def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got '{raw}'") from None
    if value < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got '{raw}'")
    return value


def cmd_describe(args, ctx: Context) -> int:
    count = args.n if args.n is not None else ctx.data["cycles"]
    desc = make_description(args.task or "walk", ctx.model, description_rng(ctx.seed, 0), count)
    qio.save_description(desc, args.out, extra=ctx.stamp(task=desc.kind, count=count))
    print(f"{desc.kind}: {desc.horizon} steps ({desc.horizon * desc.dt:.2f} s) -> {args.out}")
    return EXIT_OK


def cmd_gen_data(args, ctx: Context) -> int:
    n = args.n if args.n is not None else ctx.data["n"]
    task = args.task or ctx.data["task"]
    t0 = time.perf_counter()
    ds = generate_dataset(ctx, n, task, args.cycles or ctx.data["cycles"], _threads())
    qio.save_dataset(ds, args.out)
    bad = ds.meta["converged"].count(False)
    print(f"{n} descriptions, {ds.rows} rows, {bad} unconverged, {time.perf_counter() - t0:.1f} s -> {args.out}")
    return EXIT_OK


def cmd_train(args, ctx: Context) -> int:
    ds = qio.load_dataset(args.data)
    if ds.X.shape[1] != N_FEATURES or ds.Y.shape[1] != N_TARGETS:
        raise ValueError(f"dataset has {ds.X.shape[1]}/{ds.Y.shape[1]} columns, "
                         f"expected {N_FEATURES}/{N_TARGETS}")
    hyper = section_dataclass(ctx.cp, "train", TrainHyper, seed=ctx.seed, epochs=args.epochs)
    res = train(ds, hyper)
    data_meta = {k: v for k, v in ds.meta.items() if k != "stats"}
    res.best.meta = ctx.stamp(dataset=data_meta, best_epoch=res.best_epoch, initial_val=res.initial_val,
                              best_val=min(c["val"] for c in res.curves), epochs=hyper.epochs)
    qio.save_model(res.best, args.out)
    loss_path = args.loss or os.path.splitext(args.out)[0] + ".loss.csv"
    rows = [[c["epoch"], c["train"], c["val"]] for c in res.curves]
    qio.save_table(loss_path, "quadplan-loss", ["epoch", "train", "val"], rows, ctx.stamp())
    best = min(c["val"] for c in res.curves)
    print(f"validation loss {res.initial_val:.4f} -> {best:.4f} "
          f"({res.initial_val / best:.1f}x, epoch {res.best_epoch}) -> {args.out}, {loss_path}")
    return EXIT_OK


def _print_rows(header, rows):
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) for i, h in enumerate(header)]
    print("  ".join(str(h).ljust(w) for h, w in zip(header, widths)))
    for r in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)))


def cmd_plan(args, ctx: Context) -> int:
    desc = qio.load_description(args.description)
    traj, plan, t_ik = optimizer_plan(desc, ctx.model, ctx.opt, ctx.ik)
    if not traj.converged:
        log.warning("optimizer stopped before convergence")
    qio.save_plan(plan, args.out, ctx.stamp(kind=desc.kind, converged=bool(traj.converged)))
    _print_rows(["duration_s", "optimizer_s", "ik_s"],
                [[f"{desc.horizon * desc.dt:.2f}", f"{traj.solve_time:.3f}", f"{t_ik:.3f}"]])
    return EXIT_OK


def cmd_predict(args, ctx: Context) -> int:
    desc = qio.load_description(args.description)
    net = qio.load_model(args.model)
    plan, elapsed = network_plan(desc, net, ctx.model, ctx.ik)
    qio.save_plan(plan, args.out, ctx.stamp(kind=desc.kind, model_hash=net.meta.get("config_hash")))
    _print_rows(["duration_s", "network_s"], [[f"{desc.horizon * desc.dt:.2f}", f"{elapsed:.3f}"]])
    return EXIT_OK


def cmd_track(args, ctx: Context) -> int:
    plan, _ = qio.load_plan(args.plan)
    sigma = args.disturbance if args.disturbance is not None else ctx.sim["disturbance_std"]
    result = run_tracking(plan, ctx.model, ctx.gains, seed=ctx.seed, disturbance_std=sigma,
                          disturbance_tau=ctx.sim["disturbance_tau"], feedforward=ctx.sim["feedforward"],
                          com_reference=ctx.sim["com_reference"])
    qio.save_log(result, args.out, ctx.stamp())
    m = tracking_metrics(result)
    rows = [[k, f"{v:.6g}"] for k, v in m.items()] + [["fell", str(result.fell)]]
    _print_rows(["metric", "value"], rows)
    metrics_path = os.path.splitext(args.out)[0] + ".metrics.csv"
    qio.save_table(metrics_path, "quadplan-metrics", list(m) + ["fell"],
                   [[*m.values(), float(result.fell)]], ctx.stamp(orientation_metric="geodesic angle"))
    if result.fell:
        raise Fell(f"fall at step {result.fall_step}")
    return EXIT_OK


def time_call(fn, repeats: int = 1) -> float:
    """Best wall-clock time of ``fn()`` over ``repeats`` runs."""
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_pair(reference, candidate, repeats: int = 1) -> dict:
    t_ref = time_call(reference, repeats)
    t_new = time_call(candidate, repeats)
    return {"reference_s": t_ref, "candidate_s": t_new, "speedup": t_ref / t_new}


def run_bench(task: str, net, ctx: Context, count: int | None = None) -> dict:
    """Optimizer solve vs network roll-out (encode, forward, IK per step) on
    the same description."""
    count = count or BENCH_TASKS[task]
    desc = make_description(task, ctx.model, description_rng(ctx.seed, 0), count)
    traj = centopt.solve(desc, ctx.model, ctx.opt)
    _, t_net = network_plan(desc, net, ctx.model, ctx.ik)
    duration = desc.horizon * desc.dt
    return {"task": task, "duration_s": duration, "optimizer_s": traj.solve_time, "network_s": t_net,
            "speedup": traj.solve_time / t_net, "realtime": t_net < duration,
            "converged": bool(traj.converged)}


def cmd_bench(args, ctx: Context) -> int:
    net = qio.load_model(args.model)
    tasks = [args.task] if args.task else list(BENCH_TASKS)
    results = [run_bench(t, net, ctx, args.n) for t in tasks]
    header = ["task", "duration_s", "optimizer_s", "network_s", "speedup", "realtime"]
    _print_rows(header, [[r["task"], f"{r['duration_s']:.1f}", f"{r['optimizer_s']:.2f}",
                          f"{r['network_s']:.2f}", f"{r['speedup']:.1f}x", str(r["realtime"])] for r in results])
    if args.out:
        qio.save_table(args.out, "quadplan-bench", header[1:],
                       [[r[h] if h != "realtime" else float(r[h]) for h in header[1:]] for r in results],
                       ctx.stamp(tasks=tasks))
    slow = [r["task"] for r in results if not r["realtime"]]
    if slow:
        log.error("network planning slower than the motion itself on: %s", ", ".join(slow))
        return EXIT_SOLVER
    return EXIT_OK


def cmd_plot(args, ctx: Context) -> int:
    from quadplan.plotting import render
    written = render(args.inputs, args.out, ctx.stamp())
    print(", ".join([args.out, *written]))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [robot], [opt], [ik], [wbc], [train], [data], [sim]")
    common.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    common.add_argument("--verbose", "-v", action="count", default=0, help="log progress (repeat for debug)")

    p = argparse.ArgumentParser(
        prog="quadplan",
        description="Centroidal motion planning for a quadruped: optimizer, learned surrogate, "
                    "whole-body tracking.",
        epilog=f"Environment: {THREADS_ENV}=N runs gen-data on N worker processes (default 1). "
               "Exit codes: 0 ok, 2 invalid input, 3 solver failure, 4 fall during tracking.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("describe", parents=[common], help="write a random motion description (JSON)")
    s.add_argument("--task", choices=["walk", "jump", "marathon", "standing"], default="walk")
    s.add_argument("--n", type=int, help="cycles, jumps, or seconds for standing ([data] cycles)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_describe)

    s = sub.add_parser("gen-data", parents=[common], help="solve N descriptions and write a dataset")
    s.add_argument("--task", choices=["walk", "jump"], help="motion type ([data] task, default walk)")
    s.add_argument("--n", type=int, help="number of descriptions ([data] n, default 60)")
    s.add_argument("--cycles", type=int, help="cycles or jumps per description ([data] cycles, default 3)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", parents=[common], help="train the centroidal network")
    s.add_argument("--data", required=True, help="dataset from gen-data")
    s.add_argument("--epochs", type=int, help="override [train] epochs")
    s.add_argument("--loss", help="loss-curve CSV (default: <out>.loss.csv)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("plan", parents=[common], help="optimizer plan for a description")
    s.add_argument("--description", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("predict", parents=[common], help="network plan for a description")
    s.add_argument("--description", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("track", parents=[common], help="closed-loop tracking of a plan")
    s.add_argument("--plan", required=True)
    s.add_argument("--disturbance", type=float, help="force disturbance std in N ([sim] disturbance_std)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("bench", parents=[common], help="optimizer vs network timing")
    s.add_argument("--task", choices=sorted(BENCH_TASKS), help="one task (default: all)")
    s.add_argument("--n", type=int, help="override cycles or jumps")
    s.add_argument("--model", required=True)
    s.add_argument("--out", help="timing table CSV")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("plot", parents=[common], help="SVG figure plus CSV from plans or tracking logs")
    s.add_argument("inputs", nargs="+", help="plan CSVs (first drawn dashed) and/or tracking logs")
    s.add_argument("--out", required=True, help="SVG path; the data goes next to it as .csv")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx = Context(args.config, args.seed)
        if args.verbose:
            ctx.opt.verbose = True
        return args.func(args, ctx)
    except Fell as exc:
        print(f"quadplan: {exc}", file=sys.stderr)
        return EXIT_FALL
    except (CentroidalInfeasible, QPError, AllocationError, TrainingDiverged) as exc:
        print(f"quadplan: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, KeyError, OSError, configparser.Error) as exc:
        print(f"quadplan: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
