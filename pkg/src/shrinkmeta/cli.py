"""Command-line entry point: ``shrinkmeta {train,test,discover,oracle-check,gen}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import checks, driver
from .discovery import eval_masked_adaptation, rank_modules
from .taskgen import generate, save_tasks, spec_from_json


def cmd_train(args) -> int:
    cfg = driver.ExperimentConfig.from_json(args.config)
    out = Path(args.out)
    resume = None
    if args.resume:
        resume = driver.load_checkpoint(out)
        saved = driver.ExperimentConfig.from_json(out / "config.json")
        if saved != cfg:
            print("error: --resume needs the config the run was started with", file=sys.stderr)
            return 2
    try:
        record, ckpt = driver.meta_train(cfg, resume=resume, stop_at=args.stop_at)
    except driver.MetaTrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        last = exc.last_good
        print(f"last finite state at meta step {last.step}", file=sys.stderr)
        return 1
    driver.write_run(out, record, ckpt, append=resume is not None)
    names = record.meta.partition.names
    s2 = ", ".join(f"{n}={v:.4g}" for n, v in zip(names, record.meta.sigma2))
    print(f"{cfg.algorithm}: {ckpt.step} meta steps, sigma2: {s2}")
    return 0


def cmd_test(args) -> int:
    cfg, meta = driver.load_run(args.run)
    count = args.tasks or cfg.test_tasks
    steps = cfg.test_steps if args.steps is None else args.steps
    problem = driver.make_problem(cfg)
    tasks = driver.held_out_tasks(cfg, count, problem)
    curves = driver.meta_test(cfg, meta, tasks, steps, problem)
    mean = curves.mean(axis=0)
    path = Path(args.run) / "test.csv"
    with path.open("w") as fh:
        fh.write("step,mean_val_loss\n")
        for k, v in enumerate(mean):
            fh.write(f"{k},{v!r}\n")
    best = int(np.argmin(mean))
    print(f"{count} held-out tasks, {steps} steps: final {mean[-1]:.6g}, "
          f"min {mean[best]:.6g} at step {best}; wrote {path}")
    return 0


def cmd_discover(args) -> int:
    cfg, meta = driver.load_run(args.run)
    report = rank_modules(meta)
    if args.threshold is not None:
        report.select_threshold(args.threshold)
    else:
        report.select_top_k(args.top_k)
    if args.eval_tasks:
        problem = driver.make_problem(cfg)
        tasks = driver.held_out_tasks(cfg, args.eval_tasks, problem)
        steps = cfg.test_steps
        kw = dict(step_size=cfg.inner_lr, optimizer=cfg.inner_optimizer)
        part = meta.partition
        masked = eval_masked_adaptation(problem.model, tasks, meta, report.selection, steps, **kw)
        full = eval_masked_adaptation(problem.model, tasks, meta, part.names, steps, **kw)
        report.metrics = {"masked_val_loss": float(masked.mean()), "full_val_loss": float(full.mean()),
                          "tasks": args.eval_tasks, "steps": steps}
    run = Path(args.run)
    (run / "discovery.json").write_text(json.dumps(report.to_json(), indent=1))
    (run / "discovery.csv").write_text(report.to_csv())
    for e in sorted(report.entries, key=lambda e: e.rank):
        mark = "*" if e.selected else " "
        print(f"{mark} {e.rank:>3}  {e.name:<16} {e.sigma2:.6g}")
    for k, v in report.metrics.items():
        print(f"{k}: {v}")
    return 0


def cmd_oracle_check(args) -> int:
    results = checks.run_all()
    print(checks.format_table(results))
    return 0 if all(r.passed for r in results) else 1


def cmd_gen(args) -> int:
    obj = json.loads(Path(args.spec).read_text())
    spec = spec_from_json(obj)
    tasks, thetas = generate(spec, args.seed, args.count)
    if args.out:
        save_tasks(args.out, tasks, thetas)
        print(f"wrote {len(tasks)} tasks to {args.out}")
    else:
        json.dump({"tasks": [t.to_json() for t in tasks],
                   **({} if thetas is None else {"theta": np.asarray(thetas).tolist()})}, sys.stdout)
        sys.stdout.write("\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shrinkmeta", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="meta-train from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.json")
    t.add_argument("--stop-at", type=int, default=None, help="stop after this meta step")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("test", help="adapt held-out tasks with learned meta parameters")
    e.add_argument("--run", required=True)
    e.add_argument("--steps", type=int, default=None)
    e.add_argument("--tasks", type=int, default=None)
    e.set_defaults(func=cmd_test)

    d = sub.add_parser("discover", help="rank modules by learned sigma2")
    d.add_argument("--run", required=True)
    d.add_argument("--top-k", type=int, default=2)
    d.add_argument("--threshold", type=float, default=None)
    d.add_argument("--eval-tasks", type=int, default=0,
                   help="compare masked and full adaptation on this many held-out tasks")
    d.set_defaults(func=cmd_discover)

    o = sub.add_parser("oracle-check", help="run the closed-form invariant suite")
    o.set_defaults(func=cmd_oracle_check)

    g = sub.add_parser("gen", help="generate tasks from a JSON task spec")
    g.add_argument("--spec", required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--count", type=int, default=None)
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_gen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
