"""Command-line entry point: ``dips gen-data | train | run``.

Exit codes: 0 success, 2 I/O error, 3 configuration or fingerprint error,
4 internal failure.  ``DIPS_SEED`` supplies the seed when ``--seed`` is absent.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
from pathlib import Path

from . import trajopt
from .core import DipsError, FingerprintError, load_dataset, save_dataset
from .diffusion import TrajectoryDiffusion
from .discriminator import TrajectoryDiscriminator, train_discriminator
from .domain import make_task
from .pipeline import CSV_HEADER, METHODS, MethodConfig, evaluate, generate_dataset
from .search import SearchConfig

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_INTERNAL = 0, 2, 3, 4

log = logging.getLogger("dips")


class ConfigError(DipsError):
    """Bad flags, overrides or incompatible inputs."""


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("DIPS_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"DIPS_SEED must be an integer, got {env!r}") from None


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_overrides(search: SearchConfig, opt: trajopt.OptConfig, pairs):
    """``search.k=4`` / ``opt.tol=1e-4`` style overrides; bare names try search first."""
    s_fields = {f.name for f in dataclasses.fields(SearchConfig)}
    o_fields = {f.name for f in dataclasses.fields(trajopt.OptConfig)}
    s_kw, o_kw = {}, {}
    for pair in pairs or []:
        key, sep, val = pair.partition("=")
        if not sep:
            raise ConfigError(f"override {pair!r} is not key=value")
        scope, _, name = key.rpartition(".")
        value = _parse_value(val)
        if scope in ("", "search") and name in s_fields:
            s_kw[name] = value
        elif scope in ("", "opt") and name in o_fields:
            o_kw[name] = value
        else:
            raise ConfigError(f"unknown override {key!r}")
    try:
        return dataclasses.replace(search, **s_kw), dataclasses.replace(opt, **o_kw)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None


def _task(args):
    return make_task(args.task, delta=args.delta)


# -- subcommands -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    task = _task(args)
    seed = _seed(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ds = generate_dataset(task, args.n, seed=seed)
    save_dataset(ds, out)
    print(f"wrote {len(ds)} entries to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = load_dataset(args.dataset)
    if args.task is not None and make_task(args.task, delta=args.delta).fingerprint() != ds.task.fingerprint():
        raise FingerprintError(f"{args.dataset} was generated for a different task configuration")
    seed = _seed(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "diffusion":
        model = TrajectoryDiffusion(
            task=ds.task,
            steps=args.steps,
            batch_size=args.batch_size,
            learning_rate=args.lr,
            guidance=args.guidance,
            random_state=seed,
        ).fit(ds)
    else:
        if args.diffusion is None:
            raise ConfigError("--kind discriminator needs --diffusion")
        diff = TrajectoryDiffusion.load(args.diffusion, task=ds.task)
        model = train_discriminator(
            ds, diff, seed=seed, steps=args.steps, batch_size=args.batch_size, learning_rate=args.lr
        )
    model.save(out)
    curve = out.with_name(out.name + ".loss.json")
    curve.write_text(json.dumps({"kind": args.kind, "loss": model.loss_curve_}) + "\n")
    print(f"wrote {args.kind} checkpoint to {out} ({len(model.loss_curve_)} steps)")
    return EXIT_OK


def _methods(names):
    out = []
    for name in names:
        if name == "all":
            out.extend(m for m in METHODS if m not in out)
        elif name in METHODS:
            if name not in out:
                out.append(name)
        else:
            raise ConfigError(f"unknown method {name!r}; choose from {METHODS} or 'all'")
    return out


def cmd_run(args) -> int:
    task = _task(args)
    methods = _methods(args.method)
    search = SearchConfig(
        k=args.k,
        gamma=args.gamma,
        alpha=args.alpha,
        beta=args.beta,
        timeout=args.timeout,
        max_depth=task.max_modes,
        max_expansions=args.max_expansions,
    )
    search, opt = _apply_overrides(search, trajopt.OptConfig(), args.set)
    configs = [MethodConfig(m, search=search, opt=opt, n_inits=args.n_inits) for m in methods]
    proposal = scorer = None
    if any(c.diffusion_inits for c in configs):
        if args.diffusion is None or not Path(args.diffusion).is_file():
            raise ConfigError("learned methods need an existing --diffusion checkpoint")
        proposal = TrajectoryDiffusion.load(args.diffusion, task=task)
    if any(c.plans for c in configs):
        if args.discriminator is None or not Path(args.discriminator).is_file():
            raise ConfigError("planning methods need an existing --discriminator checkpoint")
        scorer = TrajectoryDiscriminator.load(args.discriminator, task=task)
    if args.trials < 1:
        raise ConfigError("--trials must be >= 1")
    results, agg = evaluate(task, configs, args.trials, _seed(args), proposal, scorer, jobs=args.jobs)
    out = Path(args.out)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    timing = not args.no_timing
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n")
    writer.writeheader()
    for r in results:
        writer.writerow(r.row(timing))
        rep = {
            "method": r.method,
            "trial": r.trial,
            "seed": r.seed,
            "modes_executed": list(r.modes_executed),
            "failed": r.failed,
            "message": r.message,
            "searches": [s.to_dict(timing) for s in r.reports],
        }
        (out / "reports" / f"{r.method}_{r.trial:03d}.json").write_text(json.dumps(rep, sort_keys=True, indent=1) + "\n")
    (out / "metrics.csv").write_text(buf.getvalue())
    (out / "aggregate.json").write_text(json.dumps({"task": task.name, "methods": agg}, sort_keys=True, indent=1) + "\n")
    print(f"wrote {len(results)} rows to {out / 'metrics.csv'}")
    return EXIT_OK if not any(r.failed for r in results) else EXIT_INTERNAL


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="dips", description="Contact-mode planning with diffusion proposals.", formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, task_required=True):
        sp.add_argument("--task", choices=("card", "rotor"), required=task_required, default=None, help="task id")
        sp.add_argument("--delta", type=float, default=0.015, help="regrasp clearance (m)")
        sp.add_argument("--seed", type=int, default=None, help="random seed (falls back to $DIPS_SEED, then 0)")

    g = sub.add_parser("gen-data", help="generate a demonstration dataset", formatter_class=fmt)
    common(g)
    g.add_argument("--n", type=int, default=480, help="number of demonstrations")
    g.add_argument("--out", required=True, help="output .jsonl path (statistics sidecar written alongside)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the diffusion model or the discriminator", formatter_class=fmt)
    common(t, task_required=False)
    t.add_argument("--kind", choices=("diffusion", "discriminator"), required=True, help="model to train")
    t.add_argument("--dataset", required=True, help="dataset .jsonl path")
    t.add_argument("--diffusion", default=None, help="diffusion checkpoint (discriminator training)")
    t.add_argument("--steps", type=int, default=4000, help="optimizer steps")
    t.add_argument("--batch-size", type=int, default=64, help="minibatch size")
    t.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    t.add_argument("--guidance", type=float, default=1.5, help="classifier-free guidance weight stored with a diffusion model")
    t.add_argument("--out", required=True, help="checkpoint path (loss curve written to <out>.loss.json)")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("run", help="execute trials and write metrics", formatter_class=fmt)
    common(r)
    r.add_argument("--method", nargs="+", default=["dips"], help=f"method ids or 'all' ({', '.join(METHODS)})")
    r.add_argument("--trials", type=int, default=10, help="trials per method")
    r.add_argument("--diffusion", default=None, help="diffusion checkpoint")
    r.add_argument("--discriminator", default=None, help="discriminator checkpoint")
    r.add_argument("--k", type=int, default=16, help="particles per search node")
    r.add_argument("--gamma", type=float, default=0.9, help="score discount per depth")
    r.add_argument("--alpha", type=float, default=1e4, help="weight of the expected goal distance")
    r.add_argument("--beta", type=float, default=1e3, help="weight of the prior log-likelihood")
    r.add_argument("--timeout", type=float, default=300.0, help="search timeout (s)")
    r.add_argument("--max-expansions", type=int, default=None, help="deterministic cap on expanded nodes")
    r.add_argument("--n-inits", type=int, default=8, help="optimizer initializations per mode")
    r.add_argument("--jobs", type=int, default=1, help="trials run in parallel")
    r.add_argument("--no-timing", action="store_true", help="leave wall-time fields empty so outputs are byte-reproducible")
    r.add_argument("--set", nargs="*", default=[], metavar="KEY=VALUE", help="SearchConfig/OptConfig overrides, e.g. opt.tol=1e-4")
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (FingerprintError, ConfigError, ValueError) as err:
        print(f"dips: configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"dips: I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except Exception as err:  # noqa: BLE001 - top-level guard
        print(f"dips: internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
