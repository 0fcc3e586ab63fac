"""Command-line front end.

Subcommands: train, lshsim, route-bench, theorem2, gradcheck. Every run is
seeded and writes CSV artifacts that are byte-identical across repeats on
the same platform.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import gradcheck as gradcheck_mod
from .config import ExperimentConfig, config_keys, load_config, set_config_value
from .embedding_depth import run_separation_experiment
from .lshsim import FAMILIES, collision_grid
from .reporting import write_csv
from .train import run_lookup_benchmark, train_model

LSHSIM_COLUMNS = ("family", "f", "n", "l", "d", "trials", "p_hat", "stderr", "rho_hat")


def _add_config_overrides(parser: argparse.ArgumentParser) -> None:
    for key, _typ in config_keys():
        parser.add_argument(f"--{key}", dest=f"cfg::{key}", metavar="VALUE")


def _apply_overrides(config: ExperimentConfig, args: argparse.Namespace) -> None:
    for name, value in vars(args).items():
        if name.startswith("cfg::") and value is not None:
            set_config_value(config, name.removeprefix("cfg::"), value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sml", description="sparse external-memory lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one toy LM config")
    p_train.add_argument("--config", type=str, default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out", type=str, default=None)
    _add_config_overrides(p_train)

    p_lsh = sub.add_parser("lshsim", help="collision-rate Monte Carlo grid")
    p_lsh.add_argument("--family", type=str, default="all",
                       help="one family or 'all'")
    p_lsh.add_argument("--f", type=str, default="0.25,0.5,0.75",
                       help="comma-separated overlap fractions")
    p_lsh.add_argument("--n", type=str, default="256",
                       help="comma-separated table sizes")
    p_lsh.add_argument("--l", type=int, default=32)
    p_lsh.add_argument("--d", type=int, default=64)
    p_lsh.add_argument("--trials", type=int, default=10000)
    p_lsh.add_argument("--seed", type=int, default=0)
    p_lsh.add_argument("--out", type=str, default="out")

    p_bench = sub.add_parser("route-bench", help="rank x buckets lookup sweep")
    p_bench.add_argument("--config", type=str, default=None)
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.add_argument("--out", type=str, default=None)
    p_bench.add_argument("--lookup", type=str, default="softmax")
    p_bench.add_argument("--ranks", type=str, default="0,4,16")
    p_bench.add_argument("--buckets", type=str, default="8,32,64")
    _add_config_overrides(p_bench)

    p_sep = sub.add_parser("theorem2",
                           help="input-only vs per-layer embedding separation")
    p_sep.add_argument("--d", type=int, default=16)
    p_sep.add_argument("--u-count", type=int, default=64)
    p_sep.add_argument("--depth", type=int, default=2)
    p_sep.add_argument("--steps", type=int, default=1500)
    p_sep.add_argument("--train-size", type=int, default=4096)
    p_sep.add_argument("--seeds", type=int, default=3)
    p_sep.add_argument("--seed", type=int, default=0)
    p_sep.add_argument("--out", type=str, default="out")

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient battery")
    p_grad.add_argument("--epsilon", type=float, default=1e-5)
    p_grad.add_argument("--tolerance", type=float, default=1e-4)
    p_grad.add_argument("--out", type=str, default="out")

    return parser


def _parse_list(raw: str, typ):
    return [typ(tok) for tok in raw.split(",") if tok.strip()]


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        if args.command == "train":
            config = load_config(args.config) if args.config else ExperimentConfig()
            _apply_overrides(config, args)
            if args.seed is not None:
                config.training.seed = args.seed
            if args.out is not None:
                config.io.out_dir = args.out
            config.validate()
            rows, trainer = train_model(config)
            last = rows[-1]
            print(f"trained {config.training.steps} steps: "
                  f"eval loss {last.eval_loss:.4f} nats/token "
                  f"(corpus entropy {trainer.entropy_rate:.4f}), "
                  f"accuracy {last.eval_accuracy:.4f}")
            return 0

        if args.command == "lshsim":
            families = list(FAMILIES) if args.family == "all" else [args.family]
            f_grid = _parse_list(args.f, float)
            n_grid = _parse_list(args.n, int)
            rows = collision_grid(families, f_grid, n_grid, args.l, args.d,
                                  args.trials, args.seed)
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            write_csv(out / "lshsim.csv", LSHSIM_COLUMNS, rows)
            for r in rows:
                print(f"{r['family']:>10} f={r['f']:<5} n={r['n']:<6} "
                      f"p_hat={r['p_hat']:.5f} stderr={r['stderr']:.5f}")
            return 0

        if args.command == "route-bench":
            config = load_config(args.config) if args.config else ExperimentConfig()
            _apply_overrides(config, args)
            if args.seed is not None:
                config.training.seed = args.seed
            out = args.out if args.out is not None else config.io.out_dir
            grid = [(args.lookup, r, b)
                    for r in _parse_list(args.ranks, int)
                    for b in _parse_list(args.buckets, int)]
            rows = run_lookup_benchmark(grid, config, out)
            for r in rows:
                print(f"{r['lookup']} rank={r['rank']} buckets={r['buckets']} "
                      f"eval_loss={r['final_eval_loss']:.4f}")
            return 0

        if args.command == "theorem2":
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            seeds = tuple(args.seed + i for i in range(args.seeds))
            rows = run_separation_experiment(
                d=args.d, u_count=args.u_count, depth=args.depth, seeds=seeds,
                steps=args.steps, train_size=args.train_size,
                out_path=out / "separation.csv")
            for r in rows:
                print(f"{r['architecture']:>10} width={r['width']:<4} seed={r['seed']} "
                      f"test_mse={r['test_mse']:.5f}")
            return 0

        if args.command == "gradcheck":
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            rows = gradcheck_mod.run_gradcheck_battery(args.epsilon, args.tolerance)
            write_csv(out / "gradcheck.csv", gradcheck_mod.GRADCHECK_COLUMNS, rows)
            ok = True
            for r in rows:
                status = "pass" if r["passed"] else "FAIL"
                ok = ok and bool(r["passed"])
                print(f"{r['check']:>40}: max rel err {r['max_rel_error']:.3e} [{status}]")
            return 0 if ok else 1

    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    parser.error(f"unknown command {args.command!r}")
    return 2


def main() -> None:
    sys.exit(cli_main())
