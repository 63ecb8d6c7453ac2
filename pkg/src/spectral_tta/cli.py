"""Command line entry points.

Subcommands: train, fit-pca, adapt, bench, ablate-rank, ablate-steps,
verify-ridge. All take a single JSON config file (merged over defaults).
Exit codes: 0 success, 2 config error, 3 numerical failure.
"""

import argparse
import json
import sys
from pathlib import Path

from . import bench, ridge
from .adapt import run_adaptation, baseline_bn_stats, baseline_no_adapt, baseline_bn_modulators
from .errors import ConfigError, ContractViolationError, NumericalFailureError
from .network import load_model
from .pca import PcaBasis

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _read_config(path: str | None) -> dict:
    override = {}
    if path:
        try:
            with open(path) as fh:
                override = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}")
    return bench.load_config(override)


def _cmd_train(args) -> int:
    cfg = _read_config(args.config)
    bench.train_checkpoint(cfg, args.model)
    print(f"wrote model checkpoint to {args.model}")
    return EXIT_OK


def _cmd_fit_pca(args) -> int:
    cfg = _read_config(args.config)
    basis = bench.fit_basis_checkpoint(cfg, args.model, args.basis, rank=args.rank)
    print(f"wrote PCA basis (rank {basis.rank}) to {args.basis}")
    return EXIT_OK


def _cmd_adapt(args) -> int:
    cfg = _read_config(args.config)
    model = load_model(args.model)
    method = args.method
    _, (test_x, test_y) = bench.gen_dataset(bench._dataset_spec(cfg))
    if args.corruption:
        cspec = bench.CorruptionSpec(
            kind=args.corruption,
            severity=args.severity,
            seed=bench._cell_seed(cfg["seed"], args.corruption, args.severity),
        )
        test_x = bench.corrupt(test_x, cspec)
    batches = bench.make_batches(test_x, test_y, cfg["adapt"]["batch_size"])
    acfg = bench._adapt_config(cfg)
    if method == "no-adapt":
        rec = baseline_no_adapt(model, batches)
    elif method == "bn-stats":
        rec = baseline_bn_stats(model, batches)
    elif method == "bn-modulators":
        rec = baseline_bn_modulators(model, batches, acfg)
    else:
        basis = PcaBasis.load(args.basis)
        work = bench._spectral_model(model, cfg, basis, method)
        rec = run_adaptation(work, batches, acfg, method=method)
    rec.to_jsonl(args.out)
    print(f"{method}: mean error {rec.mean_error():.4f}; records in {args.out}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    cfg = _read_config(args.config)
    table, _ = bench.run_benchmark_from_files(cfg, args.model, args.basis, args.out)
    print(f"wrote benchmark outputs to {args.out}")
    for method in table.methods:
        means = [table.severity_mean(method, s) for s in table.severities]
        print(f"  {method}: " + " ".join(f"sev{s}={m:.4f}" for s, m in zip(table.severities, means)))
    return EXIT_OK


def _cmd_ablate_rank(args) -> int:
    cfg = _read_config(args.config)
    curve = bench.ablate_rank(cfg, args.ranks)
    bench.curve_to_json(curve, args.out)
    print(f"wrote rank ablation curve to {args.out}")
    return EXIT_OK


def _cmd_ablate_steps(args) -> int:
    cfg = _read_config(args.config)
    curve = bench.ablate_steps(cfg, args.steps)
    bench.curve_to_json(curve, args.out)
    print(f"wrote steps ablation curve to {args.out}")
    return EXIT_OK


def _cmd_verify_ridge(args) -> int:
    report = ridge.verify_equivalence(trials=args.trials, seed=args.seed)
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    status = "passed" if report["passed"] else "FAILED"
    print(
        f"ridge equivalence {status}: max relative deviation "
        f"{report['max_relative_deviation']:.3e} over {report['trials']} trials"
    )
    return EXIT_OK if report["passed"] else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spectral-tta")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the frozen source model")
    p.add_argument("--config", default=None)
    p.add_argument("--model", default="model.npz")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("fit-pca", help="fit the PCA basis at the insertion layer")
    p.add_argument("--config", default=None)
    p.add_argument("--model", default="model.npz")
    p.add_argument("--basis", default="basis.json")
    p.add_argument("--rank", type=int, default=None)
    p.set_defaults(fn=_cmd_fit_pca)

    p = sub.add_parser("adapt", help="run one adaptation session")
    p.add_argument("--config", default=None)
    p.add_argument("--model", default="model.npz")
    p.add_argument("--basis", default="basis.json")
    p.add_argument("--method", default="spectral-relu", choices=bench.METHODS)
    p.add_argument("--corruption", default=None, choices=bench.CORRUPTION_KINDS)
    p.add_argument("--severity", type=int, default=5)
    p.add_argument("--out", default="records.jsonl")
    p.set_defaults(fn=_cmd_adapt)

    p = sub.add_parser("bench", help="full method x corruption x severity grid")
    p.add_argument("--config", default=None)
    p.add_argument("--model", default="model.npz")
    p.add_argument("--basis", default="basis.json")
    p.add_argument("--out", default="bench_out")
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("ablate-rank", help="severity-5 error vs PCA rank")
    p.add_argument("--config", default=None)
    p.add_argument("--ranks", type=int, nargs="+", required=True)
    p.add_argument("--out", default="rank_curve.json")
    p.set_defaults(fn=_cmd_ablate_rank)

    p = sub.add_parser("ablate-steps", help="severity-5 error vs adaptation steps")
    p.add_argument("--config", default=None)
    p.add_argument("--steps", type=int, nargs="+", required=True)
    p.add_argument("--out", default="steps_curve.json")
    p.set_defaults(fn=_cmd_ablate_steps)

    p = sub.add_parser("verify-ridge", help="ridge vs spectral-shrinkage equivalence report")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="ridge_report.json")
    p.set_defaults(fn=_cmd_verify_ridge)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ContractViolationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
