"""Command line entry point: ``tailbon <command> [options]``.

Exit status is 0 on success, 2 when an experiment's acceptance check fails
and 1 on any error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .alloc import AllocationProblem, allocate
from .dists import HierarchicalGaussian, SyntheticSampler, dist_from_config, dist_to_config
from .experiments import EXPERIMENTS, ExperimentSpec, run_experiment
from .gateway import GatewayConfig, GatewaySampler
from .plots import emit_plot_data
from .rng import stream
from .search import SLGConfig, run_bon, run_slg
from .tail_fit import DEFAULT_ALPHA, RewardBatch, TailFit, fit_tail, scaling_curve

log = logging.getLogger("tailbon")

EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError("config must be a JSON object")
    return data


def _emit(obj: dict, out: str | None, name: str) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / f"{name}.json").write_text(text)
    sys.stdout.write(text)


def _sampler(cfg: dict, seed: int, tag: str):
    """Gateway sampler when the config has a ``gateway`` block, synthetic otherwise."""
    if "gateway" in cfg:
        return GatewaySampler(GatewayConfig.from_dict(cfg["gateway"]), prompt=cfg.get("prompt"))
    dist = dist_from_config(cfg.get("dist", dist_to_config(HierarchicalGaussian())))
    return SyntheticSampler(dist, stream(seed, "cli", tag))


def cmd_fit(args, cfg: dict) -> int:
    path = args.rewards or cfg.get("rewards_path")
    if not path:
        raise ValueError("fit needs --rewards or rewards_path in the config")
    batch = RewardBatch.load(path)
    fit = fit_tail(batch, args.alpha or cfg.get("alpha", DEFAULT_ALPHA))
    _emit(fit.to_dict(), args.out, "fit")
    return EXIT_OK


def cmd_predict(args, cfg: dict) -> int:
    fit_path = args.fit or cfg.get("fit_path")
    fit = TailFit.from_dict(json.loads(Path(fit_path).read_text())) if fit_path else TailFit.from_dict(cfg["fit"])
    budgets = args.n or cfg.get("budgets") or [1, 10, 100, 1000]
    curve = scaling_curve(fit, budgets)
    _emit({"fit": fit.to_dict(), "points": [{"N": n, "value": v} for n, v in curve.points]}, args.out, "predict")
    return EXIT_OK


def cmd_bon(args, cfg: dict) -> int:
    N = args.N or cfg.get("N", 256)
    outcome = run_bon(_sampler(cfg, args.seed, "bon"), N, prompt=cfg.get("prompt"), fast="gateway" not in cfg)
    _emit(outcome.to_dict(), args.out, "bon")
    return EXIT_OK


def cmd_slg(args, cfg: dict) -> int:
    N = args.N or cfg.get("N", 256)
    config = SLGConfig(**cfg.get("slg", {}))
    outcome = run_slg(_sampler(cfg, args.seed, "slg"), N, config, prompt=cfg.get("prompt"))
    _emit(outcome.to_dict(), args.out, "slg")
    return EXIT_OK


def cmd_allocate(args, cfg: dict) -> int:
    if not cfg:
        raise ValueError("allocate needs --config with prompts and n_total")
    result = allocate(AllocationProblem.from_dict(cfg))
    _emit(result.to_dict(), args.out, "allocation")
    return EXIT_OK


def cmd_experiment(args, cfg: dict) -> int:
    spec = ExperimentSpec.from_config(args.name, cfg, seed=args.seed, out=args.out, jobs=args.jobs)
    report = run_experiment(spec)
    if args.out:
        emit_plot_data(report, Path(args.out) / "plots", svg=args.svg)
    sys.stdout.write(report.summary_json())
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_diagnose(args, cfg: dict) -> int:
    if args.rewards:
        cfg = {**cfg, "rewards_path": args.rewards}
    args.name = "diagnose"
    return cmd_experiment(args, cfg)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, default=None, help="root seed (default: config or 0)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for trials")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tailbon", description="Reward-tail scaling laws and guided search.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit a truncated-normal tail to rewards")
    p.add_argument("--rewards", help="CSV (header 'reward') or JSON array of rewards")
    p.add_argument("--alpha", type=float)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", parents=[common], help="extrapolate best-of-N values from a fit")
    p.add_argument("--fit", help="fit JSON written by 'tailbon fit'")
    p.add_argument("-n", "--n", type=int, nargs="+", help="budgets to predict")
    p.set_defaults(func=cmd_predict)

    for name, fn in (("bon", cmd_bon), ("slg", cmd_slg)):
        p = sub.add_parser(name, parents=[common], help=f"run {name} search once")
        p.add_argument("-N", type=int, help="sampling budget")
        p.set_defaults(func=fn)

    p = sub.add_parser("allocate", parents=[common], help="split a budget across prompts")
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("experiment", parents=[common], help="run a named experiment")
    p.add_argument("name", choices=sorted(EXPERIMENTS))
    p.add_argument("--svg", action="store_true", help="also render SVG charts")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("diagnose", parents=[common], help="Q-Q goodness of fit for rewards")
    p.add_argument("--rewards", help="rewards file; synthetic mixture draws otherwise")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        if args.seed is None and args.command not in ("experiment", "diagnose"):
            args.seed = int(cfg.pop("seed", 0))
        return args.func(args, cfg)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.debug("command failed", exc_info=True)
        sys.stderr.write(f"tailbon {args.command}: error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
