"""Command-line interface: ``switchbudget run|sweep|verify|gen-instance``.

Exit codes
----------
0  success
1  unexpected error
2  configuration error (bad config file, unknown key, bad command-line usage)
3  learner spec cannot be resolved from (T, K, budget, M)
4  budget violation during play
5  too few points for a fit (sweep outputs are still written)
6  a verification check failed
7  invalid input data (instance file, out-of-domain parameters)

Outputs go to ``--out-dir``, else ``$SWITCHBUDGET_OUT_DIR``, else the
config's ``[output] out_dir``.  CSV files contain no timestamps, so reruns of
the same config are byte-identical; wall-clock data lives in metadata.json.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import json
import os
import platform
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .adversary import (
    HardInstanceGenerator,
    HardInstanceParams,
    StochasticGapGenerator,
    default_sigma,
    generate_hard_instance,
    load_instance,
    regime_epsilon,
)
from .analysis import (
    SweepAxis,
    SweepResult,
    detect_phase_transition,
    theoretical_bound,
    write_fit_summary,
    write_plot_data,
)
from .config import RunConfig, load_config
from .core import (
    RUN_RECORD_COLUMNS,
    AlgorithmSpec,
    LossMatrix,
    derive_seed,
    run_record_row,
    write_instance,
)
from .engine import (
    AGGREGATE_COLUMNS,
    INSTANCE_STREAM,
    AggregateStats,
    GameConfig,
    Setting,
    aggregate,
    aggregate_row,
    play,
    repetition_seed,
    run_repetitions,
)
from .errors import (
    BudgetViolation,
    ConfigError,
    ConfigurationError,
    DomainError,
    InsufficientDataError,
    ParseError,
    RegimeError,
    SpecResolutionError,
    SwitchBudgetError,
)
from .learner import resolve_spec_bandit, resolve_spec_flex, resolve_spec_full, route_extra_budget

OUT_DIR_ENV = "SWITCHBUDGET_OUT_DIR"

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_SPEC = 3
EXIT_BUDGET = 4
EXIT_INSUFFICIENT = 5
EXIT_VERIFY = 6
EXIT_DATA = 7

SWEEP_STATS_COLUMNS = ("value",) + AGGREGATE_COLUMNS
TRAJECTORY_COLUMNS = ("repetition", "seed", "batch", "start_round", "action", "obs_round", "obs_set")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, SpecResolutionError):
        return EXIT_SPEC
    if isinstance(exc, BudgetViolation):
        return EXIT_BUDGET
    if isinstance(exc, InsufficientDataError):
        return EXIT_INSUFFICIENT
    if isinstance(exc, (ParseError, DomainError, RegimeError)):
        return EXIT_DATA
    return EXIT_OTHER


# ---------------------------------------------------------------------------
# building blocks


def resolve_spec(cfg: RunConfig, T: int, K: int) -> AlgorithmSpec:
    lr = cfg.learner
    if lr.mode == "full":
        spec = resolve_spec_full(T, K, lr.budget)
    elif lr.mode == "flex":
        spec = resolve_spec_flex(T, K, lr.budget, lr.obs_per_batch)
    elif lr.mode == "bandit":
        spec = resolve_spec_bandit(T, K, lr.budget)
    else:
        spec = route_extra_budget(T, K, lr.budget, lr.c_threshold)
    changes: dict[str, Any] = {"switching_costs_enabled": cfg.engine.switching_costs_enabled}
    for name in ("num_batches", "batch_size", "learning_rate", "sd_enabled"):
        value = getattr(lr, name)
        if value is not None:
            changes[name] = value
    try:
        return dataclasses.replace(spec, **changes)
    except DomainError as exc:
        raise ConfigurationError(f"learner overrides are inconsistent: {exc}") from None


def build_source(cfg: RunConfig) -> tuple[Any, int, int]:
    """(loss matrix or generator, T, K) for the configured adversary."""
    a = cfg.adversary
    if a.generator == "file":
        losses = load_instance(a.path)
        return losses, losses.horizon, losses.num_actions
    if a.generator == "stochastic_gap":
        gen: Any = StochasticGapGenerator(a.T, a.K, a.gap, a.base, a.k_star)
    else:
        b_ex = a.b_ex
        if b_ex is None:
            b_ex = cfg.learner.budget if cfg.engine.setting == "EXTRA_BUDGET" else 0
        eps = a.epsilon if a.epsilon is not None else regime_epsilon(a.T, a.K, b_ex, a.c2, a.c3, a.c1)
        sigma = a.sigma if a.sigma is not None else default_sigma(a.T)
        gen = HardInstanceGenerator(a.T, a.K, eps, sigma, a.k_star)
    if a.seed_policy == "fixed":
        return gen.generate(a.seed), a.T, a.K
    return gen, a.T, a.K


def describe_source(source: Any) -> dict[str, Any]:
    if isinstance(source, LossMatrix):
        return {"kind": "matrix", "T": source.horizon, "K": source.num_actions,
                "k_star": source.optimal_action, "provenance": dict(source.provenance)}
    return {"kind": "generator", **source.describe()}


def play_config(cfg: RunConfig, spec: AlgorithmSpec) -> GameConfig:
    # in the extra setting the ledger holds B_ex, which for a routed bandit
    # learner differs from the B it was resolved with
    extra = cfg.engine.setting == "EXTRA_BUDGET"
    return GameConfig(
        spec=spec,
        budget=cfg.learner.budget if extra else spec.budget,
        setting=Setting(cfg.engine.setting),
        repetitions=cfg.engine.repetitions,
        base_seed=cfg.engine.base_seed,
    )


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_trajectories(path: Path, source: Any, spec: AlgorithmSpec, game: GameConfig) -> None:
    rows = []
    for r in range(game.repetitions):
        seed = repetition_seed(game.base_seed, r)
        losses = source if isinstance(source, LossMatrix) else source.generate(derive_seed(seed, INSTANCE_STREAM))
        _, traj = play(losses, spec, game, [seed], trajectories=True)[0]
        for b, (u, obs) in enumerate(zip(traj.batch_obs_rounds, traj.batch_obs_sets)):
            start = b * spec.batch_size
            rows.append([str(r), str(seed), str(b), str(start), str(int(traj.actions[start])),
                         str(int(u)), ";".join(str(k) for k in obs)])
    _write_csv(path, TRAJECTORY_COLUMNS, rows)


def resolve_out_dir(args: argparse.Namespace, cfg: RunConfig | None) -> Path:
    if getattr(args, "out_dir", None):
        out = Path(args.out_dir)
    elif os.environ.get(OUT_DIR_ENV):
        out = Path(os.environ[OUT_DIR_ENV])
    elif cfg is not None:
        out = Path(cfg.output.out_dir)
    else:
        out = Path("out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _metadata(args: argparse.Namespace, cfg: RunConfig | None, **extra: Any) -> dict[str, Any]:
    meta: dict[str, Any] = {
        "package_version": __version__,
        "command": args.command,
        "argv": list(getattr(args, "argv", [])),
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if cfg is not None:
        meta["config_file"] = {s: dict(v) for s, v in cfg.source.items()}
        meta["config_resolved"] = cfg.to_dict()
        meta["constants"] = {
            "c1": cfg.adversary.c1, "c2": cfg.adversary.c2, "c3": cfg.adversary.c3,
            "c_threshold": cfg.learner.c_threshold, "note": "implementer-chosen constants",
        }
    meta.update(extra)
    return meta


def _write_metadata(out: Path, meta: dict[str, Any]) -> None:
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n",
                                       encoding="utf-8")


def _apply_flags(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    engine: dict[str, Any] = {}
    if args.seed is not None:
        engine["base_seed"] = args.seed
    if args.reps is not None:
        engine["repetitions"] = args.reps
    if args.threads is not None:
        engine["workers"] = args.threads
    output: dict[str, Any] = {}
    if args.export_trajectories:
        output["export_trajectories"] = True
    return cfg.with_overrides(engine=engine, output=output)


# ---------------------------------------------------------------------------
# commands


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _apply_flags(load_config(args.config), args)
    out = resolve_out_dir(args, cfg)
    source, T, K = build_source(cfg)
    spec = resolve_spec(cfg, T, K)
    game = play_config(cfg, spec)
    records = run_repetitions(source, spec, game, workers=cfg.engine.workers)
    stats = aggregate(records)
    _write_csv(out / "stats.csv", AGGREGATE_COLUMNS, [aggregate_row(stats)])
    _write_csv(out / "runs.csv", RUN_RECORD_COLUMNS, [run_record_row(r) for r in records])
    if cfg.output.export_trajectories:
        write_trajectories(out / "trajectories.csv", source, spec, game)
    _write_metadata(out, _metadata(args, cfg, spec=spec.to_dict(), source=describe_source(source)))
    print(f"mean regret {stats.mean_regret:.4f} +/- {stats.stderr_regret:.4f} "
          f"over {stats.repetitions} runs -> {out}")
    return EXIT_OK


def _sweep_config(cfg: RunConfig, axis: SweepAxis, value: int) -> RunConfig:
    if axis is SweepAxis.HORIZON_T:
        return cfg.with_overrides(adversary={"T": value})
    if axis is SweepAxis.EXTRA_BUDGET_B_EX and cfg.engine.setting != "EXTRA_BUDGET":
        raise ConfigError("axis EXTRA_BUDGET_B_EX needs [engine] setting = EXTRA_BUDGET")
    if axis is SweepAxis.BUDGET_B and cfg.engine.setting != "TOTAL_BUDGET":
        raise ConfigError("axis BUDGET_B needs [engine] setting = TOTAL_BUDGET")
    return cfg.with_overrides(learner={"budget": value})


def _bound_for(spec: AlgorithmSpec) -> float | None:
    try:
        return theoretical_bound(spec.feedback_mode, spec.horizon, spec.num_actions, spec.budget)
    except SwitchBudgetError:
        return None


def parse_values(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values must be comma-separated integers, got {text!r}") from None
    if not values:
        raise ConfigError("--values is empty")
    if values != sorted(values) or len(set(values)) != len(values):
        raise ConfigError("--values must be strictly ascending")
    return values


def cmd_sweep(args: argparse.Namespace) -> int:
    base = _apply_flags(load_config(args.config), args)
    out = resolve_out_dir(args, base)
    axis = SweepAxis(args.axis)
    values = parse_values(args.values)
    points: list[tuple[float, AggregateStats]] = []
    specs, bounds, rows = [], [], []
    for v in values:
        cfg = _sweep_config(base, axis, v)
        source, T, K = build_source(cfg)
        spec = resolve_spec(cfg, T, K)
        stats = aggregate(run_repetitions(source, spec, play_config(cfg, spec), workers=cfg.engine.workers))
        points.append((float(v), stats))
        specs.append(spec.to_dict())
        bounds.append(_bound_for(spec))
        rows.append([str(v)] + aggregate_row(stats))
    _write_csv(out / "stats.csv", SWEEP_STATS_COLUMNS, rows)
    write_plot_data(out / "plot.csv", points, bounds)
    meta = _metadata(args, base, axis=axis.value, values=values, specs=specs)
    try:
        sweep = SweepResult.from_points(axis, points)
        transition = None
        if len(points) >= 6:
            transition = detect_phase_transition(sweep)
    except InsufficientDataError as exc:
        meta["fit_error"] = str(exc)
        _write_metadata(out, meta)
        raise
    write_fit_summary(out / "fit.csv", sweep, transition)
    _write_metadata(out, meta)
    print(f"slope {sweep.fitted_slope:.4f} +/- {sweep.slope_stderr:.4f} over {len(points)} points -> {out}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    from .lemmas import run_all

    results = run_all(quick=args.quick)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_gen_instance(args: argparse.Namespace) -> int:
    T, K = args.horizon, args.actions
    eps = args.epsilon if args.epsilon is not None else regime_epsilon(T, K, args.b_ex, args.c2, args.c3, args.c1)
    sigma = args.sigma if args.sigma is not None else default_sigma(T)
    params = HardInstanceParams(T=T, K=K, epsilon=eps, sigma=sigma, k_star=args.k_star, seed=args.seed)
    losses = generate_hard_instance(params)
    path = Path(args.output)
    if not path.is_absolute() and (args.out_dir or os.environ.get(OUT_DIR_ENV)):
        path = resolve_out_dir(args, None) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"T": T, "K": K, "b_ex": args.b_ex, "c1": args.c1, "c2": args.c2, "c3": args.c3}
    side = write_instance(losses, path, metadata={"params": meta})
    print(f"wrote {path} and {side} (k*={losses.optimal_action}, epsilon={eps:.6g}, sigma={sigma:.6g})")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="switchbudget",
        description="Online learning with switching costs under observation budgets.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="INI run configuration")
        p.add_argument("--out-dir", help=f"output directory (overrides ${OUT_DIR_ENV} and the config)")
        p.add_argument("--seed", type=int, help="override [engine] base_seed")
        p.add_argument("--reps", type=int, help="override [engine] repetitions")
        p.add_argument("--threads", type=int, help="worker processes for repetitions (advisory)")
        p.add_argument("--export-trajectories", action="store_true", help="also write trajectories.csv")

    p_run = sub.add_parser("run", help="Monte Carlo run of one configuration")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a configuration over a list of axis values and fit")
    common(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=[a.value for a in SweepAxis])
    p_sweep.add_argument("--values", required=True, help="comma-separated ascending integers")
    p_sweep.set_defaults(func=cmd_sweep)

    p_verify = sub.add_parser("verify", help="run the exact and statistical property checks")
    p_verify.add_argument("--quick", action="store_true", help="fewer Monte Carlo runs")
    p_verify.set_defaults(func=cmd_verify)

    p_gen = sub.add_parser("gen-instance", help="write a hard instance to CSV")
    p_gen.add_argument("--horizon", "-T", type=int, required=True)
    p_gen.add_argument("--actions", "-K", type=int, required=True)
    p_gen.add_argument("--epsilon", type=float, help="gap; regime default when omitted")
    p_gen.add_argument("--sigma", type=float, help="noise scale; 1/(9 log2 T) when omitted")
    p_gen.add_argument("--b-ex", type=int, default=0, help="extra budget fed to the regime gap")
    p_gen.add_argument("--c1", type=float, default=0.1)
    p_gen.add_argument("--c2", type=float, default=0.1)
    p_gen.add_argument("--c3", type=float, default=0.1)
    p_gen.add_argument("--k-star", type=int)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--output", "-o", required=True, help="CSV path")
    p_gen.add_argument("--out-dir", help="directory for a relative --output")
    p_gen.set_defaults(func=cmd_gen_instance)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    try:
        return args.func(args)
    except SwitchBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
