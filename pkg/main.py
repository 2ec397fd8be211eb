"""
Command-line runner for local-policy search experiments.

    python main.py solve    --config data/configs/grid_row1.yaml --out run.json
    python main.py bench    --config data/configs/patrol_table2.yaml --jobs 4
    python main.py analyze  --config data/configs/random_ti.yaml
    python main.py baseline --config data/configs/grid_row1.yaml
    python main.py oracle   --config data/configs/single_agent.yaml
    python main.py cache list
"""

import argparse
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional

import pandas as pd
from rich.console import Console
from tabulate import tabulate

import settings
from baseline_cache import BaselineCache
from bounds import compute_bound_report, verify_lemma4
from config import BenchRow, ExperimentConfig, apply_overrides, describe, load_experiment
from errors import BudgetExceeded, MMDPError, NotErgodic
from factored_mmdp import build_ti_surrogate, measure_delta
from local_search import evaluate_on_joint, run_algorithm1
from markov_analysis import estimate_lambda_bar
from oracle import brute_force_local, global_baseline
from scenarios import build_scenario, scenario_sizes

logger = logging.getLogger("main")

# status lines go to stderr so stdout stays machine-readable
console = Console(stderr=True)

BENCH_COLUMNS = [
    "name",
    "kind",
    "setting",
    "n_states",
    "n_actions",
    "n_valid_actions",
    "trials",
    "alg_reward",
    "global_reward",
    "reward_ratio",
    "alg_runtime_s",
    "global_runtime_s",
    "runtime_ratio",
    "rounds",
    "reason",
    "error",
]


def _ratio(numerator: Optional[float], denominator: Optional[float]) -> float:
    if numerator is None or denominator is None or denominator == 0:
        return math.nan
    return numerator / denominator


def _format_value(value) -> str:
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        console.print(f"✅ Wrote {out}")
    else:
        sys.stdout.write(text)


def _listing(values: Dict[str, object]) -> str:
    return "".join(f"{key}={_format_value(value)}\n" for key, value in values.items())


def _load(args) -> ExperimentConfig:
    config = load_experiment(args.config)
    return apply_overrides(config, seed=args.seed, trials=args.trials)


def _open_cache(config: ExperimentConfig) -> Optional[BaselineCache]:
    if not config.cache.enabled:
        return None
    return BaselineCache(ttl_seconds=config.cache.ttl_seconds)


def _baseline(config, scenario, mdp, cache, force: bool = False) -> Optional[dict]:
    """
    Global baseline from the cache, or solved now when allowed.
    """
    if cache is not None:
        hit = cache.get(scenario, config.solver)
        if hit:
            console.print("🔍 Using cached global baseline")
            return {**hit, "cached": True}
    if not (config.with_baseline or force):
        return None

    started = time.perf_counter()
    result = global_baseline(
        mdp,
        tol=config.solver.tol,
        max_iter=config.solver.max_iter,
        aperiodicity=config.solver.aperiodicity,
    )
    runtime = time.perf_counter() - started
    if cache is not None:
        cache.put(scenario, config.solver, result.gain, runtime, result.iterations)
    return {"gain": result.gain, "runtime_s": runtime, "iterations": result.iterations, "cached": False}


def _surrogate_reward(mdp, spec, trace) -> Optional[float]:
    try:
        surrogate = build_ti_surrogate(spec, trace.local_kernels, mdp.reward, mdp.initial_state)
        return evaluate_on_joint(surrogate, spec, trace.policy)
    except NotErgodic as e:
        logger.warning("surrogate evaluation skipped: %s", e)
        return None


def cmd_solve(args) -> int:
    config = _load(args)
    scenario = config.require_scenario()
    console.print(f"🔧 Building {describe(scenario)}")
    mdp, spec = build_scenario(scenario)

    started = time.perf_counter()
    trace = run_algorithm1(mdp, spec, config.search)
    runtime = time.perf_counter() - started
    alg_reward = evaluate_on_joint(mdp, spec, trace.policy)
    baseline = _baseline(config, scenario, mdp, _open_cache(config))

    summary = {
        "scenario": describe(scenario),
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "seed": config.search.seed,
        "alg_reward": alg_reward,
        "surrogate_reward": _surrogate_reward(mdp, spec, trace),
        "rounds": trace.rounds,
        "improvements": trace.improvements,
        "reason": trace.reason,
        "alg_runtime_s": runtime,
    }
    if baseline is not None:
        summary.update(
            global_reward=baseline["gain"],
            global_runtime_s=baseline["runtime_s"],
            reward_ratio=_ratio(alg_reward, baseline["gain"]),
            runtime_ratio=_ratio(runtime, baseline["runtime_s"]),
            baseline_cached=baseline["cached"],
        )
    summary["policy"] = [table.tolist() for table in trace.local_tables]

    console.print(f"✅ Local search {trace.reason} after {trace.rounds} rounds")
    sys.stdout.write(_listing({k: v for k, v in summary.items() if k != "policy"}))
    if args.out:
        _emit(json.dumps(summary, indent=2) + "\n", args.out)
    return 0


def _bench_row(config: ExperimentConfig, row: BenchRow, cache) -> dict:
    scenario = row.scenario
    sizes = scenario_sizes(scenario)
    record = {column: None for column in BENCH_COLUMNS}
    record.update(reason="", error="")
    record.update(
        name=row.name,
        kind=scenario.kind,
        setting=describe(scenario),
        n_states=sizes["n_states"],
        n_actions=sizes["n_actions"],
        n_valid_actions=sizes.get("n_valid_actions", sizes["n_actions"]),
        trials=config.trials,
    )
    try:
        mdp, spec = build_scenario(scenario)
        rewards, runtimes = [], []
        for trial in range(config.trials):
            search = config.search.model_copy(update={"seed": config.search.seed + trial})
            started = time.perf_counter()
            trace = run_algorithm1(mdp, spec, search)
            runtimes.append(time.perf_counter() - started)
            rewards.append(evaluate_on_joint(mdp, spec, trace.policy))
        alg_reward = sum(rewards) / len(rewards)
        alg_runtime = sum(runtimes) / len(runtimes)
        record.update(alg_reward=alg_reward, alg_runtime_s=alg_runtime, rounds=trace.rounds, reason=trace.reason)

        baseline = _baseline(config, scenario, mdp, cache)
        if baseline is not None:
            record.update(
                global_reward=baseline["gain"],
                global_runtime_s=baseline["runtime_s"],
                reward_ratio=_ratio(alg_reward, baseline["gain"]),
                runtime_ratio=_ratio(alg_runtime, baseline["runtime_s"]),
            )
    except MMDPError as e:
        logger.error("row %s failed: %s", row.name, e.detail)
        record["error"] = f"{type(e).__name__}: {e.detail}"
    except (MemoryError, ValueError) as e:
        logger.error("row %s failed: %s", row.name, e)
        record["error"] = f"{type(e).__name__}: {e}"
    return record


def _markdown(frame: pd.DataFrame) -> str:
    return tabulate(frame, headers="keys", tablefmt="pipe", showindex=False, floatfmt=".12g", missingval="") + "\n"


def cmd_bench(args) -> int:
    config = _load(args)
    rows: List[BenchRow] = list(config.rows)
    if not rows and config.scenario is not None:
        rows = [BenchRow(name=config.name or config.scenario.kind, scenario=config.scenario)]
    cache = _open_cache(config)

    console.print(f"🔧 Running {len(rows)} rows x {config.trials} trials")
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        records = list(pool.map(lambda row: _bench_row(config, row, cache), rows))

    frame = pd.DataFrame(records, columns=BENCH_COLUMNS)
    if args.format == "md":
        text = _markdown(frame)
    else:
        buffer = io.StringIO()
        frame.to_csv(buffer, index=False, float_format="%.12g", lineterminator="\n")
        text = buffer.getvalue()
    _emit(text, args.out)

    failed = [r["name"] for r in records if r["error"]]
    if failed:
        console.print(f"❌ {len(failed)} rows failed: {', '.join(failed)}")
        return 3
    console.print("✅ Bench complete")
    return 0


def cmd_analyze(args) -> int:
    config = _load(args)
    scenario = config.require_scenario()
    analysis = config.analysis
    mdp, spec = build_scenario(scenario)

    trace = run_algorithm1(mdp, spec, config.search)
    surrogate = build_ti_surrogate(spec, trace.local_kernels, mdp.reward, mdp.initial_state)
    try:
        delta = measure_delta(
            mdp, spec, mode=analysis.delta_mode, budget=analysis.delta_budget, seed=analysis.delta_seed
        )
    except BudgetExceeded:
        console.print("💡 Set analysis.delta_mode to 'auto' or 'sampled', or raise analysis.delta_budget")
        raise
    ergodicity = estimate_lambda_bar(mdp, analysis.lambda_samples, analysis.lambda_seed)

    j_star = None
    if analysis.oracle:
        j_star = brute_force_local(mdp, spec, cap=analysis.oracle_cap, jobs=args.jobs).value
    report = compute_bound_report(trace, mdp, surrogate, spec, delta, ergodicity, config.search, j_star)
    exact = verify_lemma4(mdp, surrogate, spec, trace.policy, delta.value)

    listing = {
        "delta.value": delta.value,
        "delta.mode": delta.mode,
        "delta.exhaustive": delta.exhaustive,
        "delta.n_contexts": delta.n_contexts,
        "delta.n_samples": delta.n_samples,
        "ergodicity.lambda1_of_P": ergodicity.lambda1_of_P,
        "ergodicity.group_inverse_lambda1": ergodicity.group_inverse_lambda1,
        "ergodicity.lambda_bar_estimate": ergodicity.lambda_bar_estimate,
        "ergodicity.n_policies_sampled": ergodicity.n_policies_sampled,
        "ergodicity.n_skipped": ergodicity.n_skipped,
        "ergodicity.kind": ergodicity.kind,
    }
    listing.update({f"bounds.{k}": v for k, v in report.as_dict().items()})
    listing.update(
        {
            "lemma4_exact.gap": exact.gap,
            "lemma4_exact.bound": exact.bound,
            "lemma4_exact.lambda": exact.lambda_used,
            "lemma4_exact.ok": exact.ok,
        }
    )
    sys.stdout.write(_listing(listing))
    if report.theorem2_holds is not None:
        mark = "✅" if report.theorem2_holds else "❌"
        console.print(f"{mark} J* = {report.j_star:.6g}, bound = {report.theorem2_rhs:.6g}")
    if args.out:
        _emit(json.dumps(listing, indent=2) + "\n", args.out)
    return 0


def cmd_baseline(args) -> int:
    config = _load(args)
    targets = list(config.rows)
    if config.scenario is not None:
        targets.insert(0, BenchRow(name=config.name or config.scenario.kind, scenario=config.scenario))
    cache = _open_cache(config)
    results = {}
    for row in targets:
        mdp, _ = build_scenario(row.scenario)
        baseline = _baseline(config, row.scenario, mdp, cache, force=True)
        results[row.name] = baseline
        sys.stdout.write(
            _listing({f"{row.name}.gain": baseline["gain"], f"{row.name}.runtime_s": baseline["runtime_s"]})
        )
    if args.out:
        _emit(json.dumps(results, indent=2) + "\n", args.out)
    return 0


def cmd_oracle(args) -> int:
    config = _load(args)
    scenario = config.require_scenario()
    mdp, spec = build_scenario(scenario)
    best = brute_force_local(mdp, spec, cap=config.analysis.oracle_cap, jobs=args.jobs)
    baseline = _baseline(config, scenario, mdp, _open_cache(config), force=True)
    summary = {
        "local_best": best.value,
        "n_evaluated": best.n_evaluated,
        "n_skipped": best.n_skipped,
        "global_reward": baseline["gain"],
        "local_to_global": _ratio(best.value, baseline["gain"]),
    }
    sys.stdout.write(_listing(summary))
    if args.out:
        summary["policy"] = [table.tolist() for table in best.policy.tables]
        _emit(json.dumps(summary, indent=2) + "\n", args.out)
    return 0


def cmd_cache(args) -> int:
    cache = BaselineCache()
    if not cache.ping():
        console.print("❌ Redis connection failed")
        console.print("💡 Start it with: docker-compose up -d redis")
        return 3
    if args.action == "clear":
        console.print(f"✅ Deleted {cache.clear()} cached baselines")
        return 0
    entries = cache.entries()
    if not entries:
        console.print("No cached baselines found.")
    for entry in entries:
        sys.stdout.write(
            _listing(
                {
                    "fingerprint": entry["fingerprint"],
                    "scenario": entry["scenario"],
                    "gain": entry["gain"],
                    "ttl": entry["ttl"],
                }
            )
        )
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "bench": cmd_bench,
    "analyze": cmd_analyze,
    "baseline": cmd_baseline,
    "oracle": cmd_oracle,
    "cache": cmd_cache,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Local-policy search for multi-agent MDPs")
    parser.add_argument("--log-level", default=None, help="overrides MMDP_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "bench", "analyze", "baseline", "oracle"):
        command = sub.add_parser(name)
        command.add_argument("--config", required=True)
        command.add_argument("--out")
        command.add_argument("--seed", type=int)
        command.add_argument("--trials", type=int)
        command.add_argument("--jobs", type=int, default=1)
        command.add_argument("--format", choices=("csv", "md"), default="csv")
    cache = sub.add_parser("cache")
    cache.add_argument("action", choices=("list", "clear"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    settings.configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except MMDPError as e:
        console.print(f"❌ {type(e).__name__}: {e.detail}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
