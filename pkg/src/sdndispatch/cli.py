"""Command-line front end: train a policy, evaluate one, or compare several."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import mlp
from .baselines import RandomPolicy, WeightedRoundRobinPolicy
from .dispatch import NeuralDispatchPolicy
from .ppo import TrainingConfig, train, write_training_csv
from .settings import ConfigError, resolve_setting
from .sim import EpisodeLog, fmt_float, run_episode, write_episode_csv

POLICY_CHOICES = ("rand", "wrr", "sf")


def _build_policy(name: str, checkpoint: str | None, support_size: int):
    if name == "rand":
        return RandomPolicy()
    if name == "wrr":
        return WeightedRoundRobinPolicy()
    if name == "sf":
        if not checkpoint:
            raise ConfigError("policy 'sf' needs --checkpoint pointing at trained parameters")
        return NeuralDispatchPolicy(mlp.load_params(checkpoint), support_size)
    raise ConfigError(f"unknown policy '{name}'")


def _load_settings(specs: list[str], time_scale: float):
    return [resolve_setting(s).scaled(time_scale) for s in specs]


def _seeds_for(args_seeds, setting):
    if args_seeds:
        return args_seeds
    return [setting.default_seed if setting.default_seed is not None else 0]


def _metrics_row(policy_name: str, log: EpisodeLog) -> str:
    return (f"{policy_name},{log.setting_name},{log.seed},{fmt_float(log.t_max)},"
            f"{log.generated},{log.responses},{fmt_float(log.cumulative_reward)},"
            f"{fmt_float(log.mean_response_time)},{fmt_float(log.throughput)}")


def _write_metrics(rows: list[str], path: Path) -> None:
    header = ("policy,setting,seed,t_max_s,steps,responses,"
              "cumulative_reward,mean_response_time_s,throughput_rps")
    path.write_text("\n".join([header] + rows) + "\n")


def _distribution_rows(policy_name: str, log: EpisodeLog) -> list[str]:
    rows = []
    counts = log.dispatch_counts
    for s in range(counts.shape[0]):
        total = counts[s].sum()
        for c in range(counts.shape[1]):
            frac = counts[s, c] / total if total else 0.0
            rows.append(f"{policy_name},{log.setting_name},{log.seed},{s},{c},"
                        f"{counts[s, c]},{fmt_float(frac)}")
    return rows


def _write_distribution(rows: list[str], path: Path) -> None:
    header = "policy,setting,seed,switch,controller,requests,fraction"
    path.write_text("\n".join([header] + rows) + "\n")


def _cmd_train(args) -> int:
    settings = _load_settings(args.settings, args.time_scale)
    seeds = args.seeds or [0]
    overrides = {}
    if args.episodes is not None:
        overrides["episodes_per_setting"] = args.episodes
    config = TrainingConfig(support_size=args.support_size, **overrides)
    out = Path(args.out)
    progress = print if args.verbose else None
    for seed in seeds:
        result = train(settings, config, seed=seed, progress=progress)
        seed_dir = out / f"seed{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        write_training_csv(result.records, seed_dir / "training_curve.csv")
        for label, params in result.stage_policies:
            mlp.save_params(params, seed_dir / f"sf_after_{label}.json")
        mlp.save_params(result.policy, seed_dir / "sf_final.json")
        mlp.save_params(result.value, seed_dir / "value_final.json")
        last = result.records[-1]
        print(f"seed {seed}: {len(result.records)} iterations, "
              f"final reward {last.reward:.0f}, "
              f"final mean response {last.mean_response_time * 1e3:.2f} ms "
              f"-> {seed_dir}")
    return 0


def _cmd_eval(args) -> int:
    settings = _load_settings(args.settings, args.time_scale)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics: list[str] = []
    dist: list[str] = []
    for setting in settings:
        for seed in _seeds_for(args.seeds, setting):
            policy = _build_policy(args.policy, args.checkpoint, args.support_size)
            log = run_episode(setting, policy, seed=seed, record_steps=True)
            metrics.append(_metrics_row(args.policy, log))
            dist.extend(_distribution_rows(args.policy, log))
            write_episode_csv(log, out / f"episode_{setting.name}_{args.policy}_{seed}.csv")
            print(f"{args.policy} on {setting.name} seed {seed}: "
                  f"mean response {log.mean_response_time * 1e3:.2f} ms, "
                  f"throughput {log.throughput:.0f}/s, reward {log.cumulative_reward:.0f}")
    _write_metrics(metrics, out / "metrics.csv")
    _write_distribution(dist, out / "distribution.csv")
    return 0


def _cmd_compare(args) -> int:
    if not args.policy:
        raise ConfigError("compare needs at least one --policy")
    settings = _load_settings(args.settings, args.time_scale)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics: list[str] = []
    dist: list[str] = []
    summary: dict[tuple[str, str], list[EpisodeLog]] = {}
    for setting in settings:
        for name in args.policy:
            for seed in _seeds_for(args.seeds, setting):
                policy = _build_policy(name, args.checkpoint, args.support_size)
                log = run_episode(setting, policy, seed=seed, record_steps=False)
                metrics.append(_metrics_row(name, log))
                dist.extend(_distribution_rows(name, log))
                summary.setdefault((setting.name, name), []).append(log)
    _write_metrics(metrics, out / "metrics.csv")
    _write_distribution(dist, out / "distribution.csv")
    print(f"{'setting':<10} {'policy':<6} {'mean resp (ms)':>14} {'throughput (1/s)':>17} {'reward':>12}")
    for (sname, pname), logs in summary.items():
        tau = sum(l.mean_response_time for l in logs) / len(logs)
        thr = sum(l.throughput for l in logs) / len(logs)
        rew = sum(l.cumulative_reward for l in logs) / len(logs)
        print(f"{sname:<10} {pname:<6} {tau * 1e3:>14.3f} {thr:>17.1f} {rew:>12.0f}")
    return 0


def _add_common(p: argparse.ArgumentParser, *, train_mode: bool) -> None:
    p.add_argument("--settings", nargs="+", required=True,
                   metavar="SETTING",
                   help="preset names (env1..env7) or paths to setting JSON files")
    p.add_argument("--seeds", nargs="*", type=int, default=[],
                   help="episode seeds (default: the setting file's seed, else 0)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--time-scale", type=float, default=1.0,
                   help="shrink episode horizon and windows by this factor")
    p.add_argument("--support-size", type=int, default=2,
                   help="max controllers kept in each dispatch distribution")
    if train_mode:
        p.add_argument("--episodes", type=int, default=None,
                       help="episodes per setting (default 2)")
        p.add_argument("--verbose", action="store_true",
                       help="print one line per training iteration")
    else:
        p.add_argument("--checkpoint", default=None,
                       help="trained parameters for the sf policy")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdndispatch",
        description="Simulate switch-to-controller request dispatching and train a policy for it.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a dispatching policy")
    _add_common(p_train, train_mode=True)
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="run one policy and write episode logs")
    _add_common(p_eval, train_mode=False)
    p_eval.add_argument("--policy", choices=POLICY_CHOICES, required=True)
    p_eval.set_defaults(func=_cmd_eval)

    p_cmp = sub.add_parser("compare", help="run several policies over the same settings")
    _add_common(p_cmp, train_mode=False)
    p_cmp.add_argument("--policy", choices=POLICY_CHOICES, action="append",
                       help="repeat for each policy to include")
    p_cmp.set_defaults(func=_cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, mlp.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
