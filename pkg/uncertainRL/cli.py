"""
Command-line experiment harness.

    uncertainrl train  --config exp.txt --out runs/a --override rollout.omega=20
    uncertainrl eval   --checkpoint runs/a/checkpoint_seed0 --scenarios a b c
    uncertainrl ablate --config exp.txt --k-list 1 5 10
    uncertainrl bound  --gamma 0.97 --eps-m 0 0.1 0.2 --eps-pi 0 0.1
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import stats
from sklearn.base import clone

from .base import ConfigError, UncertainRLError
from .config import ExperimentConfig, apply_overrides, read_config, write_config
from .driving_env import LaneDrivingEnv, load_scenario
from .soft_actor_critic import SACAgent
from .uncertainty_aware_trainer import (
    BoundInputs,
    discrepancy_bound,
    optimal_rollout_depth,
    train,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
EPISODE_COLUMNS = [
    "duration_steps",
    "distance",
    "completed",
    "collision",
    "aad_v_lat",
    "aad_yaw_rate",
]
EFFICIENCY_COLUMNS = ["threshold", "steps_to_threshold", "episodes"]


def configure_logging(verbose):
    """WARNING by default, INFO for one ``-v``, DEBUG for more."""
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(level=level, format=LOG_FORMAT)


def _train_seed(config, seed, out_dir):
    # worker processes start with unconfigured logging
    configure_logging(config.verbose)
    out_dir = Path(out_dir)
    result = train(
        config,
        seed=seed,
        metrics_path=out_dir / ("metrics_seed%d.jsonl" % seed),
        probe_path=out_dir / ("probe_seed%d.csv" % seed),
        checkpoint_dir=out_dir / ("checkpoint_seed%d" % seed),
    )
    return result.metrics


def summarize_curves(runs, smoothing=0.9, column="episode_reward"):
    """Mean and 1-sigma band of a metric across seeds, with its moving average.

    Parameters
    ----------
    runs : list of list of dict
        Metric records of every seed, aligned by epoch.

    Returns
    -------
    summary : DataFrame
        One row per epoch present in every run.
    """
    n_epochs = min(len(run) for run in runs)
    values = np.array([[record[column] for record in run[:n_epochs]] for run in runs])
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    summary = pd.DataFrame(
        {
            "epoch": np.arange(n_epochs),
            "n_seeds": len(runs),
            "mean": mean,
            "std": std,
            "lower": mean - std,
            "upper": mean + std,
        }
    )
    summary["mean_smoothed"] = (
        summary["mean"].ewm(alpha=1.0 - smoothing, adjust=False).mean()
    )
    return summary


def cmd_train(config, out_dir):
    """Train every seed and write metrics, checkpoints and ``summary.csv``."""
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(config, out_dir / "config.txt")
    seeds = config.run_seeds
    logger.info(
        "training %s on %s for seeds %s", config.algorithm, config.scenario, seeds
    )
    runs = Parallel(n_jobs=config.n_jobs)(
        delayed(_train_seed)(config, seed, out_dir) for seed in seeds
    )
    summary = summarize_curves(runs, config.smoothing)
    summary.to_csv(out_dir / "summary.csv", index=False)
    return summary


def evaluate_policy(agent, scenario, env_config, noise_level, episodes, seed=0):
    """Deterministic-policy episodes, optionally with Gaussian action noise.

    The noise std is ``noise_level * pi``, a fraction of the action range
    width; the environment clamps the perturbed action.

    Returns
    -------
    episodes : DataFrame
        One row per episode with the columns of ``EPISODE_COLUMNS``.
    """
    episode_stream, noise_stream = (
        np.random.RandomState(np.random.MT19937(child))
        for child in np.random.SeedSequence(seed).spawn(2)
    )
    env = LaneDrivingEnv(scenario, env_config)
    rows = []
    for _ in range(episodes):
        obs = env.reset(episode_stream.randint(np.iinfo(np.int32).max))
        start = env.ego.x_lon
        v_lat, yaw_rate = [], []
        done = False
        while not done:
            action = agent.act(obs, "deterministic")
            if noise_level > 0:
                action += noise_stream.normal(0.0, noise_level * np.pi)
            result = env.step(action)
            v_lat.append(abs(env.ego.v_lat))
            yaw_rate.append(abs(env.ego.yaw_rate))
            done, obs = result.done, result.observation
        rows.append(
            (
                len(v_lat),
                env.ego.x_lon - start,
                result.info["reached_goal"],
                result.info["collision"],
                np.mean(v_lat),
                np.mean(yaw_rate),
            )
        )
    return pd.DataFrame(rows, columns=EPISODE_COLUMNS)


def _sem(values):
    return float(stats.sem(values)) if len(values) > 1 else 0.0


def cmd_eval(
    config, checkpoint, scenarios, noise_level, out_dir, episodes=None, seed=None
):
    """Evaluate a checkpoint clean and under action noise on each scenario."""
    config.validate()
    agent = SACAgent.load(checkpoint, config.sac)
    episodes = config.eval_episodes if episodes is None else episodes
    seed = config.master_seed if seed is None else seed
    levels = [0.0] + ([noise_level] if noise_level > 0 else [])

    rows = []
    for name in scenarios:
        scenario = load_scenario(name)
        for level in levels:
            frame = evaluate_policy(agent, scenario, config.env, level, episodes, seed)
            rows.append(
                {
                    "scenario": scenario.name,
                    "noise_level": level,
                    "episodes": episodes,
                    "duration_mean": frame["duration_steps"].mean(),
                    "duration_sem": _sem(frame["duration_steps"]),
                    "distance_mean": frame["distance"].mean(),
                    "distance_sem": _sem(frame["distance"]),
                    "completion_rate": frame["completed"].mean(),
                    "collision_rate": frame["collision"].mean(),
                    "aad_v_lat": frame["aad_v_lat"].mean(),
                    "aad_yaw_rate": frame["aad_yaw_rate"].mean(),
                }
            )
            logger.info(
                "%s noise=%.2f: completion %.2f, collision %.2f",
                scenario.name,
                level,
                rows[-1]["completion_rate"],
                rows[-1]["collision_rate"],
            )
    report = pd.DataFrame(rows)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.to_csv(out_dir / "eval_report.csv", index=False)
    (out_dir / "eval_report.txt").write_text(
        report.to_string(index=False, float_format="%.4f") + "\n", encoding="utf-8"
    )
    return report


def _variant_metrics(config, seed):
    configure_logging(config.verbose)
    return train(config, seed=seed).metrics


def reward_threshold(runs, last=50, column="episode_reward"):
    """Median reward over the final ``last`` episodes of all ``runs``."""
    tail = np.concatenate([[record[column] for record in run[-last:]] for run in runs])
    return float(np.median(tail))


def steps_to_threshold(run, threshold, smoothing=0.9, column="episode_reward"):
    """First point where the smoothed reward curve of ``run`` reaches ``threshold``.

    Returns
    -------
    real_steps, episodes : int or None
        Real environment steps and episodes spent up to and including that
        epoch; None when the curve never gets there.
    """
    rewards = pd.Series([record[column] for record in run], dtype=np.float64)
    smoothed = rewards.ewm(alpha=1.0 - smoothing, adjust=False).mean().to_numpy()
    reached = np.flatnonzero(smoothed >= threshold)
    if len(reached) == 0:
        return None, None
    return int(run[reached[0]]["real_steps"]), int(reached[0]) + 1


def cmd_ablate(config, k_list, out_dir):
    """Fixed-length rollouts for each k next to adaptive and vanilla runs.

    Writes the mean reward curves to ``ablation.csv`` and, per variant and
    seed, the median reward of the final 50 episodes and the real steps
    needed to reach vanilla's final reward level to ``ablation_efficiency.csv``.
    """
    if not k_list:
        raise ConfigError("k_list must not be empty")
    config.validate()
    variants = [
        ("fixed_k=%d" % k, {"algorithm": "fixed_k", "fixed_k": k}) for k in k_list
    ]
    variants += [(name, {"algorithm": name}) for name in ("adaptive", "vanilla")]
    seeds = config.run_seeds
    jobs = [
        (name, seed, clone(config).set_params(**params))
        for name, params in variants
        for seed in seeds
    ]
    outs = Parallel(n_jobs=config.n_jobs)(
        delayed(_variant_metrics)(cfg, seed) for _, seed, cfg in jobs
    )
    runs = {
        name: [out for (variant, _, _), out in zip(jobs, outs) if variant == name]
        for name, _ in variants
    }

    curves = None
    for name, _ in variants:
        summary = summarize_curves(runs[name], config.smoothing)
        frame = summary[["epoch", "mean", "mean_smoothed"]].rename(
            columns={"mean": name, "mean_smoothed": name + "_smoothed"}
        )
        curves = frame if curves is None else curves.merge(frame, on="epoch")

    threshold = reward_threshold(runs["vanilla"])
    rows = []
    for (name, seed, _), run in zip(jobs, outs):
        steps, episodes = steps_to_threshold(run, threshold, config.smoothing)
        final = reward_threshold([run])
        rows.append((name, seed, final, threshold, steps, episodes))
    efficiency = pd.DataFrame(
        rows, columns=["variant", "seed", "final_reward", *EFFICIENCY_COLUMNS]
    ).astype({"steps_to_threshold": float, "episodes": float})
    for name, group in efficiency.groupby("variant", sort=False):
        logger.info(
            "%s: median %s real steps to reward %.3f",
            name,
            group["steps_to_threshold"].median(),
            threshold,
        )

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curves.to_csv(out_dir / "ablation.csv", index=False)
    efficiency.to_csv(out_dir / "ablation_efficiency.csv", index=False)
    return curves, efficiency


def cmd_bound(gamma, r_max, eps_m_grid, eps_pi_grid, k_max, out_dir):
    """Tabulate the discrepancy bound over a grid and its minimizing depth."""
    rows, minima = [], []
    for eps_m in eps_m_grid:
        for eps_pi in eps_pi_grid:
            for k in range(k_max + 1):
                C, gap = discrepancy_bound(BoundInputs(eps_m, eps_pi, k, gamma, r_max))
                rows.append((eps_m, eps_pi, k, C, gap))
            k_best, C_best = optimal_rollout_depth(eps_m, eps_pi, gamma, k_max)
            minima.append((eps_m, eps_pi, k_best, C_best))
    table = pd.DataFrame(rows, columns=["eps_m", "eps_pi", "k", "C", "gap"])
    best = pd.DataFrame(minima, columns=["eps_m", "eps_pi", "k_best", "C_min"])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / "bound.csv", index=False)
    best.to_csv(out_dir / "bound_minima.csv", index=False)
    return table, best


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--out", help="output directory (default: output_dir)")
    common.add_argument("--seed", type=int, help="single master seed")
    common.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="set one configuration key, e.g. sac.gamma=0.99 (repeatable)",
    )
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(
        prog="uncertainrl", description="Uncertainty-aware model-based RL experiments"
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("train", parents=[common], help="train one run per seed")

    evaluate = commands.add_parser(
        "eval", parents=[common], help="evaluate a checkpoint"
    )
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--scenarios", nargs="+")
    evaluate.add_argument("--noise-level", type=float)
    evaluate.add_argument("--episodes", type=int)

    ablate = commands.add_parser("ablate", parents=[common], help="fixed-k ablation")
    ablate.add_argument("--k-list", type=int, nargs="+", default=[1, 5, 10])

    bound = commands.add_parser("bound", parents=[common], help="tabulate the bound")
    bound.add_argument("--gamma", type=float, default=0.97)
    bound.add_argument("--r-max", type=float, default=1.0)
    bound.add_argument("--eps-m", type=float, nargs="+", default=[0.0, 0.01, 0.1, 0.2])
    bound.add_argument("--eps-pi", type=float, nargs="+", default=[0.0, 0.05, 0.1])
    bound.add_argument("--k-max", type=int, default=200)
    return parser


def load_config(args):
    """File, then ``--seed``, then ``--override`` flags, over the defaults."""
    config = read_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config.set_params(master_seed=args.seed, seeds=None)
    apply_overrides(config, args.override)
    if args.verbose:
        config.set_params(verbose=args.verbose)
    return config.validate()


def run(args):
    config = load_config(args)
    out_dir = args.out or config.output_dir
    if args.command == "train":
        cmd_train(config, out_dir)
    elif args.command == "eval":
        cmd_eval(
            config,
            args.checkpoint,
            args.scenarios or [config.scenario],
            config.noise_level if args.noise_level is None else args.noise_level,
            out_dir,
            args.episodes,
        )
    elif args.command == "ablate":
        cmd_ablate(config, args.k_list, out_dir)
    else:
        cmd_bound(args.gamma, args.r_max, args.eps_m, args.eps_pi, args.k_max, out_dir)


def main(argv=None):
    args = _build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        run(args)
    except (UncertainRLError, ValueError, ArithmeticError, OSError) as error:
        message = " ".join(str(error).split())
        sys.stderr.write("uncertainrl %s: error: %s\n" % (args.command, message))
        return 1
    return 0
