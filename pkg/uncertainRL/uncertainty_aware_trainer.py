"""
Uncertainty-aware Dyna loop.

Real episodes fill the real buffer, the ensemble is refit on it once per
epoch, and every real step launches a few imagined rollouts whose length
shrinks as the ensemble disagrees more about the rollout's first state.
SAC then learns from batches mixing both buffers.
"""
import json
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.utils import check_random_state

from .base import BaseConfig, ConfigError, _check_range
from .driving_env import LaneDrivingEnv, load_scenario
from .ensemble_dynamics_model import (
    Ensemble,
    predict,
    sample_member,
    save_ensemble,
    train_ensemble,
    uncertainty,
)
from .replay_buffer import ReplayBuffer, Transition, concat_batches
from .reward_shaping import (
    RNDPair,
    ngu_reward,
    potential_reward,
    ultimate_reward,
    update_rnd,
)
from .soft_actor_critic import SACAgent, act

logger = logging.getLogger(__name__)

ALGORITHMS = ("adaptive", "fixed_k", "vanilla")
STREAMS = (
    "agent_init",
    "model_init",
    "rnd_init",
    "episodes",
    "action_noise",
    "sac_updates",
    "model_training",
    "rollouts",
    "rnd_updates",
)
METRIC_FIELDS = (
    "epoch",
    "real_steps",
    "episode_reward",
    "episode_base_reward",
    "episode_duration_steps",
    "collision",
    "mean_uncertainty",
    "mean_rollout_len",
    "rollout_steps",
    "dm_size",
    "de_size",
    "critic_loss",
    "actor_loss",
    "model_loss",
    "model_state_loss",
    "model_reward_loss",
    "sanity_stops",
    "wall_ms",
)
# fields that depend only on what the agent did in the real environment
BEHAVIOR_FIELDS = (
    "epoch",
    "real_steps",
    "episode_reward",
    "episode_base_reward",
    "episode_duration_steps",
    "collision",
    "dm_size",
    "de_size",
    "critic_loss",
    "actor_loss",
)
# step outcomes that end an episode for bootstrapping; truncation does not
TERMINAL_FLAGS = ("collision", "out_of_bounds", "reached_goal")


class RolloutConfig(BaseConfig):
    """
    Parameters
    ----------
    omega : float, default=10.0
        Slope of the rollout length in the root-state uncertainty. ``inf``
        truncates every rollout with nonzero uncertainty to ``k_min``.

    k_base : int, default=6
        Rollout length at zero uncertainty.

    k_min : int, default=0

    M : int, default=4
        Rollouts launched per real step.

    real_fraction : float, default=0.5
        Share of every SAC batch drawn from the real buffer.

    per_step_truncation : bool, default=False
        Re-evaluate the uncertainty at every imagined state and shorten the
        rollout when it grows.

    sanity_bound : float, default=10.0
        A rollout stops before writing a state with any normalized
        observation entry larger than this in magnitude.

    k_slack : float, default=0.2
        Part of a step forgiven before a rollout loses its first step:
        ``k_base`` is reached while ``omega * sigma2 <= k_slack``.

    relative_uncertainty : bool, default=True
        Divide root uncertainties by their median over the real buffer right
        after the first ensemble fit, so ``omega`` counts the steps lost per
        multiple of the early-training uncertainty.
    """

    def __init__(
        self,
        omega=10.0,
        k_base=6,
        k_min=0,
        M=4,
        real_fraction=0.5,
        per_step_truncation=False,
        sanity_bound=10.0,
        k_slack=0.2,
        relative_uncertainty=True,
    ):
        self.omega = omega
        self.k_base = k_base
        self.k_min = k_min
        self.M = M
        self.real_fraction = real_fraction
        self.per_step_truncation = per_step_truncation
        self.sanity_bound = sanity_bound
        self.k_slack = k_slack
        self.relative_uncertainty = relative_uncertainty

    def _validate_hyperparameters(self):
        _check_range("rollout.omega", self.omega, 0.0, allow_inf=True)
        _check_range("rollout.k_base", self.k_base, 0)
        _check_range("rollout.k_min", self.k_min, 0, self.k_base)
        _check_range("rollout.M", self.M, 0)
        _check_range(
            "rollout.real_fraction", self.real_fraction, 0.0, 1.0, closed="right"
        )
        _check_range("rollout.sanity_bound", self.sanity_bound, 0.0, closed="right")
        _check_range("rollout.k_slack", self.k_slack, 0.0, 1.0, closed="left")


def rollout_length(sigma2, config):
    """``clamp(floor(k_base - omega * sigma2 + k_slack), k_min, k_base)``."""
    if sigma2 == 0.0:
        return int(config.k_base)
    value = config.k_base - config.omega * sigma2 + config.k_slack
    if not np.isfinite(value):
        return int(config.k_min)
    return int(np.clip(np.floor(value), config.k_min, config.k_base))


class Rollout(list):
    """Imagined transitions of one rollout, plus how it was sized and ended."""

    def __init__(self, transitions=(), k_star=0, sigma2=0.0, sanity_stopped=False):
        super().__init__(transitions)
        self.k_star = k_star
        self.sigma2 = sigma2
        self.sanity_stopped = sanity_stopped


def truncated_rollout(ensemble, actor, s0, config, rng, k=None, sigma2_scale=1.0):
    """Roll the learned model forward from ``s0`` under the current policy.

    The root uncertainty uses the deterministic policy action at ``s0`` and
    is divided by ``sigma2_scale`` before it sizes the rollout.
    ``k=None`` sizes the rollout with ``rollout_length``; an integer fixes it.
    Every step samples a stochastic action and a fresh ensemble member.
    """
    rng = check_random_state(rng)
    s0 = np.asarray(s0, dtype=np.float64)
    a0 = act(actor, s0, "deterministic")
    sigma2 = uncertainty(ensemble, s0, a0) / sigma2_scale
    adaptive = k is None
    k_star = rollout_length(sigma2, config) if adaptive else int(k)

    rollout = Rollout(k_star=k_star, sigma2=sigma2)
    horizon = k_star
    s = s0
    step = 0
    while step < horizon:
        a = act(actor, s, "stochastic", rng)
        member = sample_member(ensemble, rng)
        s_next, r = predict(member, s, a, rng.standard_normal(ensemble.n_obs + 1))
        if np.abs(ensemble.normalized_observation(s_next)).max() > config.sanity_bound:
            rollout.sanity_stopped = True
            logger.debug("rollout stopped by the sanity bound after %d steps", step)
            break
        rollout.append(Transition(s, a, r, s_next, False, "virtual"))
        step += 1
        if adaptive and config.per_step_truncation and step < horizon:
            a_next = act(actor, s_next, "deterministic")
            local = uncertainty(ensemble, s_next, a_next) / sigma2_scale
            horizon = min(horizon, step + rollout_length(local, config))
        s = s_next
    return rollout


@dataclass
class BoundInputs:
    eps_m: float
    eps_pi: float
    k: int
    gamma: float
    r_max: float = 1.0

    def __post_init__(self):
        _check_range("eps_m", self.eps_m, 0.0, allow_inf=True)
        _check_range("eps_pi", self.eps_pi, 0.0, allow_inf=True)
        _check_range("k", self.k, 0)
        _check_range("gamma", self.gamma, 0.0, 1.0, closed="neither")
        _check_range("r_max", self.r_max, 0.0)


def discrepancy_bound(inputs):
    """Model-return discrepancy bound and the matching lower-bound gap.

    Returns
    -------
    C : float
        ``g^(k+1) eps_pi / (1-g)^2 + g^k eps_pi / (1-g) + k eps_m / (1-g)``.

    gap : float
        ``2 * r_max * C``, the amount the true return can fall below the
        model return.
    """
    g, k = inputs.gamma, inputs.k
    C = (
        g ** (k + 1) * inputs.eps_pi / (1.0 - g) ** 2
        + g**k * inputs.eps_pi / (1.0 - g)
        + k * inputs.eps_m / (1.0 - g)
    )
    return C, 2.0 * inputs.r_max * C


def optimal_rollout_depth(eps_m, eps_pi, gamma, k_max=200):
    """Rollout depth in ``[0, k_max]`` with the smallest bound, and that bound."""
    values = [
        discrepancy_bound(BoundInputs(eps_m, eps_pi, k, gamma))[0]
        for k in range(k_max + 1)
    ]
    best = int(np.argmin(values))
    return best, values[best]


def spawn_streams(seed):
    """Independent RandomState streams, one per source of randomness."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {
        name: np.random.RandomState(np.random.MT19937(child))
        for name, child in zip(STREAMS, children)
    }


def mixed_batch(real, model, batch_size, real_fraction, rng):
    """SAC batch with ``real_fraction`` of its rows from ``real``.

    Falls back to an all-real batch while ``model`` is empty.
    """
    if len(model) == 0 or real_fraction >= 1.0:
        return real.sample(batch_size, rng)
    n_real = int(round(real_fraction * batch_size))
    if n_real >= batch_size:
        return real.sample(batch_size, rng)
    return concat_batches(
        real.sample(n_real, rng), model.sample(batch_size - n_real, rng)
    )


def root_uncertainty_scale(ensemble, agent, buffer):
    """Median root uncertainty over ``buffer`` under the deterministic policy.

    Falls back to 1 where the members agree on every state.
    """
    obs = buffer.arrays().obs
    sigma2 = uncertainty(ensemble, obs, agent.act(obs, "deterministic"))
    median = float(np.median(sigma2))
    return median if median > 0.0 else 1.0


def _mean_or_none(values):
    return float(np.mean(values)) if len(values) else None


def _loss_mean(losses, part):
    return None if losses is None else float(getattr(losses, part).mean())


@dataclass
class TrainResult:
    metrics: list
    spawn_trace: list
    agent: SACAgent
    ensemble: object
    rnd: RNDPair
    real_buffer: ReplayBuffer
    model_buffer: ReplayBuffer
    streams: dict = field(repr=False, default_factory=dict)
    sigma2_scale: float = 1.0


def train(
    config,
    scenario=None,
    seed=None,
    metrics_path=None,
    probe_path=None,
    checkpoint_dir=None,
):
    """Run the Dyna loop for ``config.n_epochs`` epochs of one episode each.

    Parameters
    ----------
    config : ExperimentConfig
        Supplies ``algorithm``, ``fixed_k``, ``n_epochs``, ``warmup_steps``,
        buffer capacities, ``record_wall_time`` and the nested ``env``,
        ``sac``, ``model``, ``rollout`` and ``shaping`` sections.

    scenario : Scenario, default=None
        Loaded from ``config.scenario`` when omitted.

    seed : int, default=None
        Master seed; ``config.master_seed`` when omitted.

    metrics_path, probe_path : path-like, default=None
        Where to write the per-epoch JSON lines and the probe-state trace.

    checkpoint_dir : path-like, default=None
        Receives the final agent and ensemble checkpoints.

    Returns
    -------
    result : TrainResult
    """
    if config.algorithm not in ALGORITHMS:
        raise ConfigError(
            "algorithm must be one of %s, got %r" % (ALGORITHMS, config.algorithm)
        )
    seed = config.master_seed if seed is None else seed
    scenario = scenario if scenario is not None else load_scenario(config.scenario)
    rollout_cfg, shaping_cfg, sac_cfg = config.rollout, config.shaping, config.sac
    use_model = config.algorithm != "vanilla"
    fixed_k = config.fixed_k if config.algorithm == "fixed_k" else None

    real_fraction = rollout_cfg.real_fraction
    if use_model and rollout_cfg.M == 0:
        warnings.warn("rollout.M is 0: no imagined data, real_fraction forced to 1.")
        real_fraction = 1.0

    streams = spawn_streams(seed)
    env = LaneDrivingEnv(scenario, config.env)
    n_obs = env.observation_size
    scale = env.observation_scale()
    agent = SACAgent(n_obs, sac_cfg, scale, streams["agent_init"])
    rnd = RNDPair(n_obs, shaping_cfg, scale, streams["rnd_init"])
    ensemble = None
    if use_model:
        ensemble = Ensemble(n_obs, 1, config.model, streams["model_init"])
    real_buffer = ReplayBuffer(config.de_capacity, n_obs, "real")
    model_buffer = ReplayBuffer(config.dm_capacity, n_obs, "virtual")

    metrics, spawn_trace = [], []
    real_steps = 0
    sigma2_scale = None
    metrics_file = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    try:
        for epoch in range(config.n_epochs):
            started = time.perf_counter()
            model_losses = None
            if use_model and len(real_buffer) >= config.model.batch_size:
                model_losses = train_ensemble(
                    ensemble, real_buffer, random_state=streams["model_training"]
                )
                if sigma2_scale is None:
                    sigma2_scale = 1.0
                    if rollout_cfg.relative_uncertainty:
                        sigma2_scale = root_uncertainty_scale(
                            ensemble, agent, real_buffer
                        )
                    logger.info("root uncertainty scale %.6g", sigma2_scale)

            obs = env.reset(streams["episodes"].randint(np.iinfo(np.int32).max))
            if use_model and ensemble.trained:
                a_spawn = agent.act(obs, "deterministic")
                sigma2 = uncertainty(ensemble, obs, a_spawn) / sigma2_scale
                k_star = fixed_k
                if fixed_k is None:
                    k_star = rollout_length(sigma2, rollout_cfg)
                spawn_trace.append((real_steps, sigma2, k_star))

            shaped_sum = base_sum = 0.0
            sigmas, lengths, critic_losses, actor_losses = [], [], [], []
            sanity_stops = 0
            done = False
            info = {"collision": False}
            steps = 0
            while not done:
                ego_before = env.ego
                action = agent.act(obs, "stochastic", streams["action_noise"])
                result = env.step(action)
                done, info = result.done, result.info
                r_P = potential_reward(ego_before, env.ego, scenario, shaping_cfg.gamma)
                r_NGU = ngu_reward(rnd, result.observation, shaping_cfg)
                reward = ultimate_reward(result.reward, r_P, r_NGU)
                terminal = any(info[flag] for flag in TERMINAL_FLAGS)
                real_buffer.push(obs, action, reward, result.observation, terminal)
                seen = real_buffer.sample(
                    shaping_cfg.batch_size, streams["rnd_updates"]
                )
                update_rnd(rnd, seen.next_obs)
                shaped_sum += reward
                base_sum += result.reward
                real_steps += 1
                steps += 1

                if len(real_buffer) >= config.warmup_steps:
                    if use_model and ensemble.trained:
                        for _ in range(rollout_cfg.M):
                            s0 = real_buffer.sample(1, streams["rollouts"]).obs[0]
                            rollout = truncated_rollout(
                                ensemble,
                                agent.actor,
                                s0,
                                rollout_cfg,
                                streams["rollouts"],
                                fixed_k,
                                sigma2_scale,
                            )
                            for transition in rollout:
                                model_buffer.push_transition(transition)
                            sigmas.append(rollout.sigma2)
                            lengths.append(len(rollout))
                            sanity_stops += rollout.sanity_stopped
                    batch = mixed_batch(
                        real_buffer,
                        model_buffer,
                        sac_cfg.batch_size,
                        real_fraction,
                        streams["sac_updates"],
                    )
                    loss_q, loss_pi = agent.update(batch, streams["sac_updates"])
                    critic_losses.append(loss_q)
                    actor_losses.append(loss_pi)
                obs = result.observation

            record = {
                "epoch": epoch,
                "real_steps": real_steps,
                "episode_reward": float(shaped_sum),
                "episode_base_reward": float(base_sum),
                "episode_duration_steps": steps,
                "collision": bool(info["collision"]),
                "mean_uncertainty": _mean_or_none(sigmas),
                "mean_rollout_len": _mean_or_none(lengths),
                "rollout_steps": int(sum(lengths)),
                "dm_size": len(model_buffer),
                "de_size": len(real_buffer),
                "critic_loss": _mean_or_none(critic_losses),
                "actor_loss": _mean_or_none(actor_losses),
                "model_loss": _loss_mean(model_losses, "total"),
                "model_state_loss": _loss_mean(model_losses, "state"),
                "model_reward_loss": _loss_mean(model_losses, "reward"),
                "sanity_stops": sanity_stops,
                "wall_ms": (
                    round(1000.0 * (time.perf_counter() - started), 3)
                    if config.record_wall_time
                    else None
                ),
            }
            metrics.append(record)
            if metrics_file is not None:
                metrics_file.write(json.dumps(record) + "\n")
            logger.info(
                "epoch %d: reward %.3f over %d steps, |D_E| %d, |D_M| %d",
                epoch,
                shaped_sum,
                steps,
                len(real_buffer),
                len(model_buffer),
            )
    finally:
        if metrics_file is not None:
            metrics_file.close()

    if probe_path is not None:
        trace = pd.DataFrame(spawn_trace, columns=["real_step", "sigma2", "k_star"])
        trace.to_csv(probe_path, index=False)
    if checkpoint_dir is not None:
        agent.save(checkpoint_dir)
        if ensemble is not None:
            save_ensemble(ensemble, Path(checkpoint_dir) / "ensemble.bin")
    return TrainResult(
        metrics,
        spawn_trace,
        agent,
        ensemble,
        rnd,
        real_buffer,
        model_buffer,
        streams,
        1.0 if sigma2_scale is None else sigma2_scale,
    )
