"""Training and evaluation loops.

One learn step per environment decision once the replay buffer passes its
warmup; negotiation (when enabled) proposes the assignable pairs each
decision round and trains on its own cadence; epsilon decays per episode;
evaluation snapshots run greedily with frozen normalization statistics.
"""

import copy
import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .agent import (ActionSpace, AgentConfig, AgentError, EnhancedDQN,
                    ObservationSpec)
from .baselines import HeuristicPolicy
from .config import ScenarioConfig
from .negotiation import NegotiationEngine, NegotiationRecord
from .replay import NStepAccumulator
from .sim import SystemState, action_index, new_scenario
from . import nn

EPISODE_COLUMNS = ("episode", "reward", "steps", "epsilon", "loss_mean",
                   "mean_abs_td", "grad_norm_mean", "learn_steps",
                   "nego_loss_n", "nego_loss_m", "nego_rounds_mean",
                   "nego_count")
EVAL_COLUMNS = ("episode", "eval_index", "seed", "makespan", "total_tardiness",
                "total_setup_time", "total_reconfig_time", "avg_utilization",
                "total_wait_time", "reconfig_count", "completion_rate",
                "objective", "reward")

METRIC_FIELDS = ("makespan", "total_tardiness", "total_setup_time",
                 "total_reconfig_time", "avg_utilization", "total_wait_time",
                 "reconfig_count", "completion_rate", "objective")


class TrainAbort(Exception):
    """Training stopped on a non-recoverable numeric failure."""


class SpecMismatch(Exception):
    """Policy was built for a different observation/action layout."""


@dataclass
class TrainConfig:
    episodes: int = 1000
    seed: int = 0
    agent: AgentConfig = field(default_factory=AgentConfig)
    eval_every: int = 20              # 0 disables periodic evaluation
    eval_episodes: int = 20
    eval_seed: int = 100_000
    keep_best: bool = False           # restore the best periodic-eval snapshot
    plateau_patience: int = 10        # in eval rounds; 0 disables
    plateau_factor: float = 0.5
    lr_floor: float = 1e-6
    checkpoint_dir: Optional[str] = None
    checkpoint_every: int = 0         # episodes; 0 disables
    max_episode_steps: int = 200_000

    def validate(self):
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if self.eval_every < 0 or self.eval_episodes <= 0:
            raise ValueError("evaluation cadence must be sane")
        return self


@dataclass
class TrainLog:
    episodes: list = field(default_factory=list)   # dict rows, EPISODE_COLUMNS
    evals: list = field(default_factory=list)      # dict rows, EVAL_COLUMNS

    def append_episode(self, **row):
        self.episodes.append(row)

    def append_eval(self, **row):
        self.evals.append(row)

    def to_csv(self, path):
        _write_csv(path, EPISODE_COLUMNS, self.episodes)

    def eval_to_csv(self, path):
        _write_csv(path, EVAL_COLUMNS, self.evals)


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def episode_seed(base: int, episode: int) -> int:
    return int(np.random.SeedSequence([base, episode]).generate_state(1)[0])


def build_agent(scenario: ScenarioConfig, agent_cfg: AgentConfig) -> EnhancedDQN:
    spec = ObservationSpec(scenario)
    space = ActionSpace(scenario.view_size, scenario.n_machines)
    return EnhancedDQN(spec, space, agent_cfg)


def proposal_mask(state: SystemState, proposals, base_mask):
    """Restrict the action mask to negotiated pairs (idle stays allowed)."""
    mask = np.zeros_like(base_mask)
    mask[-1] = True
    view = state.job_view
    for p in proposals:
        if p.job_id in view:
            idx = action_index(view.index(p.job_id), p.machine_id,
                               state.n_machines)
            if base_mask[idx]:
                mask[idx] = True
    return mask


def run_training(scenario: ScenarioConfig, train: TrainConfig,
                 engine: NegotiationEngine = None):
    """Returns (agent, TrainLog).  ``engine`` is used only when the scenario
    has negotiation enabled; one is created on the fly if not supplied."""
    scenario.validate()
    train.validate()
    agent = build_agent(scenario, train.agent)
    if scenario.negotiation and engine is None:
        engine = NegotiationEngine(scenario.n_machines, seed=train.seed)
    log = TrainLog()
    scheduler = None
    if train.plateau_patience > 0:
        scheduler = nn.PlateauScheduler([agent.optimizer],
                                        factor=train.plateau_factor,
                                        patience=train.plateau_patience,
                                        floor=train.lr_floor)
    eval_round = 0
    best = None        # (eval makespan mean, parameter snapshot)
    for episode in range(train.episodes):
        state = new_scenario(scenario, episode_seed(train.seed, episode))
        acc = NStepAccumulator(train.agent.n_step, train.agent.gamma)
        eps_used = agent.epsilon
        total_reward = 0.0
        losses, tds, gnorms = [], [], []
        nego_losses = []
        nego_rounds = []
        steps = 0
        proposals = []
        while not state.done and steps < train.max_episode_steps:
            raw = agent.obs_spec.encode(state)
            agent.normalizer.observe(raw)
            obs = agent.normalizer.normalize(raw)
            _, mask = state.feasible_actions()
            if engine is not None and scenario.negotiation:
                proposals, _ = engine.resolve_conflicts(state)
                mask = proposal_mask(state, proposals, mask)
            view_before = list(state.job_view)
            action = agent.act(obs, mask, mode="train")
            _, reward, done = state.step(action)
            total_reward += reward

            if engine is not None and action != agent.action_space.idle_index:
                slot, machine_id = divmod(action, state.n_machines)
                job_id = view_before[slot]
                for p in proposals:
                    if p.job_id == job_id and p.machine_id == machine_id:
                        engine.store(NegotiationRecord(
                            job_id=job_id, bids=p.bids, alpha=p.alpha,
                            winner_index=p.winner_index, reward=reward,
                            rounds_used=p.round_placed))
                        nego_rounds.append(p.round_placed)
                        result = engine.maybe_train()
                        if result is not None:
                            nego_losses.append(result)
                        break

            boot_raw = agent.obs_spec.encode(state)
            boot_obs = agent.normalizer.normalize(boot_raw)
            _, boot_mask = state.feasible_actions()
            for tr in acc.push(obs, action, reward, boot_obs, boot_mask, done):
                agent.remember(tr)
            if agent.ready():
                try:
                    stats = agent.learn_step()
                except AgentError as err:
                    raise TrainAbort(
                        f"episode {episode} step {steps}: {err}") from err
                if stats is not None:
                    losses.append(stats["loss"])
                    tds.append(stats["mean_abs_td"])
                    gnorms.append(stats["grad_norm"])
            steps += 1

        for tr in acc.flush():
            agent.remember(tr)
        if engine is not None:
            _update_reputation(engine, state)
        log.append_episode(
            episode=episode,
            reward=total_reward,
            steps=steps,
            epsilon=eps_used,
            loss_mean=float(np.mean(losses)) if losses else None,
            mean_abs_td=float(np.mean(tds)) if tds else None,
            grad_norm_mean=float(np.mean(gnorms)) if gnorms else None,
            learn_steps=len(losses),
            nego_loss_n=float(np.mean([l[0] for l in nego_losses]))
            if nego_losses else None,
            nego_loss_m=float(np.mean([l[1] for l in nego_losses]))
            if nego_losses else None,
            nego_rounds_mean=float(np.mean(nego_rounds)) if nego_rounds else None,
            nego_count=len(nego_rounds),
        )
        agent.end_episode()

        if train.eval_every and (episode + 1) % train.eval_every == 0:
            rows, aggregates = evaluate(
                agent, scenario, train.eval_episodes,
                seeds=[episode_seed(train.eval_seed, i)
                       for i in range(train.eval_episodes)],
                engine=engine)
            for i, row in enumerate(rows):
                log.append_eval(episode=episode, eval_index=i, **row)
            if scheduler is not None:
                scheduler.report(eval_round, -aggregates["objective"][0])
            if train.keep_best:
                mk = aggregates["makespan"][0]
                if best is None or mk < best[0]:
                    best = (mk, agent.snapshot())
            eval_round += 1

        if (train.checkpoint_dir and train.checkpoint_every
                and (episode + 1) % train.checkpoint_every == 0):
            agent.save(os.path.join(train.checkpoint_dir,
                                    f"checkpoint_ep{episode + 1}.json"))
    if train.keep_best and best is not None:
        agent.restore(best[1])
    return agent, log


def _update_reputation(engine, state):
    for time, kind, job_id, machine_id, _, _, _ in state.events:
        if kind == "job_complete" and machine_id is not None:
            ontime = time <= state.jobs[job_id].due_date
            engine.update_reputation(machine_id, ontime)


# ------------------------------------------------------------------ evaluation

def _checkable(policy):
    return isinstance(policy, EnhancedDQN)


def _eval_episode(policy, scenario, seed, engine=None):
    state = new_scenario(scenario, seed)
    total_reward = 0.0
    while not state.done:
        _, mask = state.feasible_actions()
        if engine is not None and scenario.negotiation:
            proposals, _ = engine.resolve_conflicts(state)
            mask = proposal_mask(state, proposals, mask)
        if _checkable(policy):
            raw = policy.obs_spec.encode(state)
            obs = policy.normalizer.normalize(raw)
            action = policy.act(obs, mask, mode="eval")
        else:
            action = policy.select(state, mask)
        _, reward, _ = state.step(action)
        total_reward += reward
    metrics = state.finalize_metrics()
    row = {f: getattr(metrics, f) for f in METRIC_FIELDS}
    row["seed"] = seed
    row["reward"] = total_reward
    return row


def evaluate(policy, scenario: ScenarioConfig, episodes: int, seeds=None,
             engine=None, threads: int = 1):
    """Greedy evaluation; returns (per-episode rows, {metric: (mean, std)}).

    The agent's parameters and normalization statistics are read, never
    written.  With ``threads > 1`` each worker drives its own policy copy.
    """
    if _checkable(policy) and policy.obs_spec.dim != ObservationSpec(scenario).dim:
        raise SpecMismatch(
            f"agent expects obs dim {policy.obs_spec.dim}, scenario produces "
            f"{ObservationSpec(scenario).dim}")
    if seeds is None:
        seeds = [episode_seed(7_777, i) for i in range(episodes)]
    if len(seeds) != episodes:
        raise ValueError("need exactly one seed per evaluation episode")

    def worker(seed):
        p = policy
        if threads > 1:
            p = copy.deepcopy(policy)
        elif not _checkable(policy) and hasattr(p, "rng"):
            p = copy.deepcopy(policy)   # keep caller's RNG stream untouched
        return _eval_episode(p, scenario, seed, engine=engine)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(worker, seeds))
    else:
        rows = [worker(s) for s in seeds]
    aggregates = {}
    for f in METRIC_FIELDS + ("reward",):
        vals = np.array([r[f] for r in rows], dtype=np.float64)
        aggregates[f] = (float(vals.mean()), float(vals.std()))
    return rows, aggregates
