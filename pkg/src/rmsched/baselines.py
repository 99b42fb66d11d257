"""Non-learning schedulers: earliest-due-first, random, FIFO, earliest-available.

All of them consume the same (pairs, mask) contract the learning agent
sees and return an action index; Idle when nothing is valid.
"""

import numpy as np

from .sim import IDLE, SystemState, action_index


class HeuristicPolicy:
    """Base: subclasses implement ``select(state, mask)``."""

    name = "heuristic"

    def select(self, state: SystemState, mask: np.ndarray):
        raise NotImplementedError

    def _valid_pairs(self, state, mask):
        pairs, _ = state.feasible_actions()
        return [(j, m) for j, m in pairs
                if mask[action_index(state.job_view.index(j), m, state.n_machines)]]


class EDFPolicy(HeuristicPolicy):
    """Earliest due date first; machine by soonest completion estimate."""

    name = "edf"

    def select(self, state, mask):
        pairs = self._valid_pairs(state, mask)
        if not pairs:
            return IDLE
        def key(pair):
            job = state.jobs[pair[0]]
            machine = state.machines[pair[1]]
            setup, reconf, proc = state.assignment_cost(job, machine)
            finish = max(machine.busy_until, state.clock) + setup + reconf + proc
            return (job.due_date, finish, pair[0], pair[1])
        job_id, machine_id = min(pairs, key=key)
        return action_index(state.job_view.index(job_id), machine_id,
                            state.n_machines)


class RandomPolicy(HeuristicPolicy):
    """Uniform over valid pairs, driven by an owned RNG."""

    name = "random"

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)

    def select(self, state, mask):
        valid = np.flatnonzero(mask[:-1])
        if len(valid) == 0:
            return IDLE
        return int(valid[self.rng.integers(len(valid))])


class FIFOPolicy(HeuristicPolicy):
    """Oldest arrival first; machine by earliest availability."""

    name = "fifo"

    def select(self, state, mask):
        pairs = self._valid_pairs(state, mask)
        if not pairs:
            return IDLE
        def key(pair):
            job = state.jobs[pair[0]]
            machine = state.machines[pair[1]]
            return (job.arrival_time, job.id, machine.busy_until, machine.id)
        job_id, machine_id = min(pairs, key=key)
        return action_index(state.job_view.index(job_id), machine_id,
                            state.n_machines)


class EarliestAvailablePolicy(HeuristicPolicy):
    """Allocation rule used when negotiation is switched off.

    Greedy cost minimizer: for the most urgent assignable job, pick the
    machine that finishes it soonest; configuration swaps only happen when
    no in-configuration machine is free.  No bids are constructed.
    """

    name = "earliest"

    def select(self, state, mask):
        pairs = self._valid_pairs(state, mask)
        if not pairs:
            return IDLE
        def key(pair):
            job = state.jobs[pair[0]]
            machine = state.machines[pair[1]]
            setup, reconf, proc = state.assignment_cost(job, machine)
            finish = max(machine.busy_until, state.clock) + setup + reconf + proc
            return (job.ready_time, job.id, finish, machine.id)
        job_id, machine_id = min(pairs, key=key)
        return action_index(state.job_view.index(job_id), machine_id,
                            state.n_machines)


def make_policy(kind: str, seed=0) -> HeuristicPolicy:
    table = {
        "edf": EDFPolicy,
        "fifo": FIFOPolicy,
        "earliest": EarliestAvailablePolicy,
    }
    if kind == "random":
        return RandomPolicy(seed)
    if kind in table:
        return table[kind]()
    raise ValueError(f"unknown heuristic {kind!r}")


def rollout(state: SystemState, policy: HeuristicPolicy, max_steps=1_000_000):
    """Drive an episode to completion; returns (metrics, total_reward, steps)."""
    total = 0.0
    steps = 0
    while not state.done and steps < max_steps:
        _, mask = state.feasible_actions()
        action = policy.select(state, mask)
        _, reward, _ = state.step(action)
        total += reward
        steps += 1
    return state.finalize_metrics(), total, steps
