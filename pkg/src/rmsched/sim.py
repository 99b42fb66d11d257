"""Event-driven job-shop simulator with machine reconfiguration.

The shop runs on a continuous double-precision clock.  A decision step either
assigns one (job, machine) pair at the current instant or idles, which
advances the clock to the next event (an operation finishing, a job arriving,
or a scheduled breakdown).  Machines own a native capability set and a
reconfigurable one; serving a process outside the current configuration swaps
the configuration and charges the machine's reconfiguration interval on top
of its fixed setup time.

Action encoding is shared with every policy in the package: index
``slot * n_machines + machine`` pairs view slot ``slot`` with a machine, and
the last index is Idle.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import ScenarioConfig, MachineSpec


class SimError(Exception):
    pass


class InfeasibleAction(SimError):
    """Action violates availability, capability, or horizon constraints."""


class ClockOverflow(SimError):
    """step() called on a finished episode."""


class UnknownMachine(SimError):
    pass


class EpisodeNotDone(SimError):
    pass


PENDING = "pending"
IN_PROGRESS = "in_progress"
COMPLETED = "completed"
FAILED = "failed"

IDLE = None  # sentinel action

EVENT_COLUMNS = ("time", "event_kind", "job_id", "machine_id", "process_id", "duration", "reconfig_flag")


@dataclass
class Job:
    id: int
    process_sequence: list
    processing_times: list
    priority: int
    due_date: float
    arrival_time: float
    status: str = PENDING
    step_index: int = 0
    ready_time: float = 0.0         # instant the job (re-)entered the pending pool
    completion_time: Optional[float] = None
    served_time: float = 0.0        # machine-occupied time rendered to this job so far

    @property
    def next_process(self) -> Optional[int]:
        if self.step_index >= len(self.process_sequence):
            return None
        return self.process_sequence[self.step_index]

    @property
    def next_duration(self) -> Optional[float]:
        if self.step_index >= len(self.processing_times):
            return None
        return self.processing_times[self.step_index]

    @property
    def remaining_work(self) -> float:
        return float(sum(self.processing_times[self.step_index:]))


@dataclass
class Machine:
    id: int
    native: frozenset
    reconfigurable: frozenset
    setup_time: float
    reconfig_time: float
    flexibility: float
    reliability: float
    efficiency: float = 1.0
    current_config: frozenset = None
    broken: bool = False
    busy_until: float = 0.0
    busy_time_accum: float = 0.0          # rendered processing time only
    setup_time_accum: float = 0.0
    reconfig_time_accum: float = 0.0
    reconfig_count: int = 0
    current_job: Optional[int] = None
    # in-flight op bookkeeping: (job_id, process, start, setup, reconfig, proc_duration)
    _op: Optional[tuple] = None

    def __post_init__(self):
        if self.current_config is None:
            self.current_config = self.native

    def capability(self, reconfiguration_enabled: bool) -> frozenset:
        if reconfiguration_enabled:
            return self.native | self.reconfigurable
        return self.native

    def available(self, clock: float) -> bool:
        return (not self.broken) and self.busy_until <= clock

    def reconfig_needed(self, process: int) -> bool:
        return process not in self.current_config

    def utilization(self, elapsed: float) -> float:
        if elapsed <= 0:
            return 0.0
        return self.busy_time_accum / elapsed


@dataclass
class RewardSnapshot:
    """Cheap accounting snapshot taken before/after a step for reward shaping."""

    clock: float
    ops_done: int                  # operations committed (booked at assignment)
    jobs_done_weighted: float      # sum of priority/5 over committed completions
    jobs_ontime_weighted: float    # same, restricted to on-time completions
    tardiness_to_date: float       # priority-weighted lateness committed so far
    overhead_time: float           # setup + reconfiguration charged so far
    idle_time: float               # summed idle machine-time so far
    work_committed: float = 0.0    # remaining-work mass of jobs given service


@dataclass
class RewardShaping:
    """Weights and scales for the dense step reward (artifact plumbing)."""

    op_bonus: float = 0.4
    job_bonus: float = 1.5
    ontime_bonus: float = 1.0
    # overhead and idle both burn machine capacity, so they are charged at
    # the same per-machine-time-unit rate; skewing one teaches the agent to
    # trade the wrong resource
    overhead_weight: float = 1.0
    overhead_scale: float = 5.0
    tardiness_weight: float = 1.0
    tardiness_scale: float = 200.0
    idle_weight: float = 1.0
    idle_scale: float = 5.0
    # preference for serving the job with the most work left; long jobs
    # started late are what stretch the tail of the schedule
    work_bonus: float = 1.0
    work_scale: float = 50.0


@dataclass
class EpisodeMetrics:
    makespan: float
    total_tardiness: float
    total_setup_time: float        # per-assignment setup + reconfiguration intervals
    total_reconfig_time: float     # reconfiguration intervals alone
    avg_utilization: float
    total_wait_time: float
    idle_penalty: float            # sum over machines of (1 - utilization)^2
    reconfig_count: int
    completion_rate: float
    objective: float


def compute_objective(metrics: EpisodeMetrics, weights, utilization_term: str = "wait") -> float:
    """Weighted scalar objective over makespan, tardiness, setup, and a fourth term.

    The fourth term is total wait time by default; ``squared_idle`` switches it
    to the summed squared idle fractions of the machines.
    """
    if len(weights) != 4:
        raise ValueError("weights must have 4 entries")
    if any(w < 0 for w in weights):
        raise ValueError(f"objective weights must be >= 0, got {tuple(weights)}")
    a, b, g, d = (float(w) for w in weights)
    if utilization_term == "wait":
        fourth = metrics.total_wait_time
    elif utilization_term == "squared_idle":
        fourth = metrics.idle_penalty
    else:
        raise ValueError(f"unknown utilization_term {utilization_term!r}")
    return (a * metrics.makespan + b * metrics.total_tardiness
            + g * metrics.total_setup_time + d * fourth)


def compute_step_reward(before, after, clip=(-10.0, 10.0), shaping: RewardShaping = None) -> float:
    """Dense shaped reward between two accounting snapshots, clipped to ``clip``.

    Progress (operations finished, jobs finished, on-time finishes weighted by
    priority) earns positive terms; setup/reconfiguration overhead, accrued
    weighted tardiness, and idle machine-time charge negative ones.  A no-op
    transition scores exactly zero.
    """
    if shaping is None:
        shaping = RewardShaping()
    b = before.reward_snapshot() if hasattr(before, "reward_snapshot") else before
    a = after.reward_snapshot() if hasattr(after, "reward_snapshot") else after
    r = shaping.op_bonus * (a.ops_done - b.ops_done)
    r += shaping.job_bonus * (a.jobs_done_weighted - b.jobs_done_weighted)
    r += shaping.ontime_bonus * (a.jobs_ontime_weighted - b.jobs_ontime_weighted)
    r += shaping.work_bonus * (a.work_committed - b.work_committed) / shaping.work_scale
    r -= shaping.overhead_weight * (a.overhead_time - b.overhead_time) / shaping.overhead_scale
    r -= shaping.tardiness_weight * (a.tardiness_to_date - b.tardiness_to_date) / shaping.tardiness_scale
    r -= shaping.idle_weight * (a.idle_time - b.idle_time) / shaping.idle_scale
    lo, hi = clip
    return float(min(hi, max(lo, r)))


def action_index(slot: int, machine: int, n_machines: int) -> int:
    return slot * n_machines + machine


def idle_index(view_size: int, n_machines: int) -> int:
    return view_size * n_machines


def decode_action(index: int, view_size: int, n_machines: int):
    """Map an action index back to (slot, machine), or None for Idle."""
    if index == idle_index(view_size, n_machines):
        return None
    if not (0 <= index < view_size * n_machines):
        raise InfeasibleAction(f"action index {index} outside 0..{view_size * n_machines}")
    return divmod(index, n_machines)


class SystemState:
    """Full shop state plus the event log. Mutated in place by ``step``."""

    def __init__(self, config: ScenarioConfig, seed: int):
        config.validate()
        self.config = config
        self.seed = seed
        self.clock = 0.0
        self.horizon = float(config.horizon)
        machine_seed = config.machine_seed if config.machine_seed is not None else seed
        self.machines = _build_machines(config, np.random.default_rng([int(machine_seed) & 0x7FFFFFFF, 0]))
        self.jobs = _build_jobs(config, np.random.default_rng([int(seed) & 0x7FFFFFFF, 1]))
        self.events = []
        self._breakdown_schedule = sorted(
            [(float(t), int(m)) for m, t in config.breakdowns])
        # accounting for reward snapshots; counters credit at assignment time
        # (completion is deterministic once scheduled) so the scheduling action
        # itself carries the reward, not the wait that follows it
        self._ops_done = 0
        self._jobs_done_weighted = 0.0
        self._jobs_ontime_weighted = 0.0
        self._tardiness_accum = 0.0
        self._work_committed = 0.0
        self._idle_time = 0.0
        self._overhead_committed = 0.0   # setup + reconfig charged at assignment
        self._horizon_charged = False
        self._done = False
        for job in self.jobs:
            if job.arrival_time > 0:
                self._log(job.arrival_time, "arrival", job_id=job.id)
        self._process_events_at(0.0)
        self._mark_unserviceable()
        self._check_done()

    # ------------------------------------------------------------------ views

    @property
    def n_machines(self) -> int:
        return len(self.machines)

    @property
    def view_size(self) -> int:
        return self.config.view_size

    @property
    def action_count(self) -> int:
        return self.view_size * self.n_machines + 1

    @property
    def done(self) -> bool:
        return self._done

    @property
    def job_view(self) -> list:
        """Ids of the first ``view_size`` pending, arrived jobs by (ready, id)."""
        ready = [j for j in self.jobs if j.status == PENDING and j.ready_time <= self.clock]
        ready.sort(key=lambda j: (j.ready_time, j.id))
        return [j.id for j in ready[: self.view_size]]

    def reward_snapshot(self) -> RewardSnapshot:
        return RewardSnapshot(
            clock=self.clock,
            ops_done=self._ops_done,
            jobs_done_weighted=self._jobs_done_weighted,
            jobs_ontime_weighted=self._jobs_ontime_weighted,
            tardiness_to_date=self._tardiness_accum,
            overhead_time=self._overhead_committed,
            idle_time=self._idle_time,
            work_committed=self._work_committed,
        )

    # --------------------------------------------------------------- feasibility

    def serviceable(self, process: int) -> bool:
        """True when some alive machine can ever perform ``process`` under the toggles."""
        for m in self.machines:
            if not m.broken and process in m.capability(self.config.reconfiguration):
                return True
        return False

    def assignment_cost(self, job: Job, machine: Machine):
        """(setup, reconfig, processing) durations the assignment would incur."""
        setup = machine.setup_time
        reconf = machine.reconfig_time if machine.reconfig_needed(job.next_process) else 0.0
        proc = job.next_duration / machine.efficiency
        return setup, reconf, proc

    def _pair_feasible(self, job: Job, machine: Machine) -> bool:
        if job.status != PENDING or job.ready_time > self.clock:
            return False
        if not machine.available(self.clock):
            return False
        p = job.next_process
        if p is None or p not in machine.capability(self.config.reconfiguration):
            return False
        setup, reconf, proc = self.assignment_cost(job, machine)
        # remaining-horizon feasibility: the op itself must fit before the horizon
        return self.horizon - self.clock - proc - reconf >= 0

    def feasible_actions(self):
        """(pairs, mask): feasible (job_id, machine_id) pairs plus the action mask.

        ``mask[i]`` is True when action index ``i`` may be taken; the Idle
        index is always valid.
        """
        mask = np.zeros(self.action_count, dtype=bool)
        mask[-1] = True
        pairs = []
        if self._done:
            return pairs, mask
        view = self.job_view
        for slot, job_id in enumerate(view):
            job = self.jobs[job_id]
            for machine in self.machines:
                if self._pair_feasible(job, machine):
                    mask[action_index(slot, machine.id, self.n_machines)] = True
                    pairs.append((job_id, machine.id))
        return pairs, mask

    # --------------------------------------------------------------------- step

    def step(self, action):
        """Apply one action. Returns (self, reward, done).

        ``action`` is either None (Idle), a (job_id, machine_id) pair, or an
        integer action index in the shared encoding.
        """
        if self._done:
            raise ClockOverflow(f"step() on a finished episode at clock {self.clock}")
        before = self.reward_snapshot()
        if isinstance(action, (int, np.integer)):
            decoded = decode_action(int(action), self.view_size, self.n_machines)
            if decoded is None:
                action = IDLE
            else:
                slot, machine_id = decoded
                view = self.job_view
                if slot >= len(view):
                    raise InfeasibleAction(f"view slot {slot} is empty")
                action = (view[slot], machine_id)
        if action is IDLE:
            self._advance_to_next_event()
        else:
            job_id, machine_id = action
            self._assign(int(job_id), int(machine_id))
        self._check_done()
        reward = compute_step_reward(before, self.reward_snapshot(), self.config.reward_clip)
        return self, reward, self._done

    def _assign(self, job_id: int, machine_id: int) -> None:
        if not (0 <= machine_id < self.n_machines):
            raise UnknownMachine(f"machine {machine_id} does not exist")
        if not (0 <= job_id < len(self.jobs)):
            raise InfeasibleAction(f"job {job_id} does not exist")
        job = self.jobs[job_id]
        machine = self.machines[machine_id]
        if job.status != PENDING:
            raise InfeasibleAction(f"job {job_id} is {job.status}, not pending")
        if job.ready_time > self.clock:
            raise InfeasibleAction(f"job {job_id} not arrived yet (ready {job.ready_time})")
        if machine.broken:
            raise InfeasibleAction(f"machine {machine_id} is broken")
        if not machine.available(self.clock):
            raise InfeasibleAction(f"machine {machine_id} busy until {machine.busy_until}")
        p = job.next_process
        if p not in machine.capability(self.config.reconfiguration):
            raise InfeasibleAction(f"machine {machine_id} cannot perform process {p}")
        setup, reconf, proc = self.assignment_cost(job, machine)
        if self.horizon - self.clock - proc - reconf < 0:
            raise InfeasibleAction("operation does not fit in the remaining horizon")

        if reconf > 0.0:
            # swap to whichever capability set contains the requested process
            machine.current_config = machine.native if p in machine.native else machine.reconfigurable
            machine.reconfig_count += 1
            machine.reconfig_time_accum += reconf
            self._log(self.clock + setup, "reconfig", machine_id=machine_id,
                      process_id=p, duration=reconf, reconfig_flag=1)
        machine.busy_until = self.clock + setup + reconf + proc
        machine.current_job = job_id
        machine._op = (job_id, p, self.clock, setup, reconf, proc)
        self._overhead_committed += setup + reconf
        self._credit_op(job, machine.busy_until, sign=1.0)
        job.status = IN_PROGRESS
        self._log(self.clock, "assign", job_id=job_id, machine_id=machine_id,
                  process_id=p, duration=setup + reconf + proc,
                  reconfig_flag=1 if reconf > 0 else 0)

    def _credit_op(self, job: Job, finish: float, sign: float) -> None:
        """Book reward counters for an operation scheduled to end at ``finish``.

        Called with sign=+1 at assignment (the outcome is deterministic from
        there) and sign=-1 when a breakdown voids the in-flight operation.
        """
        self._ops_done += int(sign)
        self._work_committed += sign * job.remaining_work
        if job.step_index + 1 >= len(job.process_sequence):
            w = job.priority / 5.0
            self._jobs_done_weighted += sign * w
            if finish <= job.due_date:
                self._jobs_ontime_weighted += sign * w
            self._tardiness_accum += sign * job.priority * max(0.0, finish - job.due_date)

    def _advance_to_next_event(self) -> None:
        candidates = []
        for m in self.machines:
            if m.current_job is not None and not m.broken and m.busy_until > self.clock:
                candidates.append(m.busy_until)
        for j in self.jobs:
            if j.status == PENDING and j.ready_time > self.clock:
                candidates.append(j.ready_time)
        for t, _m in self._breakdown_schedule:
            if t > self.clock:
                candidates.append(t)
        target = min(candidates) if candidates else self.horizon
        target = min(target, self.horizon)
        if target <= self.clock:
            # nothing left to wait for at this instant; a zero-length no-op
            return
        self._accrue_idle(self.clock, target)
        self._process_events_at(target)
        self.clock = target

    def _accrue_idle(self, t0: float, t1: float) -> None:
        n_idle = sum(1 for m in self.machines
                     if not m.broken and (m.current_job is None or m.busy_until <= t0))
        self._idle_time += n_idle * (t1 - t0)

    def _process_events_at(self, target: float) -> None:
        """Apply, in chronological order, every event with time <= target."""
        while True:
            next_time = None
            kind = None
            payload = None
            if self._breakdown_schedule and self._breakdown_schedule[0][0] <= target:
                next_time, payload = self._breakdown_schedule[0][0], self._breakdown_schedule[0][1]
                kind = "breakdown"
            for m in self.machines:
                if m.current_job is not None and not m.broken and m.busy_until <= target:
                    if next_time is None or m.busy_until < next_time:
                        next_time, kind, payload = m.busy_until, "release", m.id
            if kind is None:
                break
            if kind == "breakdown":
                self._breakdown_schedule.pop(0)
                self._apply_breakdown(payload, next_time)
            else:
                self._release(self.machines[payload])

    def _release(self, machine: Machine) -> None:
        job_id, p, start, setup, reconf, proc = machine._op
        job = self.jobs[job_id]
        t = machine.busy_until
        machine.busy_time_accum += proc
        machine.setup_time_accum += setup
        machine.current_job = None
        machine._op = None
        job.served_time += setup + reconf + proc
        job.step_index += 1
        self._log(t, "op_complete", job_id=job_id, machine_id=machine.id,
                  process_id=p, duration=proc)
        if job.step_index >= len(job.process_sequence):
            job.status = COMPLETED
            job.completion_time = t
            self._log(t, "job_complete", job_id=job_id, machine_id=machine.id)
        else:
            job.status = PENDING
            job.ready_time = t
            if not self.serviceable(job.next_process):
                self._fail_job(job, t)

    def _apply_breakdown(self, machine_id: int, at_time: float) -> None:
        machine = self.machines[machine_id]
        if machine.broken:
            return
        machine.broken = True
        self._log(at_time, "breakdown", machine_id=machine_id)
        if machine.current_job is not None:
            # in-flight operation is lost; the job re-queues at the same step
            # and the reward credit booked at assignment is taken back
            job = self.jobs[machine.current_job]
            self._credit_op(job, machine.busy_until, sign=-1.0)
            job.status = PENDING
            job.ready_time = at_time
            machine.current_job = None
            machine._op = None
            machine.busy_until = at_time
        self._mark_unserviceable(at_time)

    def _fail_job(self, job: Job, t: float) -> None:
        job.status = FAILED
        # the job will sit unfinished until the horizon: charge that now
        self._tardiness_accum += job.priority * max(0.0, self.horizon - job.due_date)
        self._log(t, "job_failed", job_id=job.id, process_id=job.next_process)

    def _mark_unserviceable(self, at_time: float = None) -> None:
        t = self.clock if at_time is None else at_time
        cache = {}
        for job in self.jobs:
            if job.status != PENDING:
                continue
            p = job.next_process
            if p not in cache:
                cache[p] = self.serviceable(p)
            if not cache[p]:
                self._fail_job(job, t)

    def inject_breakdown(self, machine_id: int, at_time: float) -> None:
        """Break a machine at ``at_time`` (immediately when already past)."""
        if not (0 <= machine_id < self.n_machines):
            raise UnknownMachine(f"machine {machine_id} does not exist")
        if at_time <= self.clock:
            self._apply_breakdown(machine_id, self.clock)
            self._check_done()
        else:
            self._breakdown_schedule.append((float(at_time), int(machine_id)))
            self._breakdown_schedule.sort()

    def _check_done(self) -> None:
        if self.clock >= self.horizon:
            if not self._horizon_charged:
                # jobs still waiting when time runs out accrue full tardiness
                self._horizon_charged = True
                for j in self.jobs:
                    if j.status == PENDING:
                        self._tardiness_accum += j.priority * max(
                            0.0, self.horizon - j.due_date)
            self._done = True
            return
        open_jobs = any(j.status in (PENDING, IN_PROGRESS) for j in self.jobs)
        self._done = not open_jobs

    # ------------------------------------------------------------------ metrics

    def finalize_metrics(self) -> EpisodeMetrics:
        if not self._done:
            raise EpisodeNotDone("finalize_metrics() requires a finished episode")
        completed = [j for j in self.jobs if j.status == COMPLETED]
        makespan = max((j.completion_time for j in completed), default=self.horizon)
        tardiness = 0.0
        wait = 0.0
        for j in self.jobs:
            end = j.completion_time if j.completion_time is not None else self.horizon
            tardiness += j.priority * max(0.0, end - j.due_date)
            served = j.served_time
            if j.status == IN_PROGRESS:
                served += self.horizon - max(m._op[2] for m in self.machines
                                             if m.current_job == j.id)
            wait += max(0.0, end - j.arrival_time - served)
        elapsed = max(self.clock, 1e-9)
        utils = [m.utilization(elapsed) for m in self.machines]
        setup_total = sum(m.setup_time_accum for m in self.machines)
        reconf_total = sum(m.reconfig_time_accum for m in self.machines)
        metrics = EpisodeMetrics(
            makespan=float(makespan),
            total_tardiness=float(tardiness),
            total_setup_time=float(setup_total + reconf_total),
            total_reconfig_time=float(reconf_total),
            avg_utilization=float(np.mean(utils)),
            total_wait_time=float(wait),
            idle_penalty=float(sum((1.0 - u) ** 2 for u in utils)),
            reconfig_count=int(sum(m.reconfig_count for m in self.machines)),
            completion_rate=len(completed) / len(self.jobs),
            objective=0.0,
        )
        metrics.objective = compute_objective(metrics, self.config.weights,
                                              self.config.utilization_term)
        return metrics

    # ---------------------------------------------------------------- event log

    def _log(self, time, kind, job_id=None, machine_id=None, process_id=None,
             duration=None, reconfig_flag=0):
        self.events.append((float(time), kind,
                            "" if job_id is None else int(job_id),
                            "" if machine_id is None else int(machine_id),
                            "" if process_id is None else int(process_id),
                            "" if duration is None else float(duration),
                            int(reconfig_flag)))

    def export_event_log(self, path: str) -> None:
        rows = sorted(self.events, key=lambda e: (e[0], _KIND_ORDER.get(e[1], 9), e[2] or 0))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(EVENT_COLUMNS)
            for row in rows:
                writer.writerow([repr(row[0]), row[1], row[2], row[3], row[4],
                                 repr(row[5]) if row[5] != "" else "", row[6]])


_KIND_ORDER = {"breakdown": 0, "arrival": 1, "reconfig": 2, "assign": 3,
               "op_complete": 4, "job_complete": 5, "job_failed": 6}


def new_scenario(config: ScenarioConfig, seed: int) -> SystemState:
    """Build a fresh shop from (config, seed). Deterministic."""
    return SystemState(config, seed)


def feasible_actions(state: SystemState):
    return state.feasible_actions()


def step(state: SystemState, action):
    return state.step(action)


def inject_breakdown(state: SystemState, machine_id: int, at_time: float) -> None:
    state.inject_breakdown(machine_id, at_time)


def finalize_metrics(state: SystemState) -> EpisodeMetrics:
    return state.finalize_metrics()


# ----------------------------------------------------------------- generators

def _build_machines(config: ScenarioConfig, rng: np.random.Generator):
    machines = []
    if config.machines is not None:
        for i, spec in enumerate(config.machines):
            reconfig_time = spec.reconfig_time
            if reconfig_time is None:
                reconfig_time = float(rng.uniform(*config.reconfig_range))
            machines.append(Machine(
                id=i,
                native=frozenset(int(p) for p in spec.native),
                reconfigurable=frozenset(int(p) for p in spec.reconfigurable),
                setup_time=float(spec.setup_time),
                reconfig_time=reconfig_time,
                flexibility=float(spec.flexibility),
                reliability=float(spec.reliability),
                efficiency=float(spec.efficiency),
            ))
        return machines

    m_count, p_count = config.machine_count, config.process_count
    natives = [set() for _ in range(m_count)]
    for p in range(p_count):
        natives[p % m_count].add(p)  # guarantee native coverage of every process
    for nat in natives:
        want = int(rng.integers(2, 4))
        pool = [p for p in range(p_count) if p not in nat]
        rng.shuffle(pool)
        while len(nat) < min(want, p_count) and pool:
            nat.add(pool.pop())
    for i in range(m_count):
        nat = natives[i]
        pool = [p for p in range(p_count) if p not in nat]
        rng.shuffle(pool)
        want = int(rng.integers(2, 4))
        reconf = set(pool[: min(want, len(pool))])
        machines.append(Machine(
            id=i,
            native=frozenset(nat),
            reconfigurable=frozenset(reconf),
            setup_time=float(rng.uniform(*config.setup_range)),
            reconfig_time=float(rng.uniform(*config.reconfig_range)),
            flexibility=float(rng.uniform(*config.flexibility_range)),
            reliability=float(rng.uniform(*config.reliability_range)),
            efficiency=float(config.efficiency),
        ))
    return machines


def _build_jobs(config: ScenarioConfig, rng: np.random.Generator):
    jobs = []
    if config.arrival_mode == "batch":
        arrivals = np.zeros(config.job_count)
    else:
        gaps = rng.exponential(1.0 / config.arrival_rate, size=config.job_count)
        arrivals = np.cumsum(gaps)
    lo_ops, hi_ops = config.ops_range
    for i in range(config.job_count):
        n_ops = int(rng.integers(lo_ops, hi_ops + 1))
        seq = [int(rng.integers(0, config.process_count)) for _ in range(n_ops)]
        times = [float(rng.uniform(*config.proc_time_range)) for _ in range(n_ops)]
        priority = int(rng.integers(config.priority_range[0], config.priority_range[1] + 1))
        arrival = float(arrivals[i])
        due = arrival + float(rng.uniform(*config.due_multiplier_range)) * sum(times)
        jobs.append(Job(
            id=i,
            process_sequence=seq,
            processing_times=times,
            priority=priority,
            due_date=due,
            arrival_time=arrival,
            ready_time=arrival,
        ))
    return jobs
