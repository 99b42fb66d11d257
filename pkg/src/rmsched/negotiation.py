"""Auction-style job-machine allocation.

Jobs in the current view submit request vectors; feasible machines answer
with bids; a scoring network turns each bid into a scalar score and a
softmax over scores yields attention weights.  The highest-weight machine
wins the job.  Contention over a machine is settled by priority-weighted
urgency across up to ``max_rounds`` re-bidding rounds.

Both the scoring network and the shared machine bid head train from the
same records with a normalized-advantage policy gradient; the scheduler's
environment reward is the negotiation reward.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nn
from .sim import IDLE, PENDING, SystemState, action_index

# raw bid components live on very different scales (ratios vs durations);
# scores are computed on this fixed rescaling
BID_SCALE = np.array([1.0, 1.0, 1.0, 10.0, 15.0])

LOG_COLUMNS = ("job_id", "round", "bidder_ids", "alpha", "winner", "reward")


class NegotiationError(Exception):
    pass


class NoBids(NegotiationError):
    """Scoring was asked to rank an empty bid list."""


class BatchTooSmall(NegotiationError):
    """Advantage normalization needs at least two records."""


@dataclass
class JobRequest:
    """What a job broadcasts: [process id, time to deadline, priority, proc time]."""

    job_id: int
    x: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.shape != (4,):
            raise NegotiationError("request vector must have 4 entries")
        if self.x[3] <= 0:
            raise NegotiationError("required processing time must be positive")
        if not 1 <= self.x[2] <= 5:
            raise NegotiationError("priority out of range")


@dataclass
class Bid:
    """A machine's answer: [flexibility, reliability, utilization, setup cost, run cost]."""

    machine_id: int
    y: np.ndarray
    requires_reconfig: bool
    response: Optional[str] = None  # "accepted" / "rejected", set at selection

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)


@dataclass
class Proposal:
    """Outcome of conflict resolution for one job."""

    job_id: int
    machine_id: int
    bids: list
    alpha: np.ndarray
    winner_index: int
    round_placed: int


@dataclass
class NegotiationRecord:
    job_id: int
    bids: list
    alpha: np.ndarray
    winner_index: int
    reward: float
    rounds_used: int

    @property
    def winner_machine(self):
        return self.bids[self.winner_index].machine_id


def make_request(state: SystemState, job_id: int) -> JobRequest:
    job = state.jobs[job_id]
    return JobRequest(job_id=job_id, x=np.array([
        float(job.next_process),
        job.due_date - state.clock,
        float(job.priority),
        job.next_duration,
    ]))


def collect_bids(state: SystemState, request: JobRequest, allowed=None) -> list:
    """One bid per machine the simulator considers feasible for this job.

    ``allowed`` restricts the bidder pool (machines already taken in the
    current resolution round do not bid again).  An empty result means no
    machine can serve the job right now.
    """
    job = state.jobs[request.job_id]
    feasible = {m for j, m in state.feasible_actions()[0] if j == request.job_id}
    bids = []
    for machine in state.machines:
        if machine.id not in feasible:
            continue
        if allowed is not None and machine.id not in allowed:
            continue
        setup, reconf, proc = state.assignment_cost(job, machine)
        bids.append(Bid(
            machine_id=machine.id,
            y=np.array([
                machine.flexibility,
                machine.reliability,
                machine.utilization(state.clock),
                setup + reconf,
                proc,
            ]),
            requires_reconfig=reconf > 0.0,
        ))
    return bids


def urgency(state: SystemState, job_id: int, slack_floor: float) -> float:
    """Priority over remaining slack; late jobs saturate at the floor."""
    job = state.jobs[job_id]
    slack = job.due_date - state.clock - job.remaining_work
    return job.priority / max(slack, slack_floor)


def advantage_normalize(rewards, eps=1e-8):
    r = np.asarray(rewards, dtype=np.float64)
    return (r - r.mean()) / (r.std() + eps)


def entropy(alpha):
    a = np.asarray(alpha, dtype=np.float64)
    nz = a[a > 0]
    return float(-(nz * np.log(nz)).sum())


class ScoringNet:
    """Two-layer scorer h(y) in (0, 1); softmax over scores gives the weights."""

    def __init__(self, hidden=16, rng=None):
        rng = rng or np.random.default_rng()
        self.l1 = nn.DenseLayer(5, hidden, "relu", rng)
        self.l2 = nn.DenseLayer(hidden, 1, "sigmoid", rng)

    def forward(self, y_batch):
        return self.l2.forward(self.l1.forward(y_batch))

    def backward(self, grad_h):
        return self.l1.backward(self.l2.backward(grad_h))

    def params(self):
        return self.l1.params() + self.l2.params()

    def named_params(self):
        out = {}
        for i, p in enumerate(self.l1.params()):
            out[f"score.l1.{i}"] = p
        for i, p in enumerate(self.l2.params()):
            out[f"score.l2.{i}"] = p
        return out


class BidHead:
    """Shared bid-adjustment head with per-machine identity.

    hidden = relu(W1 y_n + b1 + E[m]);  y_hat = y_n + W2 hidden + b2.
    The residual operates on the rescaled bid, and each machine only
    differs by its embedding row.
    """

    def __init__(self, n_machines, hidden=16, rng=None):
        rng = rng or np.random.default_rng()
        self.l1 = nn.DenseLayer(5, hidden, "identity", rng)
        self.l2 = nn.DenseLayer(hidden, 5, "identity", rng)
        self.embed = nn.Param(rng.uniform(-0.1, 0.1, size=(n_machines, hidden)))
        self._cache = None

    def forward(self, y_n, machine_ids):
        z = self.l1.forward(y_n) + self.embed.value[machine_ids]
        hidden = np.maximum(z, 0.0)
        y_hat = y_n + self.l2.forward(hidden)
        self._cache = (machine_ids, z)
        return y_hat

    def backward(self, grad_yhat):
        machine_ids, z = self._cache
        dhidden = self.l2.backward(grad_yhat)
        dz = dhidden * (z > 0)
        np.add.at(self.embed.grad, machine_ids, dz)
        return grad_yhat + self.l1.backward(dz)

    def params(self):
        return self.l1.params() + self.l2.params() + [self.embed]

    def named_params(self):
        out = {}
        for i, p in enumerate(self.l1.params()):
            out[f"head.l1.{i}"] = p
        for i, p in enumerate(self.l2.params()):
            out[f"head.l2.{i}"] = p
        out["head.embed"] = self.embed
        return out


class NegotiationEngine:
    """Holds the scorer, the bid head, reputation, and the training loop."""

    def __init__(self, n_machines, seed=0, hidden=16, lr_scoring=1e-3,
                 lr_bidding=1e-3, entropy_coef_scoring=0.01,
                 entropy_coef_bidding=0.01, slack_floor=0.1, max_rounds=8,
                 train_every=32):
        rng = np.random.default_rng([seed, 3])
        self.n_machines = n_machines
        self.scoring = ScoringNet(hidden, rng)
        self.bid_head = BidHead(n_machines, hidden, rng)
        self.opt_scoring = nn.Adam(self.scoring.params(), lr=lr_scoring)
        self.opt_bidding = nn.Adam(self.bid_head.params(), lr=lr_bidding)
        self.entropy_coef_scoring = entropy_coef_scoring
        self.entropy_coef_bidding = entropy_coef_bidding
        self.slack_floor = slack_floor
        self.max_rounds = max_rounds
        self.train_every = train_every
        self.reputation = np.full(n_machines, 0.5)
        self.records = []          # full history, feeds the log
        self._pending = []         # waiting for the next training batch
        self.train_count = 0

    # ------------------------------------------------------------- scoring

    def scores(self, bids):
        y = np.stack([b.y for b in bids]) / BID_SCALE
        ids = np.array([b.machine_id for b in bids])
        y_hat = self.bid_head.forward(y, ids)
        return self.scoring.forward(y_hat)[:, 0]

    def score_and_select(self, bids):
        """(alpha, winner index).  Ties go to the lowest bid index."""
        if not bids:
            raise NoBids("no machine bid for this job")
        h = self.scores(bids)
        alpha = nn.softmax(h[None, :])[0]
        winner = int(np.argmax(alpha))
        for i, b in enumerate(bids):
            b.response = "accepted" if i == winner else "rejected"
        return alpha, winner

    # ------------------------------------------------------------ protocol

    def resolve_conflicts(self, state: SystemState, job_ids=None):
        """Run the bidding rounds for the current decision epoch.

        Returns (proposals, rounds_executed).  Proposals never share a
        machine or a job; jobs nobody bids for simply stay pending.
        """
        if job_ids is None:
            job_ids = list(state.job_view)
        unplaced = [j for j in job_ids if state.jobs[j].status == PENDING]
        free = {m.id for m in state.machines}
        proposals = []
        rounds = 0
        while unplaced and free and rounds < self.max_rounds:
            rounds += 1
            targets = {}
            still_unplaced = []
            for job_id in unplaced:
                bids = collect_bids(state, make_request(state, job_id), allowed=free)
                if not bids:
                    continue  # nothing can serve it; drop from this epoch
                alpha, widx = self.score_and_select(bids)
                targets.setdefault(bids[widx].machine_id, []).append(
                    (job_id, bids, alpha, widx))
                still_unplaced.append(job_id)
            if not targets:
                break
            for machine_id, contenders in targets.items():
                contenders.sort(
                    key=lambda c: (-urgency(state, c[0], self.slack_floor), c[0]))
                job_id, bids, alpha, widx = contenders[0]
                proposals.append(Proposal(job_id, machine_id, bids, alpha,
                                          widx, rounds))
                free.discard(machine_id)
                still_unplaced.remove(job_id)
            unplaced = still_unplaced
        return proposals, rounds

    # ------------------------------------------------------------- training

    def store(self, record: NegotiationRecord):
        self.records.append(record)
        self._pending.append(record)

    def maybe_train(self):
        """Train once per ``train_every`` stored records.  Returns losses or None."""
        if len(self._pending) < self.train_every:
            return None
        batch, self._pending = self._pending[:self.train_every], \
            self._pending[self.train_every:]
        return self.train_negotiation(batch)

    def train_negotiation(self, records):
        """One policy-gradient step on both networks; returns (L_N, L_M).

        The scorer and the bid head share the forward pass but can use
        different entropy coefficients, so gradients for each parameter
        group come from their own backward sweep.
        """
        if len(records) < 2:
            raise BatchTooSmall("need at least 2 records for advantage normalization")
        adv = advantage_normalize([r.reward for r in records])
        acc_scoring = {k: np.zeros_like(p.value)
                       for k, p in self.scoring.named_params().items()}
        acc_bidding = {k: np.zeros_like(p.value)
                       for k, p in self.bid_head.named_params().items()}
        all_params = self.scoring.params() + self.bid_head.params()
        loss_n = 0.0
        loss_m = 0.0
        n = len(records)
        for record, a in zip(records, adv):
            y = np.stack([b.y for b in record.bids]) / BID_SCALE
            ids = np.array([b.machine_id for b in record.bids])
            h = self.scoring.forward(self.bid_head.forward(y, ids))[:, 0]
            alpha = nn.softmax(h[None, :])[0]
            w = record.winner_index
            ent = entropy(alpha)
            pg = -a * np.log(alpha[w])
            loss_n += (pg - self.entropy_coef_scoring * ent) / n
            loss_m += (pg - self.entropy_coef_bidding * ent) / n

            for coef, net_acc, through_head in (
                    (self.entropy_coef_scoring, acc_scoring, False),
                    (self.entropy_coef_bidding, acc_bidding, True)):
                dalpha = coef * (np.log(alpha) + 1.0)  # entropy term
                dalpha[w] += -a / alpha[w]             # policy-gradient term
                dh = nn.softmax_backward(alpha[None, :], dalpha[None, :])
                nn.zero_grads(all_params)
                grad_yhat = self.scoring.backward(dh.T.reshape(-1, 1))
                if through_head:
                    self.bid_head.backward(grad_yhat)
                    for k, p in self.bid_head.named_params().items():
                        net_acc[k] += p.grad / n
                else:
                    for k, p in self.scoring.named_params().items():
                        net_acc[k] += p.grad / n
        for k, p in self.scoring.named_params().items():
            p.grad = acc_scoring[k]
        for k, p in self.bid_head.named_params().items():
            p.grad = acc_bidding[k]
        self.opt_scoring.step()
        self.opt_bidding.step()
        nn.zero_grads(all_params)
        self.train_count += 1
        return float(loss_n), float(loss_m)

    # ----------------------------------------------------------- reputation

    def update_reputation(self, machine_id, ontime, decay=0.99):
        self.reputation[machine_id] *= decay
        self.reputation[machine_id] += (1.0 - decay) * (1.0 if ontime else 0.0)

    # -------------------------------------------------------------- logging

    def export_log(self, path):
        import csv
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LOG_COLUMNS)
            for r in self.records:
                writer.writerow([
                    r.job_id,
                    r.rounds_used,
                    "|".join(str(b.machine_id) for b in r.bids),
                    "|".join(f"{a:.6f}" for a in r.alpha),
                    r.winner_machine,
                    repr(float(r.reward)),
                ])

    # ---------------------------------------------------------- persistence

    def named_params(self):
        out = dict(self.scoring.named_params())
        out.update(self.bid_head.named_params())
        return out

    def to_doc(self):
        return {
            "n_machines": self.n_machines,
            "params": nn.params_to_doc(self.named_params()),
            "reputation": list(self.reputation),
            "train_count": self.train_count,
        }

    def load_doc(self, doc):
        nn.params_from_doc(doc["params"], self.named_params())
        self.reputation = np.asarray(doc["reputation"], dtype=np.float64)
        self.train_count = int(doc.get("train_count", 0))


class NegotiationAllocator:
    """Schedules straight from auction outcomes, no value function.

    Applies the current conflict-resolution proposals one at a time
    (earliest round first); idles when nothing was placed.
    """

    name = "nego"

    def __init__(self, engine: NegotiationEngine):
        self.engine = engine

    def select(self, state: SystemState, mask):
        proposals, _ = self.engine.resolve_conflicts(state)
        view = state.job_view
        for p in sorted(proposals, key=lambda p: (p.round_placed, p.job_id)):
            idx = action_index(view.index(p.job_id), p.machine_id,
                               state.n_machines)
            if mask[idx]:
                return idx
        return IDLE
