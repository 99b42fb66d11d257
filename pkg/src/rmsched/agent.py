"""Value-based scheduling agent.

The observation is a flat vector: one segment per machine (status, current
configuration as a multi-hot over processes, normalized remaining busy time,
flexibility, reliability, utilization so far), one segment per job-view slot
(next-process one-hot, normalized remaining work, priority, slack), and two
global features (normalized clock, completed fraction).  The Q-network embeds
the machine segments as tokens, runs single-head self-attention over them,
concatenates the attended tokens with the job/global features, pushes the
result through the dense trunk, and splits into noisy dueling value and
advantage streams.  Action selection and bootstrapping are always masked:
an invalid action never wins an argmax.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np

from . import nn, sim
from .replay import PERBuffer, RunningNorm, Transition


class AgentError(Exception):
    pass


@dataclass
class AgentConfig:
    lr: float = 1e-4
    gamma: float = 0.99
    n_step: int = 3
    batch_size: int = 64
    tau: float = 0.005
    epsilon: float = 1.0
    epsilon_decay: float = 0.995
    epsilon_floor: float = 0.05
    hidden_dim: int = 128
    token_dim: int = 32
    head_hidden: int = 64
    buffer_capacity: int = 50_000
    per_alpha: float = 0.6
    per_beta: float = 0.4
    per_beta_steps: int = 40_000
    per_eps: float = 1e-3
    warmup: int = 1000
    grad_clip: float = 10.0
    loss: str = "huber"              # "huber" | "mse"
    huber_kappa: float = 1.0
    use_noisy: bool = True
    noisy_sigma: float = 0.017
    lambda_reg: float = 0.0
    dynamic_loss: bool = False
    obs_clip: float = 5.0
    seed: int = 0


class ObservationSpec:
    """Fixed-layout encoder from a simulator state to the flat feature vector."""

    def __init__(self, config):
        self.n_machines = config.n_machines
        self.view_size = config.view_size
        self.process_count = config.process_count
        self.horizon = float(config.horizon)
        self.machine_feats = self.process_count + 5
        self.job_feats = self.process_count + 3
        self.work_scale = float(config.ops_range[1] * config.proc_time_range[1])
        self.dim = (self.n_machines * self.machine_feats
                    + self.view_size * self.job_feats + 2)

    def descriptor(self) -> dict:
        return {"n_machines": self.n_machines, "view_size": self.view_size,
                "process_count": self.process_count, "horizon": self.horizon,
                "work_scale": self.work_scale, "dim": self.dim}

    @classmethod
    def from_descriptor(cls, doc: dict) -> "ObservationSpec":
        spec = cls.__new__(cls)
        spec.n_machines = int(doc["n_machines"])
        spec.view_size = int(doc["view_size"])
        spec.process_count = int(doc["process_count"])
        spec.horizon = float(doc["horizon"])
        spec.machine_feats = spec.process_count + 5
        spec.job_feats = spec.process_count + 3
        spec.work_scale = float(doc["work_scale"])
        spec.dim = (spec.n_machines * spec.machine_feats
                    + spec.view_size * spec.job_feats + 2)
        return spec

    def encode(self, state) -> np.ndarray:
        P = self.process_count
        out = np.zeros(self.dim, dtype=np.float64)
        o = 0
        clock = state.clock
        for m in state.machines:
            if m.broken:
                out[o] = 0.0
            elif m.busy_until > clock:
                out[o] = 0.5
            else:
                out[o] = 1.0
            for p in m.current_config:
                out[o + 1 + p] = 1.0
            out[o + 1 + P] = max(0.0, m.busy_until - clock) / self.horizon
            out[o + 2 + P] = m.flexibility
            out[o + 3 + P] = m.reliability
            out[o + 4 + P] = m.utilization(max(clock, 1e-9)) if clock > 0 else 0.0
            o += self.machine_feats
        view = state.job_view
        for slot in range(self.view_size):
            if slot < len(view):
                job = state.jobs[view[slot]]
                out[o + job.next_process] = 1.0
                out[o + P] = job.remaining_work / self.work_scale
                out[o + P + 1] = job.priority / 5.0
                out[o + P + 2] = (job.due_date - clock) / self.horizon
            o += self.job_feats
        out[o] = clock / self.horizon
        done_jobs = sum(1 for j in state.jobs if j.status == sim.COMPLETED)
        out[o + 1] = done_jobs / len(state.jobs)
        return out


class ActionSpace:
    """Shared (view slot, machine) pairing with a trailing Idle index."""

    def __init__(self, view_size: int, n_machines: int):
        self.view_size = view_size
        self.n_machines = n_machines
        self.size = view_size * n_machines + 1
        self.idle_index = view_size * n_machines

    def index(self, slot: int, machine: int) -> int:
        return sim.action_index(slot, machine, self.n_machines)

    def decode(self, index: int):
        return sim.decode_action(index, self.view_size, self.n_machines)

    def descriptor(self) -> dict:
        return {"view_size": self.view_size, "n_machines": self.n_machines}


class QNetwork:
    """Token attention over machine segments, dense trunk, dueling heads."""

    def __init__(self, obs_spec: ObservationSpec, n_actions: int,
                 cfg: AgentConfig, rng):
        self.spec = obs_spec
        self.n_actions = n_actions
        self.cfg = cfg
        M, F = obs_spec.n_machines, obs_spec.machine_feats
        self.machine_block = M * F
        rest = obs_spec.dim - self.machine_block
        dk, hid, hh = cfg.token_dim, cfg.hidden_dim, cfg.head_hidden
        self.embed = nn.DenseLayer(F, dk, activation="relu", rng=rng)
        self.attention = nn.AttentionBlock(dk, dk, rng=rng)
        self.fc1 = nn.DenseLayer(M * dk + rest, hid, activation="relu", rng=rng)
        self.fc2 = nn.DenseLayer(hid, hid, activation="relu", rng=rng)
        if cfg.use_noisy:
            mk = lambda i, o, act: nn.NoisyLayer(i, o, activation=act, rng=rng,
                                                 sigma_init=cfg.noisy_sigma)
        else:
            mk = lambda i, o, act: nn.DenseLayer(i, o, activation=act, rng=rng)
        self.value1 = mk(hid, hh, "relu")
        self.value2 = mk(hh, 1, "identity")
        self.adv1 = mk(hid, hh, "relu")
        self.adv2 = mk(hh, n_actions, "identity")
        self._cache_shapes = None

    def layers(self):
        return [self.embed, self.attention, self.fc1, self.fc2,
                self.value1, self.value2, self.adv1, self.adv2]

    def params(self):
        out = []
        for layer in self.layers():
            out.extend(layer.params())
        return out

    def named_params(self):
        names = ["embed", "attention", "fc1", "fc2", "value1", "value2", "adv1", "adv2"]
        out = {}
        for name, layer in zip(names, self.layers()):
            for i, p in enumerate(layer.params()):
                out[f"{name}.{i}"] = p
        return out

    def noisy_layers(self):
        return [l for l in self.layers() if isinstance(l, nn.NoisyLayer)]

    def resample_noise(self, rng):
        for l in self.noisy_layers():
            l.resample_noise(rng)

    def zero_noise(self):
        for l in self.noisy_layers():
            l.zero_noise()

    def forward(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        single = obs.ndim == 1
        if single:
            obs = obs[None, :]
        B = obs.shape[0]
        M, F = self.spec.n_machines, self.spec.machine_feats
        tokens = obs[:, : self.machine_block].reshape(B * M, F)
        rest = obs[:, self.machine_block:]
        emb = self.embed.forward(tokens).reshape(B, M, -1)
        att = self.attention.forward(emb)
        flat = att.reshape(B, -1)
        h = np.concatenate([flat, rest], axis=1)
        h = self.fc1.forward(h)
        h = self.fc2.forward(h)
        v = self.value2.forward(self.value1.forward(h))
        a = self.adv2.forward(self.adv1.forward(h))
        q = nn.dueling_combine(v, a)
        self._cache_shapes = (B, M, flat.shape[1], rest.shape[1])
        return q[0] if single else q

    def backward(self, grad_q) -> None:
        B, M, flat_dim, rest_dim = self._cache_shapes
        grad_q = np.asarray(grad_q, dtype=np.float64).reshape(B, -1)
        gv, ga = nn.dueling_combine_backward(grad_q)
        gh = self.value1.backward(self.value2.backward(gv))
        gh = gh + self.adv1.backward(self.adv2.backward(ga))
        gh = self.fc1.backward(self.fc2.backward(gh))
        g_flat = gh[:, :flat_dim]
        g_att = g_flat.reshape(B, M, -1)
        g_emb = self.attention.backward(g_att)
        self.embed.backward(g_emb.reshape(B * M, -1))


def compute_double_dqn_targets(returns, gamma_n, done, q_next_online,
                               q_next_target, boot_masks):
    """Bootstrapped targets: y = G + gamma^n * Q_target(s', argmax_a Q_online(s', a)).

    The argmax runs over the online network restricted to the valid actions at
    s'; terminal transitions keep y = G.  Ties resolve to the lowest index.
    """
    returns = np.asarray(returns, dtype=np.float64)
    gamma_n = np.asarray(gamma_n, dtype=np.float64)
    done = np.asarray(done, dtype=bool)
    qo = np.array(q_next_online, dtype=np.float64, copy=True)
    qt = np.asarray(q_next_target, dtype=np.float64)
    masks = np.asarray(boot_masks, dtype=bool)
    qo[~masks] = -np.inf
    best = np.argmax(qo, axis=1)
    boot = qt[np.arange(len(qt)), best]
    return returns + gamma_n * np.where(done, 0.0, boot), best


class EnhancedDQN:
    """Double/dueling/noisy DQN with prioritized replay and n-step returns."""

    def __init__(self, obs_spec: ObservationSpec, action_space: ActionSpace,
                 cfg: AgentConfig = None):
        self.cfg = cfg or AgentConfig()
        self.obs_spec = obs_spec
        self.action_space = action_space
        self.rng = np.random.default_rng(self.cfg.seed)
        init_rng = np.random.default_rng([self.cfg.seed, 7])
        self.online = QNetwork(obs_spec, action_space.size, self.cfg, init_rng)
        self.target = QNetwork(obs_spec, action_space.size, self.cfg,
                               np.random.default_rng([self.cfg.seed, 7]))
        # identical init rng stream => target starts as an exact copy
        self.normalizer = RunningNorm(obs_spec.dim, clip=self.cfg.obs_clip)
        self.buffer = PERBuffer(
            capacity=self.cfg.buffer_capacity, alpha=self.cfg.per_alpha,
            beta=self.cfg.per_beta, beta_steps=self.cfg.per_beta_steps,
            eps=self.cfg.per_eps, seed=self.cfg.seed + 1)
        self.optimizer = nn.Adam(self.online.params(), lr=self.cfg.lr)
        self.loss_weights = nn.LossWeights(
            base=(1.0, 0.0, self.cfg.lambda_reg), enabled=self.cfg.dynamic_loss)
        self.epsilon = self.cfg.epsilon
        self.learn_calls = 0

    # ----------------------------------------------------------------- acting

    def signature(self) -> str:
        d = self.obs_spec.descriptor()
        return (f"dqn|dim={d['dim']}|m={d['n_machines']}|v={d['view_size']}"
                f"|p={d['process_count']}|actions={self.action_space.size}"
                f"|hidden={self.cfg.hidden_dim}|token={self.cfg.token_dim}"
                f"|noisy={int(self.cfg.use_noisy)}")

    def masked_q(self, obs, mask, network=None) -> np.ndarray:
        net = network or self.online
        q = net.forward(obs)
        q = np.array(q, copy=True)
        q[~np.asarray(mask, dtype=bool)] = -np.inf
        return q

    def act(self, obs, mask, mode: str = "train") -> int:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise AgentError("action mask has no valid entries")
        if mode == "train":
            if self.rng.uniform() < self.epsilon:
                valid = np.flatnonzero(mask)
                return int(valid[self.rng.integers(len(valid))])
            self.online.resample_noise(self.rng)
            return int(np.argmax(self.masked_q(obs, mask)))
        if mode == "eval":
            self.online.zero_noise()
            return int(np.argmax(self.masked_q(obs, mask)))
        raise ValueError(f"unknown act mode {mode!r}")

    def end_episode(self) -> float:
        """Apply the per-episode epsilon decay; returns the new epsilon."""
        self.epsilon = max(self.cfg.epsilon_floor,
                           self.epsilon * self.cfg.epsilon_decay)
        return self.epsilon

    def remember(self, transition: Transition):
        self.buffer.push(transition)

    # ---------------------------------------------------------------- learning

    def ready(self) -> bool:
        return len(self.buffer) >= max(1, self.cfg.warmup)

    def learn_step(self):
        """One sampled gradient step. Returns stats, or None before warmup."""
        if not self.ready():
            return None
        batch, indices, weights = self.buffer.sample(self.cfg.batch_size)
        obs = np.stack([t.obs for t in batch]).astype(np.float64)
        actions = np.array([t.action for t in batch], dtype=np.int64)
        returns = np.array([t.n_step_return for t in batch])
        gamma_n = np.array([t.gamma_n for t in batch])
        done = np.array([t.done for t in batch], dtype=bool)
        boot_obs = np.stack([t.boot_obs for t in batch]).astype(np.float64)
        masks = np.stack([
            t.boot_mask if t.boot_mask is not None
            else np.ones(self.action_space.size, dtype=bool)
            for t in batch])

        self.online.resample_noise(self.rng)
        self.target.resample_noise(self.rng)
        q_next_online = self.online.forward(boot_obs)
        q_next_target = self.target.forward(boot_obs)
        targets, _ = compute_double_dqn_targets(
            returns, gamma_n, done, q_next_online, q_next_target, masks)

        q = self.online.forward(obs)
        pred = q[np.arange(len(batch)), actions]
        td_errors = pred - targets
        if self.cfg.loss == "huber":
            loss, dpred = nn.huber_loss(pred, targets, kappa=self.cfg.huber_kappa,
                                        weights=weights)
        elif self.cfg.loss == "mse":
            loss, dpred = nn.mse_loss(pred, targets, weights=weights)
        else:
            raise ValueError(f"unknown loss {self.cfg.loss!r}")
        if not np.isfinite(loss):
            raise AgentError(f"non-finite loss {loss} at learn step {self.learn_calls}")

        lam_q, _lam_u, lam_reg = self.loss_weights.weights()
        grad_q = np.zeros_like(q)
        grad_q[np.arange(len(batch)), actions] = dpred * lam_q
        self.optimizer.zero_grad()
        self.online.backward(grad_q)
        if lam_reg > 0.0:
            for p in self.online.params():
                p.grad += 2.0 * lam_reg * p.value
        grad_norm = nn.clip_gradients(self.online.params(), self.cfg.grad_clip)
        if self.cfg.dynamic_loss:
            nn.dynamic_loss_weights(self.loss_weights, (grad_norm, None, None))
        self.optimizer.step()
        for layer in self.online.noisy_layers():
            layer.clamp_sigma()
        nn.soft_update(self.target.params(), self.online.params(), self.cfg.tau)
        self.buffer.update_priorities(indices, np.abs(td_errors))
        self.learn_calls += 1
        return {
            "loss": float(loss),
            "td_errors": td_errors,
            "mean_abs_td": float(np.mean(np.abs(td_errors))),
            "grad_norm": float(grad_norm),
            "targets": targets,
            "indices": indices,
        }

    # -------------------------------------------------------------- checkpoint

    def snapshot(self) -> dict:
        """In-memory copy of everything greedy evaluation depends on."""
        return {
            "online": nn.params_to_doc(self.online.named_params()),
            "target": nn.params_to_doc(self.target.named_params()),
            "normalizer": self.normalizer.to_doc(),
            "epsilon": self.epsilon,
            "learn_calls": self.learn_calls,
        }

    def restore(self, snap: dict) -> None:
        nn.params_from_doc(snap["online"], self.online.named_params())
        nn.params_from_doc(snap["target"], self.target.named_params())
        self.normalizer = RunningNorm.from_doc(snap["normalizer"])
        self.epsilon = float(snap["epsilon"])
        self.learn_calls = int(snap["learn_calls"])

    def save(self, path: str):
        payload = {
            "config": asdict(self.cfg),
            "obs_spec": self.obs_spec.descriptor(),
            "action_space": self.action_space.descriptor(),
            "online": nn.params_to_doc(self.online.named_params()),
            "target": nn.params_to_doc(self.target.named_params()),
            "normalizer": self.normalizer.to_doc(),
            "epsilon": self.epsilon,
            "learn_calls": self.learn_calls,
        }
        nn.save_checkpoint(path, payload, signature=self.signature())

    @classmethod
    def load(cls, path: str, expected_obs_spec: ObservationSpec = None) -> "EnhancedDQN":
        payload = nn.load_checkpoint(path)
        try:
            cfg = AgentConfig(**payload["config"])
            spec = ObservationSpec.from_descriptor(payload["obs_spec"])
            aspace = ActionSpace(**payload["action_space"])
        except (KeyError, TypeError) as exc:
            raise nn.CorruptCheckpoint(f"checkpoint payload malformed: {exc}")
        agent = cls(spec, aspace, cfg)
        # re-read with the rebuilt signature so a tampered header still trips
        nn.load_checkpoint(path, expected_signature=agent.signature())
        if expected_obs_spec is not None and \
                expected_obs_spec.descriptor() != spec.descriptor():
            raise nn.SchemaVersionMismatch(
                f"checkpoint encodes {spec.descriptor()}, "
                f"expected {expected_obs_spec.descriptor()}")
        nn.params_from_doc(payload["online"], agent.online.named_params())
        nn.params_from_doc(payload["target"], agent.target.named_params())
        agent.normalizer = RunningNorm.from_doc(payload["normalizer"])
        agent.epsilon = float(payload.get("epsilon", agent.cfg.epsilon))
        agent.learn_calls = int(payload.get("learn_calls", 0))
        return agent
