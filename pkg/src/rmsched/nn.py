"""Minimal differentiable-layer toolkit on numpy.

Every layer keeps explicit forward caches and implements its own backward
pass; parameters are ``Param`` holders carrying a value and an accumulated
gradient.  The toolkit covers exactly what the scheduling networks need:
dense and noisy-dense layers, scaled dot-product self-attention, the dueling
value/advantage combine, Huber/MSE losses, Adam, gradient clipping, Polyak
averaging, a plateau learning-rate scheduler, gradient-norm-balanced loss
weights, and a versioned JSON checkpoint format.
"""

from __future__ import annotations

import json
import math

import numpy as np

CHECKPOINT_SCHEMA = "rmsched-checkpoint/1"


class CheckpointError(Exception):
    pass


class CorruptCheckpoint(CheckpointError):
    """Checkpoint file is unreadable, truncated, or structurally wrong."""


class SchemaVersionMismatch(CheckpointError):
    """Checkpoint was written under a different schema or model signature."""


class Param:
    """A trainable 2-D array together with its accumulated gradient."""

    def __init__(self, value):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


def zero_grads(params):
    for p in params:
        p.zero_grad()


# ------------------------------------------------------------------ activations

def _act_forward(name, z):
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if name == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {name!r}")


def _act_backward(name, z, a, grad_a):
    if name == "identity":
        return grad_a
    if name == "relu":
        return grad_a * (z > 0.0)
    if name == "sigmoid":
        return grad_a * a * (1.0 - a)
    if name == "tanh":
        return grad_a * (1.0 - a * a)
    raise ValueError(f"unknown activation {name!r}")


# ----------------------------------------------------------------------- layers

class DenseLayer:
    """Fully connected layer: a = act(x W + b)."""

    def __init__(self, n_in, n_out, activation="relu", rng=None):
        rng = rng or np.random.default_rng()
        bound = math.sqrt(6.0 / (n_in + n_out))
        self.W = Param(rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.b = Param(np.zeros((1, n_out)))
        self.activation = activation
        self._cache = None

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        z = x @ self.W.value + self.b.value
        a = _act_forward(self.activation, z)
        self._cache = (x, z, a)
        return a

    def backward(self, grad_out):
        x, z, a = self._cache
        dz = _act_backward(self.activation, z, a, grad_out)
        self.W.grad += x.T @ dz
        self.b.grad += dz.sum(axis=0, keepdims=True)
        return dz @ self.W.value.T

    def params(self):
        return [self.W, self.b]


class NoisyLayer:
    """Dense layer with learnable per-parameter Gaussian perturbations.

    Effective weights are mu + sigma * eps with eps drawn independently per
    parameter; resampling cadence is the caller's business (once per training
    batch for the agents here).  ``zero_noise`` freezes the layer to its mean
    weights, which is what evaluation mode uses.
    """

    SIGMA_INIT = 0.017

    def __init__(self, n_in, n_out, activation="identity", rng=None, sigma_init=None):
        rng = rng or np.random.default_rng()
        bound = math.sqrt(3.0 / n_in)
        s0 = self.SIGMA_INIT if sigma_init is None else float(sigma_init)
        self.mu_W = Param(rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.sigma_W = Param(np.full((n_in, n_out), s0))
        self.mu_b = Param(np.zeros((1, n_out)))
        self.sigma_b = Param(np.full((1, n_out), s0))
        self.eps_W = np.zeros((n_in, n_out))
        self.eps_b = np.zeros((1, n_out))
        self.activation = activation
        self._cache = None

    def resample_noise(self, rng):
        self.eps_W = rng.standard_normal(self.eps_W.shape)
        self.eps_b = rng.standard_normal(self.eps_b.shape)

    def zero_noise(self):
        self.eps_W[...] = 0.0
        self.eps_b[...] = 0.0

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        W = self.mu_W.value + self.sigma_W.value * self.eps_W
        b = self.mu_b.value + self.sigma_b.value * self.eps_b
        z = x @ W + b
        a = _act_forward(self.activation, z)
        self._cache = (x, z, a, W)
        return a

    def backward(self, grad_out):
        x, z, a, W = self._cache
        dz = _act_backward(self.activation, z, a, grad_out)
        dW = x.T @ dz
        db = dz.sum(axis=0, keepdims=True)
        self.mu_W.grad += dW
        self.sigma_W.grad += dW * self.eps_W
        self.mu_b.grad += db
        self.sigma_b.grad += db * self.eps_b
        return dz @ W.T

    def clamp_sigma(self):
        np.maximum(self.sigma_W.value, 0.0, out=self.sigma_W.value)
        np.maximum(self.sigma_b.value, 0.0, out=self.sigma_b.value)

    def params(self):
        return [self.mu_W, self.sigma_W, self.mu_b, self.sigma_b]


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=axis, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(a, grad_a, axis=-1):
    """Backprop through y = softmax(z) given y (=a) and dL/dy."""
    inner = (grad_a * a).sum(axis=axis, keepdims=True)
    return a * (grad_a - inner)


class AttentionBlock:
    """Single-head scaled dot-product self-attention over token sequences.

    Input is (batch, tokens, d_model); output (batch, tokens, d_k).  Rows of
    the attention matrix are probability vectors.
    """

    def __init__(self, d_model, d_k, rng=None):
        rng = rng or np.random.default_rng()
        bound = math.sqrt(6.0 / (d_model + d_k))
        self.Wq = Param(rng.uniform(-bound, bound, size=(d_model, d_k)))
        self.Wk = Param(rng.uniform(-bound, bound, size=(d_model, d_k)))
        self.Wv = Param(rng.uniform(-bound, bound, size=(d_model, d_k)))
        self.d_k = d_k
        self._cache = None

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        q = x @ self.Wq.value
        k = x @ self.Wk.value
        v = x @ self.Wv.value
        scores = q @ k.transpose(0, 2, 1) / math.sqrt(self.d_k)
        attn = softmax(scores, axis=-1)
        out = attn @ v
        self._cache = (x, q, k, v, attn)
        return out

    def backward(self, grad_out):
        x, q, k, v, attn = self._cache
        d_attn = grad_out @ v.transpose(0, 2, 1)
        d_v = attn.transpose(0, 2, 1) @ grad_out
        d_scores = softmax_backward(attn, d_attn, axis=-1) / math.sqrt(self.d_k)
        d_q = d_scores @ k
        d_k_ = d_scores.transpose(0, 2, 1) @ q
        B, T, dm = x.shape
        x2 = x.reshape(B * T, dm)
        self.Wq.grad += x2.T @ d_q.reshape(B * T, -1)
        self.Wk.grad += x2.T @ d_k_.reshape(B * T, -1)
        self.Wv.grad += x2.T @ d_v.reshape(B * T, -1)
        grad_x = (d_q @ self.Wq.value.T + d_k_ @ self.Wk.value.T + d_v @ self.Wv.value.T)
        return grad_x

    def last_attention(self):
        return None if self._cache is None else self._cache[4]

    def params(self):
        return [self.Wq, self.Wk, self.Wv]


def dueling_combine(value, advantage):
    """Q = V + A - mean(A); identifiable aggregation of the two streams."""
    return value + advantage - advantage.mean(axis=1, keepdims=True)


def dueling_combine_backward(grad_q):
    """Returns (grad_value, grad_advantage) for the combine above."""
    grad_v = grad_q.sum(axis=1, keepdims=True)
    grad_a = grad_q - grad_q.mean(axis=1, keepdims=True)
    return grad_v, grad_a


# ----------------------------------------------------------------------- losses

def huber_loss(pred, target, kappa=1.0, weights=None):
    """Mean (optionally weighted) Huber loss; returns (loss, dL/dpred)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    err = pred - target
    abs_err = np.abs(err)
    quad = abs_err <= kappa
    elem = np.where(quad, 0.5 * err * err, kappa * (abs_err - 0.5 * kappa))
    delem = np.where(quad, err, kappa * np.sign(err))
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64)
        elem = elem * w
        delem = delem * w
    n = elem.size
    return float(elem.sum() / n), delem / n


def mse_loss(pred, target, weights=None):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    err = pred - target
    elem = err * err
    delem = 2.0 * err
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64)
        elem = elem * w
        delem = delem * w
    n = elem.size
    return float(elem.sum() / n), delem / n


# -------------------------------------------------------------------- optimizer

class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def zero_grad(self):
        zero_grads(self.params)


def clip_gradients(params, max_norm):
    """Scale all gradients so their global L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    total = 0.0
    for p in params:
        total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
    return norm


def soft_update(target_params, online_params, tau):
    """Polyak averaging: target <- (1 - tau) * target + tau * online."""
    if not (0.0 < tau <= 1.0):
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    for t, o in zip(target_params, online_params):
        t.value *= (1.0 - tau)
        t.value += tau * o.value


class PlateauScheduler:
    """Halve the learning rate when the tracked score stops improving.

    ``patience`` is measured in episodes; the caller reports (episode, score)
    pairs whenever an evaluation happens.
    """

    def __init__(self, optimizers, factor=0.5, patience=50, floor=1e-5):
        self.optimizers = optimizers if isinstance(optimizers, (list, tuple)) else [optimizers]
        self.factor = factor
        self.patience = patience
        self.floor = floor
        self.best = -math.inf
        self.best_episode = 0

    def report(self, episode, score):
        """Returns True when a decay was applied at this report."""
        if score > self.best:
            self.best = score
            self.best_episode = episode
            return False
        if episode - self.best_episode >= self.patience:
            for opt in self.optimizers:
                opt.lr = max(self.floor, opt.lr * self.factor)
            self.best_episode = episode
            return True
        return False


class LossWeights:
    """Gradient-norm-balancing weights for a multi-term loss.

    Disabled (the default) returns the configured constants.  Enabled, each
    term's weight is proportional to the inverse EMA of its gradient norm,
    renormalized so the weights keep the same total budget.
    """

    def __init__(self, base=(1.0, 0.0, 0.0), enabled=False, ema_decay=0.9):
        self.base = tuple(float(b) for b in base)
        self.enabled = enabled
        self.ema_decay = ema_decay
        self.ema = [0.0 for _ in self.base]
        self.seen = [False for _ in self.base]

    def update(self, grad_norms):
        for i, g in enumerate(grad_norms):
            if g is None:
                continue
            if not self.seen[i]:
                self.ema[i] = float(g)
                self.seen[i] = True
            else:
                self.ema[i] = self.ema_decay * self.ema[i] + (1.0 - self.ema_decay) * float(g)

    def weights(self):
        if not self.enabled:
            return self.base
        budget = sum(b for b in self.base)
        inv = [(1.0 / max(e, 1e-8)) if (s and b > 0) else 0.0
               for e, s, b in zip(self.ema, self.seen, self.base)]
        total = sum(inv)
        if total <= 0:
            return self.base
        return tuple(budget * x / total for x in inv)


def dynamic_loss_weights(tracker: LossWeights, grad_norms):
    """Feed fresh per-term gradient norms and return the current weights."""
    tracker.update(grad_norms)
    return tracker.weights()


# ------------------------------------------------------------------- checkpoint

def params_to_doc(named_params):
    """{name: Param} -> JSON-able {name: {shape, data}} with exact float64."""
    doc = {}
    for name, p in named_params.items():
        doc[name] = {"shape": list(p.value.shape), "data": p.value.ravel().tolist()}
    return doc


def params_from_doc(doc, named_params):
    """Restore values in-place; shapes must match exactly."""
    for name, p in named_params.items():
        if name not in doc:
            raise CorruptCheckpoint(f"checkpoint missing parameter {name!r}")
        entry = doc[name]
        shape = tuple(entry.get("shape", ()))
        if shape != p.value.shape:
            raise SchemaVersionMismatch(
                f"parameter {name!r} has shape {shape}, expected {p.value.shape}")
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != p.value.size:
            raise CorruptCheckpoint(f"parameter {name!r} has {data.size} values, "
                                    f"expected {p.value.size}")
        p.value[...] = data.reshape(p.value.shape)


def save_checkpoint(path, payload, signature):
    doc = {"schema": CHECKPOINT_SCHEMA, "signature": signature, "payload": payload}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path, expected_signature=None):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"cannot read checkpoint {path}: {exc}")
    if not isinstance(doc, dict) or "schema" not in doc or "payload" not in doc:
        raise CorruptCheckpoint(f"checkpoint {path} lacks schema/payload fields")
    if doc["schema"] != CHECKPOINT_SCHEMA:
        raise SchemaVersionMismatch(
            f"checkpoint schema {doc['schema']!r} != {CHECKPOINT_SCHEMA!r}")
    if expected_signature is not None and doc.get("signature") != expected_signature:
        raise SchemaVersionMismatch(
            f"checkpoint signature {doc.get('signature')!r} does not match "
            f"this model ({expected_signature!r})")
    return doc["payload"]
