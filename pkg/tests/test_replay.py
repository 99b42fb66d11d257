"""Replay stack: n-step folding oracle, prioritized sampling, normalization."""

import numpy as np
import pytest

from rmsched.replay import NStepAccumulator, PERBuffer, RunningNorm, SumTree, Transition


def _dummy_obs(tag):
    return np.array([float(tag)], dtype=np.float32)


def brute_force_nstep(rewards, n, gamma):
    """Independent re-derivation: for each t the discounted sum over the
    window min(n, T - t), bootstrapping from index t + window."""
    T = len(rewards)
    out = []
    for t in range(T):
        m = min(n, T - t)
        g = sum((gamma ** k) * rewards[t + k] for k in range(m))
        out.append((t, g, gamma ** m, t + m, t + m == T))
    return out


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_nstep_matches_brute_force(n):
    rng = np.random.default_rng(100 + n)
    gamma = 0.99
    for episode in range(25):
        T = int(rng.integers(1, 51))
        rewards = rng.standard_normal(T).tolist()
        acc = NStepAccumulator(n=n, gamma=gamma)
        emitted = []
        for t in range(T):
            done = t == T - 1
            emitted.extend(acc.push(_dummy_obs(t), action=t, reward=rewards[t],
                                    boot_obs=_dummy_obs(t + 1), boot_mask=None,
                                    done=done))
        assert len(acc) == 0
        expected = brute_force_nstep(rewards, n, gamma)
        assert len(emitted) == T
        for tr, (t, g, gn, boot, is_end) in zip(emitted, expected):
            assert tr.action == t
            assert abs(tr.n_step_return - g) < 1e-12
            assert abs(tr.gamma_n - gn) < 1e-12
            assert float(tr.obs[0]) == t
            assert float(tr.boot_obs[0]) == boot
            assert tr.done == is_end


def test_nstep_flush_without_terminal():
    acc = NStepAccumulator(n=3, gamma=0.5)
    for t in range(2):
        out = acc.push(_dummy_obs(t), t, 1.0, _dummy_obs(t + 1), None, done=False)
        assert out == []
    tail = acc.flush(boot_obs=_dummy_obs(99), boot_mask=None, terminal=False)
    assert [t.done for t in tail] == [False, False]
    assert abs(tail[0].n_step_return - 1.5) < 1e-12
    assert abs(tail[0].gamma_n - 0.25) < 1e-12
    assert float(tail[0].boot_obs[0]) == 99


def test_sumtree_consistency_under_updates():
    rng = np.random.default_rng(7)
    tree = SumTree(37)
    ref = np.zeros(37)
    for _ in range(2000):
        i = int(rng.integers(0, 37))
        v = float(rng.uniform(0, 5))
        tree.set(i, v)
        ref[i] = v
        assert abs(tree.total - ref.sum()) < 1e-9
    assert np.allclose(tree.leaves(37), ref, atol=1e-12)


def _make_buffer(priorities, alpha=0.6, eps=1e-12, seed=0, **kw):
    buf = PERBuffer(capacity=len(priorities), alpha=alpha, eps=eps, seed=seed, **kw)
    for i in range(len(priorities)):
        buf.push(Transition(_dummy_obs(i), i, 0.0, _dummy_obs(i), None, True, 1.0))
    buf.update_priorities(np.arange(len(priorities)), np.asarray(priorities))
    return buf


def test_sampling_distribution_tracks_priorities():
    rng = np.random.default_rng(13)
    priorities = rng.uniform(0.1, 2.0, size=16)
    buf = _make_buffer(priorities, alpha=0.6, eps=1e-12)
    expected = priorities ** 0.6
    expected = expected / expected.sum()
    assert np.allclose(buf.probabilities(), expected, atol=1e-9)
    counts = np.zeros(16)
    draws = 40_000
    for _ in range(draws // 1000):
        _, idx, _ = buf.sample(1000)
        np.add.at(counts, idx, 1)
    freq = counts / draws
    assert np.max(np.abs(freq - expected)) < 0.01


def test_importance_weights_exact_formula():
    priorities = np.array([0.5, 1.0, 2.0, 4.0, 0.25])
    buf = _make_buffer(priorities, alpha=0.6, eps=1e-12, beta=0.4, beta_steps=0, beta_end=0.4)
    batch, idx, w = buf.sample(64)
    probs = buf.probabilities()
    raw = (1.0 / (len(buf) * probs[idx])) ** 0.4
    assert np.allclose(w, raw / raw.max(), atol=1e-9)
    assert w.max() == pytest.approx(1.0)


def test_beta_anneals_linearly_and_monotonically():
    buf = _make_buffer(np.ones(8), beta=0.4, beta_end=1.0, beta_steps=10)
    seen = [buf.beta]
    for _ in range(15):
        buf.sample(4)
        seen.append(buf.beta)
    assert seen[0] == pytest.approx(0.4)
    assert seen[-1] == pytest.approx(1.0)
    assert all(b2 >= b1 for b1, b2 in zip(seen, seen[1:]))
    assert seen[5] == pytest.approx(0.4 + 0.6 * 0.5)


def test_raising_one_priority_raises_its_frequency():
    buf = _make_buffer(np.ones(10), alpha=0.6, eps=1e-12, seed=3)

    def freq_of(i, draws=20_000):
        counts = 0
        for _ in range(draws // 500):
            _, idx, _ = buf.sample(500)
            counts += int((idx == i).sum())
        return counts / draws

    before = freq_of(4)
    buf.update_priorities([4], [50.0])
    after = freq_of(4)
    assert after > before * 3


def test_fifo_eviction_keeps_tree_consistent():
    buf = PERBuffer(capacity=8, alpha=0.6, eps=1e-3, seed=1)
    for i in range(30):
        buf.push(Transition(_dummy_obs(i), i, 0.0, _dummy_obs(i), None, True, 1.0))
        leaves = buf._tree.leaves(len(buf))
        assert abs(buf._tree.total - leaves.sum()) < 1e-9
    assert len(buf) == 8
    # oldest entries were overwritten: ids 22..29 remain
    stored = sorted(t.action for t in buf._data)
    assert stored == list(range(22, 30))


def test_sample_empty_raises():
    buf = PERBuffer(capacity=4)
    with pytest.raises(ValueError):
        buf.sample(1)


def test_running_norm_welford_matches_numpy():
    rng = np.random.default_rng(17)
    data = rng.standard_normal((40, 6)) * rng.uniform(0.5, 3.0, size=6)
    norm = RunningNorm(6)
    for row in data:
        norm.observe(row)
    assert np.allclose(norm.mean, data.mean(axis=0), atol=1e-10)
    assert np.allclose(norm.std, data.std(axis=0, ddof=1), atol=1e-10)


def test_running_norm_two_point_example():
    norm = RunningNorm(1)
    norm.observe([0.0])
    norm.observe([2.0])
    assert norm.mean[0] == pytest.approx(1.0)
    assert norm.std[0] == pytest.approx(np.sqrt(2.0))  # sample-consistent


def test_running_norm_constant_stream_returns_zeros():
    norm = RunningNorm(3)
    for _ in range(10):
        norm.observe([4.0, -1.0, 0.5])
    z = norm.normalize([4.0, -1.0, 0.5])
    assert np.allclose(z, 0.0)


def test_running_norm_clips():
    norm = RunningNorm(1, clip=5.0)
    for v in (0.0, 1.0, 0.5, 0.7):
        norm.observe([v])
    z = norm.normalize([1e9])
    assert z[0] == pytest.approx(5.0)
    z = norm.normalize([-1e9])
    assert z[0] == pytest.approx(-5.0)


def test_running_norm_doc_roundtrip():
    rng = np.random.default_rng(23)
    norm = RunningNorm(4, clip=3.0)
    for _ in range(25):
        norm.observe(rng.standard_normal(4))
    clone = RunningNorm.from_doc(norm.to_doc())
    x = rng.standard_normal(4)
    assert np.array_equal(norm.normalize(x), clone.normalize(x))
