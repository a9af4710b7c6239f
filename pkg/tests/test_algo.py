import math
import struct
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marlnav.algo import (DqnAgent, Mlp, MultiDQN, PrioritizedReplay, SumTree, double_dqn_target,
                          dueling_combine, mlp_backward, mlp_forward, replay_sample)
from marlnav.algo.checkpoint import (checkpoint_bytes, load_checkpoint, read_checkpoint,
                                     save_checkpoint)
from marlnav.config import AlgorithmConfig
from marlnav.errors import (ArchitectureMismatchError, BadMagicError, NotReadyError, RangeError,
                            ShapeError, TrainingDivergedError, TruncatedCheckpointError,
                            VersionMismatchError)


# -- reference implementations (independent of the library) ---------------

def ref_unpack(sizes, flat):
    layers, off = [], 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        W = [[flat[off + i * b + j] for j in range(b)] for i in range(a)]
        off += a * b
        bias = [flat[off + j] for j in range(b)]
        off += b
        layers.append((W, bias))
    return layers


def ref_forward(sizes, flat, x):
    h = list(x)
    layers = ref_unpack(sizes, flat)
    for l, (W, bias) in enumerate(layers):
        out = []
        for j in range(len(bias)):
            s = bias[j]
            for i in range(len(h)):
                s += h[i] * W[i][j]
            out.append(s if l == len(layers) - 1 else max(s, 0.0))
        h = out
    return h


def fd_grad(net, x, c, h=1e-5):
    """Central differences of L = sum(c * Q(x))."""
    p = net.params
    g = np.empty_like(p)
    for k in range(len(p)):
        old = p[k]
        p[k] = old + h
        up = float(np.sum(c * net.q_values(x)))
        p[k] = old - h
        dn = float(np.sum(c * net.q_values(x)))
        p[k] = old
        g[k] = (up - dn) / (2 * h)
    return g


def rel_error(a, b):
    # component-wise |a-b| / max(|a|, |b|), with an absolute floor for entries
    # that are zero up to finite-difference noise
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-7)
    return float(np.max(np.abs(a - b) / denom))


def gradient_check(n_nets=100, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_nets):
        sizes = [int(rng.integers(2, 7)), *rng.integers(2, 9, size=int(rng.integers(1, 3))),
                 int(rng.integers(2, 6))]
        net = Mlp(sizes, dueling=bool(rng.integers(2)), rng=rng)
        net.params[:] += rng.normal(0, 0.1, net.n_params)  # non-zero biases
        x = rng.normal(size=(int(rng.integers(1, 4)), sizes[0]))
        q = net.q_values(x, cache=True)
        c = rng.normal(size=q.shape)
        g = net.backward_q(c)
        worst = max(worst, rel_error(g, fd_grad(net, x, c)))
    return worst


# -- Mlp -------------------------------------------------------------------

def test_param_count_and_layout():
    net = Mlp([17, 256, 256, 6])
    assert net.n_params == 18 * 256 + 257 * 256 + 257 * 6
    assert net.n_actions == 5


def test_zero_net_outputs_zero():
    net = Mlp([4, 8, 3], dueling=False)
    assert np.all(net.forward(np.arange(4.0)) == 0.0)


def test_identity_linear_layer():
    net = Mlp([5, 5], dueling=False)
    net.weights[0][:] = np.eye(5)
    x = np.random.default_rng(0).normal(size=5)
    assert np.array_equal(net.forward(x), x)


def test_forward_matches_reference():
    rng = np.random.default_rng(3)
    for _ in range(20):
        sizes = [int(rng.integers(1, 6)), int(rng.integers(1, 8)), int(rng.integers(1, 8)),
                 int(rng.integers(2, 6))]
        net = Mlp(sizes, dueling=False, rng=rng)
        net.params[:] += rng.normal(0, 0.3, net.n_params)
        x = rng.normal(size=sizes[0])
        assert np.max(np.abs(net.forward(x) - ref_forward(sizes, net.params.tolist(), x))) < 1e-12


def test_mlp_forward_heads():
    net = Mlp([3, 4, 6], rng=np.random.default_rng(0))
    v, a = mlp_forward(net, np.ones(3))
    assert np.ndim(v) == 0 and a.shape == (5,)
    with pytest.raises(ShapeError):
        net.forward(np.ones(4))


def test_dueling_combine():
    assert np.allclose(dueling_combine(1.0, [1.0, 2.0, 3.0]), [0.0, 1.0, 2.0])
    assert np.allclose(dueling_combine(2.5, [4.0] * 5), [2.5] * 5)
    a = np.array([0.3, -1.2, 0.7])
    assert np.allclose(dueling_combine(0.4, a + 11.0), dueling_combine(0.4, a))
    with pytest.raises(ShapeError):
        dueling_combine(1.0, [])


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=8), st.floats(-100, 100),
       st.floats(-100, 100))
def test_dueling_shift_invariance(adv, v, c):
    a = np.array(adv)
    assert np.allclose(dueling_combine(v, a + c), dueling_combine(v, a), atol=1e-9)


def test_zero_output_gradient():
    net = Mlp([3, 5, 4], rng=np.random.default_rng(1))
    assert np.all(mlp_backward(net, np.ones((2, 3)), np.zeros((2, 4))) == 0.0)


def test_finite_difference_gradients():
    assert gradient_check(100) < 1e-4


def test_linear_least_squares_gradient():
    rng = np.random.default_rng(5)
    net = Mlp([4, 3], dueling=False, rng=rng)
    net.biases[0][:] = rng.normal(size=3)
    X = rng.normal(size=(10, 4))
    T = rng.normal(size=(10, 3))
    Y = net.forward(X)
    g = mlp_backward(net, X, Y - T)  # d/dY of 0.5*||Y-T||^2
    R = X @ net.weights[0] + net.biases[0] - T
    want = np.concatenate([(X.T @ R).ravel(), R.sum(axis=0)])
    assert np.max(np.abs(g - want)) < 1e-10


# -- double DQN ------------------------------------------------------------

def const_net(q):
    net = Mlp([2, len(q)], dueling=False)
    net.biases[0][:] = q
    return net


def test_double_dqn_target_cases():
    online, target = const_net([0.2, 0.8]), const_net([0.5, 0.3])
    assert double_dqn_target(1.0, np.zeros(2), True, 0.9, online, target) == 1.0
    assert double_dqn_target(1.0, np.zeros(2), False, 0.9, online, target) == pytest.approx(1.27)
    got = double_dqn_target([1.0, 2.0], np.zeros((2, 2)), [False, True], 0.9, online, target)
    assert np.allclose(got, [1.27, 2.0])


# 4-state chain: actions 0=left, 1=right; state 3 is terminal with reward 1
# on entry, every other move costs 0.1.
N_S, N_A, GAMMA = 4, 2, 0.9


def toy_step(s, a):
    s2 = max(0, s - 1) if a == 0 else min(3, s + 1)
    return s2, (1.0 if s2 == 3 else -0.1), s2 == 3


def value_iteration(tol=1e-13):
    Q = np.zeros((N_S, N_A))
    while True:
        new = np.zeros_like(Q)
        for s in range(N_S - 1):
            for a in range(N_A):
                s2, r, done = toy_step(s, a)
                new[s, a] = r + (0.0 if done else GAMMA * Q[s2].max())
        if np.max(np.abs(new - Q)) < tol:
            return new
        Q = new


def test_double_dqn_targets_match_value_iteration():
    q_star = value_iteration()
    onehot = np.eye(N_S)
    online = Mlp([N_S, N_A], dueling=False)
    target = online.copy()
    trans = [(s, a, *toy_step(s, a)) for s in range(N_S - 1) for a in range(N_A)]
    for _ in range(400):
        y = double_dqn_target(np.array([t[3] for t in trans]), onehot[[t[2] for t in trans]],
                              np.array([t[4] for t in trans]), GAMMA, online, target)
        # exact fit: one-hot input makes W[s, a] the table entry
        for (s, a, *_), yi in zip(trans, y):
            online.weights[0][s, a] = yi
        target.params[:] = online.params
    learned = online.forward(onehot)[:N_S - 1]
    assert np.max(np.abs(learned - q_star[:N_S - 1])) < 1e-6


def test_agent_learns_toy_chain():
    q_star = value_iteration()
    cfg = AlgorithmConfig(hidden=(16,), gamma=GAMMA, lr=3e-3, batch_size=6, buffer_capacity=64,
                          target_sync=50, input_scale=1.0)
    agent = DqnAgent(N_S, N_A, cfg, np.random.default_rng(0))
    eye = np.eye(N_S)
    for s in range(N_S - 1):
        for a in range(N_A):
            s2, r, done = toy_step(s, a)
            agent.replay.add(eye[s], a, r, eye[s2], done)
    for _ in range(3000):
        agent.train_step()
    q = agent.q(eye[:N_S - 1])
    assert np.array_equal(q.argmax(axis=1), q_star[:N_S - 1].argmax(axis=1))
    assert np.max(np.abs(q - q_star[:N_S - 1])) < 0.05


# -- sum tree / PER --------------------------------------------------------

def test_sumtree_examples():
    t = SumTree(4)
    for i, p in enumerate([1, 2, 3, 4]):
        t.update(i, p)
    assert t.total == 10
    assert t.sample(2.5) == 1
    t.update(0, 5)
    assert t.total == 14
    with pytest.raises(RangeError):
        t.sample(14)
    with pytest.raises(RangeError):
        t.sample(-0.1)


def scan_oracle(priorities, prefix):
    c = 0.0
    for i, p in enumerate(priorities):
        if prefix < c + p:
            return i
        c += p
    raise AssertionError("prefix beyond total")


def sumtree_oracle_agreement(n_sequences=10_000, seed=0):
    """Random update/sample sequences; dyadic priorities make every partial
    sum exact, so the tree and the scan must agree bit for bit."""
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(n_sequences):
        cap = int(rng.integers(1, 33))
        t = SumTree(cap)
        pri = [0.0] * t.capacity
        for _ in range(int(rng.integers(1, 12))):
            leaf = int(rng.integers(cap))
            p = float(rng.integers(0, 4096)) / 256.0
            t.update(leaf, p)
            pri[leaf] = p
            if t.total > 0:
                prefix = float(rng.integers(0, int(t.total * 1024))) / 1024.0
                if t.sample(prefix) != scan_oracle(pri, prefix):
                    mismatches += 1
                batch = np.array([float(rng.integers(0, int(t.total * 1024))) / 1024.0 for _ in range(4)])
                if list(t.sample_batch(batch)) != [scan_oracle(pri, b) for b in batch]:
                    mismatches += 1
    return mismatches


def test_sumtree_matches_scan():
    assert sumtree_oracle_agreement(2000, seed=1) == 0


def test_sumtree_root_after_million_updates():
    rng = np.random.default_rng(0)
    t = SumTree(1000)
    for _ in range(1000):
        leaves = rng.integers(0, 1000, 1000)
        t.update_batch(leaves, rng.random(1000) * 10)
    for leaf, p in zip(rng.integers(0, 1000, 1000), rng.random(1000)):
        t.update(int(leaf), float(p))
    assert abs(t.total - math.fsum(t.leaves)) < 1e-9
    internal = t.tree[1:t.capacity]
    kids = t.tree[2:2 * t.capacity:2] + t.tree[3:2 * t.capacity:2]
    assert np.max(np.abs(internal - kids)) <= 1e-9


def test_update_batch_equals_sequential():
    rng = np.random.default_rng(9)
    a, b = SumTree(64), SumTree(64)
    for _ in range(200):
        leaves = rng.integers(0, 64, 10)
        ps = rng.random(10)
        a.update_batch(leaves, ps)
        for l, p in zip(leaves, ps):
            b.update(int(l), float(p))
        assert np.array_equal(a.tree, b.tree)


def per_frequency_error(draws=100_000, seed=0):
    rng = np.random.default_rng(seed)
    rep = PrioritizedReplay(16, 2, alpha=0.6, eps=1e-3, rng=rng)
    for i in range(10):
        rep.add(np.zeros(2), 0, 0.0, np.zeros(2), False)
    td = rng.uniform(0, 3, 10)
    rep.update_priorities(np.arange(10), td)
    want = (np.abs(td) + 1e-3) ** 0.6
    want /= want.sum()
    counts = np.zeros(10)
    batch = 10
    for _ in range(draws // batch):
        _, _, leaves = rep.sample(batch, 0.4)
        counts += np.bincount(leaves, minlength=10)
    return float(np.max(np.abs(counts / counts.sum() - want)))


def test_per_sampling_frequencies():
    assert per_frequency_error() < 0.02


def test_per_weights_and_not_ready():
    rep = PrioritizedReplay(8, 2, rng=np.random.default_rng(0))
    for i in range(5):
        rep.add(np.full(2, i), i % 5, 0.5, np.zeros(2), False)
    with pytest.raises(NotReadyError):
        replay_sample(rep, 6, 0.4)
    _, w, _ = replay_sample(rep, 5, 0.4)
    assert np.all(w == 1.0)
    rep.update_priorities([0, 1], [2.0, 0.0])
    _, w, leaves = rep.sample(5, 1.0)
    assert w.max() == 1.0 and np.all(w > 0)


def test_per_ring_overwrite_and_stored_priority():
    rep = PrioritizedReplay(4, 1, alpha=0.5, eps=1e-3, rng=np.random.default_rng(0))
    for i in range(6):
        rep.add([float(i)], 0, 0.0, [0.0], False)
    assert len(rep) == 4 and rep.obs[0, 0] == 4.0 and rep.obs[1, 0] == 5.0
    rep.update_priorities([2], [0.25])
    assert rep.tree[2] == pytest.approx((0.25 + 1e-3) ** 0.5)


# -- agents ----------------------------------------------------------------

def small_cfg(**kw):
    base = dict(hidden=(16, 16), batch_size=8, buffer_capacity=256, learning_starts=8, target_sync=20)
    base.update(kw)
    return AlgorithmConfig(**base)


def test_select_actions_greedy_and_scaled():
    algo = MultiDQN(3, 17, 5, small_cfg(), seed=1)
    obs = np.random.default_rng(0).uniform(0, 5, (3, 17))
    greedy = [int(np.argmax(algo.agent(i).q(obs[i]))) for i in range(3)]
    assert algo.select_actions(obs, 0.0) == greedy
    for a in algo.agents:
        n_last = a.online.weights[-1].size + a.online.biases[-1].size
        a.online.params[-n_last:] *= 7.5
    assert algo.select_actions(obs, 0.0) == greedy


def test_select_actions_uniform_when_exploring():
    algo = MultiDQN(1, 17, 5, small_cfg(), seed=2)
    obs = np.zeros((1, 17))
    counts = np.bincount([algo.select_actions(obs, 1.0)[0] for _ in range(100_000)], minlength=5)
    assert np.all(np.abs(counts / 100_000 - 0.2) < 0.01)


def test_epsilon_schedule():
    algo = MultiDQN(2, 17, 5, small_cfg(eps_decay_episodes=500), seed=0)
    algo.begin_episode(0, 2000)
    assert algo.epsilon == 1.0
    algo.begin_episode(250, 2000)
    assert algo.epsilon == pytest.approx(0.525)
    algo.begin_episode(1999, 2000)
    assert algo.epsilon == pytest.approx(0.05)
    assert algo.agents[0].beta == pytest.approx(0.4 + 0.6 * 1999 / 2000)


def test_single_transition_td_shrinks():
    agent = DqnAgent(3, 2, small_cfg(batch_size=1, lr=1e-3, target_sync=10**9),
                     np.random.default_rng(0))
    s = np.array([0.5, -1.0, 2.0])
    agent.replay.add(s, 1, 2.0, s, True)
    tds = []
    for _ in range(500):
        agent.train_step()
        tds.append(abs(2.0 - agent.q(s)[1]))
    first, last = np.mean(tds[:50]), np.mean(tds[-50:])
    assert last < 0.05 * first
    # trend is monotone over 50-step windows (it may hit exactly zero)
    windows = np.array(tds).reshape(10, 50).mean(axis=1)
    assert np.all(np.diff(windows) <= 0) and windows[1] < windows[0]


def test_terminal_loss_formula_and_priority_refresh():
    agent = DqnAgent(3, 2, small_cfg(gamma=0.0, batch_size=4), np.random.default_rng(4))
    rng = np.random.default_rng(1)
    for i in range(6):
        agent.replay.add(rng.normal(size=3), i % 2, float(rng.normal()), rng.normal(size=3), True)
    agent.replay.update_priorities(np.arange(6), rng.uniform(0.1, 2, 6))
    seen = {}
    orig = agent.replay.sample

    def spy(n, beta):
        out = orig(n, beta)
        seen["out"] = out
        return out

    agent.replay.sample = spy
    before_params = agent.online.params.copy()
    before_pri = agent.replay.tree.leaves[:6].copy()
    loss = agent.train_step()
    batch, w, leaves = seen["out"]
    q = Mlp(agent.layer_sizes, params=before_params).q_values(agent.scale(batch.obs))
    qa = q[np.arange(len(leaves)), batch.actions]
    assert loss == pytest.approx(float(np.mean(w * (qa - batch.rewards) ** 2)), rel=1e-12)
    assert not np.array_equal(agent.replay.tree.leaves[:6], before_pri)


def test_target_frozen_between_syncs():
    agent = DqnAgent(3, 2, small_cfg(batch_size=4, target_sync=5), np.random.default_rng(0))
    rng = np.random.default_rng(0)
    for _ in range(10):
        agent.replay.add(rng.normal(size=3), 0, 1.0, rng.normal(size=3), False)
    x = rng.normal(size=(5, 3))
    t0 = agent.target.forward(x).copy()
    for _ in range(4):
        agent.train_step()
        assert np.array_equal(agent.target.forward(x), t0)
    agent.train_step()
    assert np.array_equal(agent.target.params, agent.online.params)
    assert not np.array_equal(agent.target.forward(x), t0)


def test_nan_aborts_with_dump():
    agent = DqnAgent(3, 2, small_cfg(batch_size=2), np.random.default_rng(0))
    for _ in range(3):
        agent.replay.add(np.ones(3), 0, 1.0, np.ones(3), False)
    agent.online.params[0] = np.nan
    with pytest.raises(TrainingDivergedError) as ei:
        agent.train_step()
    assert "grad_steps" in ei.value.dump


def _train_some(seed):
    algo = MultiDQN(2, 17, 5, small_cfg(), seed=seed)
    rng = np.random.default_rng(0)
    for _ in range(60):
        obs = rng.uniform(0, 5, (2, 17))
        acts = algo.select_actions(obs, 0.5)
        algo.observe(obs, acts, rng.normal(size=2), rng.uniform(0, 5, (2, 17)), False)
        algo.train()
    return np.concatenate([p for pair in algo.parameters() for p in pair])


def test_parameter_trajectory_deterministic():
    assert np.array_equal(_train_some(3), _train_some(3))
    assert not np.array_equal(_train_some(3), _train_some(4))


def test_independent_agents_have_own_networks():
    algo = MultiDQN(3, 17, 5, small_cfg(), seed=0)
    assert len({id(a.online) for a in algo.agents}) == 3
    assert not np.array_equal(algo.agents[0].online.params, algo.agents[1].online.params)
    shared = MultiDQN(3, 17, 5, small_cfg(share_parameters=True), seed=0)
    assert shared.agent(2) is shared.agent(0)


# -- checkpoints -----------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    algo = MultiDQN(3, 17, 5, small_cfg(), seed=5)
    for a in algo.agents:
        a.online.params[:] += 0.125
    path = tmp_path / "c.mrl"
    save_checkpoint(algo, path, "lanes", 5)
    back = load_checkpoint(path, n_agents=3, obs_dim=17)
    for (o1, t1), (o2, t2) in zip(algo.parameters(), back.parameters()):
        assert o1.tobytes() == o2.tobytes() and t1.tobytes() == t2.tobytes()
    assert back.cfg == algo.cfg
    assert checkpoint_bytes(back, "lanes", 5) == path.read_bytes()


def test_checkpoint_layout():
    algo = MultiDQN(1, 2, 1, AlgorithmConfig(hidden=()), seed=0)
    algo.agents[0].online.params[:] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    data = checkpoint_bytes(algo)
    (n,) = struct.unpack(">I", data[4:8])
    body = data[8 + n:]
    assert data[:4] == b"MRL1"
    assert np.frombuffer(body[:48], "<f8").tolist() == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    assert len(body) == 2 * 6 * 8


def test_checkpoint_errors(tmp_path):
    algo = MultiDQN(3, 17, 5, small_cfg(), seed=0)
    data = checkpoint_bytes(algo)
    p = tmp_path / "x.mrl"
    p.write_bytes(b"XRL1" + data[4:])
    with pytest.raises(BadMagicError):
        load_checkpoint(p)
    p.write_bytes(data[:-9])
    with pytest.raises(TruncatedCheckpointError):
        load_checkpoint(p)
    meta, _ = read_checkpoint(data)
    p.write_bytes(data)
    with pytest.raises(ArchitectureMismatchError):
        load_checkpoint(p, n_agents=2)
    blob = data[8:8 + struct.unpack(">I", data[4:8])[0]].replace(b'"version":1', b'"version":2')
    p.write_bytes(data[:4] + struct.pack(">I", len(blob)) + blob + data[8 + len(blob):])
    with pytest.raises(VersionMismatchError):
        load_checkpoint(p)
