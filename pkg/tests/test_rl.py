import numpy as np
import pytest
from scipy.integrate import trapezoid

from czopt.circuit import TRACKED_LABELS
from czopt.control import FULL_BOUNDS, RESTRICTED_BOUNDS, propagate, reward
from czopt.errors import EpisodeDone, PreconditionError, TrainingAborted
from czopt.rl import GateEnv, PointEnv, ReplayBuffer, SacAgent, SacConfig, policy_sample, train
from czopt.rl.mlp import Adam, Mlp
from czopt.rl.sac import ACTION_LIMIT, Batch, LOG_STD_MAX, LOG_STD_MIN
from czopt.rl.train import run_episode


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def small_agent(obs_dim=3, hidden=(8,), seed=0, **cfg):
    base = dict(hidden=hidden, batch_size=16, warmup_steps=0)
    base.update(cfg)
    return SacAgent(obs_dim, 1, SacConfig(**base), seed=seed)


def random_batch(rng, n, obs_dim, done=None):
    return Batch(rng.standard_normal((n, obs_dim)), rng.uniform(-1, 1, (n, 1)), rng.standard_normal(n),
                 rng.standard_normal((n, obs_dim)), np.zeros(n) if done is None else done)


def param_fd(params, loss, eps):
    """Central differences of ``loss()`` with respect to every entry of ``params``."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + eps
            up = loss()
            p[idx] = old - eps
            down = loss()
            p[idx] = old
            g[idx] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


# config ----------------------------------------------------------------------


@pytest.mark.parametrize("kwargs", [dict(gamma=1.0), dict(gamma=0.0), dict(alpha=-0.1), dict(polyak=0.0),
                                    dict(polyak=1.5), dict(dtype="float16")])
def test_sac_config_validation(kwargs):
    with pytest.raises(PreconditionError):
        SacConfig(**kwargs)


def test_sac_config_unknown_key():
    with pytest.raises(PreconditionError):
        SacConfig.from_dict({"gama": 0.9})


def test_sac_defaults():
    cfg = SacConfig()
    assert (cfg.gamma, cfg.alpha, cfg.polyak, cfg.batch_size, cfg.buffer_size) == (0.99, 0.1, 0.005, 256, 10 ** 6)
    assert cfg.hidden == (256, 256) and cfg.warmup_steps == 1000


# replay buffer ---------------------------------------------------------------


def fill(buf, start, count):
    for i in range(start, start + count):
        buf.add(np.full(2, i), np.array([i / 1e4]), float(i), np.full(2, i + 1), False)


def test_buffer_never_exceeds_capacity():
    buf = ReplayBuffer(2, 1, capacity=7)
    fill(buf, 0, 20)
    assert len(buf) == 7
    assert sorted(buf.r[:7]) == list(range(13, 20))  # the oldest 13 were evicted


def test_buffer_grows_past_initial_allocation():
    buf = ReplayBuffer(2, 1, capacity=10_000)
    fill(buf, 0, 5000)
    assert len(buf) == 5000
    np.testing.assert_array_equal(buf.r[:5000], np.arange(5000))
    np.testing.assert_array_equal(buf.s[4999], [4999, 4999])


def test_buffer_sampling_uniform_over_contents(rng):
    buf = ReplayBuffer(2, 1, capacity=10)
    fill(buf, 0, 15)
    batch = buf.sample(20_000, rng)
    counts = np.bincount(batch.r.astype(int), minlength=15)
    assert np.all(counts[:5] == 0)
    assert np.all(np.abs(counts[5:] / 20_000 - 0.1) < 0.015)


def test_buffer_rejects_zero_capacity():
    with pytest.raises(PreconditionError):
        ReplayBuffer(2, 1, 0)


# networks --------------------------------------------------------------------


@pytest.mark.parametrize("sizes", [(2, 4, 1), (3, 8, 8, 2), (38, 16, 16, 1), (37, 16, 16, 2)])
def test_mlp_backprop_matches_finite_difference(sizes):
    r = np.random.default_rng(sum(sizes))
    net = Mlp(sizes, r)
    x = r.standard_normal((5, sizes[0]))
    w = r.standard_normal((5, sizes[-1]))
    out, cache = net.forward(x)
    grads, dx = net.backward(cache, w)
    fd = param_fd(net.params, lambda: float(np.sum(net(x) * w)), 1e-5)
    for g, f in zip(grads, fd):
        assert rel_err(g, f) < 1e-4
    fdx = param_fd([x], lambda: float(np.sum(net(x) * w)), 1e-5)[0]
    assert rel_err(dx, fdx) < 1e-4


def test_tiny_critic_mse_gradient(rng):
    # 2-4-1 critic: one state feature plus one action
    agent = SacAgent(1, 1, SacConfig(hidden=(4,), batch_size=8), seed=1)
    batch = random_batch(rng, 8, 1)
    y = rng.standard_normal(8)
    captured = {}
    agent.q1_opt.step = lambda params, grads: captured.setdefault("g", [g.copy() for g in grads])
    agent.q2_opt.step = lambda params, grads: None
    x = np.concatenate([batch.s, batch.a], axis=1)
    agent.critic_update(batch, y)
    fd = param_fd(agent.q1.params, lambda: float(np.mean((agent.q1(x)[:, 0] - y) ** 2)), 1e-6)
    for g, f in zip(captured["g"], fd):
        assert rel_err(g, f) < 1e-5


def test_critic_loss_single_sample(rng):
    agent = small_agent()
    batch = random_batch(rng, 1, 3)
    y = np.array([0.7])
    q1 = agent.q1(np.concatenate([batch.s, batch.a], axis=1))[0, 0]
    l1, _ = agent.critic_update(batch, y)
    assert l1 == pytest.approx((q1 - 0.7) ** 2, rel=1e-12)


def test_critic_update_noop_when_fitted(rng):
    agent = small_agent()
    batch = random_batch(rng, 4, 3)
    x = np.concatenate([batch.s, batch.a], axis=1)
    before = [p.copy() for p in agent.q1.params]
    y = agent.q1(x)[:, 0].copy()
    # make the second critic agree as well
    agent.q2.set_params([p.copy() for p in agent.q1.params])
    l1, l2 = agent.critic_update(batch, y)
    assert l1 == 0.0 and l2 == 0.0
    for a, b in zip(before, agent.q1.params):
        np.testing.assert_array_equal(a, b)


def test_critic_update_aborts_on_nan(rng):
    agent = small_agent()
    agent.q1.weights[0][0, 0] = np.nan
    with pytest.raises(TrainingAborted):
        agent.critic_update(random_batch(rng, 4, 3), np.zeros(4))


def test_adam_first_step_is_lr_sized():
    p = [np.array([1.0, -2.0])]
    Adam(p, lr=0.1).step(p, [np.array([3.0, -0.5])])
    np.testing.assert_allclose(p[0], [0.9, -1.9], rtol=1e-6)


# policy ----------------------------------------------------------------------


@pytest.mark.parametrize("hidden, alpha", [((), 0.3), ((8,), 0.3), ((8, 8), 0.0)])
def test_policy_gradient_matches_finite_difference(hidden, alpha, rng):
    agent = small_agent(obs_dim=1 if not hidden else 3, hidden=hidden, alpha=alpha, seed=4)
    s = rng.standard_normal((6, agent.obs_dim))
    noise = rng.standard_normal((6, 1))
    _, grads = agent.policy_loss_and_grads(s, noise)
    fd = param_fd(agent.policy.params, lambda: agent.policy_loss_and_grads(s, noise)[0], 1e-6)
    for g, f in zip(grads, fd):
        assert rel_err(g, f) < 1e-5


def test_policy_gradient_zero_for_flat_critics_without_entropy(rng):
    agent = small_agent(alpha=0.0)
    for net in (agent.q1, agent.q2):
        for w in net.weights:
            w[...] = 0.0
    _, grads = agent.policy_loss_and_grads(rng.standard_normal((8, 3)))
    assert max(np.max(np.abs(g)) for g in grads) == 0.0


def test_entropy_bonus_widens_policy(rng):
    agent = small_agent(alpha=10.0, actor_lr=1e-2)
    for net in (agent.q1, agent.q2):
        for w in net.weights:
            w[...] = 0.0
    # start narrow: the squashed distribution's entropy peaks at a moderate width
    agent.policy.weights[-1][:, 1] = 0.0
    agent.policy.biases[-1][1] = -2.0
    s = rng.standard_normal((32, 3))
    batch = Batch(s, np.zeros((32, 1)), np.zeros(32), s, np.zeros(32))
    widths = [agent._policy_head(s)[1].mean()]
    for _ in range(2):
        agent.policy_update(batch)
        widths.append(agent._policy_head(s)[1].mean())
    assert widths[0] < widths[1] < widths[2]


def test_log_std_is_clamped(rng):
    agent = small_agent()
    agent.policy.biases[-1][1] = 50.0
    _, log_std, _, _ = agent._policy_head(rng.standard_normal((2, 3)))
    assert np.all(log_std == LOG_STD_MAX)
    agent.policy.biases[-1][1] = -50.0
    assert np.all(agent._policy_head(rng.standard_normal((2, 3)))[1] == LOG_STD_MIN)


def test_policy_density_normalized(rng):
    agent = small_agent(seed=2)
    s = rng.standard_normal(3)
    u_noise = np.linspace(-12, 12, 40_001)[:, None]
    a, logp, _ = agent._sample_batch(np.repeat(s[None], len(u_noise), axis=0), u_noise)
    # quadrature over a in (-1, 1)
    assert trapezoid(np.exp(logp), a[:, 0]) == pytest.approx(1.0, abs=1e-3)
    # Monte-Carlo estimate with uniform proposals on (-1, 1)
    probe = rng.uniform(-1, 1, 20_000)
    mu, log_std, _, _ = agent._policy_head(s[None])
    noise = (np.arctanh(probe) - mu[0, 0]) / np.exp(log_std[0, 0])
    _, lp, _ = agent._sample_batch(np.repeat(s[None], len(probe), axis=0), noise[:, None])
    assert np.mean(2.0 * np.exp(lp)) == pytest.approx(1.0, abs=0.05)


def test_deterministic_limit_of_sampling(rng):
    agent = small_agent()
    agent.policy.weights[-1][:, 1] = 0.0
    agent.policy.biases[-1][1] = -30.0  # clamps to log-std -20
    s = rng.standard_normal(3)
    stoch, logp = policy_sample(agent, s)
    det, none = policy_sample(agent, s, deterministic=True)
    assert none is None and np.isfinite(logp)
    np.testing.assert_allclose(stoch, det, atol=1e-8)


def test_sampled_actions_strictly_inside(rng):
    agent = small_agent()
    agent.policy.biases[-1][0] = 100.0
    for _ in range(20):
        a, _ = policy_sample(agent, rng.standard_normal(3))
        assert -1.0 < a[0] < 1.0 and abs(a[0]) <= ACTION_LIMIT
    a, _ = policy_sample(agent, rng.standard_normal(3), deterministic=True)
    assert a[0] < 1.0


# targets and Polyak averaging ----------------------------------------------------


def test_critic_target_without_discount(rng):
    # gamma = 0 sits outside the configurable range, so set it on a private copy
    agent = small_agent()
    object.__setattr__(agent, "cfg", SacConfig(hidden=(8,)))
    object.__setattr__(agent.cfg, "gamma", 0.0)
    batch = random_batch(rng, 10, 3)
    np.testing.assert_array_equal(agent.critic_target(batch), batch.r)


def test_critic_target_done_mask(rng):
    agent = small_agent()
    batch = random_batch(rng, 10, 3, done=np.ones(10))
    np.testing.assert_array_equal(agent.critic_target(batch), batch.r)


def test_critic_target_without_entropy(rng):
    agent = small_agent(alpha=0.0, gamma=0.9)
    agent.q2_targ = agent.q1_targ.copy()
    batch = random_batch(rng, 10, 3)
    state = agent.rng.bit_generator.state
    y = agent.critic_target(batch)
    agent.rng.bit_generator.state = state
    a2, _, _ = agent._sample_batch(batch.s2)
    q = agent.q1_targ(np.concatenate([batch.s2, a2], axis=1))[:, 0]
    np.testing.assert_allclose(y, batch.r + 0.9 * q, rtol=1e-12)


def target_gap(agent):
    return np.sqrt(sum(np.sum((p - t) ** 2) for p, t in zip(agent.q1.params, agent.q1_targ.params)))


def test_polyak_extremes():
    agent = small_agent()
    for p in agent.q1.params:
        p += 1.0
    before = [t.copy() for t in agent.q1_targ.params]
    agent.polyak_update(0.0)
    for a, b in zip(before, agent.q1_targ.params):
        np.testing.assert_array_equal(a, b)
    agent.polyak_update(1.0)
    for a, b in zip(agent.q1.params, agent.q1_targ.params):
        np.testing.assert_array_equal(a, b)


def test_polyak_geometric_convergence():
    agent = small_agent(polyak=0.1)
    for p in agent.q1.params:
        p += 1.0
    gaps = [target_gap(agent)]
    for _ in range(10):
        agent.polyak_update()
        gaps.append(target_gap(agent))
    np.testing.assert_allclose(np.array(gaps[1:]) / np.array(gaps[:-1]), 0.9, rtol=1e-9)


# environments ----------------------------------------------------------------


@pytest.fixture(scope="module")
def env():
    from czopt.circuit import CircuitParams

    return GateEnv(CircuitParams(), 10.0, 1.0)


def test_env_reset_observation(env):
    obs = env.reset()
    assert obs.shape == (37,)
    pops = obs[:36].reshape(4, len(TRACKED_LABELS))
    np.testing.assert_allclose(pops[:, :4], np.eye(4), atol=1e-15)
    assert np.all(pops[:, 4:] == 0) and obs[36] == 0


def test_env_action_mapping(env):
    assert env.action_to_freq(1.0) == 6.38
    assert env.action_to_freq(-1.0) == 4.2
    assert env.action_to_freq(0.0) == pytest.approx(5.29)
    restricted = GateEnv(env.params, 10.0, 2.0, RESTRICTED_BOUNDS)
    assert restricted.action_to_freq(-1.0) == 5.2 and restricted.n == 5


def test_env_idle_action_barely_moves_populations(env):
    start = env.reset()
    obs, r, done = env.step(np.array([1.0]))
    assert r == 0.0 and not done
    assert np.max(np.abs(obs[:36] - start[:36])) < 0.05
    assert obs[36] == pytest.approx(0.1)


def test_env_sparse_reward_and_termination(env, rng):
    transitions, total = run_episode(env, lambda s: rng.uniform(-1, 1, 1))
    rewards = [t[2] for t in transitions]
    dones = [t[4] for t in transitions]
    assert len(transitions) == 10
    assert sum(r != 0 for r in rewards) == 1 and rewards[-1] == total
    assert dones == [False] * 9 + [True]
    with pytest.raises(EpisodeDone):
        env.step(np.array([0.0]))


def test_env_replay_matches_control_module(env, rng):
    for _ in range(10):
        _, total = run_episode(env, lambda s: rng.uniform(-1, 1, 1))
        replay = propagate(env.params, env.schedule())
        assert total == pytest.approx(reward(replay.fidelity), abs=1e-12)
        assert all(FULL_BOUNDS[0] <= v <= FULL_BOUNDS[1] for v in env.values)


def test_point_env():
    penv = PointEnv()
    _, total = run_episode(penv, lambda s: np.array([0.5]))
    assert total == pytest.approx(1.0)
    assert penv.optimal_return == 1.0


# training --------------------------------------------------------------------


def test_zero_update_training_keeps_best_warmup_episode():
    cfg = SacConfig(hidden=(8,), episodes=6, warmup_steps=10_000, eval_interval=0, batch_size=4)
    res = train(PointEnv(), cfg, seed=3)
    assert res.agent.updates == 0
    assert res.env_steps == 60
    assert res.best_return == max(r for _, r, _ in res.curve)
    penv = PointEnv()
    actions = iter(res.best_values)
    _, replay = run_episode(penv, lambda s: np.array([next(actions)]))
    assert replay == pytest.approx(res.best_return, abs=1e-12)


def test_training_is_deterministic():
    cfg = SacConfig(hidden=(16, 16), episodes=12, warmup_steps=40, batch_size=16, eval_interval=3)
    a = train(PointEnv(), cfg, seed=9)
    b = train(PointEnv(), cfg, seed=9)
    c = train(PointEnv(), cfg, seed=10)
    assert repr(a.rows()) == repr(b.rows())
    assert repr(a.rows()) != repr(c.rows())
    assert a.agent.updates == 120 - 40  # one update per step after warmup


def test_max_env_steps_budget():
    cfg = SacConfig(hidden=(8,), episodes=100, warmup_steps=1000, batch_size=4)
    assert train(PointEnv(), cfg, seed=0, max_env_steps=35).env_steps == 40


def test_checkpoint_round_trip(tmp_path, rng):
    cfg = SacConfig(hidden=(8, 8), episodes=3, warmup_steps=10, batch_size=8, dtype="float32")
    agent = train(PointEnv(), cfg, seed=5).agent
    path = tmp_path / "agent.npz"
    agent.save(path)
    loaded = SacAgent.load(path)
    assert loaded.cfg == agent.cfg and loaded.updates == agent.updates
    for name in ("policy", "q1", "q2", "q1_targ", "q2_targ"):
        for p, q in zip(getattr(agent, name).params, getattr(loaded, name).params):
            assert p.dtype == q.dtype
            np.testing.assert_array_equal(p, q)
    s = rng.standard_normal(2)
    np.testing.assert_array_equal(policy_sample(agent, s)[0], policy_sample(loaded, s)[0])


@pytest.mark.slow
def test_sac_solves_point_env():
    cfg = SacConfig(hidden=(64, 64), alpha=0.01, batch_size=128, warmup_steps=1000, episodes=1000)
    res = train(PointEnv(), cfg, seed=0, max_env_steps=10_000)
    from czopt.rl import evaluate_policy

    assert evaluate_policy(PointEnv(), res.agent) >= 0.9
