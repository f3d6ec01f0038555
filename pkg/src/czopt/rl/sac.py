"""Soft Actor-Critic with a tanh-squashed Gaussian policy and twin critics."""
from dataclasses import asdict, dataclass, fields
import json

import numpy as np

from ..errors import PreconditionError, TrainingAborted
from .mlp import Adam, Mlp

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
# tanh rounds to exactly +-1 for large inputs; actions handed out stay inside
ACTION_LIMIT = 1.0 - 1e-7
CHECKPOINT_VERSION = 1
_HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)


@dataclass(frozen=True)
class SacConfig:
    gamma: float = 0.99
    alpha: float = 0.1
    polyak: float = 0.005
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    batch_size: int = 256
    buffer_size: int = 1_000_000
    warmup_steps: int = 1000
    updates_per_step: int = 1
    episodes: int = 1000
    eval_interval: int = 10
    hidden: tuple = (256, 256)
    dtype: str = "float64"

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise PreconditionError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.alpha < 0:
            raise PreconditionError(f"alpha must be non-negative, got {self.alpha}")
        if not 0.0 < self.polyak <= 1.0:
            raise PreconditionError(f"polyak rate must be in (0, 1], got {self.polyak}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.dtype not in ("float32", "float64"):
            raise PreconditionError(f"dtype must be float32 or float64, got {self.dtype}")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise PreconditionError(f"unknown SAC settings: {sorted(unknown)}")
        return cls(**d)


class ReplayBuffer:
    """Ring buffer of (s, a, r, s', done); storage grows up to ``capacity``."""

    def __init__(self, obs_dim, act_dim, capacity):
        if capacity < 1:
            raise PreconditionError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.size = 0
        self.ptr = 0
        self._alloc(min(self.capacity, 4096))

    def _alloc(self, n):
        old = getattr(self, "s", None)
        s = np.zeros((n, self.obs_dim))
        a = np.zeros((n, self.act_dim))
        r = np.zeros(n)
        s2 = np.zeros((n, self.obs_dim))
        d = np.zeros(n)
        if old is not None:
            k = self.size
            s[:k], a[:k], r[:k], s2[:k], d[:k] = self.s[:k], self.a[:k], self.r[:k], self.s2[:k], self.d[:k]
        self.s, self.a, self.r, self.s2, self.d = s, a, r, s2, d

    def __len__(self):
        return self.size

    def add(self, s, a, r, s2, done):
        if self.ptr >= len(self.r) and len(self.r) < self.capacity:
            self._alloc(min(self.capacity, 2 * len(self.r)))
        i = self.ptr
        self.s[i], self.a[i], self.r[i], self.s2[i], self.d[i] = s, a, r, s2, float(done)
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size, rng):
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.d[idx])


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray


def _log1m_tanh2(u):
    """log(1 - tanh(u)^2), stable for large |u|."""
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


class SacAgent:
    def __init__(self, obs_dim, act_dim, cfg=SacConfig(), seed=0):
        self.cfg = cfg
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.rng = np.random.default_rng(seed)
        dt = np.dtype(cfg.dtype)
        self.policy = Mlp((obs_dim, *cfg.hidden, 2 * act_dim), self.rng, dtype=dt)
        self.q1 = Mlp((obs_dim + act_dim, *cfg.hidden, 1), self.rng, dtype=dt)
        self.q2 = Mlp((obs_dim + act_dim, *cfg.hidden, 1), self.rng, dtype=dt)
        self.q1_targ = self.q1.copy()
        self.q2_targ = self.q2.copy()
        self.pi_opt = Adam(self.policy.params, cfg.actor_lr)
        self.q1_opt = Adam(self.q1.params, cfg.critic_lr)
        self.q2_opt = Adam(self.q2.params, cfg.critic_lr)
        self.buffer = ReplayBuffer(obs_dim, act_dim, cfg.buffer_size)
        self.updates = 0

    # policy -----------------------------------------------------------------

    def _policy_head(self, s):
        out, cache = self.policy.forward(np.atleast_2d(s))
        mu = out[:, :self.act_dim]
        raw_ls = out[:, self.act_dim:]
        log_std = np.clip(raw_ls, LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std, raw_ls, cache

    def _sample_batch(self, s, noise=None):
        mu, log_std, raw_ls, cache = self._policy_head(s)
        if noise is None:
            noise = self.rng.standard_normal(mu.shape)
        std = np.exp(log_std)
        u = mu + std * noise
        a = np.tanh(u)
        logp = np.sum(-0.5 * noise ** 2 - log_std - _HALF_LOG_2PI - _log1m_tanh2(u), axis=1)
        return a, logp, (mu, log_std, raw_ls, std, noise, u, cache)

    def q_values(self, nets, s, a):
        x = np.concatenate([s, a], axis=1)
        return [net(x)[:, 0] for net in nets]

    # updates ----------------------------------------------------------------

    def critic_target(self, batch):
        a2, logp2, _ = self._sample_batch(batch.s2)
        q1t, q2t = self.q_values((self.q1_targ, self.q2_targ), batch.s2, a2)
        soft = np.minimum(q1t, q2t) - self.cfg.alpha * logp2
        return batch.r + self.cfg.gamma * (1.0 - batch.done) * soft

    def critic_update(self, batch, y=None):
        """One gradient step on both critics; returns the two MSE losses."""
        if y is None:
            y = self.critic_target(batch)
        x = np.concatenate([batch.s, batch.a], axis=1)
        losses = []
        for net, opt in ((self.q1, self.q1_opt), (self.q2, self.q2_opt)):
            q, cache = net.forward(x)
            err = q[:, 0] - y
            loss = float(np.mean(err ** 2))
            if not np.isfinite(loss):
                raise TrainingAborted("non-finite critic loss", self.updates)
            grads, _ = net.backward(cache, (2.0 / len(y)) * err[:, None])
            opt.step(net.params, grads)
            losses.append(loss)
        return tuple(losses)

    def policy_loss_and_grads(self, s, noise=None):
        """Loss E[alpha*log pi(a~|s) - min_j Q_j(s, a~)] and its policy gradients."""
        a, logp, (mu, log_std, raw_ls, std, noise, u, cache) = self._sample_batch(s, noise)
        x = np.concatenate([s, a], axis=1)
        q1, c1 = self.q1.forward(x)
        q2, c2 = self.q2.forward(x)
        use_q1 = q1[:, 0] <= q2[:, 0]
        q_min = np.where(use_q1, q1[:, 0], q2[:, 0])
        batch = len(s)
        loss = float(np.mean(self.cfg.alpha * logp - q_min))
        dq = -np.ones((batch, 1)) / batch
        _, dx1 = self.q1.backward(c1, dq * use_q1[:, None], need_params=False)
        _, dx2 = self.q2.backward(c2, dq * (~use_q1)[:, None], need_params=False)
        d_a = (dx1 + dx2)[:, self.obs_dim:]
        # through a = tanh(u): dlogp/du = 2 tanh(u) from the squashing term
        d_u = d_a * (1.0 - a ** 2) + (self.cfg.alpha / batch) * 2.0 * a
        d_mu = d_u
        d_ls = d_u * std * noise - self.cfg.alpha / batch
        d_ls = d_ls * ((raw_ls > LOG_STD_MIN) & (raw_ls < LOG_STD_MAX))
        grads, _ = self.policy.backward(cache, np.concatenate([d_mu, d_ls], axis=1))
        return loss, grads

    def policy_update(self, batch):
        loss, grads = self.policy_loss_and_grads(batch.s)
        if not np.isfinite(loss):
            raise TrainingAborted("non-finite policy loss", self.updates)
        self.pi_opt.step(self.policy.params, grads)
        return loss

    def polyak_update(self, rho=None):
        """target <- (1 - rho) target + rho critic; ``rho`` defaults to the configured rate."""
        rho = self.cfg.polyak if rho is None else float(rho)
        if not 0.0 <= rho <= 1.0:
            raise PreconditionError(f"polyak rate must be in [0, 1], got {rho}")
        for net, targ in ((self.q1, self.q1_targ), (self.q2, self.q2_targ)):
            for p, tp in zip(net.params, targ.params):
                tp *= 1.0 - rho
                tp += rho * p

    def update(self):
        batch = self.buffer.sample(self.cfg.batch_size, self.rng)
        l1, l2 = self.critic_update(batch)
        lp = self.policy_update(batch)
        self.polyak_update()
        self.updates += 1
        return l1, l2, lp

    # checkpoints ------------------------------------------------------------

    def save(self, path):
        arrays = {}
        for name in ("policy", "q1", "q2", "q1_targ", "q2_targ"):
            for i, p in enumerate(getattr(self, name).params):
                arrays[f"{name}/{i}"] = p
        meta = {
            "version": CHECKPOINT_VERSION,
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "config": asdict(self.cfg),
            "updates": self.updates,
            "rng": self.rng.bit_generator.state,
        }
        arrays["meta"] = np.array(json.dumps(meta))
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            meta = json.loads(str(data["meta"]))
            if meta["version"] != CHECKPOINT_VERSION:
                raise PreconditionError(f"unsupported checkpoint version {meta['version']}")
            cfg = SacConfig.from_dict(meta["config"])
            agent = cls(meta["obs_dim"], meta["act_dim"], cfg)
            for name in ("policy", "q1", "q2", "q1_targ", "q2_targ"):
                net = getattr(agent, name)
                net.set_params([np.array(data[f"{name}/{i}"]) for i in range(len(net.params))])
        agent.pi_opt = Adam(agent.policy.params, cfg.actor_lr)
        agent.q1_opt = Adam(agent.q1.params, cfg.critic_lr)
        agent.q2_opt = Adam(agent.q2.params, cfg.critic_lr)
        agent.updates = meta["updates"]
        agent.rng.bit_generator.state = meta["rng"]
        return agent


def policy_sample(agent, s, deterministic=False):
    """Action in [-1, 1]^act_dim for one observation, with its log-density.

    Deterministic mode returns tanh(mean) and ``None`` for the log-density.
    """
    s = np.asarray(s, dtype=float)[None, :]
    if deterministic:
        mu, _, _, _ = agent._policy_head(s)
        return clip_action(np.tanh(mu[0])), None
    a, logp, _ = agent._sample_batch(s)
    return clip_action(a[0]), float(logp[0])


def clip_action(a):
    return np.clip(np.asarray(a, dtype=float), -ACTION_LIMIT, ACTION_LIMIT)
