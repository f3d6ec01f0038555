"""Episode loop tying an environment to a SAC agent."""
from dataclasses import dataclass, field
import logging

import numpy as np

from .sac import SacAgent, SacConfig, clip_action, policy_sample

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    best_values: list
    best_return: float
    best_fidelity: float
    curve: list = field(default_factory=list)  # (episode, return, eval_fidelity or None)
    env_steps: int = 0
    agent: SacAgent = None

    def rows(self):
        return [(ep, r, "" if f is None else f) for ep, r, f in self.curve]


def run_episode(env, act):
    """Roll out one episode with ``act(obs) -> action``; returns (transitions, return)."""
    s = env.reset()
    transitions = []
    total = 0.0
    done = False
    while not done:
        a = np.asarray(act(s), dtype=float).reshape(-1)
        s2, r, done = env.step(a)
        transitions.append((s, a, r, s2, done))
        total += r
        s = s2
    return transitions, total


def train(env, cfg=SacConfig(), seed=0, max_env_steps=None, callback=None):
    """Train SAC on ``env`` and keep the best episode seen.

    Uniform random actions are used for the first ``cfg.warmup_steps``
    environment steps; afterwards each step is followed by
    ``cfg.updates_per_step`` gradient updates (once the buffer holds a batch).
    Every ``cfg.eval_interval`` episodes a deterministic episode is scored.
    """
    agent = SacAgent(env.obs_dim, env.act_dim, cfg, seed)
    result = TrainResult([], -np.inf, float("nan"), agent=agent)

    def consider(total):
        if total > result.best_return:
            result.best_return = total
            result.best_values = list(env.values)
            result.best_fidelity = env.last_fidelity

    steps = 0
    for episode in range(cfg.episodes):
        if max_env_steps is not None and steps >= max_env_steps:
            break
        s = env.reset()
        done = False
        total = 0.0
        while not done:
            if steps < cfg.warmup_steps:
                a = clip_action(agent.rng.uniform(-1.0, 1.0, size=env.act_dim))
            else:
                a, _ = policy_sample(agent, s)
            s2, r, done = env.step(a)
            agent.buffer.add(s, a, r, s2, done)
            total += r
            s = s2
            steps += 1
            if steps > cfg.warmup_steps and len(agent.buffer) >= cfg.batch_size:
                for _ in range(cfg.updates_per_step):
                    agent.update()
        consider(total)
        eval_f = None
        if cfg.eval_interval and (episode + 1) % cfg.eval_interval == 0:
            _, eval_total = run_episode(env, lambda obs: policy_sample(agent, obs, deterministic=True)[0])
            eval_f = env.last_fidelity if env.last_fidelity is not None else eval_total
            consider(eval_total)
        result.curve.append((episode, total, eval_f))
        if callback is not None:
            callback(episode, total, eval_f)
        if episode % 100 == 0:
            log.debug("episode %d return %.4f best %.4f", episode, total, result.best_return)
    result.env_steps = steps
    return result


def evaluate_policy(env, agent):
    """Return of one deterministic episode."""
    return run_episode(env, lambda obs: policy_sample(agent, obs, deterministic=True)[0])[1]
