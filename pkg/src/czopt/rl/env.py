"""Episodic environments with a single continuous action in [-1, 1]."""
import numpy as np

from ..circuit import TRACKED_LABELS
from ..control import FULL_BOUNDS, PulseSchedule, cz_fidelity, gate_model, n_steps, reward
from ..errors import EpisodeDone

N_TRACKED = len(TRACKED_LABELS)
OBS_DIM = 4 * N_TRACKED + 1


class GateEnv:
    """Each action sets the coupler frequency for one step of the CZ pulse.

    Observations are the tracked-label populations for the four computational
    initial states (initial-state major) followed by the elapsed fraction of
    the gate. The reward is zero until the last step, which pays
    -log10(1 - F).
    """

    obs_dim = OBS_DIM
    act_dim = 1

    def __init__(self, params, gate_time=10.0, step_len=1.0, bounds=FULL_BOUNDS, w1_gate=None):
        self.params = params
        self.gate_time = float(gate_time)
        self.step_len = float(step_len)
        self.bounds = (float(bounds[0]), float(bounds[1]))
        self.n = n_steps(gate_time, step_len)
        self.model = gate_model(params, w1_gate)
        self._cache = {}
        self.reset()

    def action_to_freq(self, a):
        lo, hi = self.bounds
        a = float(np.clip(np.asarray(a).reshape(-1)[0], -1.0, 1.0))
        return float(np.clip(lo + 0.5 * (a + 1.0) * (hi - lo), lo, hi))

    def reset(self):
        self.u = np.eye(self.model.dim, dtype=complex)
        self.t = 0
        self.values = []
        self.done = False
        self.last_fidelity = None
        return self._observe()

    def _observe(self):
        cols = self.u[:, self.model.comp]
        pops = np.abs(cols[self.model.tracked, :].T) ** 2
        return np.concatenate([pops.reshape(-1), [self.t / self.n]])

    def step(self, a):
        if self.done:
            raise EpisodeDone("episode finished; call reset()")
        wc = self.action_to_freq(a)
        key = (wc, self.step_len)
        step_u = self._cache.get(key)
        if step_u is None:
            step_u = self.model.step(wc, self.step_len)[1]
            if len(self._cache) < 100_000:
                self._cache[key] = step_u
        self.u = step_u @ self.u
        self.values.append(wc)
        self.t += 1
        r = 0.0
        if self.t == self.n:
            self.done = True
            u_comp = self.u[np.ix_(self.model.comp, self.model.comp)]
            self.last_fidelity = cz_fidelity(u_comp)[0]
            r = reward(self.last_fidelity)
        return self._observe(), r, self.done

    def schedule(self, values=None):
        return PulseSchedule(self.gate_time, self.step_len, self.values if values is None else values, self.bounds)


class PointEnv:
    """Move a point from 0 toward ``target`` in ``n`` steps of size ``scale * a``.

    The terminal reward is 1 - |x - target|, so the optimal return is 1.
    """

    obs_dim = 2
    act_dim = 1

    def __init__(self, target=0.5, n=10, scale=0.1):
        self.target = target
        self.n = n
        self.scale = scale
        self.reset()

    def reset(self):
        self.x = 0.0
        self.t = 0
        self.done = False
        self.values = []
        self.last_fidelity = None
        return self._observe()

    def _observe(self):
        return np.array([self.x, self.t / self.n])

    def step(self, a):
        if self.done:
            raise EpisodeDone("episode finished; call reset()")
        a = float(np.clip(np.asarray(a).reshape(-1)[0], -1.0, 1.0))
        self.x += self.scale * a
        self.values.append(a)
        self.t += 1
        r = 0.0
        if self.t == self.n:
            self.done = True
            r = 1.0 - abs(self.x - self.target)
        return self._observe(), r, self.done

    optimal_return = 1.0
