"""Piecewise-constant coupler pulses, their propagation in the idle eigenbasis,
and CZ figures of merit.

During the gate qubit 1 sits at its operating frequency (by default
w2 + a2, where |101> and |002> are resonant); it switches there at t = 0 and
back at t = gate_time. Evolution is reported in the labeled idle eigenbasis,
so the gate matrix is indexed by bare-state labels.
"""
from dataclasses import dataclass, field
import json
import math

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit

from .circuit import (
    COMPUTATIONAL_LABELS,
    TRACKED_LABELS,
    TWO_PI,
    build_hamiltonian,
    idle_eigenbasis,
    label_index,
    number_operator,
)
from .errors import PreconditionError, ResolutionError
from .numerics import herm_eig

FULL_BOUNDS = (4.2, 6.38)
RESTRICTED_BOUNDS = (5.2, 6.38)
CZ_DIAG = np.array([1.0, 1.0, 1.0, -1.0], dtype=complex)
REWARD_CAP = 12.0


def n_steps(gate_time, step_len):
    n = int(round(gate_time / step_len))
    if n < 1 or abs(n * step_len - gate_time) > 1e-9:
        raise PreconditionError(f"step {step_len} ns does not divide gate time {gate_time} ns")
    return n


@dataclass(frozen=True, eq=False)
class PulseSchedule:
    """Coupler frequency (GHz) held constant over consecutive steps of ``step_len`` ns."""

    gate_time: float
    step_len: float
    values: np.ndarray
    bounds: tuple = FULL_BOUNDS

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "bounds", (float(self.bounds[0]), float(self.bounds[1])))
        lo, hi = self.bounds
        if not lo < hi:
            raise PreconditionError(f"invalid bounds {self.bounds}")
        n = n_steps(self.gate_time, self.step_len)
        if values.shape != (n,):
            raise PreconditionError(f"expected {n} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise PreconditionError("schedule has non-finite values")
        if np.any(values < lo) or np.any(values > hi):
            raise PreconditionError(f"schedule values outside bounds {self.bounds}")

    @property
    def n(self):
        return len(self.values)

    def with_values(self, values):
        return PulseSchedule(self.gate_time, self.step_len, values, self.bounds)

    def to_dict(self):
        return {
            "gate_time_ns": self.gate_time,
            "step_ns": self.step_len,
            "bounds_ghz": list(self.bounds),
            "values_ghz": [float(v) for v in self.values],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["gate_time_ns"], d["step_ns"], d["values_ghz"], tuple(d["bounds_ghz"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class GateEvaluation:
    """Result of propagating one pulse.

    ``populations[s, c, l]`` is the population of tracked label ``l`` for
    computational initial state ``c`` after ``s`` steps (row 0 is t = 0).
    ``unitary`` is the full propagator in the labeled idle basis.
    """

    u_comp: np.ndarray
    fidelity: float
    beta1: float
    beta2: float
    leakage: float
    populations: np.ndarray
    unitary: np.ndarray = field(repr=False, default=None)

    @property
    def infidelity(self):
        return 1.0 - self.fidelity

    @property
    def process_fidelity(self):
        return process_fidelity(self.fidelity)


class GateModel:
    """Hamiltonian pieces expressed in the labeled idle eigenbasis.

    H(wc) = static + 2*pi*wc*n_c, with qubit 1 at ``w1_gate``.
    """

    def __init__(self, params, w1_gate=None, basis=None):
        self.params = params
        self.w1_gate = params.gate_w1 if w1_gate is None else float(w1_gate)
        self.basis = idle_eigenbasis(params) if basis is None else basis
        levels = params.levels
        w = self.basis.vectors
        wc0 = params.coupler.freq
        n_c = number_operator(levels, 1)
        h_gate = build_hamiltonian(params, wc0, w1_override=self.w1_gate) - TWO_PI * wc0 * n_c
        self.static = _hermitize(w.conj().T @ h_gate @ w)
        self.coupler_n = _hermitize(w.conj().T @ n_c @ w)
        # dH/d(wc) in rad/ns per GHz
        self.dh_dwc = TWO_PI * self.coupler_n
        self.comp = np.array([label_index(lab, levels) for lab in COMPUTATIONAL_LABELS])
        self.tracked = np.array([label_index(lab, levels) for lab in TRACKED_LABELS])
        self.dim = params.dim

    def hamiltonian(self, wc):
        return self.static + TWO_PI * wc * self.coupler_n

    def step(self, wc, dt):
        """Return (eigendecomposition, propagator) for one constant segment."""
        eig = herm_eig(self.hamiltonian(wc))
        v = eig.vectors
        u = (v * np.exp(-1j * eig.values * dt)) @ v.conj().T
        return eig, u


def _hermitize(m):
    return 0.5 * (m + m.conj().T)


_MODEL_CACHE = {}


def gate_model(params, w1_gate=None):
    """Cached :class:`GateModel` keyed on the (frozen) parameters."""
    key = (params, None if w1_gate is None else float(w1_gate))
    model = _MODEL_CACHE.get(key)
    if model is None:
        if len(_MODEL_CACHE) > 64:
            _MODEL_CACHE.clear()
        model = _MODEL_CACHE[key] = GateModel(params, w1_gate)
    return model


def _evolve(model, segments, record_every=None):
    """Multiply segment propagators; optionally snapshot every k segments."""
    u = np.eye(model.dim, dtype=complex)
    snaps = [u]
    cache = {}
    for idx, (wc, dt) in enumerate(segments, start=1):
        key = (wc, dt)
        step_u = cache.get(key)
        if step_u is None:
            step_u = cache[key] = model.step(wc, dt)[1]
        u = step_u @ u
        if record_every and idx % record_every == 0:
            snaps.append(u)
    return u, snaps


def _evaluation(model, u, snaps):
    u_comp = u[np.ix_(model.comp, model.comp)]
    f, b1, b2 = cz_fidelity(u_comp)
    cols = np.stack([s[:, model.comp] for s in snaps])  # (steps, dim, 4)
    pops = np.abs(cols[:, model.tracked, :]) ** 2
    pops = np.transpose(pops, (0, 2, 1))
    return GateEvaluation(u_comp, f, b1, b2, leakage(u_comp), pops, u)


def propagate(params, sched, w1_gate=None, model=None):
    """Evolve under a piecewise-constant schedule and score the CZ gate."""
    if model is None:
        model = gate_model(params, w1_gate)
    segments = [(float(v), sched.step_len) for v in sched.values]
    u, snaps = _evolve(model, segments, record_every=1)
    return _evaluation(model, u, snaps)


def cz_phase_overlap(u_comp, beta1, beta2):
    """Tr[U_CZ^dag . diag(1, e^{i b2}, e^{i b1}, e^{i(b1+b2)}) . u_comp]."""
    d = np.diagonal(u_comp)
    phases = np.array([1.0, np.exp(1j * beta2), np.exp(1j * beta1), np.exp(1j * (beta1 + beta2))])
    return np.sum(np.conj(CZ_DIAG) * phases * d)


def fidelity_at(u_comp, beta1, beta2):
    """Average gate fidelity (d = 4) of ``u_comp`` against CZ at fixed phases."""
    norm = np.real(np.vdot(u_comp, u_comp))
    tr = cz_phase_overlap(u_comp, beta1, beta2)
    return float((norm + abs(tr) ** 2) / 20.0)


def _best_beta2(a, b, c, d, beta1):
    e = np.exp(1j * beta1)
    return a + e * c, b - e * d


def cz_fidelity(u_comp):
    """Average CZ gate fidelity maximized over virtual-Z phases.

    Returns (F, beta1, beta2). For fixed beta1 the best beta2 aligns the two
    halves of the trace, so only a 1-D search over beta1 remains.
    """
    u_comp = np.asarray(u_comp, dtype=complex)
    # |000> fixes the global phase; beta values are unaffected by it
    m00 = u_comp[0, 0]
    if abs(m00) > 0:
        u_comp = u_comp * (abs(m00) / m00)
    a, b, c, d = np.diagonal(u_comp)

    def neg_mag(beta1):
        x, y = _best_beta2(a, b, c, d, beta1)
        return -(abs(x) + abs(y))

    grid = np.linspace(-np.pi, np.pi, 64, endpoint=False)
    vals = [neg_mag(g) for g in grid]
    k = int(np.argmin(vals))
    h = grid[1] - grid[0]
    res = minimize_scalar(neg_mag, bounds=(grid[k] - h, grid[k] + h), method="bounded",
                          options={"xatol": 1e-12})
    beta1 = res.x if res.fun <= vals[k] else grid[k]
    x, y = _best_beta2(a, b, c, d, beta1)
    beta2 = np.angle(x) - np.angle(y) if abs(y) > 0 else 0.0
    beta1, beta2 = _newton_polish(u_comp, beta1, beta2)
    beta1 = _wrap(beta1)
    beta2 = _wrap(beta2)
    f = min(max(fidelity_at(u_comp, beta1, beta2), 0.0), 1.0)
    return f, beta1, beta2


def _newton_polish(u_comp, beta1, beta2, iters=4):
    """Newton steps on |Tr M|^2 in (beta1, beta2).

    The bounded scalar search only pins a smooth maximum to about 1e-8 rad;
    gradients taken at fixed phases need the maximum to machine precision.
    """
    c = np.conj(CZ_DIAG) * np.diagonal(u_comp)

    def terms(b1, b2):
        e = np.array([1.0, np.exp(1j * b2), np.exp(1j * b1), np.exp(1j * (b1 + b2))]) * c
        tr = e.sum()
        d1 = 1j * (e[2] + e[3])
        d2 = 1j * (e[1] + e[3])
        d11, d22, d12 = -(e[2] + e[3]), -(e[1] + e[3]), -e[3]
        g = 2 * np.real(np.conj(tr) * np.array([d1, d2]))
        h = 2 * np.real(np.array([
            [np.conj(d1) * d1 + np.conj(tr) * d11, np.conj(d1) * d2 + np.conj(tr) * d12],
            [np.conj(d2) * d1 + np.conj(tr) * d12, np.conj(d2) * d2 + np.conj(tr) * d22],
        ]))
        return abs(tr) ** 2, g, h

    best = np.array([beta1, beta2], dtype=float)
    val, g, h = terms(*best)
    for _ in range(iters):
        if np.any(np.linalg.eigvalsh(h) >= 0):
            break  # not a strict local maximum; keep the search result
        trial = best - np.linalg.solve(h, g)
        tval, tg, th = terms(*trial)
        if tval < val:
            break
        best, val, g, h = trial, tval, tg, th
    return float(best[0]), float(best[1])


def _wrap(x):
    return float((x + np.pi) % (2 * np.pi) - np.pi)


def process_fidelity(avg_fidelity, dim=4):
    """Entanglement fidelity from average gate fidelity (unitary-in-subspace form)."""
    return ((dim + 1) * avg_fidelity - 1) / dim


def leakage(u_comp):
    """Population lost from the computational subspace, averaged over its basis."""
    u_comp = np.asarray(u_comp)
    return float(1.0 - np.real(np.vdot(u_comp, u_comp)) / 4.0)


def reward(fidelity):
    """-log10(1 - F), capped at REWARD_CAP."""
    if not 0.0 <= fidelity <= 1.0:
        raise PreconditionError(f"fidelity must lie in [0, 1], got {fidelity}")
    err = 1.0 - fidelity
    if err < 10.0 ** -REWARD_CAP:
        return REWARD_CAP
    return float(-math.log10(err))


@dataclass(frozen=True, eq=False)
class SmoothedPulse:
    """A schedule whose step edges follow logistic ramps of width ``width`` ns."""

    base: PulseSchedule
    width: float
    sub_step: float = None
    idle: float = 6.38

    def __post_init__(self):
        if self.width <= 0:
            raise PreconditionError(f"width must be positive, got {self.width}")
        sub = self.base.step_len / 10 if self.sub_step is None else self.sub_step
        if sub <= 0 or sub > self.base.step_len / 10 + 1e-15:
            raise PreconditionError(f"sub_step must be in (0, step/10], got {sub}")
        object.__setattr__(self, "sub_step", float(sub))

    def levels_and_edges(self):
        """Plateau values (idle, v1..vn, idle) and the n+1 transition times."""
        v = np.concatenate([[self.idle], self.base.values, [self.idle]])
        edges = np.arange(self.base.n + 1) * self.base.step_len
        return v, edges

    def waveform(self, t):
        v, edges = self.levels_and_edges()
        t = np.asarray(t, dtype=float)
        jumps = np.diff(v)
        ramps = expit((t[..., None] - edges) / self.width)
        return self.idle + ramps @ jumps


def smooth_pulse(sp, sub_step=None):
    """Sample the smoothed waveform at sub-step midpoints over [0, gate_time].

    Returns (times, values); each base step is split into an integer number
    of sub-steps no longer than ``sub_step``.
    """
    h = sp.sub_step if sub_step is None else sub_step
    per_step = int(math.ceil(sp.base.step_len / h - 1e-9))
    h = sp.base.step_len / per_step
    t = (np.arange(sp.base.n * per_step) + 0.5) * h
    return t, sp.waveform(t), per_step, h


def _merge(values, h):
    """Collapse runs of bit-identical samples into single segments."""
    segments = []
    for v in values:
        v = float(v)
        if segments and segments[-1][0] == v:
            segments[-1][1] += h
        else:
            segments.append([v, h])
    return segments


# Commutator-free fourth-order weights for the Gauss points t0 + (1/2 -+ sqrt(3)/6) h.
_CF4_A = 0.25 - math.sqrt(3.0) / 6.0
_CF4_B = 0.25 + math.sqrt(3.0) / 6.0
_GAUSS = 0.5 - math.sqrt(3.0) / 6.0


def _cf4_samples(sp, h):
    """Effective coupler values for a fourth-order exponential integrator.

    Because H is affine in wc, each sub-step of length h becomes two constant
    half-steps at wc = g1 + 2a (g2 - g1) and g1 + 2b (g2 - g1), where g1, g2
    sample the waveform at the Gauss points. On a plateau both equal the
    plateau value exactly, so flat stretches still merge.
    """
    per_step = int(math.ceil(sp.base.step_len / h - 1e-9))
    h = sp.base.step_len / per_step
    start = np.arange(sp.base.n * per_step) * h
    g1 = sp.waveform(start + _GAUSS * h)
    g2 = sp.waveform(start + (1.0 - _GAUSS) * h)
    eff = np.empty(2 * len(start))
    eff[0::2] = g1 + 2 * _CF4_A * (g2 - g1)
    eff[1::2] = g1 + 2 * _CF4_B * (g2 - g1)
    return eff, 2 * per_step, h / 2


def _propagate_samples(model, values, per_step, h):
    u = np.eye(model.dim, dtype=complex)
    snaps = [u]
    cache = {}
    for s in range(len(values) // per_step):
        block = values[s * per_step:(s + 1) * per_step]
        for wc, dt in _merge(block, h):
            key = (wc, round(dt / h))
            step_u = cache.get(key)
            if step_u is None:
                step_u = cache[key] = model.step(wc, dt)[1]
            u = step_u @ u
        snaps.append(u)
    return u, snaps


def propagate_smoothed(params, sp, w1_gate=None, model=None, tol=1e-8, max_halvings=8):
    """Propagate the smoothed waveform, halving the sub-step until F settles.

    Each sub-step is a product of two constant-frequency exponentials chosen
    so the result is fourth-order accurate in the sub-step length.

    Raises :class:`ResolutionError` when two successive resolutions still
    differ by more than ``tol`` after ``max_halvings`` refinements.
    """
    if model is None:
        model = gate_model(params, w1_gate)
    if max_halvings < 1:
        raise PreconditionError("at least one halving is needed for the convergence check")
    h = sp.sub_step
    prev = _evaluation(model, *_propagate_samples(model, *_cf4_samples(sp, h)))
    prev_f = prev.fidelity
    for _ in range(max_halvings):
        h /= 2
        cur = _evaluation(model, *_propagate_samples(model, *_cf4_samples(sp, h)))
        if abs(cur.fidelity - prev.fidelity) < tol:
            return cur
        prev_f = prev.fidelity
        prev = cur
    raise ResolutionError(prev_f, prev.fidelity, h)
