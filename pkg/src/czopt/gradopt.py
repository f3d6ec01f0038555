"""Analytic gradient of the CZ infidelity with respect to per-step coupler
frequencies, and a bounded first-order refiner built on it."""
from dataclasses import dataclass, field

import numpy as np

from .control import (
    CZ_DIAG,
    PulseSchedule,
    cz_fidelity,
    gate_model,
    leakage,
)
from .errors import PreconditionError, TrainingAborted
from .numerics import frechet_weights


@dataclass(frozen=True)
class GradResult:
    infidelity: float
    grad: np.ndarray
    beta1: float = 0.0
    beta2: float = 0.0
    leakage: float = 0.0


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 2000
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-12
    projection: str = "clamp"
    tol: float = 1e-12
    patience: int = 50
    # random ansaetze tried (on top of constant and ramp) by gradient-only runs
    restarts: int = 3

    def __post_init__(self):
        if self.lr <= 0:
            raise PreconditionError("learning rate must be positive")
        if self.tol <= 0:
            raise PreconditionError("tolerance must be positive")
        if self.restarts < 0 or self.patience < 1:
            raise PreconditionError("restarts must be >= 0 and patience >= 1")
        if self.projection != "clamp":
            raise PreconditionError(f"unknown projection mode {self.projection!r}")


def infidelity_and_gradient(params, sched, w1_gate=None, model=None):
    """Infidelity 1 - F and dI/d(wc[k]) in 1/GHz.

    The virtual-Z phases are held at their optimum, so their own derivative
    drops out.
    """
    if model is None:
        model = gate_model(params, w1_gate)
    dt = sched.step_len
    comp = model.comp
    psi = np.eye(model.dim, dtype=complex)[:, comp]
    eigs, steps, states = [], [], [psi]
    for wc in sched.values:
        eig, u = model.step(float(wc), dt)
        eigs.append(eig)
        steps.append(u)
        psi = u @ psi
        states.append(psi)
    u_comp = psi[comp, :]
    f, b1, b2 = cz_fidelity(u_comp)
    phases = np.array([1.0, np.exp(1j * b2), np.exp(1j * b1), np.exp(1j * (b1 + b2))])
    coeff = np.conj(CZ_DIAG) * phases
    trace = np.sum(coeff * np.diagonal(u_comp))

    grad = np.empty(sched.n)
    back = np.eye(model.dim, dtype=complex)[comp, :]  # P^dag U_n ... U_{k+1}
    for k in range(sched.n - 1, -1, -1):
        v = eigs[k].vectors
        dh = v.conj().T @ model.dh_dwc @ v
        du_step = v @ (dh * frechet_weights(eigs[k].values, dt)) @ v.conj().T
        du = back @ du_step @ states[k]
        d_norm = 2.0 * np.real(np.vdot(u_comp, du))
        d_trace = 2.0 * np.real(np.conj(trace) * np.sum(coeff * np.diagonal(du)))
        grad[k] = -(d_norm + d_trace) / 20.0
        back = back @ steps[k]
    return GradResult(1.0 - f, grad, b1, b2, leakage(u_comp))


@dataclass
class RefineResult:
    schedule: PulseSchedule
    infidelity: float
    trace: list = field(default_factory=list)
    best_trace: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)

    def rows(self):
        """CSV rows (iter, infidelity, grad_norm)."""
        return [(i, inf, g) for i, (inf, g) in enumerate(zip(self.trace, self.grad_norms))]


def refine(params, init, cfg=OptimizerConfig(), w1_gate=None, callback=None):
    """Adam-style descent on the infidelity with clamping to the schedule bounds.

    Returns the best schedule ever visited, so the result is never worse than
    ``init``.
    """
    model = gate_model(params, w1_gate)
    lo, hi = init.bounds
    x = np.array(init.values, dtype=float)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    best_x, best_i = x.copy(), np.inf
    result = RefineResult(init, np.inf)
    prev_i, calm = None, 0
    for it in range(cfg.max_iters + 1):
        gr = infidelity_and_gradient(params, init.with_values(x), model=model)
        if not np.isfinite(gr.infidelity) or not np.all(np.isfinite(gr.grad)):
            raise TrainingAborted("non-finite infidelity gradient", it)
        if gr.infidelity < best_i:
            best_i, best_x = gr.infidelity, x.copy()
        result.trace.append(gr.infidelity)
        result.best_trace.append(best_i)
        result.grad_norms.append(float(np.linalg.norm(gr.grad)))
        if callback is not None:
            callback(it, gr)
        if prev_i is not None and abs(prev_i - gr.infidelity) < cfg.tol:
            calm += 1
            if calm >= cfg.patience:
                break
        else:
            calm = 0
        prev_i = gr.infidelity
        if it == cfg.max_iters:
            break
        t = it + 1
        m = cfg.beta1 * m + (1 - cfg.beta1) * gr.grad
        v = cfg.beta2 * v + (1 - cfg.beta2) * gr.grad ** 2
        m_hat = m / (1 - cfg.beta1 ** t)
        v_hat = v / (1 - cfg.beta2 ** t)
        x = np.clip(x - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps), lo, hi)
    result.schedule = init.with_values(best_x)
    result.infidelity = best_i
    return result


ANSATZ_KINDS = ("constant", "ramp", "random")


def naive_ansatz(kind, gate_time, step_len, bounds, rng=None):
    """Starting pulses for gradient-only optimization.

    ``constant`` holds the bound midpoint, ``ramp`` is a symmetric V from the
    upper bound down toward the lower one and back, ``random`` draws uniformly
    from ``rng``.
    """
    lo, hi = bounds
    n = int(round(gate_time / step_len))
    if kind == "constant":
        values = np.full(n, 0.5 * (lo + hi))
    elif kind == "ramp":
        values = lo + (hi - lo) * np.abs(np.linspace(-1.0, 1.0, n))
    elif kind == "random":
        if rng is None:
            raise PreconditionError("random ansatz needs an rng")
        values = rng.uniform(lo, hi, size=n)
    else:
        raise PreconditionError(f"unknown ansatz {kind!r}")
    return PulseSchedule(gate_time, step_len, values, bounds)


def ansatz_set(gate_time, step_len, bounds, rng, n_random=3):
    """The constant, ramp and ``n_random`` random ansätze."""
    out = [("constant", naive_ansatz("constant", gate_time, step_len, bounds)),
           ("ramp", naive_ansatz("ramp", gate_time, step_len, bounds))]
    for i in range(n_random):
        out.append((f"random{i}", naive_ansatz("random", gate_time, step_len, bounds, rng)))
    return out
