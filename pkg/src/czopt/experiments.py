"""Experiment runners behind the command-line interface.

Each ``cmd_*`` writes its data files plus one manifest into the configured
output directory and returns the manifest dictionary. Manifests are named
``manifest_<command>.json`` so several commands can share a directory. CSV
bodies contain no timestamps, so identical configurations reproduce them
byte for byte.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
import csv
import json
import logging
import os
import platform
import statistics
import tempfile
import time

import numpy as np
import scipy

from . import __version__
from .circuit import TRACKED_LABELS, decoherence_error, xx_coupling_sw, zz_coupling
from .config import cell_seed
from .control import PulseSchedule, SmoothedPulse, propagate, propagate_smoothed
from .errors import LabelingError, ResolutionError
from .gradopt import ansatz_set, refine
from .rl.env import GateEnv
from .rl.train import train

log = logging.getLogger(__name__)

COHERENCE_TIME_NS = 60_000.0


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return x


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_json_atomic(path, obj):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".json")
    with os.fdopen(fd, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


class Manifest:
    """Collects emitted files and summary numbers for one command."""

    def __init__(self, cfg, command, tag=None):
        self.cfg = cfg
        self.command = command
        self.name = f"manifest_{tag or command}.json".replace("-", "_")
        self.files = []
        self.summary = {}
        self.started = time.time()
        os.makedirs(cfg.out, exist_ok=True)

    def path(self, name):
        self.files.append(name)
        return os.path.join(self.cfg.out, name)

    def finish(self, status="ok", error=None):
        doc = {
            "command": self.command,
            "status": status,
            "seed": self.cfg.seed,
            "config": self.cfg.to_dict(),
            "versions": {
                "czopt": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "wall_clock_s": round(time.time() - self.started, 3),
            "files": list(self.files),
            "summary": self.summary,
        }
        if error is not None:
            doc["error"] = error
        write_json_atomic(os.path.join(self.cfg.out, self.name), doc)
        return doc


# optimization -----------------------------------------------------------------


@dataclass
class Outcome:
    method: str
    schedule: PulseSchedule
    fidelity: float
    leakage: float
    rl_fidelity: float = None
    rl_leakage: float = None
    rl_schedule: PulseSchedule = None
    mean_ansatz_fidelity: float = None
    learning_curve: list = field(default_factory=list)
    refine_rows: list = field(default_factory=list)

    @property
    def infidelity(self):
        return 1.0 - self.fidelity


def optimize(cfg, gate_time, step_len, seed, method=None):
    """Run one optimization cell and return its :class:`Outcome`."""
    method = method or cfg.method
    params = cfg.params
    bounds = cfg.bounds
    if method == "grad":
        rng = np.random.default_rng(seed)
        best = None
        fids = []
        for _, init in ansatz_set(gate_time, step_len, bounds, rng, cfg.optimizer.restarts):
            res = refine(params, init, cfg.optimizer)
            fids.append(1.0 - res.infidelity)
            if best is None or res.infidelity < best.infidelity:
                best = res
        ev = propagate(params, best.schedule)
        return Outcome(method, best.schedule, ev.fidelity, ev.leakage,
                       mean_ansatz_fidelity=float(np.mean(fids)), refine_rows=best.rows())
    env = GateEnv(params, gate_time, step_len, bounds)
    tr = train(env, cfg.sac, seed=seed)
    sched = env.schedule(tr.best_values)
    rl_ev = propagate(params, sched)
    out = Outcome(method, sched, rl_ev.fidelity, rl_ev.leakage, rl_fidelity=rl_ev.fidelity,
                  rl_leakage=rl_ev.leakage, rl_schedule=sched, learning_curve=tr.rows())
    if method == "rl+grad":
        res = refine(params, sched, cfg.optimizer)
        ev = propagate(params, res.schedule)
        out.schedule, out.fidelity, out.leakage = res.schedule, ev.fidelity, ev.leakage
        out.refine_rows = res.rows()
    return out


def population_rows(ev):
    labels = ["".join(map(str, lab)) for lab in TRACKED_LABELS]
    init = labels[:4]
    rows = []
    for step in range(ev.populations.shape[0]):
        for li, lab in enumerate(labels):
            for ci, c in enumerate(init):
                rows.append((step, lab, c, float(ev.populations[step, ci, li])))
    return rows


def _run_pool(fn, jobs, workers):
    if workers <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        return [f.result() for f in futures]


# commands ---------------------------------------------------------------------


def cmd_diagnose(cfg):
    """Static ZZ and dispersive XX couplings across a coupler-frequency grid."""
    man = Manifest(cfg, "diagnose")
    s = cfg.sweep
    rows = []
    for wc in np.linspace(s.wc_min, s.wc_max, s.points):
        wc = float(wc)
        p = cfg.params.with_freqs(wc=wc)
        zz = xx = ""
        status = "ok"
        try:
            zz = zz_coupling(p)
        except LabelingError as exc:
            status = f"error: {exc}"
        try:
            xx = xx_coupling_sw(p)
        except ZeroDivisionError:
            status = "warning: singular detuning"
        rows.append((wc, zz, xx, status))
    write_csv(man.path("diagnose.csv"), ["wc_ghz", "zz_khz", "xx_sw_mhz", "status"], rows)
    man.summary = {
        "idle_zz_khz": zz_coupling(cfg.params),
        "idle_xx_sw_mhz": xx_coupling_sw(cfg.params),
    }
    return man.finish()


def cmd_optimize(cfg):
    """Optimize one pulse with the configured method and write its artifacts."""
    man = Manifest(cfg, "optimize")
    try:
        out = optimize(cfg, cfg.gate_time, cfg.step_len, cfg.seed)
        out.schedule.save(man.path("pulse.json"))
        ev = propagate(cfg.params, out.schedule)
        write_csv(man.path("populations.csv"), ["step", "label", "initial_state", "population"],
                  population_rows(ev))
        if out.learning_curve:
            write_csv(man.path("learning_curve.csv"), ["episode", "reward", "eval_fidelity"],
                      out.learning_curve)
        if out.refine_rows:
            write_csv(man.path("refine_curve.csv"), ["iter", "infidelity", "grad_norm"], out.refine_rows)
        man.summary = {
            "method": out.method,
            "fidelity": ev.fidelity,
            "process_fidelity": ev.process_fidelity,
            "infidelity": ev.infidelity,
            "leakage": ev.leakage,
            "beta1": ev.beta1,
            "beta2": ev.beta2,
            "rl_fidelity": out.rl_fidelity,
            "mean_ansatz_fidelity": out.mean_ansatz_fidelity,
            "decoherence_error": float(decoherence_error(cfg.gate_time, COHERENCE_TIME_NS)),
        }
    except Exception as exc:
        man.finish("failed", repr(exc))
        raise
    return man.finish()


def _family(method):
    return "grad" if method == "grad" else "rl"


def _sweep_cell(cfg, gate_time, step_len, method, seed_index):
    """One optimization; rl and rl+grad share the RL stage via a common seed.

    Returns {method: (infidelity, leakage, status, schedule dict or None)}
    for the methods covered.
    """
    seed = cell_seed(cfg.seed, gate_time, step_len, _family(method), seed_index)
    covered = ("grad",) if method == "grad" else ("rl", "rl+grad") if method == "rl+grad" else ("rl",)
    try:
        out = optimize(cfg, gate_time, step_len, seed, method)
    except Exception as exc:  # recorded per cell; the sweep continues
        return {m: ("", "", f"error: {exc!r}", None) for m in covered}
    res = {method: (out.infidelity, out.leakage, "ok", out.schedule.to_dict())}
    if method == "rl+grad":
        res["rl"] = (1.0 - out.rl_fidelity, out.rl_leakage, "ok", out.rl_schedule.to_dict())
    return res


def _save_pulses(man, cells, label):
    """Write one pulse JSON per successful cell; ``label`` names the file from the cell key."""
    os.makedirs(os.path.join(man.cfg.out, "pulses"), exist_ok=True)
    for key in sorted(cells, key=repr):
        sched = cells[key][3]
        if sched is not None:
            PulseSchedule.from_dict(sched).save(man.path(os.path.join("pulses", label(key))))


def _cell_jobs(cfg, gate_time, step_len, methods):
    jobs = []
    for i in range(cfg.sweep.seeds):
        if "grad" in methods:
            jobs.append((cfg, gate_time, step_len, "grad", i))
        if "rl+grad" in methods:
            jobs.append((cfg, gate_time, step_len, "rl+grad", i))
        elif "rl" in methods:
            jobs.append((cfg, gate_time, step_len, "rl", i))
    return jobs


def cmd_sweep_gate_time(cfg, times=None):
    """Infidelity and leakage versus gate time for each method and seed."""
    man = Manifest(cfg, "sweep-gate-time")
    times = cfg.sweep.times if times is None else times
    for t in times:
        if not 5.0 <= t <= 50.0:
            man.finish("failed", f"gate time {t} outside [5, 50] ns")
            raise ValueError(f"gate time {t} outside [5, 50] ns")
    methods = cfg.sweep.methods
    jobs = [job for t in times for job in _cell_jobs(cfg, float(t), cfg.step_len, methods)]
    results = _run_pool(_sweep_cell, jobs, cfg.workers)
    cells = {(j[1], j[4], m): r for j, res in zip(jobs, results) for m, r in res.items()}
    rows = []
    for t in times:
        for m in methods:
            for i in range(cfg.sweep.seeds):
                inf, leak, status, _ = cells[(float(t), i, m)]
                rows.append((float(t), m, i, inf, leak, status))
    _save_pulses(man, {k: v for k, v in cells.items() if k[2] in methods},
                 lambda k: f"gate{k[0]:g}ns_{k[2].replace('+', '_')}_seed{k[1]}.json")
    write_csv(man.path("sweep_gate_time.csv"),
              ["gate_time_ns", "method", "seed", "infidelity", "leakage", "status"], rows)
    man.summary = {"median_infidelity": _medians(rows, key=(0, 1), value=3),
                   "best_seed_leakage": _best_seed_leakage(rows)}
    return man.finish()


def _medians(rows, key, value):
    groups = {}
    for row in rows:
        if row[value] == "":
            continue
        groups.setdefault(tuple(row[k] for k in key), []).append(row[value])
    return {"|".join(map(str, k)): statistics.median(v) for k, v in groups.items()}


def _best_seed_leakage(rows):
    """Leakage of the lowest-infidelity seed for each (gate time, method)."""
    best = {}
    for t, m, _, inf, leak, _ in rows:
        if inf == "":
            continue
        key = f"{t}|{m}"
        if key not in best or inf < best[key][0]:
            best[key] = (inf, leak)
    return {k: v[1] for k, v in best.items()}


def robustness_rows(cfg, sched, vary, values):
    w1_gate = cfg.params.gate_w1
    rows = []
    for v in values:
        v = float(v)
        p = cfg.params.with_freqs(**{vary: v})
        try:
            ev = propagate(p, sched, w1_gate=w1_gate)
            rows.append((vary, v, ev.fidelity, "ok"))
        except LabelingError as exc:
            rows.append((vary, v, "", f"error: {exc}"))
    return rows


def robustness_tag(vary):
    return f"robustness_{vary}"


def cmd_robustness(cfg, pulse_file, vary=None, values=None):
    """Re-evaluate a fixed pulse while one idle frequency is detuned.

    Qubit 1's operating frequency during the gate stays at its trained value.
    """
    vary = vary or cfg.sweep.vary
    man = Manifest(cfg, "robustness", tag=robustness_tag(vary))
    if vary not in ("w1", "w2", "wc"):
        raise ValueError(f"vary must be w1, w2 or wc, got {vary!r}")
    sched = PulseSchedule.load(pulse_file)
    nominal = {"w1": cfg.params.q1.freq, "w2": cfg.params.q2.freq, "wc": cfg.params.coupler.freq}[vary]
    if values is None:
        values = np.linspace(nominal * (1 - cfg.sweep.span), nominal * (1 + cfg.sweep.span), cfg.sweep.grid)
    rows = robustness_rows(cfg, sched, vary, values)
    write_csv(man.path(f"robustness_{vary}.csv"), ["vary", "value_ghz", "fidelity", "status"], rows)
    man.summary = {"nominal_fidelity": propagate(cfg.params, sched).fidelity, "vary": vary}
    return man.finish()


def smoothing_rows(cfg, sched, widths):
    rows = []
    for w in sorted(widths):
        sp = SmoothedPulse(sched, float(w), min(cfg.sweep.sub_step, sched.step_len / 10),
                           idle=cfg.params.coupler.freq)
        try:
            rows.append((float(w), propagate_smoothed(cfg.params, sp).fidelity, "ok"))
        except ResolutionError as exc:
            rows.append((float(w), "", f"error: {exc}"))
    return rows


def cmd_smoothing(cfg, pulse_file, widths=None):
    """Fidelity of a pulse whose step edges are replaced by logistic ramps."""
    man = Manifest(cfg, "smoothing")
    widths = cfg.sweep.widths if widths is None else widths
    if any(w <= 0 for w in widths):
        raise ValueError("widths must be positive")
    sched = PulseSchedule.load(pulse_file)
    rows = smoothing_rows(cfg, sched, widths)
    write_csv(man.path("smoothing.csv"), ["w_ns", "fidelity", "status"], rows)
    man.summary = {"unsmoothed_fidelity": propagate(cfg.params, sched).fidelity}
    return man.finish()


def cmd_step_study(cfg, steps=None):
    """rl+grad infidelity versus control step length at fixed gate time."""
    man = Manifest(cfg, "step-study")
    steps = cfg.sweep.steps if steps is None else steps
    for s in steps:
        n = round(cfg.gate_time / s)
        if abs(n * s - cfg.gate_time) > 1e-9:
            man.finish("failed", f"step {s} does not divide {cfg.gate_time}")
            raise ValueError(f"step {s} ns does not divide gate time {cfg.gate_time} ns")
    jobs = [(cfg, cfg.gate_time, float(s), "rl+grad", i) for s in steps for i in range(cfg.sweep.seeds)]
    results = _run_pool(_sweep_cell, jobs, cfg.workers)
    rows = [(j[2], j[4], r["rl+grad"][0], r["rl+grad"][2]) for j, r in zip(jobs, results)]
    _save_pulses(man, {(j[2], j[4]): r["rl+grad"] for j, r in zip(jobs, results)},
                 lambda k: f"step{k[0]:g}ns_seed{k[1]}.json")
    write_csv(man.path("step_study.csv"), ["step_ns", "seed", "infidelity", "status"], rows)
    man.summary = {"median_infidelity": _medians(rows, key=(0,), value=2)}
    return man.finish()


def with_out(cfg, out):
    return replace(cfg, out=out)
