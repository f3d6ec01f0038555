"""Run configuration: TOML file plus command-line overrides."""
from dataclasses import asdict, dataclass, field, fields, replace
import hashlib

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .circuit import CircuitParams
from .control import FULL_BOUNDS
from .errors import PreconditionError
from .gradopt import OptimizerConfig
from .rl.sac import SacConfig

METHODS = ("grad", "rl", "rl+grad")


@dataclass(frozen=True)
class SweepSettings:
    times: tuple = (10.0, 12.0, 14.0, 16.0, 18.0, 20.0)
    methods: tuple = METHODS
    seeds: int = 5
    # diagnose
    wc_min: float = 4.5
    wc_max: float = 6.38
    points: int = 100
    # robustness
    vary: str = "wc"
    span: float = 0.1
    grid: int = 50
    # smoothing
    widths: tuple = (0.01, 0.05, 0.1, 0.25, 0.5)
    sub_step: float = 0.1
    # step study
    steps: tuple = (1.0, 2.0, 2.5)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise PreconditionError(f"unknown sweep settings: {sorted(unknown)}")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)


@dataclass(frozen=True)
class RunConfig:
    params: CircuitParams = field(default_factory=CircuitParams)
    gate_time: float = 10.0
    step_len: float = 1.0
    bounds: tuple = FULL_BOUNDS
    method: str = "rl+grad"
    sac: SacConfig = field(default_factory=SacConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    seed: int = 0
    out: str = "runs/default"
    workers: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise PreconditionError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise PreconditionError("seed must be an unsigned 64-bit integer")
        if self.workers < 1:
            raise PreconditionError("workers must be at least 1")
        object.__setattr__(self, "bounds", (float(self.bounds[0]), float(self.bounds[1])))

    @property
    def levels(self):
        return self.params.levels[0]

    def to_dict(self):
        return {
            "seed": self.seed,
            "method": self.method,
            "out": self.out,
            "workers": self.workers,
            "circuit": self.params.to_dict(),
            "schedule": {"gate_time": self.gate_time, "step": self.step_len, "bounds": list(self.bounds)},
            "sac": _plain(asdict(self.sac)),
            "optimizer": asdict(self.optimizer),
            "sweep": _plain(asdict(self.sweep)),
        }

    @classmethod
    def from_dict(cls, d):
        sched = d.get("schedule", {})
        sac = dict(d.get("sac", {}))
        if "hidden" in sac:
            sac["hidden"] = tuple(sac["hidden"])
        return cls(
            params=CircuitParams.from_dict(d.get("circuit", {})),
            gate_time=float(sched.get("gate_time", 10.0)),
            step_len=float(sched.get("step", 1.0)),
            bounds=tuple(sched.get("bounds", FULL_BOUNDS)),
            method=d.get("method", "rl+grad"),
            sac=SacConfig.from_dict(sac),
            optimizer=OptimizerConfig(**d.get("optimizer", {})),
            sweep=SweepSettings.from_dict(d.get("sweep", {})),
            seed=int(d.get("seed", 0)),
            out=d.get("out", "runs/default"),
            workers=int(d.get("workers", 1)),
        )

    def override(self, seed=None, out=None, method=None, levels=None, workers=None):
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        if out is not None:
            cfg = replace(cfg, out=out)
        if method is not None:
            cfg = replace(cfg, method=method)
        if levels is not None:
            cfg = replace(cfg, params=cfg.params.with_levels(levels))
        if workers is not None:
            cfg = replace(cfg, workers=workers)
        return cfg


def _plain(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def load_config(path):
    with open(path, "rb") as fh:
        return RunConfig.from_dict(tomllib.load(fh))


def cell_seed(base_seed, *coords):
    """Independent, reproducible 64-bit seed for one sweep cell."""
    key = repr((int(base_seed),) + tuple(coords)).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")
