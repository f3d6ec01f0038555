"""Three-transmon tunable-coupler circuit: Hamiltonian, idle-point labels and
static coupling diagnostics.

User-facing frequencies are linear (GHz); Hamiltonians carry the factor 2*pi
so that they are in rad/ns and times are in ns.
"""
from dataclasses import dataclass, field, replace
from functools import lru_cache
import itertools

import numpy as np

from .errors import LabelingError, PreconditionError
from .numerics import HermEig, herm_eig

TWO_PI = 2.0 * np.pi

COMPUTATIONAL_LABELS = ((0, 0, 0), (0, 0, 1), (1, 0, 0), (1, 0, 1))
TRACKED_LABELS = (
    (0, 0, 0), (0, 0, 1), (1, 0, 0), (1, 0, 1),
    (0, 1, 0), (1, 1, 0), (0, 1, 1), (0, 0, 2), (2, 0, 0),
)


@dataclass(frozen=True)
class TransmonParams:
    freq: float
    anharm: float
    levels: int = 3

    def __post_init__(self):
        if self.freq <= 0:
            raise PreconditionError(f"transmon frequency must be positive, got {self.freq}")
        if self.anharm >= 0:
            raise PreconditionError(f"anharmonicity must be negative, got {self.anharm}")
        if self.levels < 3:
            raise PreconditionError(f"need at least 3 levels, got {self.levels}")


@dataclass(frozen=True)
class CircuitParams:
    """Two data transmons (q1, q2) coupled directly and through a coupler."""

    q1: TransmonParams = field(default_factory=lambda: TransmonParams(4.2, -0.200))
    coupler: TransmonParams = field(default_factory=lambda: TransmonParams(6.38, -0.100))
    q2: TransmonParams = field(default_factory=lambda: TransmonParams(5.2, -0.200))
    g12: float = 0.007
    g1c: float = 0.085
    g2c: float = 0.085

    def __post_init__(self):
        if min(self.g12, self.g1c, self.g2c) < 0:
            raise PreconditionError("couplings must be non-negative")
        # the hierarchy is moot once the coupler is disconnected from both qubits
        coupled = self.g1c > 0 or self.g2c > 0
        if self.g12 > 0 and coupled and not (self.g12 < self.g1c and self.g12 < self.g2c):
            raise PreconditionError("direct coupling must be weaker than the coupler couplings")

    @property
    def levels(self):
        return self.q1.levels, self.coupler.levels, self.q2.levels

    @property
    def dim(self):
        a, b, c = self.levels
        return a * b * c

    @property
    def gate_w1(self):
        """Qubit-1 operating frequency that makes |101> and |002> resonant."""
        return self.q2.freq + self.q2.anharm

    def with_levels(self, levels):
        return replace(
            self,
            q1=replace(self.q1, levels=levels),
            coupler=replace(self.coupler, levels=levels),
            q2=replace(self.q2, levels=levels),
        )

    def with_freqs(self, w1=None, wc=None, w2=None):
        q1 = self.q1 if w1 is None else replace(self.q1, freq=w1)
        qc = self.coupler if wc is None else replace(self.coupler, freq=wc)
        q2 = self.q2 if w2 is None else replace(self.q2, freq=w2)
        return replace(self, q1=q1, coupler=qc, q2=q2)

    def swapped(self):
        """Exchange the roles of qubit 1 and qubit 2."""
        return replace(self, q1=self.q2, q2=self.q1, g1c=self.g2c, g2c=self.g1c)

    def uncoupled(self):
        return replace(self, g12=0.0, g1c=0.0, g2c=0.0)

    # keys: w1, w2, wc, a1, ac, a2, g12, g1c, g2c, levels
    def to_dict(self):
        levels = set(self.levels)
        return {
            "w1": self.q1.freq, "w2": self.q2.freq, "wc": self.coupler.freq,
            "a1": self.q1.anharm, "ac": self.coupler.anharm, "a2": self.q2.anharm,
            "g12": self.g12, "g1c": self.g1c, "g2c": self.g2c,
            "levels": levels.pop() if len(levels) == 1 else list(self.levels),
        }

    @classmethod
    def from_dict(cls, d):
        default = cls()
        levels = d.get("levels", 3)
        l1, lc, l2 = (levels,) * 3 if isinstance(levels, int) else tuple(levels)
        return cls(
            q1=TransmonParams(d.get("w1", default.q1.freq), d.get("a1", default.q1.anharm), l1),
            coupler=TransmonParams(d.get("wc", default.coupler.freq), d.get("ac", default.coupler.anharm), lc),
            q2=TransmonParams(d.get("w2", default.q2.freq), d.get("a2", default.q2.anharm), l2),
            g12=d.get("g12", default.g12),
            g1c=d.get("g1c", default.g1c),
            g2c=d.get("g2c", default.g2c),
        )


@lru_cache(maxsize=None)
def _ladder_ops(levels):
    """Annihilation operators (b1, bc, b2) on the tensor space, q1 slowest."""
    mats = []
    for slot in range(3):
        factors = []
        for j, d in enumerate(levels):
            if j == slot:
                factors.append(np.diag(np.sqrt(np.arange(1.0, d)), 1))
            else:
                factors.append(np.eye(d))
        op = np.kron(np.kron(factors[0], factors[1]), factors[2])
        op.setflags(write=False)
        mats.append(op)
    return tuple(mats)


def number_operator(levels, slot):
    b = _ladder_ops(tuple(levels))[slot]
    return b.T @ b


def label_index(label, levels):
    i, j, k = label
    _, dc, d2 = levels
    return (i * dc + j) * d2 + k


def all_labels(levels):
    return list(itertools.product(*(range(d) for d in levels)))


def build_hamiltonian(p, wc, w1_override=None):
    """Circuit Hamiltonian in rad/ns with the coupler at ``wc`` GHz."""
    if wc <= 0:
        raise PreconditionError(f"coupler frequency must be positive, got {wc}")
    if w1_override is not None and w1_override <= 0:
        raise PreconditionError(f"w1_override must be positive, got {w1_override}")
    b1, bc, b2 = _ladder_ops(p.levels)
    w1 = p.q1.freq if w1_override is None else w1_override
    h = np.zeros((p.dim, p.dim))
    for b, w, a in ((b1, w1, p.q1.anharm), (bc, wc, p.coupler.anharm), (b2, p.q2.freq, p.q2.anharm)):
        n = b.T @ b
        h += w * n + 0.5 * a * (n @ n - n)
    x1, xc, x2 = (b + b.T for b in (b1, bc, b2))
    h += p.g12 * (x1 @ x2) + p.g1c * (x1 @ xc) + p.g2c * (x2 @ xc)
    return (TWO_PI * h).astype(complex)


@dataclass(frozen=True)
class LabeledBasis:
    """Idle-point eigenbasis with a bijective bare-label assignment.

    ``columns[m]`` is the eigenvector column carrying the label whose tensor
    index is ``m``; ``overlaps[m]`` is its squared overlap with that bare state.
    """

    eig: HermEig
    levels: tuple
    columns: np.ndarray
    overlaps: np.ndarray

    def column(self, label):
        return int(self.columns[label_index(label, self.levels)])

    def label(self, column):
        m = int(np.flatnonzero(self.columns == column)[0])
        return tuple(int(x) for x in np.unravel_index(m, self.levels))

    def energy(self, label):
        return float(self.eig.values[self.column(label)])

    @property
    def vectors(self):
        """Eigenvectors reordered so column m carries tensor label m."""
        return self.eig.vectors[:, self.columns]

    @property
    def energies(self):
        return self.eig.values[self.columns]


def assign_labels(eig, levels, min_overlap=0.5, require=None):
    """Greedy label assignment by descending overlap with bare states.

    Falls back to a maximum-weight matching when the greedy pass would leave a
    matched pair below ``min_overlap``. Only labels in ``require`` (default:
    all) must clear ``min_overlap``.
    """
    weights = np.abs(eig.vectors) ** 2  # rows: bare index, cols: eigen index
    dim = weights.shape[0]
    order = np.argsort(-weights, axis=None, kind="stable")
    columns = -np.ones(dim, dtype=int)
    taken = np.zeros(dim, dtype=bool)
    remaining = dim
    for flat in order:
        bare, col = divmod(int(flat), dim)
        if columns[bare] >= 0 or taken[col]:
            continue
        columns[bare] = col
        taken[col] = True
        remaining -= 1
        if remaining == 0:
            break
    overlaps = weights[np.arange(dim), columns]
    if require is None:
        checked = np.arange(dim)
    else:
        checked = np.array([label_index(lab, levels) for lab in require])
    if np.min(overlaps[checked]) <= min_overlap:
        from scipy.optimize import linear_sum_assignment

        rows, cols = linear_sum_assignment(-weights)
        alt = np.empty(dim, dtype=int)
        alt[rows] = cols
        alt_overlaps = weights[np.arange(dim), alt]
        if np.min(alt_overlaps[checked]) > np.min(overlaps[checked]):
            columns, overlaps = alt, alt_overlaps
    worst = int(checked[np.argmin(overlaps[checked])])
    if overlaps[worst] <= min_overlap:
        raise LabelingError(tuple(int(x) for x in np.unravel_index(worst, levels)), float(overlaps[worst]))
    return columns, overlaps


def idle_eigenbasis(p, require=None):
    """Diagonalize the idle Hamiltonian and label eigenstates by bare-state overlap.

    ``require`` restricts the ambiguity check to a subset of labels; off-idle
    sweeps pass the computational labels because doubly-excited states
    hybridize strongly there.
    """
    h = build_hamiltonian(p, p.coupler.freq)
    eig = herm_eig(h)
    columns, overlaps = assign_labels(eig, p.levels, require=require)
    return LabeledBasis(eig, p.levels, columns, overlaps)


def zz_coupling(p, basis=None):
    """Residual ZZ interaction E101 - E100 - E001 + E000, in kHz."""
    if basis is None:
        basis = idle_eigenbasis(p, require=COMPUTATIONAL_LABELS)
    e = basis.energy
    zeta = e((1, 0, 1)) - e((1, 0, 0)) - e((0, 0, 1)) + e((0, 0, 0))
    return zeta / TWO_PI * 1e6


def xx_coupling_sw(p):
    """Dispersive (Schrieffer-Wolff) transverse coupling between the qubits, in MHz."""
    d1c = p.q1.freq - p.coupler.freq
    d2c = p.q2.freq - p.coupler.freq
    if d1c == 0 or d2c == 0:
        raise ZeroDivisionError("qubit-coupler detuning is zero")
    return 1e3 * (p.g12 + 0.5 * p.g1c * p.g2c * (1.0 / d1c + 1.0 / d2c))


def decoherence_error(t_gate, t_coh):
    if t_coh <= 0:
        raise PreconditionError("coherence time must be positive")
    if t_gate < 0:
        raise PreconditionError("gate time must be non-negative")
    return -np.expm1(-t_gate / t_coh)
