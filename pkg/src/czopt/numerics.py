"""Dense Hermitian linear algebra: eigendecomposition, propagators and the
directional derivative of the matrix exponential.

All routines are pure functions on numpy arrays. Frequencies are angular
(rad/ns) and times are in ns.
"""
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, PreconditionError

HERMITIAN_TOL = 1e-9


@dataclass(frozen=True)
class HermEig:
    """Eigenvalues (ascending) and unitary eigenvector matrix (columns)."""

    values: np.ndarray
    vectors: np.ndarray


def _check_hermitian(h, name="H"):
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise PreconditionError(f"{name} must be square, got shape {h.shape}")
    if not np.all(np.isfinite(h)):
        raise PreconditionError(f"{name} has non-finite entries")
    if h.size and np.max(np.abs(h - h.conj().T)) >= HERMITIAN_TOL:
        raise PreconditionError(f"{name} is not Hermitian")
    return h


def herm_eig(h):
    """Diagonalize a Hermitian matrix.

    Backed by LAPACK (``numpy.linalg.eigh``); convergence failures are
    re-raised as :class:`NumericalError`.
    """
    h = _check_hermitian(h)
    try:
        values, vectors = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition did not converge: {exc}") from exc
    return HermEig(values, vectors)


def unitary_step(h, dt):
    """Return exp(-i h dt)."""
    if dt < 0:
        raise PreconditionError(f"dt must be non-negative, got {dt}")
    eig = herm_eig(h)
    return _expm_from_eig(eig, dt)


def _expm_from_eig(eig, dt):
    v = eig.vectors
    return (v * np.exp(-1j * eig.values * dt)) @ v.conj().T


def frechet_weights(values, dt):
    """Divided differences of x -> exp(-i x dt) on an eigenvalue set.

    Off-diagonal entries use the sinc form, which is the same quantity as
    (e^{-i a dt} - e^{-i b dt}) / (a - b) without the cancellation.
    """
    lam = np.asarray(values, dtype=float)
    diff = lam[:, None] - lam[None, :]
    mean = 0.5 * (lam[:, None] + lam[None, :])
    tol = 1e-9 * max(np.max(np.abs(lam)), 1.0) if lam.size else 0.0
    x = 0.5 * diff * dt
    # np.sinc is sin(pi x)/(pi x)
    w = -1j * dt * np.exp(-1j * mean * dt) * np.sinc(x / np.pi)
    near = np.abs(diff) <= tol
    if np.any(near):
        limit = -1j * dt * np.exp(-1j * lam * dt)
        w = np.where(near, np.broadcast_to(limit[:, None], w.shape), w)
    return w


def expm_frechet(h, dh, dt, eig=None):
    """Directional derivative of exp(-i h dt) along the perturbation dh.

    ``eig`` may carry a precomputed decomposition of ``h``.
    """
    h = np.asarray(h)
    dh = np.asarray(dh)
    if h.shape != dh.shape:
        raise PreconditionError(f"dimension mismatch: {h.shape} vs {dh.shape}")
    if eig is None:
        eig = herm_eig(h)
    v = eig.vectors
    dh_eig = v.conj().T @ dh @ v
    return v @ (dh_eig * frechet_weights(eig.values, dt)) @ v.conj().T


def random_hermitian(dim, rng, scale=1.0):
    """Draw a dense Hermitian matrix with Gaussian entries."""
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * 0.5 * (a + a.conj().T)
