"""Truncated Fock-basis operators and reference states for the quantum model.

Every operator is a dense ``(dim, dim)`` complex ``numpy`` array in the basis
of a unit-frequency reference oscillator.  Builders that accept a
``center_q``/``center_p`` return the operator expressed in a displaced frame,
i.e. with ``q -> q + center_q`` and ``p -> p + center_p`` substituted before
the polynomial is expanded.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.stats

from qcselect.errors import InvalidDimensionError, TruncationError
from qcselect.params import DuffingParams

#: default number of retained oscillator states
DEFAULT_DIM = 80

#: pre-normalisation tail mass above which ``thermal_state`` warns
TAIL_MASS_WARNING = 1e-6


class TruncationWarning(UserWarning):
    """A state loses noticeable probability to the basis cut-off."""


def _check_dim(dim: int) -> int:
    if int(dim) != dim or dim < 2:
        raise InvalidDimensionError(f"Fock dimension must be an integer >= 2, got {dim!r}")
    return int(dim)


def build_ladder(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Return the truncated annihilation and creation operators.

    ``<n-1|a|n> = sqrt(n)`` sits on the superdiagonal.
    """
    dim = _check_dim(dim)
    a = np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)
    return a, a.conj().T.copy()


def build_position_momentum(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``q = (a + a^dag)/sqrt(2)`` and ``p = i(a^dag - a)/sqrt(2)``."""
    a, adag = build_ladder(dim)
    q = (a + adag) / math.sqrt(2.0)
    p = 1j * (adag - a) / math.sqrt(2.0)
    return q, p


@dataclass(frozen=True)
class FockOperators:
    """Read-only bundle of the elementary operators at one dimension."""

    dim: int
    a: np.ndarray
    adag: np.ndarray
    q: np.ndarray
    p: np.ndarray
    identity: np.ndarray

    @classmethod
    def build(cls, dim: int) -> FockOperators:
        return _fock_operators(_check_dim(dim))


@functools.lru_cache(maxsize=16)
def _fock_operators(dim: int) -> FockOperators:
    a, adag = build_ladder(dim)
    q, p = build_position_momentum(dim)
    eye = np.eye(dim, dtype=complex)
    for arr in (a, adag, q, p, eye):
        arr.setflags(write=False)
    return FockOperators(dim, a, adag, q, p, eye)


def shifted_quadratures(dim: int, center_q: float = 0.0,
                        center_p: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Physical position and momentum written in a displaced frame."""
    ops = FockOperators.build(dim)
    return ops.q + center_q * ops.identity, ops.p + center_p * ops.identity


@functools.lru_cache(maxsize=64)
def _static_hamiltonian(dim: int, omega: float, beta: float, sign: float,
                        center_q: float, center_p: float) -> np.ndarray:
    q, p = shifted_quadratures(dim, center_q, center_p)
    q2 = q @ q
    h = 0.5 * (p @ p) + 0.5 * sign * omega**2 * q2 + 0.25 * beta * (q2 @ q2)
    h = 0.5 * (h + h.conj().T)
    h.setflags(write=False)
    return h


def duffing_static_hamiltonian(dim: int, params: DuffingParams, center_q: float = 0.0,
                               center_p: float = 0.0) -> np.ndarray:
    """Time-independent part ``p^2/2 -+ omega^2 q^2/2 + beta q^4/4`` (read-only).

    ``q^4`` is formed as the square of the truncated ``q^2``.
    """
    return _static_hamiltonian(_check_dim(dim), float(params.omega), float(params.beta),
                               params.quadratic_sign, float(center_q), float(center_p))


def build_duffing_hamiltonian(dim: int, params: DuffingParams, t: float = 0.0,
                              center_q: float = 0.0, center_p: float = 0.0) -> np.ndarray:
    """Duffing Hamiltonian at time ``t`` including the drive ``g cos(t) q``."""
    h = duffing_static_hamiltonian(dim, params, center_q, center_p)
    if params.g == 0.0:
        return h.copy()
    q, _ = shifted_quadratures(dim, center_q, center_p)
    return h + params.g * math.cos(t) * q


def thermal_occupation(omega: float, temperature: float) -> float:
    """Bose-Einstein occupation ``1 / (exp(omega/T) - 1)``; zero at ``T = 0``."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    if temperature == 0:
        return 0.0
    x = omega / temperature
    if x > 700.0:
        return math.exp(-x)
    return 1.0 / math.expm1(x)


def build_lindblads(dim: int, params: DuffingParams, center_q: float = 0.0,
                    center_p: float = 0.0) -> tuple[list[np.ndarray], tuple[float, float, float]]:
    """Measurement and thermal jump operators with their detection efficiencies.

    Returns ``([L1, L2, L3], (eta, 0, 0))`` where ``L1 = sqrt(2k) q`` is the
    monitored position channel, ``L2 = sqrt((n+1) Gamma) a`` is thermal
    emission and ``L3 = sqrt(n Gamma) a^dag`` is thermal absorption, with
    ``n`` the bath occupation at ``omega``.
    """
    ops = FockOperators.build(dim)
    alpha = (center_q + 1j * center_p) / math.sqrt(2.0)
    nbar = params.n_thermal
    q_shift, _ = shifted_quadratures(dim, center_q, center_p)
    a_shift = ops.a + alpha * ops.identity
    adag_shift = ops.adag + np.conj(alpha) * ops.identity
    l1 = math.sqrt(2.0 * params.k_meas) * q_shift
    l2 = math.sqrt((nbar + 1.0) * params.gamma_damp) * a_shift
    l3 = math.sqrt(nbar * params.gamma_damp) * adag_shift
    return [l1, l2, l3], (float(params.eta), 0.0, 0.0)


@dataclass
class DensityMatrix:
    """Density matrix in a Fock basis displaced by ``(center_q, center_p)``.

    The physical state is ``D(alpha) entries D(alpha)^dag`` with
    ``alpha = (center_q + i center_p)/sqrt(2)``.
    """

    entries: np.ndarray
    center_q: float = 0.0
    center_p: float = 0.0

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=complex)
        if self.entries.ndim != 2 or self.entries.shape[0] != self.entries.shape[1]:
            raise ValueError("density matrix must be square")
        _check_dim(self.entries.shape[0])

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def trace(self) -> float:
        return float(np.trace(self.entries).real)

    def hermiticity_residue(self) -> float:
        return float(np.abs(self.entries - self.entries.conj().T).max())

    def min_eigenvalue(self) -> float:
        herm = 0.5 * (self.entries + self.entries.conj().T)
        return float(np.linalg.eigvalsh(herm)[0])

    def validate(self, trace_tol: float = 1e-10, herm_tol: float = 1e-10,
                 eig_floor: float = -1e-8) -> None:
        """Raise ``ValueError`` if any density-matrix invariant is violated."""
        if abs(self.trace() - 1.0) >= trace_tol:
            raise ValueError(f"trace deviates from 1 by {abs(self.trace() - 1.0):.3e}")
        if self.hermiticity_residue() >= herm_tol:
            raise ValueError(f"hermiticity residue {self.hermiticity_residue():.3e}")
        lam = self.min_eigenvalue()
        if lam <= eig_floor:
            raise ValueError(f"minimum eigenvalue {lam:.3e} below floor")

    def copy(self) -> DensityMatrix:
        return DensityMatrix(self.entries.copy(), self.center_q, self.center_p)


def thermal_state(dim: int, nbar: float) -> DensityMatrix:
    """Gibbs state of the reference oscillator with mean occupation ``nbar``."""
    dim = _check_dim(dim)
    if nbar < 0:
        raise ValueError("nbar must be non-negative")
    rho = np.zeros((dim, dim), dtype=complex)
    if nbar == 0:
        rho[0, 0] = 1.0
        return DensityMatrix(rho)
    ratio = nbar / (nbar + 1.0)
    pops = (1.0 - ratio) * ratio ** np.arange(dim)
    tail = ratio**dim
    if tail > TAIL_MASS_WARNING:
        warnings.warn(f"thermal state with nbar={nbar:g} loses {tail:.2e} "
                      f"beyond dim={dim}", TruncationWarning, stacklevel=2)
    rho[np.diag_indices(dim)] = pops / pops.sum()
    return DensityMatrix(rho)


def displacement(dim: int, alpha: complex, max_alpha: float = 10.0,
                 tail_tol: float = 1e-8, pad: int = 0) -> np.ndarray:
    """Displacement operator ``exp(alpha a^dag - conj(alpha) a)`` by dense expm.

    The truncated exponential is always unitary, so fidelity is judged by
    the coherent state ``D|0>`` instead: its Poisson weight beyond the basis
    must stay below ``tail_tol``.

    With ``pad > 0`` the exponential is taken in ``dim + pad`` states and the
    leading ``dim x dim`` block returned.  That block is no longer unitary,
    but its entries match the untruncated operator even for states near the
    top of the basis, which the plain truncated exponential gets wrong.
    """
    if abs(alpha) > max_alpha:
        raise TruncationError(f"|alpha|={abs(alpha):.3g} exceeds max_alpha={max_alpha:g}")
    ops = FockOperators.build(dim)
    if alpha == 0:
        return np.eye(ops.dim, dtype=complex)
    tail = float(scipy.stats.poisson.sf(ops.dim - 1, abs(alpha) ** 2))
    if tail > tail_tol:
        raise TruncationError(f"displacement by |alpha|={abs(alpha):.3g} leaks {tail:.2e} "
                              f"beyond dim={ops.dim}")
    if pad < 0:
        raise ValueError("pad must be non-negative")
    big = FockOperators.build(ops.dim + pad) if pad else ops
    gen = alpha * big.adag - np.conj(alpha) * big.a
    return scipy.linalg.expm(gen)[:ops.dim, :ops.dim]


def spectrum(h: np.ndarray, count: int) -> np.ndarray:
    """Lowest ``count`` eigenvalues of a Hermitian operator, ascending."""
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("operator must be square")
    scale = max(1.0, float(np.abs(h).max()))
    if np.abs(h - h.conj().T).max() > 1e-10 * scale:
        raise ValueError("spectrum requires a Hermitian operator")
    if not 1 <= count <= h.shape[0]:
        raise ValueError(f"count must lie in [1, {h.shape[0]}]")
    return np.linalg.eigvalsh(h)[:count]


def energy_gaps(params: DuffingParams, dim: int = DEFAULT_DIM, count: int = 4) -> np.ndarray:
    """Successive gaps between the lowest ``count`` Duffing levels."""
    return np.diff(spectrum(build_duffing_hamiltonian(dim, params), count))


def potential(q, params: DuffingParams):
    """Classical potential ``-+ omega^2 q^2/2 + beta q^4/4``."""
    q = np.asarray(q, dtype=float)
    return 0.5 * params.quadratic_sign * params.omega**2 * q**2 + 0.25 * params.beta * q**4


def well_positions(params: DuffingParams) -> tuple[float, float]:
    """Minima ``+-omega/sqrt(beta)`` of the double well."""
    if not params.double_well or params.beta <= 0:
        raise ValueError("well positions require double_well=True and beta > 0")
    x = params.omega / math.sqrt(params.beta)
    return -x, x


def barrier_height(params: DuffingParams) -> float:
    """``V(0) - V_min = omega^4 / (4 beta)``."""
    well_positions(params)
    return params.omega**4 / (4.0 * params.beta)
