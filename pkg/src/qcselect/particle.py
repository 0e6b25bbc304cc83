"""Sequential Monte Carlo filter for the classical model.

Each step reweights the particles by the Gaussian density of the record
increment given their current positions, adds the log of the weighted sum
to the model evidence, resamples when the effective sample size drops
below ``ess_threshold * N`` and finally propagates every particle through
the classical SDE with its own noise draws.  Weighting before propagation
matches the simulators, whose increment for ``[t, t + dt)`` is generated
from the state at ``t``.

Weights are held as normalised log weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numba
import numpy as np

from qcselect.classical import Q_ESCAPE
from qcselect.errors import BlowUpError, DegenerateEnsembleError
from qcselect.params import DuffingParams

# reassociation and vector maths, but keep inf/nan semantics for the checks
_FAST = {"nsz", "arcp", "contract", "afn", "reassoc"}


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    momenta: np.ndarray
    log_weights: np.ndarray
    loglik: float = 0.0
    ess_threshold: float = 0.5
    last_increment: float = 0.0
    n_resamples: int = 0

    @property
    def size(self) -> int:
        return self.positions.size

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


@numba.njit(cache=True, fastmath=_FAST)
def _reweight(lw, q, dy, gain_dt, dt):
    # in place: lw += log N(dy - gain_dt q, dt), normalised; returns (increment, ess)
    n = q.size
    inv2dt = 0.5 / dt
    norm = 0.5 * (np.log(2.0 * np.pi) + np.log(dt))
    m = -np.inf
    for i in range(n):
        r = dy - gain_dt * q[i]
        lw[i] = lw[i] - r * r * inv2dt - norm
        m = max(m, lw[i])
    if not np.isfinite(m):
        return m, 0.0
    s = 0.0
    s2 = 0.0
    for i in range(n):
        w = np.exp(lw[i] - m)
        s += w
        s2 += w * w
    inc = m + np.log(s)
    for i in range(n):
        lw[i] -= inc
    return inc, s * s / s2


@numba.njit(cache=True)
def _systematic_indices(lw, u):
    n = lw.size
    idx = np.empty(n, dtype=np.int64)
    cum = np.exp(lw[0])
    j = 0
    for i in range(n):
        point = (u + i) / n
        # ties within rounding go to the next particle
        while j < n - 1 and point >= cum - 1e-12:
            j += 1
            cum += np.exp(lw[j])
        idx[i] = j
    return idx


@numba.njit(cache=True, fastmath=_FAST)
def _propagate(q, p, noise, dt, beta, lin, gamma, drive, c_y, c_u, q_escape):
    # kick-drift Euler-Maruyama in place; returns False on escape
    ok = True
    for i in range(q.size):
        qi = q[i]
        f = -beta * qi * qi * qi - lin * qi - drive
        pi = p[i] + (f - gamma * p[i]) * dt + c_y * noise[0, i] + c_u * noise[1, i]
        qi = qi + pi * dt
        p[i] = pi
        q[i] = qi
        if not abs(qi) < q_escape:
            ok = False
    return ok


def init_ensemble(n: int, nbar: float, seed, ess_threshold: float = 0.5) -> ParticleEnsemble:
    """Draw ``q, p ~ Normal(0, nbar + 1/2)`` with uniform weights.

    ``seed`` may be an integer or a ``numpy.random.Generator``.
    """
    if n < 2:
        raise ValueError("a particle filter needs at least two particles")
    if nbar < 0:
        raise ValueError("nbar must be non-negative")
    if not 0.0 <= ess_threshold <= 1.0:
        raise ValueError("ess_threshold must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    qp = rng.standard_normal((2, n)) * math.sqrt(nbar + 0.5)
    return ParticleEnsemble(qp[0].copy(), qp[1].copy(), np.full(n, -math.log(n)),
                            ess_threshold=ess_threshold)


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def systematic_indices(weights, u: float) -> np.ndarray:
    """Ancestor of each offspring for offset ``u`` in ``[0, 1)``.

    Offspring ``i`` takes the first particle whose cumulative weight exceeds
    ``(u + i) / N``, with cumulative sums equal to a point up to ``1e-12``
    counted as not exceeding it; the last particle absorbs any rounding
    shortfall.
    """
    w = np.asarray(weights, dtype=float)
    with np.errstate(divide="ignore"):
        return _systematic_indices(np.log(w), float(u))


def systematic_resample(ens: ParticleEnsemble, rng) -> ParticleEnsemble:
    """Systematic resampling with one uniform offset; weights reset to ``1/N``."""
    n = ens.size
    idx = _systematic_indices(ens.log_weights, rng.random())
    return replace(ens, positions=ens.positions[idx], momenta=ens.momenta[idx],
                   log_weights=np.full(n, -math.log(n)), n_resamples=ens.n_resamples + 1)


def offspring_counts(ens: ParticleEnsemble, rng) -> np.ndarray:
    """Number of copies of each particle one systematic resample would make."""
    idx = _systematic_indices(ens.log_weights, rng.random())
    return np.bincount(idx, minlength=ens.size)


def pf_mean(ens: ParticleEnsemble) -> tuple[float, float]:
    w = ens.weights
    return float(w @ ens.positions), float(w @ ens.momenta)


def pf_step(ens: ParticleEnsemble, dy: float, dt: float, t: float, params: DuffingParams,
            rng, q_escape: float = Q_ESCAPE) -> ParticleEnsemble:
    """Condition on ``dy`` for ``[t, t + dt)`` and propagate to ``t + dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    lw = ens.log_weights.copy()
    inc, ess = _reweight(lw, ens.positions, float(dy), params.signal_gain * dt, dt)
    if not math.isfinite(inc):
        raise DegenerateEnsembleError(f"all particle weights vanished at t={t:.6g}")
    ens = replace(ens, log_weights=lw, loglik=ens.loglik + inc, last_increment=float(inc))
    if ess < ens.ess_threshold * ens.size:
        ens = systematic_resample(ens, rng)
    q, p = ens.positions.copy(), ens.momenta.copy()
    noise = rng.standard_normal((2, ens.size)) * math.sqrt(dt)
    drive = params.g * math.cos(t) if params.g else 0.0
    ok = _propagate(q, p, noise, dt, params.beta, params.quadratic_sign * params.omega**2,
                    params.gamma_damp, drive, math.sqrt(2.0 * params.k_meas),
                    math.sqrt(2.0 * params.gamma_damp * params.temperature), q_escape)
    if not ok:
        raise BlowUpError(f"particle escaped |q| < {q_escape:g} at t={t:.6g}")
    return replace(ens, positions=q, momenta=p)


class ParticleFilter:
    """Stateful wrapper driving :func:`pf_step` along a record.

    All randomness (initial ensemble, process noise and resampling offsets)
    comes from one ``numpy.random.default_rng(seed)`` stream in a fixed order.
    """

    def __init__(self, params: DuffingParams, dt: float, n_particles: int = 500,
                 seed: int = 0, ess_threshold: float = 0.5, q_escape: float = Q_ESCAPE):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.params = params
        self.dt = float(dt)
        self.q_escape = float(q_escape)
        self.rng = np.random.default_rng(seed)
        self.ensemble = init_ensemble(n_particles, params.n_thermal, self.rng, ess_threshold)
        self.step_index = 0

    @property
    def loglik(self) -> float:
        return self.ensemble.loglik

    @property
    def mean_position(self) -> float:
        return pf_mean(self.ensemble)[0]

    def predicted_increment(self) -> float:
        return self.params.signal_gain * self.mean_position * self.dt

    def step(self, dy: float) -> float:
        self.ensemble = pf_step(self.ensemble, dy, self.dt, self.step_index * self.dt,
                                self.params, self.rng, self.q_escape)
        self.step_index += 1
        return self.ensemble.last_increment

    def run(self, increments) -> np.ndarray:
        increments = np.asarray(increments, dtype=float)
        out = np.empty(increments.size)
        for i, dy in enumerate(increments):
            out[i] = self.step(float(dy))
        return out
