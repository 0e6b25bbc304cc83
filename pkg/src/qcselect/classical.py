"""Classical Duffing particle with measurement and thermal noise.

    dq = p dt
    dp = (-beta q^3 - s omega^2 q - Gamma p - g cos(t)) dt + sqrt(2k) dY + sqrt(2 Gamma T) dU
    dy = sqrt(8 eta k) q dt + dW

with ``s = -1`` for the double well.  The drive enters with the sign of the
force derived from ``+g cos(t) q`` in the Hamiltonian, so the classical and
quantum models describe the same potential.  The record noise ``dW`` is
independent of ``dY`` and ``dU``.

The step is first-order Euler-Maruyama in kick-drift order: the momentum is
updated from the old position and the position from the new momentum.  The
scheme stays explicit, but it keeps the noise-free energy error bounded
instead of compounding it by ``1 + (omega dt)^2`` every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from qcselect.errors import BlowUpError
from qcselect.params import DuffingParams
from qcselect.trace import TimeTrace

#: default escape bound on |q|
Q_ESCAPE = 50.0


@dataclass(frozen=True)
class ClassicalState:
    q: float
    p: float

    def energy(self, params: DuffingParams) -> float:
        """Noise-free energy ``p^2/2 -+ omega^2 q^2/2 + beta q^4/4``."""
        return hamiltonian_energy(self.q, self.p, params)


def hamiltonian_energy(q, p, params: DuffingParams):
    return (0.5 * np.square(p) + 0.5 * params.quadratic_sign * params.omega**2 * np.square(q)
            + 0.25 * params.beta * np.power(q, 4))


def force(q, params: DuffingParams, t: float = 0.0):
    """Conservative plus drive force ``-dV/dq - g cos(t)``."""
    f = -params.beta * q**3 - params.quadratic_sign * params.omega**2 * q
    if params.g:
        f = f - params.g * math.cos(t)
    return f


def em_update(q, p, params: DuffingParams, t: float, dW_Y, dW_U, dt: float):
    """Kick-drift update for scalars or arrays; returns ``(q', p')``."""
    p_new = (p + (force(q, params, t) - params.gamma_damp * p) * dt
             + math.sqrt(2.0 * params.k_meas) * dW_Y
             + math.sqrt(2.0 * params.gamma_damp * params.temperature) * dW_U)
    return q + p_new * dt, p_new


def euler_maruyama_step(state: ClassicalState, params: DuffingParams, t: float, dW_Y: float,
                        dW_U: float, dt: float, q_escape: float = Q_ESCAPE) -> ClassicalState:
    """Advance one step with caller-supplied Wiener increments."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    q, p = em_update(state.q, state.p, params, t, dW_Y, dW_U, dt)
    if not (math.isfinite(q) and math.isfinite(p)) or abs(q) >= q_escape:
        raise BlowUpError(f"classical trajectory escaped: q={q!r}, p={p!r}")
    return ClassicalState(float(q), float(p))


def thermal_sigma(params: DuffingParams) -> float:
    """Standard deviation of q and p in the oscillator thermal state, sqrt(n + 1/2)."""
    return math.sqrt(params.n_thermal + 0.5)


def simulate_classical_trace(params: DuffingParams, n_steps: int, dt: float, seed: int,
                             q_escape: float = Q_ESCAPE) -> TimeTrace:
    """Generate a measurement record from the classical model.

    Draw order from ``numpy.random.default_rng(seed)``: the initial ``(q, p)``
    pair, then one ``(n_steps, 3)`` block of standard normals for
    ``(dW, dY, dU)``.  Each increment uses the position at the start of its
    interval.  The trajectory is kept in ``extras["q"]``.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    if not dt > 0:
        raise ValueError("dt must be positive")
    rng = np.random.default_rng(seed)
    q, p = rng.standard_normal(2) * thermal_sigma(params)
    noise = rng.standard_normal((n_steps, 3)) * math.sqrt(dt)
    gain = params.signal_gain
    dys = np.empty(n_steps)
    qs = np.empty(n_steps)
    for i in range(n_steps):
        qs[i] = q
        dys[i] = gain * q * dt + noise[i, 0]
        q, p = em_update(q, p, params, i * dt, noise[i, 1], noise[i, 2], dt)
        if not abs(q) < q_escape:
            raise BlowUpError(f"classical trajectory escaped at step {i}: q={q!r}")
    return TimeTrace(dt, dys, seed=seed, truth_tag="C", params=params.to_dict(),
                     params_hash=params.fingerprint(), extras={"q": qs})
