"""Physical and numerical parameter sets.

All quantities are dimensionless: hbar = m = k_B = 1 and the Fock basis is
built on a reference linear oscillator of unit frequency.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass

from qcselect.errors import ConfigError


@dataclass(frozen=True)
class DuffingParams:
    """Parameters of the monitored Duffing oscillator and its environment.

    Parameters
    ----------
    omega : float
        Angular frequency of the quadratic term.
    beta : float
        Quartic coefficient.
    g : float
        Periodic drive amplitude, ``g cos(t) q``.
    gamma_damp : float
        Thermal decay rate.
    k_meas : float
        Position-measurement strength.
    eta : float
        Efficiency of the position measurement, in ``[0, 1]``.
    temperature : float
        Bath temperature.
    double_well : bool
        ``True`` gives the inverted quadratic term ``-omega**2 q**2 / 2`` of
        the double well; ``False`` flips it to a stable ``+omega**2 q**2 / 2``
        (used with ``beta=0`` for linear reference problems).
    """

    omega: float = 1.0
    beta: float = 0.5
    g: float = 0.0
    gamma_damp: float = 0.05
    k_meas: float = 0.025
    eta: float = 0.6
    temperature: float = 0.2
    double_well: bool = True

    def __post_init__(self):
        checks = [
            (self.omega > 0, "omega must be positive"),
            (self.beta >= 0, "beta must be non-negative"),
            (0.0 <= self.eta <= 1.0, "eta must lie in [0, 1]"),
            (self.gamma_damp >= 0, "gamma_damp must be non-negative"),
            (self.k_meas >= 0, "k_meas must be non-negative"),
            (self.temperature >= 0, "temperature must be non-negative"),
            (math.isfinite(self.g), "g must be finite"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def n_thermal(self) -> float:
        from qcselect.operators import thermal_occupation

        return thermal_occupation(self.omega, self.temperature)

    @property
    def quadratic_sign(self) -> float:
        """Sign multiplying ``omega**2 q**2 / 2`` in the potential."""
        return -1.0 if self.double_well else 1.0

    @property
    def signal_gain(self) -> float:
        """Coefficient ``sqrt(8 eta k)`` linking position to the record."""
        return math.sqrt(8.0 * self.eta * self.k_meas)

    def replace(self, **changes) -> DuffingParams:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        return _digest(self.to_dict())


@dataclass(frozen=True)
class Numerics:
    """Integration and filter settings shared by every model in a run."""

    dim: int = 80
    steps_per_cycle: int = 1000
    n_cycles: int = 100
    n_particles: int = 500
    ess_threshold: float = 0.5
    delta_shift: float = 0.5
    q_escape: float = 50.0
    max_alpha: float = 10.0

    def __post_init__(self):
        checks = [
            (self.dim >= 2, "dim must be at least 2"),
            (self.steps_per_cycle >= 1, "steps_per_cycle must be positive"),
            (self.n_cycles >= 0, "n_cycles must be non-negative"),
            (self.n_particles >= 2, "n_particles must be at least 2"),
            (0.0 < self.ess_threshold <= 1.0, "ess_threshold must lie in (0, 1]"),
            (self.delta_shift > 0, "delta_shift must be positive"),
            (self.q_escape > 0, "q_escape must be positive"),
            (self.max_alpha > 0, "max_alpha must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def dt(self, omega: float = 1.0) -> float:
        return 2.0 * math.pi / (omega * self.steps_per_cycle)

    @property
    def n_steps(self) -> int:
        return self.n_cycles * self.steps_per_cycle

    def replace(self, **changes) -> Numerics:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.blake2b(blob.encode(), digest_size=8).hexdigest()
