"""Model probabilities from innovation likelihoods and the decision rules.

Each candidate filter turns the record increment ``dy`` into an innovation
``dW = dy - sqrt(8 eta k) E[q] dt`` whose Gaussian density

    p(dy | model, past) = exp(-dW^2 / (2 dt)) / sqrt(2 pi dt)

updates that model's evidence.  Everything is accumulated in log space.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from qcselect.errors import ConfigError, NumericalFailure, SelectionError
from qcselect.params import DuffingParams, Numerics

_LOG_2PI = math.log(2.0 * math.pi)


def gaussian_loglik(dW: float, dt: float) -> float:
    """Log of the zero-mean Gaussian density with variance ``dt`` at ``dW``."""
    return -(dW * dW) / (2.0 * dt) - 0.5 * (_LOG_2PI + math.log(dt))


def _log_normalise(x: np.ndarray, axis=-1) -> np.ndarray:
    # shift by the maximum first so equal entries normalise to exactly 1/M
    m = np.max(x, axis=axis, keepdims=True)
    z = x - np.where(np.isfinite(m), m, 0.0)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


@dataclass(frozen=True)
class PosteriorState:
    """Accumulated log-likelihoods and priors for an ordered set of models."""

    model_ids: tuple
    logliks: np.ndarray
    log_prior: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "model_ids", tuple(self.model_ids))
        object.__setattr__(self, "logliks", np.asarray(self.logliks, dtype=float))
        object.__setattr__(self, "log_prior", np.asarray(self.log_prior, dtype=float))
        n = len(self.model_ids)
        if self.logliks.shape != (n,) or self.log_prior.shape != (n,):
            raise ValueError("one log-likelihood and one prior per model required")

    @classmethod
    def uniform(cls, model_ids) -> PosteriorState:
        n = len(tuple(model_ids))
        if n == 0:
            raise ValueError("at least one model required")
        return cls(tuple(model_ids), np.zeros(n), np.full(n, -math.log(n)))

    @property
    def log_evidence(self) -> np.ndarray:
        return self.log_prior + self.logliks

    @property
    def log_posterior(self) -> np.ndarray:
        return _log_normalise(self.log_evidence)

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_posterior)

    def as_dict(self) -> dict:
        probs = self.probabilities
        return {
            "model_ids": list(self.model_ids),
            "logliks": [float(x) for x in self.logliks],
            "log_prior": [float(x) for x in self.log_prior],
            "probabilities": [float(x) for x in probs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> PosteriorState:
        return cls(tuple(d["model_ids"]), np.array(d["logliks"]), np.array(d["log_prior"]))


def update_posteriors(ps: PosteriorState, increments) -> PosteriorState:
    """Add one log-likelihood increment per model."""
    inc = np.asarray(increments, dtype=float)
    if inc.shape != ps.logliks.shape:
        raise ValueError(f"expected {ps.logliks.size} increments, got {inc.size}")
    return PosteriorState(ps.model_ids, ps.logliks + inc, ps.log_prior)


@dataclass(frozen=True)
class Decision:
    """Outcome of the threshold rule; ``selected`` is ``None`` when inconclusive."""

    selected: str | None
    mu: float
    probabilities: tuple

    @property
    def inconclusive(self) -> bool:
        return self.selected is None

    def as_dict(self) -> dict:
        return {"selected": self.selected, "mu": self.mu,
                "probabilities": list(self.probabilities)}


def np_select(ps: PosteriorState, mu: float = 1.0) -> Decision:
    """Select model ``j`` iff ``p_j / p_k > mu`` for every other ``k``.

    Ratios are compared in log space, so exact ties (identical evidence)
    are always inconclusive and ``mu = inf`` never selects.
    """
    if not mu >= 1.0:
        raise ValueError("mu must be >= 1")
    probs = tuple(float(x) for x in ps.probabilities)
    ev = ps.log_evidence
    if ev.size == 1:
        return Decision(ps.model_ids[0], float(mu), probs)
    j = int(np.argmax(ev))
    rival = np.max(np.delete(ev, j))
    log_mu = math.log(mu) if math.isfinite(mu) else math.inf
    selected = ps.model_ids[j] if ev[j] - rival > log_mu else None
    return Decision(selected, float(mu), probs)


@dataclass(frozen=True)
class Candidate:
    """A dynamical model to test against a record.

    ``kind`` is ``"quantum"`` (SME filter) or ``"classical"`` (particle
    filter); ``label`` is only a name and does not affect the filter.
    """

    label: str
    kind: str
    params: DuffingParams = field(default_factory=DuffingParams)

    def __post_init__(self):
        if self.kind not in ("quantum", "classical"):
            raise ConfigError(f"unknown candidate kind {self.kind!r}")

    def fingerprint(self, numerics: Numerics) -> str:
        if self.kind == "quantum":
            extra = (numerics.dim, numerics.delta_shift, numerics.max_alpha)
        else:
            extra = (numerics.n_particles, numerics.ess_threshold, numerics.q_escape)
        return f"{self.kind}:{self.params.fingerprint()}:{extra}"

    def filter_seed(self, seed: int, numerics: Numerics) -> int:
        """Seed for the filter's own randomness, independent of ``label``."""
        blob = f"{seed}|{self.fingerprint(numerics)}".encode()
        return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little") >> 1

    def build_filter(self, dt: float, numerics: Numerics, seed: int = 0):
        if self.kind == "quantum":
            from qcselect.quantum import QuantumFilter

            return QuantumFilter(self.params, dt, numerics.dim, numerics.delta_shift,
                                 numerics.max_alpha)
        from qcselect.particle import ParticleFilter

        return ParticleFilter(self.params, dt, numerics.n_particles,
                              self.filter_seed(seed, numerics), numerics.ess_threshold,
                              numerics.q_escape)


def default_candidates(params: DuffingParams) -> list[Candidate]:
    return [Candidate("Q", "quantum", params), Candidate("C", "classical", params)]


@dataclass
class SelectionResult:
    """Final posterior plus the per-step history.

    ``increments[n, m]`` is model ``m``'s log-likelihood for step ``n`` and
    ``history[n]`` the normalised posterior after ``n`` steps (row 0 is the
    prior).
    """

    posterior: PosteriorState
    increments: np.ndarray
    history: np.ndarray


def run_selection(trace, candidates, numerics: Numerics | None = None, seed: int = 0,
                  precomputed: dict | None = None, prior=None) -> SelectionResult:
    """Condition every candidate on ``trace`` and accumulate their posteriors.

    The filters do not depend on one another, so each runs over the whole
    record in turn and the step-wise posterior updates are applied
    afterwards as a running sum.  ``precomputed`` maps a candidate index to
    an already known increment array (e.g. from the filter that generated
    the trace).
    """
    numerics = numerics or Numerics()
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate models")
    ids = tuple(c.label for c in candidates)
    n = trace.n_steps
    incs = np.empty((n, len(candidates)))
    precomputed = precomputed or {}
    for m, cand in enumerate(candidates):
        if m in precomputed:
            incs[:, m] = precomputed[m]
            continue
        filt = cand.build_filter(trace.dt, numerics, seed)
        for i in range(n):
            try:
                incs[i, m] = filt.step(float(trace.increments[i]))
            except NumericalFailure as exc:
                raise SelectionError(cand.label, i, exc) from exc
    if prior is None:
        ps0 = PosteriorState.uniform(ids)
    else:
        ps0 = PosteriorState(ids, np.zeros(len(ids)), np.log(np.asarray(prior, float)))
    cum = np.zeros((n + 1, len(candidates)))
    np.cumsum(incs, axis=0, out=cum[1:])
    ev = cum + ps0.log_prior
    history = np.exp(_log_normalise(ev, axis=1))
    final = PosteriorState(ids, cum[-1].copy(), ps0.log_prior)
    return SelectionResult(final, incs, history)
