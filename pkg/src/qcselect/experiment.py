"""Monte Carlo estimation of selection quality.

A trial simulates a record from one truth model, conditions every candidate
filter on it and applies the threshold rule.  Trials are keyed by a seed
hashed from ``(base_seed, grid cell, truth, index)``, so each trial's
outcome is independent of scheduling and worker count.  Repeated trials
give confusion matrices, ROC curves and (T, eta) sweeps.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from qcselect import __version__
from qcselect.classical import simulate_classical_trace
from qcselect.errors import NumericalFailure
from qcselect.params import DuffingParams, Numerics
from qcselect.quantum import simulate_quantum_trace
from qcselect.selector import (
    Decision,
    PosteriorState,
    default_candidates,
    np_select,
    run_selection,
)

TRUTHS = ("Q", "C")
INCONCLUSIVE = "inconclusive"
FAILED = "failed"

#: environment variable capping the worker pool
THREADS_ENV = "QCSELECT_THREADS"


def trial_seed(base_seed: int, cell: int, truth: str, index: int) -> int:
    """63-bit seed for one trial; distinct inputs give distinct streams."""
    blob = f"qcselect|{base_seed}|{cell}|{truth}|{index}".encode()
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little") >> 1


def resolve_workers(requested: int | None = None) -> int:
    """Worker count: ``requested`` (or the CPU count) capped by ``QCSELECT_THREADS``."""
    n = requested or os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, int(n))


@dataclass
class TrialResult:
    """Outcome of one simulated selection trial.

    ``decision`` and ``posterior`` are ``None`` for a failed trial.
    """

    truth: str
    seed: int
    index: int = 0
    cell: int = 0
    decision: Decision | None = None
    posterior: PosteriorState | None = None
    failed: bool = False
    error: str | None = None
    wall_time: float = 0.0
    n_steps: int = 0

    @property
    def outcome(self) -> str:
        if self.failed:
            return FAILED
        return self.decision.selected or INCONCLUSIVE

    def as_dict(self) -> dict:
        return {
            "truth": self.truth, "seed": self.seed, "index": self.index, "cell": self.cell,
            "outcome": self.outcome, "failed": self.failed, "error": self.error,
            "posterior": self.posterior.as_dict() if self.posterior else None,
            "mu": self.decision.mu if self.decision else None,
            "n_steps": self.n_steps, "wall_time": self.wall_time,
        }


def simulate_truth(truth: str, params: DuffingParams, numerics: Numerics, seed: int):
    """Record from the truth model plus the generating filter's log-likelihoods.

    The second item is ``None`` for the classical truth.
    """
    dt = numerics.dt(params.omega)
    if truth == "Q":
        return simulate_quantum_trace(params, numerics.n_steps, dt, seed, numerics.dim,
                                      numerics.delta_shift, numerics.max_alpha,
                                      return_logliks=True)
    if truth == "C":
        return simulate_classical_trace(params, numerics.n_steps, dt, seed,
                                        numerics.q_escape), None
    raise ValueError(f"unknown truth model {truth!r}")


def run_trial(truth: str, candidates, params: DuffingParams, numerics: Numerics, seed: int,
              mu: float = 1.0, index: int = 0, cell: int = 0) -> TrialResult:
    """Simulate, select and decide once.

    A quantum candidate identical to the quantum truth re-uses the
    likelihoods computed while generating the record; replaying the record
    through a fresh filter would give the same numbers bit for bit.
    """
    candidates = list(candidates) if candidates is not None else default_candidates(params)
    start = time.perf_counter()
    result = TrialResult(truth, seed, index, cell, n_steps=numerics.n_steps)
    try:
        trace, own = simulate_truth(truth, params, numerics, seed)
        precomputed = {}
        if own is not None:
            precomputed = {m: own for m, c in enumerate(candidates)
                           if c.kind == "quantum" and c.params == params}
        sel = run_selection(trace, candidates, numerics, seed, precomputed)
        result.posterior = sel.posterior
        result.decision = np_select(sel.posterior, mu)
    except NumericalFailure as exc:
        result.failed = True
        result.error = f"{type(exc).__name__}: {exc}"
    result.wall_time = time.perf_counter() - start
    return result


def _run_task(task) -> TrialResult:
    truth, candidates, params, numerics, seed, mu, index, cell = task
    return run_trial(truth, candidates, params, numerics, seed, mu, index, cell)


def _execute(tasks, workers: int | None) -> list[TrialResult]:
    workers = min(resolve_workers(workers), max(1, len(tasks)))
    if workers == 1:
        results = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=1))
    return sorted(results, key=lambda r: (r.cell, TRUTHS.index(r.truth), r.index))


def _check_seeds(tasks):
    seeds = [t[4] for t in tasks]
    if len(set(seeds)) != len(seeds):
        raise RuntimeError("trial seed collision")


@dataclass
class ConfusionMatrix:
    """Counts of decisions per truth model at threshold ``mu``.

    Each row holds one count per candidate label plus ``inconclusive`` and
    ``failed``.  Rates are taken over the non-failed trials of a row.
    """

    mu: float
    labels: tuple
    counts: dict
    trials: list = field(default_factory=list, repr=False)

    @classmethod
    def from_trials(cls, trials, mu: float, labels=TRUTHS) -> ConfusionMatrix:
        labels = tuple(labels)
        counts = {}
        for tr in trials:
            row = counts.setdefault(tr.truth, {k: 0 for k in (*labels, INCONCLUSIVE, FAILED)})
            if tr.failed:
                row[FAILED] += 1
                continue
            dec = np_select(tr.posterior, mu) if tr.decision is None or tr.decision.mu != mu \
                else tr.decision
            row[dec.selected if dec.selected is not None else INCONCLUSIVE] += 1
        return cls(float(mu), labels, counts, list(trials))

    @property
    def truths(self) -> tuple:
        return tuple(t for t in TRUTHS if t in self.counts) + tuple(
            sorted(t for t in self.counts if t not in TRUTHS))

    def n_trials(self, truth: str) -> int:
        return sum(self.counts[truth].values())

    def n_valid(self, truth: str) -> int:
        return self.n_trials(truth) - self.counts[truth][FAILED]

    def rate(self, decision: str, truth: str) -> float:
        """Estimate of ``p(decision | truth)``; NaN if the row has no valid trials."""
        n = self.n_valid(truth)
        return self.counts[truth][decision] / n if n else math.nan

    def decided_rate(self, decision: str, truth: str) -> float:
        """Same as :meth:`rate` but over decided (not inconclusive) trials only."""
        n = self.n_valid(truth) - self.counts[truth][INCONCLUSIVE]
        return self.counts[truth][decision] / n if n else math.nan

    def stderr(self, decision: str, truth: str) -> float:
        p, n = self.rate(decision, truth), self.n_valid(truth)
        return math.sqrt(p * (1.0 - p) / n) if n else math.nan

    def wilson_interval(self, decision: str, truth: str, z: float = 1.959963984540054):
        """Wilson score interval, which stays inside [0, 1] at small N."""
        n = self.n_valid(truth)
        if not n:
            return math.nan, math.nan
        p = self.rate(decision, truth)
        denom = 1.0 + z * z / n
        centre = (p + z * z / (2 * n)) / denom
        half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
        return max(0.0, centre - half), min(1.0, centre + half)

    def matrix(self) -> np.ndarray:
        """``[[p(C|C), p(C|Q)], [p(Q|C), p(Q|Q)]]``."""
        return np.array([[self.rate("C", "C"), self.rate("C", "Q")],
                         [self.rate("Q", "C"), self.rate("Q", "Q")]])

    def as_dict(self) -> dict:
        rows = {}
        for truth in self.truths:
            rows[truth] = {
                "counts": dict(self.counts[truth]),
                "n_trials": self.n_trials(truth),
                "rates": {d: self.rate(d, truth) for d in (*self.labels, INCONCLUSIVE)},
                "stderr": {d: self.stderr(d, truth) for d in self.labels},
                "wilson95": {d: list(self.wilson_interval(d, truth)) for d in self.labels},
                "decided_rates": {d: self.decided_rate(d, truth) for d in self.labels},
            }
        return {"mu": self.mu, "labels": list(self.labels), "rows": rows}


def _cell_tasks(params, numerics, n_trials, mu, base_seed, candidates, cell):
    cands = candidates if candidates is not None else default_candidates(params)
    return [(truth, cands, params, numerics, trial_seed(base_seed, cell, truth, i), mu, i, cell)
            for truth in TRUTHS for i in range(n_trials)]


def estimate_confusion(params: DuffingParams, numerics: Numerics, n_trials: int,
                       mu: float = 1.0, base_seed: int = 0, candidates=None, cell: int = 0,
                       workers: int | None = 1) -> ConfusionMatrix:
    """Run ``n_trials`` per truth model and tabulate the decisions."""
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    tasks = _cell_tasks(params, numerics, n_trials, mu, base_seed, candidates, cell)
    _check_seeds(tasks)
    labels = tuple(c.label for c in tasks[0][1])
    return ConfusionMatrix.from_trials(_execute(tasks, workers), mu, labels)


@dataclass(frozen=True)
class RocPoint:
    mu: float
    true_positive: float
    false_positive: float
    true_negative: float
    inconclusive_positive: float
    inconclusive_negative: float


@dataclass
class RocCurve:
    """Selection rates against threshold; ``positive`` names the model counted as a hit."""

    points: list
    positive: str = "Q"
    negative: str = "C"

    def as_rows(self) -> list[dict]:
        return [dict(vars(p)) for p in self.points]


def roc_curve(trials, mu_grid, positive: str = "Q", negative: str = "C") -> RocCurve:
    """Re-apply the threshold rule to stored posteriors at each ``mu``."""
    valid = [t for t in trials if not t.failed]
    pos = [t.posterior for t in valid if t.truth == positive]
    neg = [t.posterior for t in valid if t.truth == negative]
    if not pos or not neg:
        raise ValueError("ROC needs non-failed trials from both truth models")
    points = []
    for mu in mu_grid:
        dp = [np_select(ps, mu).selected for ps in pos]
        dn = [np_select(ps, mu).selected for ps in neg]
        points.append(RocPoint(
            float(mu),
            dp.count(positive) / len(dp),
            dn.count(positive) / len(dn),
            dn.count(negative) / len(dn),
            dp.count(None) / len(dp),
            dn.count(None) / len(dn),
        ))
    return RocCurve(points, positive, negative)


@dataclass
class SweepCell:
    index: int
    temperature: float
    eta: float
    confusion: ConfusionMatrix


@dataclass
class SweepResult:
    cells: list
    base_seed: int
    n_trials: int
    mu: float

    @property
    def trials(self) -> list[TrialResult]:
        return [t for c in self.cells for t in c.confusion.trials]

    def cell(self, temperature: float, eta: float) -> SweepCell:
        for c in self.cells:
            if c.temperature == temperature and c.eta == eta:
                return c
        raise KeyError((temperature, eta))


def sweep(T_grid, eta_grid, params: DuffingParams, numerics: Numerics, n_trials: int,
          base_seed: int = 0, mu: float = 1.0, workers: int | None = None,
          candidates_for=default_candidates) -> SweepResult:
    """One confusion matrix per ``(T, eta)`` grid point, all trials pooled over workers.

    Cells are numbered in row-major order over ``T_grid`` then ``eta_grid``
    and each cell gets its own block of hashed seeds.  ``candidates_for``
    maps the cell's parameters to its candidate models.
    """
    T_grid, eta_grid = list(T_grid), list(eta_grid)
    if not T_grid or not eta_grid:
        raise ValueError("sweep grids must be non-empty")
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    grid = [(i * len(eta_grid) + j, float(T), float(eta))
            for i, T in enumerate(T_grid) for j, eta in enumerate(eta_grid)]
    tasks = []
    for cell, T, eta in grid:
        cp = params.replace(temperature=T, eta=eta)
        tasks += _cell_tasks(cp, numerics, n_trials, mu, base_seed, candidates_for(cp), cell)
    _check_seeds(tasks)
    results = _execute(tasks, workers)
    cells = []
    for cell, T, eta in grid:
        labels = tuple(c.label for c in candidates_for(params.replace(temperature=T, eta=eta)))
        mine = [r for r in results if r.cell == cell]
        cells.append(SweepCell(cell, T, eta, ConfusionMatrix.from_trials(mine, mu, labels)))
    return SweepResult(cells, int(base_seed), int(n_trials), float(mu))


# ---------------------------------------------------------------- output

def provenance() -> dict:
    import numba
    import scipy

    return {
        "qcselect": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "platform": platform.platform(),
        "host": platform.node(),
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def trial_rows(result: SweepResult):
    labels = result.cells[0].confusion.labels
    header = ["cell", "T", "eta", "truth", "index", "seed", "outcome", "n_steps", "error"]
    header += [f"loglik_{lab}" for lab in labels] + [f"p_{lab}" for lab in labels]
    rows = []
    for c in result.cells:
        for t in c.confusion.trials:
            row = [c.index, c.temperature, c.eta, t.truth, t.index, t.seed, t.outcome,
                   t.n_steps, t.error]
            if t.posterior is not None:
                row += [float(x) for x in t.posterior.logliks]
                row += [float(x) for x in t.posterior.probabilities]
            else:
                row += [None] * (2 * len(labels))
            rows.append(row)
    return header, rows


def cell_rows(result: SweepResult):
    labels = result.cells[0].confusion.labels
    header = ["cell", "T", "eta", "truth", "n_trials", "n_failed", "n_inconclusive"]
    for lab in labels:
        header += [f"p_{lab}", f"se_{lab}", f"ci_low_{lab}", f"ci_high_{lab}",
                   f"p_decided_{lab}"]
    rows = []
    for c in result.cells:
        cm = c.confusion
        for truth in cm.truths:
            row = [c.index, c.temperature, c.eta, truth, cm.n_trials(truth),
                   cm.counts[truth][FAILED], cm.counts[truth][INCONCLUSIVE]]
            for lab in labels:
                lo, hi = cm.wilson_interval(lab, truth)
                row += [cm.rate(lab, truth), cm.stderr(lab, truth), lo, hi,
                        cm.decided_rate(lab, truth)]
            rows.append(row)
    return header, rows


def write_sweep(result: SweepResult, directory, config: dict | None = None,
                formats=("json", "csv")) -> list[Path]:
    """Write provenance JSON, trial and cell tables and per-temperature curves.

    CSV files carry no timing or host data, so reruns with the same
    configuration reproduce them byte for byte.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        doc = {
            "config": config,
            "provenance": provenance(),
            "base_seed": result.base_seed,
            "n_trials": result.n_trials,
            "mu": result.mu,
            "cells": [{"index": c.index, "T": c.temperature, "eta": c.eta,
                       "confusion": c.confusion.as_dict()} for c in result.cells],
            "trials": [t.as_dict() for t in result.trials],
        }
        path = out / "sweep.json"
        path.write_text(json.dumps(doc, indent=2, default=_json_default) + "\n")
        written.append(path)
    if "csv" in formats:
        written.append(_write_csv(out / "trials.csv", *trial_rows(result)))
        written.append(_write_csv(out / "cells.csv", *cell_rows(result)))
        for T in sorted({c.temperature for c in result.cells}):
            cells = sorted((c for c in result.cells if c.temperature == T), key=lambda c: c.eta)
            rows = []
            for c in cells:
                cm = c.confusion
                rows.append([c.eta, cm.rate("Q", "Q"), cm.stderr("Q", "Q"),
                             cm.rate("C", "C"), cm.stderr("C", "C"),
                             cm.decided_rate("Q", "Q"), cm.decided_rate("C", "C")])
            header = ["eta", "p_QQ", "se_QQ", "p_CC", "se_CC", "p_QQ_decided", "p_CC_decided"]
            written.append(_write_csv(out / f"curve_T{T:g}.csv", header, rows))
    return written


def write_posterior_series(history: np.ndarray, model_ids, dt: float, path) -> Path:
    header = ["step", "t"] + [f"p_{m}" for m in model_ids]
    rows = ([i, i * dt, *map(float, h)] for i, h in enumerate(history))
    return _write_csv(Path(path), header, rows)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


__all__ = [
    "ConfusionMatrix", "RocCurve", "RocPoint", "SweepCell", "SweepResult",
    "TrialResult", "estimate_confusion", "resolve_workers", "roc_curve", "run_trial",
    "simulate_truth", "sweep", "trial_seed", "write_posterior_series", "write_sweep",
]
