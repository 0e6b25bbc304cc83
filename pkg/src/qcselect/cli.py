"""Command-line interface: ``qcselect spectrum|simulate|select|sweep``.

Exit codes: 0 success, 1 failed ``--check``, 2 configuration or usage
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from qcselect.config import RunConfig, load_config
from qcselect.errors import ConfigError, NumericalFailure
from qcselect.experiment import simulate_truth, sweep, write_posterior_series, write_sweep
from qcselect.operators import build_duffing_hamiltonian, spectrum
from qcselect.selector import Candidate, np_select, run_selection
from qcselect.trace import read_trace, write_trace

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

#: reference gaps E1-E0, E2-E1, E3-E2 of the default double well
REFERENCE_GAPS = (0.396, 0.941, 1.061)
GAP_TOLERANCE = 0.01

_KINDS = {"Q": "quantum", "C": "classical"}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override one configuration value")
    common.add_argument("--out", type=Path, help="output directory (overrides output.directory)")

    parser = argparse.ArgumentParser(prog="qcselect",
                                     description="Quantum versus classical model selection "
                                                 "from continuous position records.")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("spectrum", parents=[common], help="lowest Duffing energy levels")
    sp.add_argument("--count", type=int, default=4, help="number of levels (default 4)")
    sp.add_argument("--check", action="store_true",
                    help="fail unless the gaps match the reference values")

    sm = sub.add_parser("simulate", parents=[common], help="generate a measurement record")
    sm.add_argument("--model", choices=sorted(_KINDS), default="Q")
    sm.add_argument("--seed", type=int, default=0)
    sm.add_argument("--format", choices=("csv", "npz"), default="csv")

    se = sub.add_parser("select", parents=[common], help="select a model for a record")
    se.add_argument("--trace", type=Path, required=True, help="trace file (.csv or .npz)")
    se.add_argument("--candidates", default="Q,C",
                    help="comma-separated candidate kinds, e.g. Q,C or C,C")
    se.add_argument("--seed", type=int, default=0, help="seed for particle-filter noise")
    se.add_argument("--mu", type=float, help="threshold (default selection.mu)")

    sw = sub.add_parser("sweep", parents=[common], help="confusion matrices over (T, eta)")
    sw.add_argument("--seed", type=int, help="base seed (overrides campaign.base_seed)")
    sw.add_argument("--workers", type=int, help="worker processes (overrides campaign.workers)")
    return parser


def _out_dir(args, cfg: RunConfig) -> Path:
    return args.out if args.out is not None else Path(cfg.output.directory)


def cmd_spectrum(args, cfg: RunConfig) -> int:
    dim = cfg.numerics.dim
    if not 1 <= args.count <= dim:
        raise ConfigError(f"--count must lie in [1, {dim}]")
    energies = spectrum(build_duffing_hamiltonian(dim, cfg.physics), args.count)
    gaps = np.diff(energies)
    for i, e in enumerate(energies):
        line = f"E{i} = {e:.6f}"
        if i:
            line += f"   E{i}-E{i - 1} = {gaps[i - 1]:.6f}"
        print(line)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        doc = {"dim": dim, "physics": cfg.physics.to_dict(),
               "energies": energies.tolist(), "gaps": gaps.tolist()}
        (args.out / "spectrum.json").write_text(json.dumps(doc, indent=2) + "\n")
    if args.check:
        n = min(len(gaps), len(REFERENCE_GAPS))
        if n == 0:
            raise ConfigError("--check needs --count >= 2")
        bad = [(i, gaps[i], REFERENCE_GAPS[i]) for i in range(n)
               if abs(gaps[i] - REFERENCE_GAPS[i]) > GAP_TOLERANCE]
        for i, got, ref in bad:
            print(f"check failed: gap {i}{i + 1} = {got:.4f}, expected {ref} +- {GAP_TOLERANCE}",
                  file=sys.stderr)
        if bad:
            return EXIT_CHECK
        print("check passed")
    return EXIT_OK


def cmd_simulate(args, cfg: RunConfig) -> int:
    trace, _ = simulate_truth(args.model, cfg.physics, cfg.numerics, args.seed)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    path = write_trace(trace, out / f"trace_{args.model}_seed{args.seed}.{args.format}")
    print(f"wrote {trace.n_steps} increments to {path}")
    return EXIT_OK


def parse_candidates(spec: str, cfg: RunConfig) -> list[Candidate]:
    kinds = [s.strip().upper() for s in spec.split(",") if s.strip()]
    if not kinds or any(k not in _KINDS for k in kinds):
        raise ConfigError(f"candidates must be a comma-separated list of Q and C, got {spec!r}")
    seen, out = {}, []
    for k in kinds:
        seen[k] = seen.get(k, 0) + 1
        label = k if seen[k] == 1 else f"{k}{seen[k]}"
        out.append(Candidate(label, _KINDS[k], cfg.physics))
    return out


def cmd_select(args, cfg: RunConfig) -> int:
    try:
        trace = read_trace(args.trace)
    except OSError as exc:
        raise ConfigError(f"cannot read trace {args.trace}: {exc}") from exc
    if not math.isclose(trace.dt, cfg.dt, rel_tol=1e-12, abs_tol=0.0):
        raise ConfigError(f"trace dt {trace.dt!r} does not match configured dt {cfg.dt!r}")
    candidates = parse_candidates(args.candidates, cfg)
    mu = cfg.selection.mu if args.mu is None else args.mu
    if not mu >= 1.0:
        raise ConfigError("--mu must be >= 1")
    result = run_selection(trace, candidates, cfg.numerics, args.seed)
    decision = np_select(result.posterior, mu)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    ids = result.posterior.model_ids
    write_posterior_series(result.history, ids, trace.dt, out / "posterior.csv")
    doc = {"trace": str(args.trace), "n_steps": trace.n_steps, "decision": decision.as_dict(),
           "posterior": result.posterior.as_dict(), "config": cfg.to_dict()}
    (out / "decision.json").write_text(json.dumps(doc, indent=2) + "\n")
    probs = ", ".join(f"p({m})={p:.4f}" for m, p in zip(ids, decision.probabilities))
    print(f"{decision.selected or 'inconclusive'}  [{probs}, mu={mu:g}]")
    return EXIT_OK


def cmd_sweep(args, cfg: RunConfig) -> int:
    camp = cfg.campaign
    base_seed = camp.base_seed if args.seed is None else args.seed
    workers = args.workers if args.workers is not None else camp.workers
    if workers is not None and workers < 1:
        raise ConfigError("--workers must be positive")
    result = sweep(camp.T_grid, camp.eta_grid, cfg.physics, cfg.numerics, camp.n_trials,
                   base_seed, cfg.selection.mu, workers)
    out = _out_dir(args, cfg)
    write_sweep(result, out, cfg.to_dict(), cfg.output.formats)
    print(f"{'T':>6} {'eta':>5}  {'p(Q|Q)':>7} {'p(C|C)':>7}  {'inconcl.':>8} {'failed':>6}")
    complete = True
    for c in result.cells:
        cm = c.confusion
        inc = sum(cm.counts[t]["inconclusive"] for t in cm.truths)
        fail = sum(cm.counts[t]["failed"] for t in cm.truths)
        complete &= all(cm.n_valid(t) > 0 for t in cm.truths)
        print(f"{c.temperature:6.3g} {c.eta:5.3g}  {cm.rate('Q', 'Q'):7.3f} "
              f"{cm.rate('C', 'C'):7.3f}  {inc:8d} {fail:6d}")
    print(f"results written to {out}")
    return EXIT_OK if complete else EXIT_NUMERIC


_COMMANDS = {"spectrum": cmd_spectrum, "simulate": cmd_simulate, "select": cmd_select,
             "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        return _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"qcselect: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"qcselect: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
