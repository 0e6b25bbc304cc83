"""Measurement records and their on-disk formats.

CSV layout::

    # qcselect-trace
    # version: 1
    # dt: 0.006283185307179587
    # seed: 7
    # truth_tag: Q
    # params_hash: 5c0f...
    # params: {"omega": 1.0, ...}
    dy
    0.0812...

Floats are written with ``repr`` so a read reproduces every bit.  Files with
a ``.npz`` suffix use the numpy binary container with the same fields.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from qcselect.errors import ConfigError

FORMAT_VERSION = 1
_MAGIC = "# qcselect-trace"


@dataclass
class TimeTrace:
    """Discretised record of measurement increments ``dy``."""

    dt: float
    increments: np.ndarray
    seed: int | None = None
    truth_tag: str = "external"
    params: dict | None = None
    params_hash: str | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.increments = np.asarray(self.increments, dtype=float).reshape(-1)
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive and finite, got {self.dt!r}")
        if not np.all(np.isfinite(self.increments)):
            raise ConfigError("trace increments must be finite")

    @property
    def n_steps(self) -> int:
        return int(self.increments.size)

    @property
    def times(self) -> np.ndarray:
        """Start time of each measurement interval."""
        return np.arange(self.n_steps) * self.dt

    def __len__(self) -> int:
        return self.n_steps


def write_trace(trace: TimeTrace, path) -> Path:
    path = Path(path)
    if path.suffix == ".npz":
        np.savez(path, dt=np.float64(trace.dt), increments=trace.increments,
                 header=np.array(json.dumps(_header(trace), sort_keys=True)))
        return path
    lines = [_MAGIC]
    for key, value in _header(trace).items():
        if key == "params":
            value = json.dumps(value, sort_keys=True)
        lines.append(f"# {key}: {value}")
    lines.append("dy")
    lines.extend(repr(float(x)) for x in trace.increments)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_trace(path) -> TimeTrace:
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            return _from_header(header, float(data["dt"]), data["increments"].copy())
    header = {}
    values = []
    with path.open() as fh:
        first = fh.readline().rstrip("\n")
        if first != _MAGIC:
            raise ConfigError(f"{path} is not a qcselect trace file")
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                key, _, value = line[2:].partition(": ")
                header[key] = value
            elif line == "dy" or not line:
                continue
            else:
                values.append(float(line))
    if int(header.get("version", -1)) != FORMAT_VERSION:
        raise ConfigError(f"unsupported trace version {header.get('version')!r}")
    params = header.get("params")
    header["params"] = json.loads(params) if params and params != "None" else None
    seed = header.get("seed")
    header["seed"] = None if seed in (None, "None") else int(seed)
    ph = header.get("params_hash")
    header["params_hash"] = None if ph in (None, "None") else ph
    return _from_header(header, float(header["dt"]), np.array(values, dtype=float))


def _header(trace: TimeTrace) -> dict:
    return {
        "version": FORMAT_VERSION,
        "dt": repr(float(trace.dt)),
        "seed": trace.seed,
        "truth_tag": trace.truth_tag,
        "params_hash": trace.params_hash,
        "params": trace.params,
    }


def _from_header(header: dict, dt: float, increments: np.ndarray) -> TimeTrace:
    return TimeTrace(dt=dt, increments=increments, seed=header.get("seed"),
                     truth_tag=header.get("truth_tag", "external"),
                     params=header.get("params"), params_hash=header.get("params_hash"))
