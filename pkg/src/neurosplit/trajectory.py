"""The result object shared by every solver, plus its CSV form."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["Trajectory", "config_hash", "read_csv", "write_csv"]


def config_hash(obj) -> str:
    """Stable content hash of a JSON-serializable object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonify)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if hasattr(obj, "__dataclass_fields__"):
        return {k: getattr(obj, k) for k in obj.__dataclass_fields__}
    raise TypeError(f"cannot hash {type(obj).__name__}")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    names: tuple[str, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if self.states.shape != (self.times.size, len(self.names)):
            raise ValueError(
                f"states shape {self.states.shape} does not match "
                f"{self.times.size} times x {len(self.names)} components"
            )
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self) -> int:
        return self.times.size

    def component(self, name: str) -> np.ndarray:
        return self.states[:, self.names.index(name)]

    def interp(self, t) -> np.ndarray:
        """Piecewise-linear resampling; shape ``(len(t), d)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.stack([np.interp(t, self.times, col) for col in self.states.T], axis=1)

    @property
    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.states)))


def write_csv(traj: Trajectory, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.column_stack([traj.times, traj.states])
    header = ",".join(("t",) + tuple(traj.names))
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
    return path


def read_csv(path, metadata: dict | None = None) -> Trajectory:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    if not header or header[0] != "t":
        raise ValueError(f"{path}: first column must be 't'")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Trajectory(data[:, 0], data[:, 1:], tuple(header[1:]), dict(metadata or {}))
