"""Lie and Strang splitting over a sub-interval partition.

A scheme splits the state into groups of component indices.  Each group is
advanced by its own sub-flow with every other component frozen at its most
recent value, so under Lie the second group sees the first group's *new*
values.  Sub-flows come either from a PINN (``backend="pinn"``) or from
classical RK4 (``backend="rk4"``), which isolates the splitting error.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .models import (
    CurrentSource,
    HhParams,
    IzhikevichParams,
    ModelSpec,
    SpikeRule,
    hh_model,
    izhikevich_model,
)
from .net import DivergenceError, Network
from .ode import rk4_step
from .pinn import (
    SubProblem,
    TrainConfig,
    _min_width,
    collocation_points,
    locate_crossing,
    train_subproblem,
)
from .trajectory import Trajectory, config_hash

__all__ = [
    "SplitScheme",
    "MarchConfig",
    "SubflowResult",
    "StepResult",
    "Rk4Backend",
    "PinnBackend",
    "restricted_rhs",
    "restricted_rhs_jac",
    "lie_step",
    "strang_step",
    "split_march",
    "split_izhikevich",
    "split_hh",
    "IZHIKEVICH_SCHEME",
    "HH_SCHEME",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitScheme:
    """``parts`` lists index groups in Lie application order.

    Strang applies a half step of the last group, a full step of the first,
    then another half step of the last (two groups only).
    """

    kind: str = "lie"
    parts: tuple = ((0,), (1,))

    def __post_init__(self) -> None:
        if self.kind not in ("lie", "strang"):
            raise ValueError(f"unknown splitting {self.kind!r}")
        flat = [i for p in self.parts for i in p]
        if len(flat) != len(set(flat)) or sorted(flat) != list(range(len(flat))):
            raise ValueError("parts must partition the state components")
        if self.kind == "strang" and len(self.parts) != 2:
            raise ValueError("strang splitting needs exactly two parts")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "parts": [list(p) for p in self.parts]}


# u first (v frozen at v^j), then v with the new u
IZHIKEVICH_SCHEME = SplitScheme("lie", ((1,), (0,)))
# gating (n, m, h) first with V frozen, then V with the new gating values
HH_SCHEME = SplitScheme("lie", ((1, 2, 3), (0,)))


@dataclass(frozen=True)
class MarchConfig:
    """Partition and sub-solver settings for a split march.

    ``train`` holds one :class:`TrainConfig` per part (a single entry is
    shared).  ``rk4_substeps`` is the number of RK4 steps per collocation
    spacing for the classical backend.
    """

    T: float
    J: int
    points: int = 20
    backend: str = "pinn"
    train: tuple = (TrainConfig(),)
    rk4_substeps: int = 4
    # refit a sub-interval up to its first threshold crossing before resetting
    refine_spikes: bool = True
    edges: Optional[tuple] = None
    test_fraction: float = 0.2
    test_seed: int = 0

    def __post_init__(self) -> None:
        if self.J < 1:
            raise ValueError("J must be at least 1")
        if self.points < 2:
            raise ValueError("need at least 2 points per sub-interval")
        if self.backend not in ("pinn", "rk4", "direct"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if not self.T > 0:
            raise ValueError("T must be positive")

    @property
    def grid(self) -> np.ndarray:
        if self.edges is not None:
            return np.asarray(self.edges, dtype=float)
        return np.linspace(0.0, self.T, self.J + 1)

    def train_for(self, k: int) -> TrainConfig:
        cfg = self.train[k] if k < len(self.train) else self.train[-1]
        return replace(cfg, n_collocation=self.points)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "train"}
        d["train"] = [c.to_dict() for c in self.train]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "MarchConfig":
        data = dict(data)
        data["train"] = tuple(TrainConfig.from_dict(c) for c in data.get("train", [{}]))
        if data.get("edges") is not None:
            data["edges"] = tuple(data["edges"])
        return cls(**data)


@dataclass
class SubflowResult:
    idx: tuple
    t0: float
    t1: float
    terminal: np.ndarray
    evaluate: Callable
    loss: float = 0.0
    iterations: int = 0
    history: list = field(default_factory=list)


@dataclass
class StepResult:
    x: np.ndarray
    pieces: list
    evaluate: Callable


def restricted_rhs(model: ModelSpec, idx: Sequence[int], frozen: np.ndarray) -> Callable:
    """Vectorized rhs of the components ``idx`` with the rest held at ``frozen``."""
    idx = list(idx)
    frozen = np.asarray(frozen, dtype=float)

    def f(t, y):
        y = np.asarray(y)
        full = np.empty(y.shape[:-1] + frozen.shape, dtype=np.result_type(y, frozen))
        full[...] = frozen
        full[..., idx] = y
        return model.rhs(t, full)[..., idx]

    return f


def restricted_rhs_jac(model: ModelSpec, idx: Sequence[int], frozen: np.ndarray):
    """``(rhs, jacobian)`` of the components ``idx``, or None without ``model.rhs_jac``."""
    if model.rhs_jac is None:
        return None
    idx = list(idx)
    frozen = np.asarray(frozen, dtype=float)

    def fj(t, y):
        y = np.asarray(y, dtype=float)
        full = np.empty(y.shape[:-1] + frozen.shape[-1:])
        full[...] = frozen
        full[..., idx] = y
        f, J = model.rhs_jac(t, full, idx)
        return f[..., idx], J[..., idx, :]

    return fj


# {{{ sub-flow backends


class Rk4Backend:
    """Classical RK4 sub-flows with dense output by one step from the nearest node."""

    def __init__(self, model: ModelSpec, points: int, substeps: int = 4) -> None:
        self.model = model
        self.n_steps = (points - 1) * substeps
        self._point = model.rhs_point

    def _point_rhs(self, idx, frozen):
        if self._point is None:
            f = restricted_rhs(self.model, idx, frozen)
            return lambda t, y: list(np.asarray(f(t, np.asarray(y)), dtype=float))
        base = [float(v) for v in frozen]
        point = self._point

        def f(t, y):
            full = list(base)
            for k, i in enumerate(idx):
                full[i] = y[k]
            out = point(t, full)
            return [out[i] for i in idx]

        return f

    def forget(self) -> None:
        pass

    def solve(self, part: int, idx, frozen, t0: float, t1: float) -> SubflowResult:
        f = self._point_rhs(idx, frozen)
        y = [float(frozen[i]) for i in idx]
        h = (t1 - t0) / self.n_steps
        nodes = [y]
        for k in range(self.n_steps):
            y = rk4_step(f, t0 + k * h, y, h)
            nodes.append(y)
        nodes_arr = np.array(nodes)

        def evaluate(t):
            scalar = np.ndim(t) == 0
            ts = np.atleast_1d(np.asarray(t, dtype=float))
            out = np.empty((ts.size, len(idx)))
            for r, tt in enumerate(ts):
                pos = (tt - t0) / h
                k = min(max(int(np.floor(pos)), 0), self.n_steps)
                tau = tt - (t0 + k * h)
                if k == self.n_steps or abs(tau) <= 1e-14 * h:
                    out[r] = nodes_arr[min(k + (tau > 0.5 * h), self.n_steps)]
                else:
                    out[r] = rk4_step(f, t0 + k * h, nodes[k], tau)
            return out[0] if scalar else out

        return SubflowResult(tuple(idx), t0, t1, nodes_arr[-1].copy(), evaluate)


class PinnBackend:
    """One warm-started network per part, retrained on every sub-flow."""

    def __init__(self, model: ModelSpec, cfg: MarchConfig) -> None:
        self.model = model
        self.cfg = cfg
        self.nets: dict[int, Network] = {}

    def forget(self) -> None:
        """Drop the warm-start networks (after a reset the old fit is a poor start)."""
        self.nets.clear()

    def solve(self, part: int, idx, frozen, t0: float, t1: float) -> SubflowResult:
        tcfg = self.cfg.train_for(part)
        y0 = np.asarray(frozen, dtype=float)[list(idx)]
        sub = SubProblem(
            restricted_rhs(self.model, idx, frozen), t0, t1, y0,
            restricted_rhs_jac(self.model, idx, frozen),
        )
        init = self.nets.get(part) if tcfg.warm_start else None
        try:
            sol = train_subproblem(sub, tcfg, init)
        except DivergenceError as exc:
            raise DivergenceError(f"part {part}: {exc}", exc.iteration) from exc
        if not sol.converged:
            log.info("part %d on [%g, %g] stopped at loss %.3e", part, t0, t1, sol.loss)
        self.nets[part] = sol.network
        return SubflowResult(
            tuple(idx), t0, t1, sol.terminal, sol.evaluate, sol.loss, sol.iterations, sol.history
        )


def _combine(pieces_by_part: list, x_template: np.ndarray) -> Callable:
    """Dense evaluator of the full state from the latest sub-flows of each part."""

    def evaluate(t):
        scalar = np.ndim(t) == 0
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.tile(x_template, (ts.size, 1)).astype(float)
        for segs in pieces_by_part:
            for k, seg in enumerate(segs):
                last = k == len(segs) - 1
                mask = (ts >= seg.t0) & ((ts < seg.t1) | last)
                if np.any(mask):
                    out[np.ix_(mask, list(seg.idx))] = np.atleast_2d(seg.evaluate(ts[mask]))
        return out[0] if scalar else out

    return evaluate


# }}}


def _subflow(backend, part, idx, x, t0, t1) -> SubflowResult:
    res = backend.solve(part, idx, x, t0, t1)
    x[list(idx)] = res.terminal
    return res


def lie_step(scheme: SplitScheme, t: float, dt: float, x, backend) -> StepResult:
    """Advance each part in order over ``[t, t + dt]``, freezing the others."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.array(x, dtype=float)
    x_start = x.copy()
    pieces = []
    for k, idx in enumerate(scheme.parts):
        pieces.append([_subflow(backend, k, idx, x, t, t + dt)])
    return StepResult(x, [p[0] for p in pieces], _combine(pieces, x_start))


def strang_step(scheme: SplitScheme, t: float, dt: float, x, backend) -> StepResult:
    """Half step of the second part, full step of the first, half step of the second."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.array(x, dtype=float)
    x_start = x.copy()
    first, second = scheme.parts
    h1 = _subflow(backend, 1, second, x, t, t + 0.5 * dt)
    full = _subflow(backend, 0, first, x, t, t + dt)
    h2 = _subflow(backend, 1, second, x, t + 0.5 * dt, t + dt)
    return StepResult(x, [h1, full, h2], _combine([[full], [h1, h2]], x_start))


def _make_backend(model: ModelSpec, cfg: MarchConfig):
    if cfg.backend == "direct":
        raise ValueError("the 'direct' backend applies to fractional marches only")
    if cfg.backend == "rk4":
        return Rk4Backend(model, cfg.points, cfg.rk4_substeps)
    return PinnBackend(model, cfg)


def split_march(
    model: ModelSpec,
    scheme: SplitScheme,
    cfg: MarchConfig,
    spike_rule: Optional[SpikeRule] = None,
    loss_log: Optional[list] = None,
) -> Trajectory:
    """March ``scheme`` over the partition of ``cfg``.

    Rows are the collocation points of every sub-interval (shared endpoints
    once).  With a spike rule, the first threshold crossing inside a step
    truncates it; the reset state is recorded at the crossing time and the
    step restarts from there over the remainder of the cell.  Random test
    points (``test_fraction`` of the collocation count per sub-interval) are
    evaluated on the same dense solution and stored in the metadata.
    """
    rule = model.spike_rule if spike_rule is None else spike_rule
    edges = cfg.grid
    step = lie_step if scheme.kind == "lie" else strang_step
    backend = _make_backend(model, cfg)
    rng = np.random.default_rng(cfg.test_seed)
    n_test = max(1, int(round(cfg.test_fraction * cfg.points)))
    n_dense = 4 * (cfg.points - 1) + 1

    x = np.asarray(model.x0, dtype=float).copy()
    times, states = [edges[0]], [x.copy()]
    test_t, test_x = [], []
    spikes: list[float] = []
    t_a, j, n_int = edges[0], 0, edges.size - 1
    may_refine = True

    def advance(t0, t1):
        try:
            res = step(scheme, t0, t1 - t0, x, backend)
        except DivergenceError as exc:
            raise DivergenceError(f"sub-interval {j}: {exc}", exc.iteration) from exc
        if loss_log is not None:
            for k, pc in enumerate(res.pieces):
                loss_log.append({"interval": j, "component": k, "history": pc.history,
                                 "loss": pc.loss, "iterations": pc.iterations})
        t_c = None
        if rule is not None:
            t_c = locate_crossing(res.evaluate, t0, t1, rule.component, rule.threshold, n_dense)
        return res, t_c

    def record(res, t0, t1, t_stop):
        pts = np.linspace(t0, t1, cfg.points)[1:]
        tt = np.sort(rng.uniform(t0, t_stop, n_test))
        test_t.extend(tt)
        test_x.extend(np.atleast_2d(res.evaluate(tt)))
        keep = pts[pts < t_stop]
        if keep.size:
            times.extend(keep)
            states.extend(np.atleast_2d(res.evaluate(keep)))

    while j < n_int:
        t_b = edges[j + 1]
        res, t_c = advance(t_a, t_b)
        if t_c is not None and cfg.refine_spikes and may_refine and t_c - t_a > _min_width(t_b - t_a):
            # the fit over the whole cell includes the blow-up past threshold;
            # refit up to the crossing estimate and locate it again
            res_r, t_r = advance(t_a, t_c)
            if t_r is None:
                record(res_r, t_a, t_b, t_c)
                times.append(t_c)
                states.append(res_r.x.copy())
                x, t_a = res_r.x, t_c
                may_refine = False
                continue
            res, t_c = res_r, t_r
        may_refine = True
        if t_c is None:
            record(res, t_a, t_b, t_b)
            times.append(t_b)
            states.append(res.x.copy())
            x = res.x
            t_a = t_b
            j += 1
            continue
        record(res, t_a, t_b, t_c)
        x_c = np.asarray(res.evaluate(t_c), dtype=float)
        x_c[rule.component] = max(x_c[rule.component], rule.threshold)
        x = rule.apply(x_c)
        spikes.append(t_c)
        times.append(t_c)
        states.append(x.copy())
        backend.forget()
        t_a = t_c
        while j < n_int and edges[j + 1] - t_a <= _min_width(edges[j + 1] - edges[j]):
            j += 1
    order = np.argsort(test_t)
    meta = {
        "model": model.name,
        "solver": f"split-{cfg.backend}",
        "scheme": scheme.to_dict(),
        "spike_times": spikes,
        "test_times": np.asarray(test_t)[order],
        "test_states": np.asarray(test_x).reshape(len(test_t), -1)[order],
        "config_hash": config_hash(
            {"model": model.name, "params": model.params, "current": model.current,
             "scheme": scheme, "march": cfg.to_dict()}
        ),
    }
    return Trajectory(np.array(times), np.array(states), model.names, meta)


def split_izhikevich(
    params: IzhikevichParams,
    current: CurrentSource,
    cfg: MarchConfig,
    v0: float = -65.0,
    u0: Optional[float] = None,
    scheme: SplitScheme = IZHIKEVICH_SCHEME,
    loss_log: Optional[list] = None,
) -> Trajectory:
    model = izhikevich_model(params, current, v0, u0)
    return split_march(model, scheme, cfg, loss_log=loss_log)


def split_hh(
    params: HhParams,
    current: CurrentSource,
    cfg: MarchConfig,
    scheme: SplitScheme = HH_SCHEME,
    loss_log: Optional[list] = None,
) -> Trajectory:
    model = hh_model(params, current)
    traj = split_march(model, scheme, cfg, loss_log=loss_log)
    gates = traj.states[:, 1:]
    if np.any(gates < -0.01) or np.any(gates > 1.01):
        lo, hi = float(gates.min()), float(gates.max())
        log.warning("gating variables left [-0.01, 1.01]: range [%g, %g]", lo, hi)
        warnings.warn(f"gating variables left [-0.01, 1.01]: [{lo:g}, {hi:g}]", RuntimeWarning)
    return traj
