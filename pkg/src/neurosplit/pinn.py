"""One PINN per sub-interval: residual loss, training loop, sequential march.

Inside a sub-interval ``[t_a, t_b]`` the network sees the normalized input
``s = (2t - t_a - t_b) / (t_b - t_a)`` in ``[-1, 1]``; time derivatives pick
up the chain factor ``2 / (t_b - t_a)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .models import ModelSpec, SpikeRule, complex_step_jacobian
from .net import (
    Architecture,
    DivergenceError,
    Network,
    OptimizerState,
    adam_step,
    forward,
    forward_with_tangent,
    grad_params,
    init_params,
)
from .trajectory import Trajectory

__all__ = [
    "SubProblem",
    "TrainConfig",
    "TrainedSolution",
    "collocation_points",
    "residual_loss",
    "train_subproblem",
    "locate_crossing",
    "march_pinn",
]


@dataclass
class SubProblem:
    """``dx/dt = rhs(t, x)`` on ``[t_a, t_b]`` with ``x(t_a) = x_a``.

    ``rhs`` is vectorized: ``t`` of shape ``(N,)``, ``x`` of shape ``(N, d)``
    and is evaluated at ``t_b`` from the left.
    ``rhs_jac`` optionally returns ``(rhs, jacobian)`` in one call, the
    Jacobian of shape ``(N, d, d)``; without it the Jacobian is taken by
    complex steps.
    """

    rhs: Callable
    t_a: float
    t_b: float
    x_a: np.ndarray
    rhs_jac: Optional[Callable] = None

    def __post_init__(self) -> None:
        self.x_a = np.atleast_1d(np.asarray(self.x_a, dtype=float))
        if not self.t_b > self.t_a:
            raise ValueError("need t_b > t_a")
        if not np.all(np.isfinite(self.x_a)):
            raise ValueError("initial state must be finite")

    @property
    def out_dim(self) -> int:
        return self.x_a.size

    @property
    def width(self) -> float:
        return self.t_b - self.t_a

    def to_unit(self, t):
        return (2.0 * np.asarray(t, dtype=float) - self.t_a - self.t_b) / self.width

    def eval_with_jac(self, t, x):
        # the right end is a left limit: a current switch at t_b belongs to
        # the next sub-interval
        t = np.minimum(t, np.nextafter(self.t_b, self.t_a))
        if self.rhs_jac is not None:
            return self.rhs_jac(t, x)
        return self.rhs(t, x), complex_step_jacobian(self.rhs, t, x)


@dataclass(frozen=True)
class TrainConfig:
    n_collocation: int = 20
    max_iters: int = 2000
    target_loss: float = 1e-8
    arch: Architecture = Architecture(depth=3, width=20)
    optimizer: str = "adam"
    lr: float = 1e-3
    gamma: float = 0.95
    decay_every: int = 1000
    seed: int = 0
    ic_weight: float = 1.0
    warm_start: bool = True
    # spike search resolution: dense points per collocation spacing
    dense_factor: int = 4
    log_every: int = 0
    # shift the trained output by a constant so that evaluate(t_a) == x_a
    ic_correction: bool = True

    def __post_init__(self) -> None:
        if self.n_collocation < 2:
            raise ValueError("need at least 2 collocation points")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.arch.out_dim < 1:
            raise ValueError("architecture needs outputs")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["arch"] = {k: getattr(self.arch, k) for k in self.arch.__dataclass_fields__}
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if isinstance(data.get("arch"), dict):
            data["arch"] = Architecture(**data["arch"])
        return cls(**data)


@dataclass
class TrainedSolution:
    network: Network
    sub: SubProblem
    loss: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    offset: np.ndarray | float = 0.0

    def evaluate(self, t) -> np.ndarray:
        return forward(self.network, self.sub.to_unit(t)) + self.offset

    def derivative(self, t) -> np.ndarray:
        _, dx, _ = forward_with_tangent(self.network, self.sub.to_unit(t))
        dx = dx * (2.0 / self.sub.width)
        return dx[0] if np.ndim(t) == 0 else dx

    @property
    def terminal(self) -> np.ndarray:
        return self.evaluate(self.sub.t_b)


def collocation_points(sub: SubProblem, n: int) -> np.ndarray:
    """Equispaced, both endpoints included."""
    return np.linspace(sub.t_a, sub.t_b, n)


def _loss_closure(sub: SubProblem, t: np.ndarray, ic_weight: float, has_ic_row: bool):
    """Residual-plus-initial-mismatch loss on the batch ``t``; row 0 is ``t_a``.

    When ``has_ic_row`` is False row 0 was prepended only for the initial
    condition and carries no residual weight.
    """
    n_res = t.size if has_ic_row else t.size - 1
    w = np.full(t.size, 1.0 / n_res)
    if not has_ic_row:
        w[0] = 0.0
    chain = 2.0 / sub.width

    def loss_fn(x, dx_unit):
        dxdt = dx_unit * chain
        with np.errstate(all="ignore"):
            f, J = sub.eval_with_jac(t, x)
            R = dxdt - f
        ic = x[0] - sub.x_a
        loss = float(np.sum(w[:, None] * R * R) + ic_weight * np.dot(ic, ic))
        if not np.isfinite(loss):
            return loss, None, None
        gx = -2.0 * w[:, None] * np.einsum("nc,nck->nk", R, J)
        gx[0] += 2.0 * ic_weight * ic
        gdx = (2.0 * chain) * w[:, None] * R
        return loss, gx, gdx

    return loss_fn


def _batch(sub: SubProblem, points) -> tuple[np.ndarray, bool]:
    t = np.atleast_1d(np.asarray(points, dtype=float))
    if np.any(t < sub.t_a) or np.any(t > sub.t_b):
        raise ValueError("collocation points must lie in [t_a, t_b]")
    if t[0] == sub.t_a:
        return t, True
    return np.concatenate([[sub.t_a], t]), False


def residual_loss(net: Network, sub: SubProblem, points, ic_weight: float = 1.0) -> float:
    """Mean squared ODE residual on ``points`` plus the squared initial mismatch."""
    t, has_ic = _batch(sub, points)
    x, dx, _ = forward_with_tangent(net, sub.to_unit(t))
    loss, _, _ = _loss_closure(sub, t, ic_weight, has_ic)(x, dx)
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite residual loss {loss}")
    return loss


def _optimize(net: Network, s: np.ndarray, loss_fn, cfg: TrainConfig):
    """Optimizer loop on a fixed batch; leaves the best parameters in ``net``.

    Returns ``(best_loss, iterations, history)``.
    """
    opt = OptimizerState(
        kind=cfg.optimizer, lr=cfg.lr, gamma=cfg.gamma, decay_every=cfg.decay_every
    )
    best, best_theta = np.inf, net.theta.copy()
    history = []
    it = 0
    for it in range(1, cfg.max_iters + 1):
        try:
            loss, grad = grad_params(net, s, loss_fn)
        except DivergenceError as exc:
            raise DivergenceError("training diverged", it) from exc
        if loss < best:
            best = loss
            best_theta[:] = net.theta
        if cfg.log_every and (it == 1 or it % cfg.log_every == 0):
            history.append((it, loss))
        if loss <= cfg.target_loss:
            break
        adam_step(opt, net, grad)
    if cfg.log_every and (not history or history[-1][0] != it):
        history.append((it, best))
    net.load(best_theta)
    return float(best), it, history


def train_subproblem(
    sub: SubProblem, cfg: TrainConfig, init: Optional[Network] = None
) -> TrainedSolution:
    """Adam/Adamax on the residual loss until ``target_loss`` or ``max_iters``.

    ``init`` warm-starts from given parameters.  Either way the output bias is
    shifted so that the untrained network already matches ``x_a`` at ``t_a``.
    The best parameters seen are returned.
    """
    arch = cfg.arch if cfg.arch.out_dim == sub.out_dim else replace(cfg.arch, out_dim=sub.out_dim)
    net = init.copy() if init is not None else init_params(arch, cfg.seed)
    if net.arch.out_dim != sub.out_dim:
        raise ValueError("warm-start network has the wrong output size")
    net.biases[-1][:] += sub.x_a - forward(net, -1.0)

    t = collocation_points(sub, cfg.n_collocation)
    loss_fn = _loss_closure(sub, t, cfg.ic_weight, True)
    best, it, history = _optimize(net, sub.to_unit(t), loss_fn, cfg)
    converged = best <= 100.0 * cfg.target_loss
    offset = sub.x_a - forward(net, -1.0) if cfg.ic_correction else 0.0
    return TrainedSolution(net, sub, float(best), it, converged, history, offset)


def locate_crossing(
    evaluate: Callable,
    t_a: float,
    t_b: float,
    component: int,
    threshold: float,
    n_dense: int,
    tol: float = 1e-13,
) -> Optional[float]:
    """First time in ``(t_a, t_b]`` where ``evaluate(t)[component]`` reaches ``threshold``.

    Scans ``n_dense`` equispaced points, then bisects inside the first bracket.
    """
    t = np.linspace(t_a, t_b, n_dense)
    vals = np.atleast_2d(evaluate(t))[:, component]
    hits = np.nonzero(vals[1:] >= threshold)[0]
    if hits.size == 0:
        return None
    k = hits[0] + 1
    lo, hi = t[k - 1], t[k]
    while hi - lo > tol * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if np.atleast_1d(evaluate(mid))[component] >= threshold:
            hi = mid
        else:
            lo = mid
    return float(hi)


def _min_width(dt: float) -> float:
    # truncated remainders shorter than this are skipped
    return 1e-9 * dt


def march_pinn(
    model: ModelSpec,
    grid,
    cfg: TrainConfig,
    spike_rule: Optional[SpikeRule] = None,
    loss_log: Optional[list] = None,
    test_fraction: float = 0.2,
    test_seed: int = 0,
) -> Trajectory:
    """Unsplit PINN march over the partition ``grid`` (sub-interval edges).

    Each sub-interval starts from the previous terminal state.  With a spike
    rule, the first threshold crossing truncates the sub-interval, the reset
    state is recorded at the crossing time, and the march resumes from there
    over the remainder of the cell.  Uniform random test points
    (``test_fraction`` of the collocation count per sub-interval) go to the
    metadata.
    """
    edges = np.asarray(grid, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("grid must be strictly increasing with at least two edges")
    rule = model.spike_rule if spike_rule is None else spike_rule
    x = np.asarray(model.x0, dtype=float).copy()
    times, states = [edges[0]], [x.copy()]
    spikes: list[float] = []
    rng = np.random.default_rng(test_seed)
    n_test = max(1, int(round(test_fraction * cfg.n_collocation)))
    test_t, test_x = [], []
    net = None
    t_a = edges[0]
    j = 0
    n_int = edges.size - 1
    n_dense = cfg.dense_factor * (cfg.n_collocation - 1) + 1
    while j < n_int:
        t_b = edges[j + 1]
        sub = SubProblem(model.rhs, t_a, t_b, x)
        try:
            sol = train_subproblem(sub, cfg, net if cfg.warm_start else None)
        except DivergenceError as exc:
            raise DivergenceError(f"sub-interval {j}: {exc}", exc.iteration) from exc
        if not sol.converged:
            warnings.warn(
                f"sub-interval {j} stopped at loss {sol.loss:.3e}", RuntimeWarning, stacklevel=2
            )
        if loss_log is not None:
            loss_log.append({"interval": j, "component": 0, "history": sol.history,
                             "loss": sol.loss, "iterations": sol.iterations})
        net = sol.network
        t_c = None
        if rule is not None:
            t_c = locate_crossing(sol.evaluate, t_a, t_b, rule.component, rule.threshold, n_dense)
        pts = collocation_points(sub, cfg.n_collocation)[1:]
        tt = np.sort(rng.uniform(t_a, t_b if t_c is None else t_c, n_test))
        test_t.extend(tt)
        test_x.extend(sol.evaluate(tt))
        if t_c is None:
            vals = sol.evaluate(pts)
            x = vals[-1].copy()
            times.extend(pts)
            states.extend(vals)
            t_a = t_b
            j += 1
            continue
        keep = pts[pts < t_c]
        if keep.size:
            times.extend(keep)
            states.extend(sol.evaluate(keep))
        x_c = sol.evaluate(t_c)
        x_c[rule.component] = max(x_c[rule.component], rule.threshold)
        x = rule.apply(x_c)
        spikes.append(t_c)
        times.append(t_c)
        states.append(x.copy())
        t_a = t_c + rule.refractory
        if rule.refractory > 0 and t_a < edges[-1]:
            times.append(t_a)
            states.append(x.copy())
        while j < n_int and edges[j + 1] - t_a <= _min_width(edges[j + 1] - edges[j]):
            j += 1
            if j < n_int and t_a < edges[j]:
                times.append(edges[j])
                states.append(x.copy())
                t_a = edges[j]
    return Trajectory(
        np.array(times),
        np.array(states),
        model.names,
        {
            "model": model.name,
            "solver": "pinn",
            "spike_times": spikes,
            "test_times": np.asarray(test_t),
            "test_states": np.asarray(test_x).reshape(len(test_t), -1),
        },
    )
