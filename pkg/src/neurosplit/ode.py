"""Classical fixed-step RK4, used as the cheap oracle backend.

The stepping loop works on plain Python lists: states are at most four
components, and numpy per-call overhead would dominate the long oracle runs.
"""

from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np

from .models import ModelSpec, SpikeRule
from .trajectory import Trajectory

__all__ = ["rk4_step", "rk4_flow", "rk4_solve", "point_rhs"]


def point_rhs(model: ModelSpec) -> Callable:
    if model.rhs_point is not None:
        return model.rhs_point

    def f(t, x):
        return list(np.asarray(model.rhs(t, np.asarray(x, dtype=float)), dtype=float))

    return f


def rk4_step(f: Callable, t: float, x: list, h: float) -> list:
    k1 = f(t, x)
    k2 = f(t + 0.5 * h, [xi + 0.5 * h * ki for xi, ki in zip(x, k1)])
    k3 = f(t + 0.5 * h, [xi + 0.5 * h * ki for xi, ki in zip(x, k2)])
    # last stage from the left so a current switch at t + h is not seen
    k4 = f(math.nextafter(t + h, t), [xi + h * ki for xi, ki in zip(x, k3)])
    return [
        xi + h / 6.0 * (a + 2.0 * b + 2.0 * c + d)
        for xi, a, b, c, d in zip(x, k1, k2, k3, k4)
    ]


def rk4_flow(f: Callable, t0: float, t1: float, x0, n_steps: int) -> np.ndarray:
    """States at the ``n_steps + 1`` equispaced points of ``[t0, t1]``."""
    h = (t1 - t0) / n_steps
    x = [float(v) for v in x0]
    out = [x]
    for k in range(n_steps):
        x = rk4_step(f, t0 + k * h, x, h)
        out.append(x)
    return np.array(out)


def _locate_crossing(f, t, x, h, rule: SpikeRule, iters: int = 60) -> float:
    # bisection on the sub-step length; each probe is one RK4 step from (t, x)
    lo, hi = 0.0, h
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if rk4_step(f, t, x, mid)[rule.component] >= rule.threshold:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * max(1.0, abs(t)):
            break
    return hi


def rk4_solve(
    model: ModelSpec,
    t_end: float,
    dt: float,
    x0=None,
    t0: float = 0.0,
    record_every: int = 1,
    spike_rule: Optional[SpikeRule] = None,
) -> Trajectory:
    """Unsplit RK4 over ``[t0, t_end]`` with optional threshold/reset events.

    Crossing times are located by bisection on the step length; the reset
    state is recorded at the crossing time.
    """
    f = point_rhs(model)
    rule = model.spike_rule if spike_rule is None else spike_rule
    x = [float(v) for v in (model.x0 if x0 is None else x0)]
    n = int(round((t_end - t0) / dt))
    if n < 1 or not np.isclose(n * dt, t_end - t0, rtol=1e-9, atol=0.0):
        raise ValueError("dt must divide the interval")
    times = [t0]
    states = [x]
    spikes: list[float] = []
    t = t0
    hold_until = -np.inf
    for k in range(n):
        t_next = t0 + (k + 1) * dt
        if t < hold_until:
            t = t_next
        else:
            x_new = rk4_step(f, t, x, t_next - t)
            if rule is not None and x_new[rule.component] >= rule.threshold:
                tau = _locate_crossing(f, t, x, t_next - t, rule)
                t_c = t + tau
                x = list(rule.apply(np.array(rk4_step(f, t, x, tau))))
                spikes.append(t_c)
                if t_c < t_next:
                    times.append(t_c)
                    states.append(x)
                hold_until = t_c + rule.refractory
                if t_c < t_next and hold_until < t_next:
                    x = rk4_step(f, t_c, x, t_next - t_c)
                    if x[rule.component] >= rule.threshold:
                        x = list(rule.apply(np.array(x)))
            else:
                x = x_new
            t = t_next
        if (k + 1) % record_every == 0 or k == n - 1:
            if t > times[-1]:
                times.append(t)
                states.append(x)
    return Trajectory(
        np.array(times),
        np.array(states),
        model.names,
        {"model": model.name, "solver": "rk4", "dt": dt, "spike_times": spikes},
    )
