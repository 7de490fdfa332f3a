"""Neuron models and input currents.

Everything here is a pure function of its arguments.  Right-hand sides are
vectorized over leading axes: a state ``x`` has shape ``(..., d)`` and the
returned derivative has the same shape.  They also accept complex input so
that Jacobians can be taken by complex-step differentiation.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "LifParams",
    "IzhikevichParams",
    "HhParams",
    "FractionalOrders",
    "CurrentSource",
    "SpikeRule",
    "ModelSpec",
    "lif_rhs",
    "izhikevich_rhs",
    "izhikevich_reset",
    "hh_rates",
    "hh_rhs",
    "hh_rhs_jac",
    "hh_steady_state",
    "current_eval",
    "lif_model",
    "izhikevich_model",
    "hh_model",
    "complex_step_jacobian",
]

# |z| below which z/(e^z - 1) switches to its Taylor expansion
SINGULAR_TOL = 1e-7


# {{{ parameters


@dataclass(frozen=True)
class LifParams:
    """Leaky integrate-and-fire parameters (SI units: F, Ohm, V, s)."""

    cm: float = 5e-3
    r: float = 5.1
    v_rest: float = 0.0
    v_th: float = 1.0
    tau_ref: float = 0.0

    def __post_init__(self) -> None:
        if not (self.cm > 0 and self.r > 0):
            raise ValueError("cm and r must be positive")
        if not self.v_th > self.v_rest:
            raise ValueError("v_th must exceed v_rest")
        if self.tau_ref < 0:
            raise ValueError("tau_ref must be non-negative")

    @property
    def tau(self) -> float:
        return self.r * self.cm


@dataclass(frozen=True)
class IzhikevichParams:
    a: float = 0.02
    b: float = 0.2
    c: float = -50.0
    d: float = 2.0
    v_th: float = 30.0

    def __post_init__(self) -> None:
        if not self.a > 0:
            raise ValueError("a must be positive")
        if not math.isfinite(self.v_th):
            raise ValueError("v_th must be finite")


@dataclass(frozen=True)
class HhParams:
    """Hodgkin-Huxley parameters (mS/cm^2, mV, uF/cm^2, ms).

    ``beta_m_decay`` is the voltage scale in ``beta_m = 4 exp(-(V - V0)/decay)``.
    The default of 80 follows the source model; the classical squid-axon
    value is 18.
    """

    g_na: float = 120.0
    g_k: float = 36.0
    g_l: float = 0.3
    e_na: float = 50.0
    e_k: float = -77.0
    e_l: float = -54.0
    cm: float = 1.0
    v0: float = -65.0
    n0: float = 0.3177
    m0: float = 0.0529
    h0: float = 0.5960
    beta_m_decay: float = 80.0

    def __post_init__(self) -> None:
        if min(self.g_na, self.g_k, self.g_l) <= 0:
            raise ValueError("conductances must be positive")
        if self.cm <= 0:
            raise ValueError("cm must be positive")
        for name in ("n0", "m0", "h0"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name}={val} outside [0, 1]")

    @property
    def initial_state(self) -> np.ndarray:
        return np.array([self.v0, self.n0, self.m0, self.h0])


@dataclass(frozen=True)
class FractionalOrders:
    q1: float = 1.0
    q2: float = 1.0
    q3: float = 1.0
    q4: float = 1.0

    def __post_init__(self) -> None:
        for q in self.as_tuple():
            if not 0.0 < q <= 1.0:
                raise ValueError(f"fractional order {q} outside (0, 1]")

    @classmethod
    def uniform(cls, q: float) -> "FractionalOrders":
        return cls(q, q, q, q)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.q1, self.q2, self.q3, self.q4)

    def __iter__(self):
        return iter(self.as_tuple())

    @property
    def is_integer(self) -> bool:
        return all(q == 1.0 for q in self.as_tuple())


# }}}


# {{{ currents


@dataclass(frozen=True)
class CurrentSource:
    """Piecewise-constant input current.

    Stored as switch times ``edges`` (strictly increasing, all > 0) and
    ``values`` with ``len(values) == len(edges) + 1``; ``values[k]`` holds on
    ``[edges[k-1], edges[k])``.  Every constructor reduces to this form, so
    switches are left-closed: at a switch time the new value applies.
    """

    kind: str
    edges: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) != len(self.edges) + 1:
            raise ValueError("need exactly one more value than switch times")
        e = np.asarray(self.edges, dtype=float)
        if e.size and (np.any(e <= 0) or np.any(np.diff(e) <= 0)):
            raise ValueError("switch times must be positive and strictly increasing")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("current values must be finite")

    @classmethod
    def constant(cls, value: float) -> "CurrentSource":
        return cls("constant", (), (float(value),))

    @classmethod
    def step(cls, t_switch: float, after: float, before: float = 0.0) -> "CurrentSource":
        return cls("step", (float(t_switch),), (float(before), float(after)))

    @classmethod
    def pulse_train(
        cls,
        amplitude: float,
        start: float,
        width: float,
        period: Optional[float] = None,
        count: int = 1,
        baseline: float = 0.0,
    ) -> "CurrentSource":
        if not width > 0:
            raise ValueError("pulse width must be positive")
        if count < 1:
            raise ValueError("need at least one pulse")
        if count > 1 and (period is None or period <= width):
            raise ValueError("pulse period must exceed the width")
        edges: list[float] = []
        values: list[float] = [float(baseline)]
        for k in range(count):
            t0 = start + k * (period or 0.0)
            edges += [t0, t0 + width]
            values += [float(amplitude), float(baseline)]
        if edges[0] == 0.0:
            # a pulse starting at the origin is the initial value
            edges, values = edges[1:], values[1:]
        return cls("pulse-train", tuple(edges), tuple(values))

    @classmethod
    def piecewise(
        cls, segments: Sequence[tuple[float, float, float]], baseline: float = 0.0
    ) -> "CurrentSource":
        """Build from ``(t_start, t_end, value)`` segments; gaps take ``baseline``.

        ``t_end`` may be ``inf``.  Segments must be ordered and non-overlapping.
        """
        knots: list[tuple[float, float]] = [(0.0, float(baseline))]
        cursor = 0.0
        for t0, t1, val in segments:
            if not t1 > t0:
                raise ValueError(f"empty or reversed segment [{t0}, {t1})")
            if t0 < cursor:
                raise ValueError("segments overlap or are unordered")
            if t0 > cursor and len(knots) > 1:
                knots.append((cursor, float(baseline)))
            knots.append((float(t0), float(val)))
            cursor = float(t1)
        if math.isfinite(cursor) and len(knots) > 1:
            knots.append((cursor, float(baseline)))
        # later knots at the same time win; equal neighbours are merged
        dedup: list[tuple[float, float]] = []
        for t, v in knots:
            if dedup and dedup[-1][0] == t:
                dedup[-1] = (t, v)
            elif not dedup or dedup[-1][1] != v:
                dedup.append((t, v))
        merged = [dedup[0]]
        for t, v in dedup[1:]:
            if v != merged[-1][1]:
                merged.append((t, v))
        merged_e = [t for t, _ in merged[1:]]
        merged_v = [v for _, v in merged]
        return cls("piecewise", tuple(merged_e), tuple(merged_v))

    def __call__(self, t):
        return current_eval(self, t)

    @property
    def discontinuities(self) -> tuple[float, ...]:
        return tuple(e for e, a, b in zip(self.edges, self.values, self.values[1:]) if a != b)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "edges": list(self.edges), "values": list(self.values)}

    @classmethod
    def from_dict(cls, data: dict) -> "CurrentSource":
        kind = data.get("kind", "piecewise")
        if "edges" in data:
            return cls(kind, tuple(map(float, data["edges"])), tuple(map(float, data["values"])))
        if kind == "constant":
            return cls.constant(data["value"])
        if kind == "step":
            return cls.step(data["t_switch"], data["after"], data.get("before", 0.0))
        if kind == "pulse-train":
            return cls.pulse_train(
                data["amplitude"],
                data["start"],
                data["width"],
                data.get("period"),
                data.get("count", 1),
                data.get("baseline", 0.0),
            )
        if kind == "piecewise":
            segs = [(float(a), float(b), float(v)) for a, b, v in data["segments"]]
            return cls.piecewise(segs, data.get("baseline", 0.0))
        raise ValueError(f"unknown current kind {kind!r}")


def current_eval(src: CurrentSource, t):
    """Evaluate ``src`` at scalar or array ``t``."""
    if not src.edges:
        if np.ndim(t) == 0:
            return src.values[0]
        return np.full(np.shape(t), src.values[0])
    if np.ndim(t) == 0:
        return src.values[bisect.bisect_right(src.edges, float(np.real(t)))]
    idx = np.searchsorted(src.edges, np.real(t), side="right")
    return np.asarray(src.values)[idx]


# }}}


# {{{ right-hand sides


def lif_rhs(p: LifParams, t, v, i: CurrentSource):
    return (-(v - p.v_rest) + p.r * current_eval(i, t)) / p.tau


def izhikevich_rhs(p: IzhikevichParams, t, v, u, i: CurrentSource):
    dv = 0.04 * v * v + 5.0 * v + 140.0 - u + current_eval(i, t)
    du = p.a * (p.b * v - u)
    return dv, du


def izhikevich_reset(p: IzhikevichParams, v, u):
    if v >= p.v_th:
        return p.c, u + p.d
    return v, u


def _z_over_expm1(z):
    # z / (e^z - 1); the removable singularity at z = 0 uses the series
    z = np.asarray(z)
    small = np.abs(z.real) < SINGULAR_TOL
    safe = np.where(small, 1.0, z)
    out = safe / np.expm1(safe)
    if np.any(small):
        series = 1.0 - z / 2.0 + z * z / 12.0
        out = np.where(small, series, out)
    return out


def hh_rates(p: HhParams, v_m):
    """Return ``(alpha_n, beta_n, alpha_m, beta_m, alpha_h, beta_h)`` at ``v_m``."""
    u = v_m - p.v0
    # 0.1 - 0.01 u = 0.1 (1 - 0.1 u) and 2.5 - 0.1 u are the exponents themselves
    alpha_n = 0.1 * _z_over_expm1(1.0 - 0.1 * u)
    beta_n = 0.125 * np.exp(-u / 80.0)
    alpha_m = _z_over_expm1(2.5 - 0.1 * u)
    beta_m = 4.0 * np.exp(-u / p.beta_m_decay)
    alpha_h = 0.07 * np.exp(-u / 20.0)
    beta_h = 1.0 / (1.0 + np.exp(3.0 - 0.1 * u))
    if np.ndim(v_m) == 0 and not np.iscomplexobj(v_m):
        return tuple(float(r) for r in (alpha_n, beta_n, alpha_m, beta_m, alpha_h, beta_h))
    return alpha_n, beta_n, alpha_m, beta_m, alpha_h, beta_h


def hh_steady_state(p: HhParams, v_m):
    """Gating steady states ``(n_inf, m_inf, h_inf)``."""
    an, bn, am, bm, ah, bh = hh_rates(p, v_m)
    return an / (an + bn), am / (am + bm), ah / (ah + bh)


def hh_rhs(p: HhParams, t, state, i: CurrentSource):
    """``(F1, F2, F3, F4)`` stacked along the last axis of ``state``."""
    state = np.asarray(state)
    v, n, m, h = state[..., 0], state[..., 1], state[..., 2], state[..., 3]
    an, bn, am, bm, ah, bh = hh_rates(p, v)
    i_ion = (
        p.g_l * (v - p.e_l)
        + p.g_k * n**4 * (v - p.e_k)
        + p.g_na * m**3 * h * (v - p.e_na)
    )
    f1 = (-i_ion + current_eval(i, t)) / p.cm
    f2 = an * (1.0 - n) - bn * n
    f3 = am * (1.0 - m) - bm * m
    f4 = ah * (1.0 - h) - bh * h
    return np.stack(np.broadcast_arrays(f1, f2, f3, f4), axis=-1)


def hh_rhs_jac(p: HhParams, t, state, i: CurrentSource, cols: Sequence[int] | None = None):
    """``hh_rhs`` and its Jacobian columns ``cols``, sharing one rate evaluation.

    The Jacobian has shape ``(..., 4, len(cols))``.  Rate derivatives are
    only computed (by one complex step) when the V column is requested.
    """
    state = np.asarray(state, dtype=float)
    cols = list(range(4)) if cols is None else list(cols)
    v, n, m, h = state[..., 0], state[..., 1], state[..., 2], state[..., 3]
    if 0 in cols:
        step = 1e-30
        rates_c = hh_rates(p, v + 1j * step)
        rates = [np.real(r) for r in rates_c]
        drates = [np.imag(r) / step for r in rates_c]
    else:
        rates = hh_rates(p, v)
    an, bn, am, bm, ah, bh = (np.asarray(r, dtype=float) for r in rates)
    n3, m2 = n**3, m * m
    g_k, g_na = p.g_k * n3 * n, p.g_na * m2 * m * h
    f1 = (-(p.g_l * (v - p.e_l) + g_k * (v - p.e_k) + g_na * (v - p.e_na)) + current_eval(i, t)) / p.cm
    f = np.stack(
        np.broadcast_arrays(
            f1, an * (1.0 - n) - bn * n, am * (1.0 - m) - bm * m, ah * (1.0 - h) - bh * h
        ),
        axis=-1,
    )
    zero = np.zeros_like(f1)
    columns = []
    for c in cols:
        if c == 0:
            dan, dbn, dam, dbm, dah, dbh = drates
            col = (
                -(p.g_l + g_k + g_na) / p.cm,
                dan * (1.0 - n) - dbn * n,
                dam * (1.0 - m) - dbm * m,
                dah * (1.0 - h) - dbh * h,
            )
        elif c == 1:
            col = (-4.0 * p.g_k * n3 * (v - p.e_k) / p.cm, -(an + bn), zero, zero)
        elif c == 2:
            col = (-3.0 * p.g_na * m2 * h * (v - p.e_na) / p.cm, zero, -(am + bm), zero)
        else:
            col = (-p.g_na * m2 * m * (v - p.e_na) / p.cm, zero, zero, -(ah + bh))
        columns.append(np.stack(np.broadcast_arrays(*col), axis=-1))
    return f, np.stack(columns, axis=-1)


# }}}


# {{{ model wrapper


@dataclass(frozen=True)
class SpikeRule:
    """Threshold test on one component plus a reset map on the full state."""

    component: int
    threshold: float
    reset: Callable[[np.ndarray], np.ndarray]
    refractory: float = 0.0

    def crossed(self, x) -> bool:
        return bool(np.asarray(x)[..., self.component] >= self.threshold)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x[self.component] >= self.threshold:
            return np.asarray(self.reset(x.copy()), dtype=float)
        return x


@dataclass(frozen=True)
class ModelSpec:
    """Uniform wrapper around one neuron model.

    ``rhs(t, x)`` works on ``x`` of shape ``(..., state_dim)`` with the input
    current already bound.
    """

    name: str
    names: tuple[str, ...]
    rhs: Callable
    x0: np.ndarray
    current: CurrentSource
    params: object
    spike_rule: Optional[SpikeRule] = None
    scales: tuple[float, ...] = field(default=())
    # optional pure-float rhs on a single state (list in, list out) for
    # long sequential integrations where numpy call overhead dominates
    rhs_point: Optional[Callable] = None
    # optional ``(t, x, cols) -> (rhs, d rhs / d x[..., cols])``
    rhs_jac: Optional[Callable] = None

    @property
    def state_dim(self) -> int:
        return len(self.names)


def lif_model(
    p: LifParams, current: CurrentSource, v0: float | None = None, threshold: bool = False
) -> ModelSpec:
    def rhs(t, x):
        return lif_rhs(p, t, np.asarray(x)[..., 0], current)[..., None]

    rule = None
    if threshold:

        def reset(x):
            x[0] = p.v_rest
            return x

        rule = SpikeRule(0, p.v_th, reset, p.tau_ref)
    def rhs_point(t, x):
        return [lif_rhs(p, t, x[0], current)]

    x0 = np.array([p.v_rest if v0 is None else v0], dtype=float)
    return ModelSpec(
        "lif", ("v",), rhs, x0, current, p, rule, (abs(p.v_th - p.v_rest),), rhs_point
    )


def izhikevich_model(
    p: IzhikevichParams, current: CurrentSource, v0: float = -65.0, u0: float | None = None
) -> ModelSpec:
    def rhs(t, x):
        x = np.asarray(x)
        dv, du = izhikevich_rhs(p, t, x[..., 0], x[..., 1], current)
        return np.stack(np.broadcast_arrays(dv, du), axis=-1)

    def reset(x):
        x[0], x[1] = izhikevich_reset(p, x[0], x[1])
        return x

    def rhs_point(t, x):
        return list(izhikevich_rhs(p, t, x[0], x[1], current))

    u0 = p.b * v0 if u0 is None else u0
    rule = SpikeRule(0, p.v_th, reset)
    return ModelSpec(
        "izhikevich",
        ("v", "u"),
        rhs,
        np.array([v0, u0]),
        current,
        p,
        rule,
        (50.0, 10.0),
        rhs_point,
    )


def hh_model(p: HhParams, current: CurrentSource) -> ModelSpec:
    def rhs(t, x):
        return hh_rhs(p, t, x, current)

    return ModelSpec(
        "hh",
        ("v", "n", "m", "h"),
        rhs,
        p.initial_state,
        current,
        p,
        None,
        (50.0, 1.0, 1.0, 1.0),
        _hh_point_rhs(p, current),
        lambda t, x, cols=None: hh_rhs_jac(p, t, x, current, cols),
    )


def _scalar_z_over_expm1(z: float) -> float:
    if abs(z) < SINGULAR_TOL:
        return 1.0 - z / 2.0 + z * z / 12.0
    return z / math.expm1(z)


def _hh_point_rhs(p: HhParams, current: CurrentSource) -> Callable:
    exp = math.exp

    def rhs(t, x):
        v, n, m, h = x
        u = v - p.v0
        an = 0.1 * _scalar_z_over_expm1(1.0 - 0.1 * u)
        bn = 0.125 * exp(-u / 80.0)
        am = _scalar_z_over_expm1(2.5 - 0.1 * u)
        bm = 4.0 * exp(-u / p.beta_m_decay)
        ah = 0.07 * exp(-u / 20.0)
        bh = 1.0 / (1.0 + exp(3.0 - 0.1 * u))
        i_ion = (
            p.g_l * (v - p.e_l)
            + p.g_k * n**4 * (v - p.e_k)
            + p.g_na * m**3 * h * (v - p.e_na)
        )
        return [
            (-i_ion + current_eval(current, t)) / p.cm,
            an * (1.0 - n) - bn * n,
            am * (1.0 - m) - bm * m,
            ah * (1.0 - h) - bh * h,
        ]

    return rhs


def complex_step_jacobian(f: Callable, t, x: np.ndarray, cols: Sequence[int] | None = None):
    """Jacobian ``df/dx[..., cols]`` of a vectorized rhs by complex steps.

    Returns shape ``(..., d_out, len(cols))``.  Exact to rounding for
    analytic ``f``; every rhs in this module is analytic in the state.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    cols = range(d) if cols is None else cols
    h = 1e-30
    out = []
    for c in cols:
        xc = x.astype(complex)
        xc[..., c] += 1j * h
        out.append(np.imag(f(t, xc)) / h)
    return np.stack(out, axis=-1)


# }}}
