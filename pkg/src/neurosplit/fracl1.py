"""L1 discretization of the Caputo derivative and the split FPINN march.

On a uniform grid ``t^n = n * tau`` the L1 scheme reads

    delta^a f^n = sum_{k=0}^{n-1} b_k (f^{n-k} - f^{n-1-k}),
    b_k = tau^{-a} / Gamma(2 - a) * ((k + 1)^{1-a} - k^{1-a}).

The march keeps the whole history (no truncation).  For the points of the
current sub-interval the contribution of all stored differences is computed
once; the remaining terms involve the unknowns and are differentiated
through during training.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .models import CurrentSource, FractionalOrders, HhParams, complex_step_jacobian, hh_model
from .net import DivergenceError, Network, forward, forward_with_tangent, init_params
from .pinn import TrainConfig, _optimize
from .splitting import MarchConfig
from .trajectory import Trajectory, config_hash

__all__ = [
    "L1Coeffs",
    "L1Memory",
    "FoHhState",
    "FpinnProblem",
    "l1_coeffs",
    "l1_apply",
    "caputo_analytic_power",
    "fpinn_residual",
    "split_fohh_march",
]

log = logging.getLogger(__name__)


# {{{ coefficients and operator


@dataclass(frozen=True)
class L1Coeffs:
    alpha: float
    dt: float
    b: np.ndarray

    def __len__(self) -> int:
        return self.b.size


def _l1_weights(alpha: float, dt: float, length: int) -> np.ndarray:
    # alpha == 1 collapses to the backward difference (b_0 = 1/dt, rest 0)
    k = np.arange(length, dtype=float)
    a1 = 1.0 - alpha
    w = (k + 1.0) ** a1 - k**a1
    w[:1] = 1.0  # 0**0 == 1 would zero b_0 at alpha == 1
    return dt**-alpha / math.gamma(2.0 - alpha) * w


def l1_coeffs(alpha: float, dt: float, length: int) -> L1Coeffs:
    """``b_0 .. b_{length-1}``; ``alpha`` must lie strictly inside (0, 1)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("L1 order must lie in (0, 1); use the integer path for alpha = 1")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if length < 1:
        raise ValueError("need at least one coefficient")
    return L1Coeffs(float(alpha), float(dt), _l1_weights(alpha, dt, length))


def l1_apply(coeffs: L1Coeffs, history) -> np.ndarray:
    """L1 derivative at the newest entry of ``history`` (``f^0 .. f^j`` along axis 0)."""
    f = np.asarray(history, dtype=float)
    j = f.shape[0] - 1
    if j < 1:
        raise ValueError("history needs at least two entries")
    if j > len(coeffs):
        raise ValueError(f"history of length {j + 1} needs {j} coefficients, have {len(coeffs)}")
    d = np.diff(f, axis=0)[::-1]
    return np.tensordot(coeffs.b[:j], d, axes=(0, 0))


def caputo_analytic_power(alpha: float, p: float, t):
    """Exact Caputo derivative of ``t**p`` (``p = 0`` or ``p >= 1``)."""
    t = np.asarray(t, dtype=float)
    if p == 0:
        return np.zeros_like(t)
    if p < 1:
        raise ValueError("power must be 0 or at least 1")
    return math.gamma(p + 1.0) / math.gamma(p + 1.0 - alpha) * t ** (p - alpha)


# }}}


# {{{ full-domain memory


class L1Memory:
    """Append-only history ``x^0, x^1, ...`` of one variable on a uniform grid."""

    def __init__(self, alpha: float, dt: float, capacity: int, x0: float) -> None:
        if not 0.0 < alpha <= 1.0:
            raise ValueError("order must lie in (0, 1]")
        self.alpha = float(alpha)
        self.dt = float(dt)
        self.b = _l1_weights(alpha, dt, capacity)
        self._values = np.empty(capacity + 1)
        self._values[0] = x0
        self.size = 1

    @property
    def values(self) -> np.ndarray:
        return self._values[: self.size]

    @property
    def index(self) -> int:
        """Global index of the newest stored entry."""
        return self.size - 1

    def append(self, vals) -> None:
        vals = np.atleast_1d(np.asarray(vals, dtype=float))
        if self.size + vals.size > self._values.size:
            raise ValueError("memory capacity exceeded")
        self._values[self.size : self.size + vals.size] = vals
        self.size += vals.size

    def stored_part(self, count: int) -> np.ndarray:
        """Contribution of all stored differences to the next ``count`` indices.

        Entry ``l`` is ``sum_{m=1}^{M} b_{M+1+l-m} (x^m - x^{m-1})`` with
        ``M = self.index``.
        """
        M = self.index
        if M == 0:
            return np.zeros(count)
        if M + count > self.b.size:
            raise ValueError("memory capacity exceeded")
        d_rev = np.diff(self.values)[::-1]
        windows = sliding_window_view(self.b[1 : M + count], M)
        return windows @ d_rev

    def local_matrix(self, count: int) -> np.ndarray:
        """Lower-triangular Toeplitz ``B[l, i] = b_{l-i}`` acting on new differences."""
        k = np.arange(count)
        lag = k[:, None] - k[None, :]
        return np.where(lag >= 0, self.b[np.clip(lag, 0, None)], 0.0)

    def derivative(self, n: int) -> float:
        """L1 derivative at stored index ``n`` from exactly ``n`` differences."""
        if not 1 <= n <= self.index:
            raise ValueError("index out of the stored range")
        d = np.diff(self._values[: n + 1])[::-1]
        return float(self.b[:n] @ d)


@dataclass
class FoHhState:
    orders: tuple
    memories: list

    @classmethod
    def start(cls, orders: Sequence[float], x0, dt: float, capacity: int) -> "FoHhState":
        mems = [L1Memory(q, dt, capacity, v) for q, v in zip(orders, x0)]
        return cls(tuple(orders), mems)

    @property
    def index(self) -> int:
        idx = {m.index for m in self.memories}
        if len(idx) != 1:
            raise RuntimeError("histories out of step")
        return idx.pop()

    def latest(self) -> np.ndarray:
        return np.array([m.values[-1] for m in self.memories])

    def history(self) -> np.ndarray:
        return np.stack([m.values for m in self.memories], axis=1)


# }}}


# {{{ FPINN sub-problem


@dataclass
class FpinnProblem:
    """One part of one sub-interval: unknowns ``idx`` at the new grid points.

    ``t_new`` are the ``N2`` points in ``(t_a, t_b]`` and ``frozen`` the full
    state seen at each of them (the unknown columns are overwritten).
    ``stored`` holds the precomputed history contribution per point and
    component; ``local`` the per-component matrices acting on the new
    differences.
    """

    rhs: Callable
    idx: tuple
    t_a: float
    t_b: float
    t_new: np.ndarray
    frozen: np.ndarray
    x_a: np.ndarray
    stored: np.ndarray
    local: np.ndarray
    ic_weight: float = 1.0
    rhs_jac: Optional[Callable] = None

    @classmethod
    def build(cls, model, idx, frozen, state: FoHhState, t_a, t_b, t_new, ic_weight=1.0):
        n = len(t_new)
        mems = [state.memories[i] for i in idx]
        frozen = np.array(np.broadcast_to(frozen, (n, len(state.memories))), dtype=float)
        return cls(
            model.rhs,
            tuple(idx),
            float(t_a),
            float(t_b),
            np.asarray(t_new, dtype=float),
            frozen,
            np.array([m.values[-1] for m in mems]),
            np.stack([m.stored_part(n) for m in mems], axis=1),
            np.stack([m.local_matrix(n) for m in mems]),
            ic_weight,
            model.rhs_jac,
        )

    def to_unit(self, t):
        return (2.0 * np.asarray(t, dtype=float) - self.t_a - self.t_b) / (self.t_b - self.t_a)

    @property
    def batch(self) -> np.ndarray:
        return np.concatenate([[self.t_a], self.t_new])

    def _full(self, Y, rows):
        Y = np.asarray(Y)
        full = self.frozen[rows].astype(np.result_type(Y, float))
        full[:, list(self.idx)] = Y
        return full

    def eval_rhs(self, Y, rows=slice(None)):
        return self.rhs(self.t_new[rows], self._full(Y, rows))[:, list(self.idx)]

    def eval_rhs_jac(self, Y, rows=slice(None)):
        idx = list(self.idx)
        if self.rhs_jac is not None:
            f, J = self.rhs_jac(self.t_new[rows], self._full(Y, rows), idx)
            return f[:, idx], J[:, idx, :]
        f = self.eval_rhs(Y, rows)
        J = complex_step_jacobian(lambda t, y: self.eval_rhs(y, rows), None, np.asarray(Y))
        return f, J

    def residual(self, Y: np.ndarray) -> np.ndarray:
        """L1 residual at the new points for candidate values ``Y`` of shape ``(N2, k)``."""
        D = np.diff(np.vstack([self.x_a, Y]), axis=0)
        frac = self.stored + np.einsum("cli,ic->lc", self.local, D)
        with np.errstate(all="ignore"):
            return frac - self.eval_rhs(Y)

    def loss_fn(self, x: np.ndarray, dx: np.ndarray):
        Y = x[1:]
        n = Y.shape[0]
        D = np.diff(np.vstack([self.x_a, Y]), axis=0)
        with np.errstate(all="ignore"):
            f, J = self.eval_rhs_jac(Y)
            R = self.stored + np.einsum("cli,ic->lc", self.local, D) - f
        ic = x[0] - self.x_a
        loss = float(np.sum(R * R) / n + self.ic_weight * np.dot(ic, ic))
        if not np.isfinite(loss):
            return loss, None, None
        gR = 2.0 * R / n
        gD = np.einsum("cli,lc->ic", self.local, gR)
        gY = gD.copy()
        gY[:-1] -= gD[1:]
        gY -= np.einsum("nc,nck->nk", gR, J)
        gx = np.vstack([2.0 * self.ic_weight * ic, gY])
        return loss, gx, np.zeros_like(dx)

    def solve_point(self, l: int, Y: np.ndarray, tol: float = 1e-12, max_iter: int = 50):
        """Newton solve of the discrete equation at new point ``l``.

        Rows ``< l`` of ``Y`` must hold the already solved values; row ``l``
        is filled in and returned.
        """
        prev = self.x_a if l == 0 else Y[l - 1]
        D = np.diff(np.vstack([self.x_a, Y[:l]]), axis=0)
        known = self.stored[l] + np.einsum("ci,ic->c", self.local[:, l, :l], D)
        b0 = self.local[:, 0, 0]
        rows = slice(l, l + 1)
        y = np.array(prev, dtype=float)
        for _ in range(max_iter):
            f, Jf = self.eval_rhs_jac(y[None], rows)
            r = known + b0 * (y - prev) - f[0]
            dy = np.linalg.solve(np.diag(b0) - Jf[0], r)
            y = y - dy
            if np.max(np.abs(dy)) <= tol * (1.0 + np.max(np.abs(y))):
                break
        else:
            raise RuntimeError(f"L1 Newton did not converge at point {l}")
        Y[l] = y
        return y

    def solve_direct(self) -> np.ndarray:
        """Point-by-point solution of the discrete equations (training-free oracle)."""
        Y = np.empty(self.stored.shape)
        for l in range(Y.shape[0]):
            self.solve_point(l, Y)
        return Y


def fpinn_residual(net: Network, problem: FpinnProblem) -> float:
    """FPINN loss: mean squared L1 residual at the new points plus the initial mismatch."""
    x, dx, _ = forward_with_tangent(net, problem.to_unit(problem.batch))
    loss, _, _ = problem.loss_fn(x, dx)
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite residual loss {loss}")
    return loss


# }}}


# {{{ march

# V first (gating frozen one grid point back), then (n, m, h) with the new V
FOHH_PARTS = ((0,), (1, 2, 3))


def _train_part(prob: FpinnProblem, tcfg: TrainConfig, init: Optional[Network]):
    arch = replace(tcfg.arch, out_dim=len(prob.idx))
    net = init.copy() if init is not None else init_params(arch, tcfg.seed)
    net.biases[-1][:] += prob.x_a - forward(net, -1.0)
    loss, its, hist = _optimize(net, prob.to_unit(prob.batch), prob.loss_fn, tcfg)
    return net, loss, its, hist


def split_fohh_march(
    params: HhParams,
    q: FractionalOrders,
    current: CurrentSource,
    cfg: MarchConfig,
    sweeps: int = 2,
    loss_log: Optional[list] = None,
) -> Trajectory:
    """Split FPINN march for the fractional HH model on a uniform global grid.

    Sub-interval ``j`` owns the ``N2 = cfg.points`` grid points with global
    indices ``N2*j + 1 .. N2*(j+1)``.  At each index ``n`` the V equation
    sees the gating variables at ``n - 1`` and the (n, m, h) equations see
    V at ``n``.  ``cfg.backend`` selects how the discrete equations are
    solved:

    * ``"direct"``: Newton point by point, interleaving the two parts;
    * ``"pinn"``: one warm-started network per part.  The V network needs
      gating values inside the sub-interval before they are trained, so the
      two parts are trained alternately ``sweeps`` times, starting from the
      previous gating network's extrapolation.
    """
    if cfg.backend not in ("pinn", "direct"):
        raise ValueError("fractional march supports the 'pinn' and 'direct' backends")
    if sweeps < 1:
        raise ValueError("need at least one sweep")
    if params.cm != 1.0 and q.q1 != 1.0:
        warnings.warn("cm != 1 with q1 != 1: no unit conversion is applied", RuntimeWarning)
    model = hh_model(params, current)
    J, n2 = cfg.J, cfg.points
    edges = np.linspace(0.0, cfg.T, J + 1)
    n_total = J * n2
    tau = cfg.T / n_total
    grid = np.linspace(0.0, cfg.T, n_total + 1)
    state = FoHhState.start(q.as_tuple(), model.x0, tau, n_total)
    rng = np.random.default_rng(cfg.test_seed)
    n_test = max(1, int(round(cfg.test_fraction * n2)))
    nets: dict[int, Network] = {}
    test_t, test_x = [], []
    iv, ig = list(FOHH_PARTS[0]), list(FOHH_PARTS[1])

    for j in range(J):
        t_a, t_b = edges[j], edges[j + 1]
        t_new = grid[n2 * j + 1 : n2 * (j + 1) + 1]
        x_start = state.latest()
        new_vals = np.tile(x_start, (n2, 1))

        def build(part):
            if part == 0:
                frozen = np.vstack([x_start, new_vals[:-1]])
            else:
                frozen = new_vals
            return FpinnProblem.build(
                model, FOHH_PARTS[part], frozen, state, t_a, t_b, t_new,
                cfg.train_for(part).ic_weight,
            )

        if cfg.backend == "direct":
            pv, pg = build(0), build(1)
            Yv, Yg = np.empty((n2, 1)), np.empty((n2, 3))
            for l in range(n2):
                if l > 0:
                    pv.frozen[l, ig] = Yg[l - 1]
                pv.solve_point(l, Yv)
                pg.frozen[l, iv] = Yv[l]
                pg.solve_point(l, Yg)
            new_vals[:, iv], new_vals[:, ig] = Yv, Yg
            if loss_log is not None:
                for part in (0, 1):
                    loss_log.append({"interval": j, "component": part, "loss": 0.0,
                                     "iterations": 0, "history": []})
        else:
            if 1 in nets:
                # extrapolate the previous gating network as the first guess
                g = nets[1]
                guess = forward(g, (2.0 * t_new - t_a - t_b) / (t_b - t_a))
                new_vals[:, ig] = guess - forward(g, -1.0) + x_start[ig]
            for sweep in range(sweeps):
                for part in (0, 1):
                    prob = build(part)
                    tcfg = cfg.train_for(part)
                    init = nets.get(part) if (tcfg.warm_start or sweep > 0) else None
                    try:
                        net, loss, its, hist = _train_part(prob, tcfg, init)
                    except DivergenceError as exc:
                        raise DivergenceError(
                            f"sub-interval {j}, part {part}, sweep {sweep}: {exc}", exc.iteration
                        ) from exc
                    nets[part] = net
                    new_vals[:, list(prob.idx)] = forward(net, prob.to_unit(t_new))
                    if loss_log is not None:
                        loss_log.append({"interval": j, "component": part, "sweep": sweep,
                                         "loss": loss, "iterations": its, "history": hist})
        for m, col in zip(state.memories, new_vals.T):
            m.append(col)

        tt = np.sort(rng.uniform(t_a, t_b, n_test))
        if cfg.backend == "pinn":
            xt = np.empty((n_test, 4))
            unit = (2.0 * tt - t_a - t_b) / (t_b - t_a)
            for part, idx in enumerate(FOHH_PARTS):
                xt[:, list(idx)] = forward(nets[part], unit)
        else:
            nodes = np.concatenate([[t_a], t_new])
            vals = np.vstack([x_start, new_vals])
            xt = np.stack([np.interp(tt, nodes, c) for c in vals.T], axis=1)
        test_t.extend(tt)
        test_x.extend(xt)

    meta = {
        "model": "fohh",
        "solver": f"split-fpinn-{cfg.backend}",
        "orders": list(q.as_tuple()),
        "sweeps": sweeps,
        "test_times": np.asarray(test_t),
        "test_states": np.asarray(test_x),
        "config_hash": config_hash(
            {"model": "fohh", "params": params, "orders": q, "current": current,
             "march": cfg.to_dict(), "sweeps": sweeps}
        ),
    }
    return Trajectory(grid, state.history(), model.names, meta)


# }}}
