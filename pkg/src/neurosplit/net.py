"""Small fully connected networks with exact derivatives.

A network maps a scalar input ``t`` to ``out_dim`` outputs.  Besides the
usual parameter gradient, PINN losses need ``d(output)/dt``; the forward pass
therefore carries a tangent alongside every activation, and the reverse pass
differentiates through both streams.

All parameters live in one flat float64 vector so optimizers act on a single
array; per-layer weights and biases are views into it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

__all__ = [
    "Architecture",
    "Network",
    "OptimizerState",
    "DivergenceError",
    "init_params",
    "forward",
    "forward_with_tangent",
    "grad_params",
    "grad_input",
    "adam_step",
    "save_network",
    "load_network",
]


class DivergenceError(FloatingPointError):
    """Raised when a loss or gradient stops being finite."""

    def __init__(self, message: str, iteration: Optional[int] = None) -> None:
        super().__init__(message if iteration is None else f"{message} (iteration {iteration})")
        self.iteration = iteration


# {{{ activations

_ACTIVATIONS = {
    # sigma, sigma', sigma''
    "tanh": (
        np.tanh,
        lambda s, h: 1.0 - h * h,
        lambda s, h: -2.0 * h * (1.0 - h * h),
    ),
    "sin": (
        np.sin,
        lambda s, h: np.cos(s),
        lambda s, h: -h,
    ),
}

# }}}


@dataclass(frozen=True)
class Architecture:
    """``depth`` counts weight matrices, so there are ``depth - 1`` hidden layers."""

    depth: int
    width: int
    activation: str = "tanh"
    out_dim: int = 1
    fourier: int = 0
    adaptive_slope: bool = False

    def __post_init__(self) -> None:
        if self.depth < 2:
            raise ValueError("depth must be at least 2")
        if self.width < 1 or self.out_dim < 1:
            raise ValueError("width and out_dim must be positive")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.fourier < 0:
            raise ValueError("fourier order must be non-negative")

    @property
    def in_dim(self) -> int:
        return 1 + 2 * self.fourier

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        sizes = [self.in_dim] + [self.width] * (self.depth - 1) + [self.out_dim]
        return [(sizes[k + 1], sizes[k]) for k in range(self.depth)]

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes) + (self.depth - 1)


@dataclass
class Network:
    arch: Architecture
    theta: np.ndarray
    weights: list = field(init=False, repr=False)
    biases: list = field(init=False, repr=False)
    slopes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.theta = np.ascontiguousarray(self.theta, dtype=float)
        if self.theta.shape != (self.arch.n_params,):
            raise ValueError(
                f"expected {self.arch.n_params} parameters, got {self.theta.shape}"
            )
        self._bind()

    def _bind(self) -> None:
        self.weights, self.biases = [], []
        k = 0
        for o, i in self.arch.layer_shapes:
            self.weights.append(self.theta[k:k + o * i].reshape(o, i))
            k += o * i
            self.biases.append(self.theta[k:k + o])
            k += o
        self.slopes = self.theta[k:]

    def copy(self) -> "Network":
        return Network(self.arch, self.theta.copy())

    def load(self, theta: np.ndarray) -> None:
        """Overwrite parameters in place (views stay valid)."""
        self.theta[:] = theta

    def slope_mask(self) -> np.ndarray:
        """1 for trainable entries of ``theta``, 0 for frozen slopes."""
        mask = np.ones_like(self.theta)
        if not self.arch.adaptive_slope:
            mask[-(self.arch.depth - 1):] = 0.0
        return mask


def init_params(arch: Architecture, seed: int = 0) -> Network:
    """Glorot-uniform weights, zero biases, unit slopes."""
    rng = np.random.default_rng(seed)
    net = Network(arch, np.zeros(arch.n_params))
    for W in net.weights:
        o, i = W.shape
        limit = np.sqrt(6.0 / (i + o))
        W[:] = rng.uniform(-limit, limit, size=W.shape)
    net.slopes[:] = 1.0
    return net


def _features(arch: Architecture, t: np.ndarray):
    if arch.fourier == 0:
        return t[:, None], np.ones((t.size, 1))
    k = 2.0 * np.pi * np.arange(1, arch.fourier + 1)
    phase = np.multiply.outer(t, k)
    phi = np.concatenate([t[:, None], np.sin(phase), np.cos(phase)], axis=1)
    dphi = np.concatenate(
        [np.ones((t.size, 1)), k * np.cos(phase), -k * np.sin(phase)], axis=1
    )
    return phi, dphi


def forward(net: Network, t) -> np.ndarray:
    """Network output; shape ``(len(t), out_dim)`` (or ``(out_dim,)`` for scalar ``t``)."""
    scalar = np.ndim(t) == 0
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    sigma = _ACTIVATIONS[net.arch.activation][0]
    z, _ = _features(net.arch, t_arr)
    z = z @ net.weights[0].T + net.biases[0]
    for l in range(1, net.arch.depth):
        z = sigma(net.slopes[l - 1] * z) @ net.weights[l].T + net.biases[l]
    return z[0] if scalar else z


def forward_with_tangent(net: Network, t):
    """Output and its derivative w.r.t. ``t``, plus the cache for the reverse pass."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    sigma, dsigma, _ = _ACTIVATIONS[net.arch.activation]
    phi, dphi = _features(net.arch, t_arr)
    z = phi @ net.weights[0].T + net.biases[0]
    dz = dphi @ net.weights[0].T
    cache = [(phi, dphi)]
    for l in range(1, net.arch.depth):
        a = net.slopes[l - 1]
        s = a * z
        h = sigma(s)
        sp = dsigma(s, h)
        dh = sp * (a * dz)
        cache.append((z, dz, s, h, sp, dh))
        z = h @ net.weights[l].T + net.biases[l]
        dz = dh @ net.weights[l].T
    return z, dz, cache


def _backward(net: Network, cache, gx: np.ndarray, gdx: np.ndarray) -> np.ndarray:
    _, _, d2sigma = _ACTIVATIONS[net.arch.activation]
    grad = np.zeros_like(net.theta)
    g = Network.__new__(Network)
    g.arch, g.theta = net.arch, grad
    g._bind()
    gz, gdz = gx, gdx
    for l in range(net.arch.depth - 1, 0, -1):
        z, dz, s, h, sp, dh = cache[l]
        W = net.weights[l]
        g.weights[l][:] = gz.T @ h + gdz.T @ dh
        g.biases[l][:] = gz.sum(axis=0)
        gh = gz @ W
        gdh = gdz @ W
        a = net.slopes[l - 1]
        ds = a * dz
        g_s = gh * sp + gdh * d2sigma(s, h) * ds
        g_ds = gdh * sp
        g.slopes[l - 1] = np.sum(g_s * z) + np.sum(g_ds * dz)
        gz = g_s * a
        gdz = g_ds * a
    phi, dphi = cache[0]
    g.weights[0][:] = gz.T @ phi + gdz.T @ dphi
    g.biases[0][:] = gz.sum(axis=0)
    return grad


LossFn = Callable[[np.ndarray, np.ndarray], tuple]


def grad_params(net: Network, t, loss_fn: LossFn) -> tuple[float, np.ndarray]:
    """Loss and its exact gradient w.r.t. ``net.theta``.

    ``loss_fn(x, dxdt)`` receives the outputs and their input derivatives at
    ``t`` and returns ``(loss, dloss/dx, dloss/d(dxdt))``.  Frozen slopes get
    zero gradient.
    """
    x, dx, cache = forward_with_tangent(net, t)
    loss, gx, gdx = loss_fn(x, dx)
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss}")
    grad = _backward(net, cache, np.asarray(gx, dtype=float), np.asarray(gdx, dtype=float))
    if not net.arch.adaptive_slope:
        grad[-(net.arch.depth - 1):] = 0.0
    return float(loss), grad


def grad_input(net: Network, t) -> np.ndarray:
    """``d(output)/dt``, same shape convention as :func:`forward`."""
    _, dx, _ = forward_with_tangent(net, t)
    return dx[0] if np.ndim(t) == 0 else dx


# {{{ optimizers


@dataclass
class OptimizerState:
    """Adam / Adamax state with an exponential-decay learning-rate schedule.

    The effective rate at step ``k`` is ``lr * gamma ** (k // decay_every)``;
    ``gamma = 1`` disables the schedule.
    """

    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gamma: float = 0.95
    decay_every: int = 1000
    step: int = 0
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.kind not in ("adam", "adamax"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")

    @property
    def current_lr(self) -> float:
        return self.lr * self.gamma ** (self.step // self.decay_every)

    def reset(self) -> None:
        self.step, self.m, self.v = 0, None, None


def adam_step(opt: OptimizerState, net: Network, grads: np.ndarray):
    """One Adam (or Adamax) update of ``net.theta`` in place; returns ``(opt, net)``."""
    if opt.m is None:
        opt.m = np.zeros_like(net.theta)
        opt.v = np.zeros_like(net.theta)
    lr = opt.current_lr
    opt.step += 1
    b1, b2 = opt.beta1, opt.beta2
    opt.m *= b1
    opt.m += (1.0 - b1) * grads
    bc1 = 1.0 - b1**opt.step
    if opt.kind == "adam":
        opt.v *= b2
        opt.v += (1.0 - b2) * grads * grads
        bc2 = 1.0 - b2**opt.step
        net.theta -= (lr / bc1) * opt.m / (np.sqrt(opt.v / bc2) + opt.eps)
    else:
        np.maximum(b2 * opt.v, np.abs(grads), out=opt.v)
        upd = np.divide(opt.m, opt.v, out=np.zeros_like(opt.m), where=opt.v > 0)
        net.theta -= (lr / bc1) * upd
    return opt, net


# }}}


# {{{ checkpoints

_MAGIC = "# neurosplit-network v1"


def save_network(net: Network, path) -> Path:
    """Structured-text checkpoint.

    Layout: a magic line, one ``# architecture:`` JSON line, one ``# layout:``
    line, then every entry of ``theta`` on its own line with 17 significant
    digits.  ``theta`` is ordered ``W1, b1, ..., WL, bL, slopes`` with each
    ``W`` row-major of shape ``(out, in)``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = "\n".join(
        [
            _MAGIC,
            "# architecture: " + json.dumps(asdict(net.arch), sort_keys=True),
            "# layout: W1 b1 ... WL bL slopes; W row-major (out, in)",
        ]
    )
    np.savetxt(path, net.theta, fmt="%.17g", header=header, comments="")
    return path


def load_network(path) -> Network:
    path = Path(path)
    with path.open() as fh:
        magic = fh.readline().strip()
        arch_line = fh.readline().strip()
    if magic != _MAGIC or not arch_line.startswith("# architecture: "):
        raise ValueError(f"{path} is not a network checkpoint")
    arch = Architecture(**json.loads(arch_line[len("# architecture: "):]))
    theta = np.loadtxt(path, comments="#", ndmin=1)
    return Network(arch, theta)


# }}}
