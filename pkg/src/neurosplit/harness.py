"""Experiment registry, reference caching, error metrics and artifact output."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .fracl1 import split_fohh_march
from .models import (
    CurrentSource,
    FractionalOrders,
    HhParams,
    IzhikevichParams,
    LifParams,
    ModelSpec,
    hh_model,
    izhikevich_model,
    lif_model,
)
from .net import Architecture
from .ode import rk4_solve
from .pinn import TrainConfig, march_pinn
from .refsolve import CollocationGrid, FodeSolution, lgl_nodes, solve_model
from .splitting import HH_SCHEME, IZHIKEVICH_SCHEME, MarchConfig, split_march
from .trajectory import Trajectory, config_hash, read_csv, write_csv

__all__ = [
    "MODELS",
    "SCHEMES",
    "PRESETS",
    "ConfigError",
    "ExperimentConfig",
    "ErrorReport",
    "Reference",
    "relative_l2_error",
    "build_model",
    "lif_exact",
    "spike_times",
    "preset",
    "load_config",
    "get_reference",
    "run_solver",
    "run_experiment",
    "emit_plot",
]

log = logging.getLogger(__name__)

MODELS = ("lif", "izhikevich", "hh", "fohh")
SCHEMES = ("pinn", "splitting-pinn", "splitting-fpinn", "reference", "rk4")

_PARAMS = {"lif": LifParams, "izhikevich": IzhikevichParams, "hh": HhParams, "fohh": HhParams}


class ConfigError(ValueError):
    """Invalid or incompatible experiment configuration."""


def relative_l2_error(exact, approx) -> float:
    """``||exact - approx||_2 / ||exact||_2`` over matching samples."""
    e = np.asarray(exact, dtype=float).ravel()
    a = np.asarray(approx, dtype=float).ravel()
    if e.size < 1 or e.shape != a.shape:
        raise ValueError("series must be non-empty and of equal length")
    norm = math.sqrt(float(np.dot(e, e)))
    if norm == 0.0:
        raise ValueError("exact series has zero norm")
    d = e - a
    return math.sqrt(float(np.dot(d, d))) / norm


# {{{ configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """One runnable scenario.

    ``reference`` holds the reference-solver settings: ``p``/``refine`` for
    the collocation solver, ``dt`` for event-driven RK4 (Izhikevich).
    """

    name: str
    model: str
    scheme: str
    march: MarchConfig
    current: CurrentSource
    params: dict = field(default_factory=dict)
    orders: Optional[tuple] = None
    threshold: bool = False
    sweeps: int = 2
    seeds: tuple = (0, 1, 2, 3, 4)
    out: str = "runs"
    reference: dict = field(default_factory=lambda: {"p": 8})

    def __post_init__(self) -> None:
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        fractional = self.model == "fohh"
        if fractional and self.orders is None:
            raise ConfigError("the fractional model requires orders")
        if not fractional and self.orders is not None:
            raise ConfigError(f"model {self.model!r} takes no fractional orders")
        if self.scheme == "splitting-fpinn" and not fractional:
            raise ConfigError("splitting-fpinn requires the fractional model")
        if fractional and self.scheme in ("pinn", "splitting-pinn", "rk4"):
            raise ConfigError(f"scheme {self.scheme!r} cannot solve the fractional model")
        if self.scheme == "splitting-pinn" and self.model == "lif":
            raise ConfigError("the LIF model has a single component; use scheme 'pinn'")
        if self.threshold and self.model != "lif":
            raise ConfigError("threshold applies to the LIF model only")
        try:
            _PARAMS[self.model](**self.params)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for {self.model}: {exc}") from exc

    @property
    def model_params(self):
        return _PARAMS[self.model](**self.params)

    @property
    def fractional_orders(self) -> Optional[FractionalOrders]:
        return None if self.orders is None else FractionalOrders(*self.orders)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "model": self.model,
            "scheme": self.scheme,
            "march": self.march.to_dict(),
            "current": self.current.to_dict(),
            "params": dict(self.params),
            "orders": None if self.orders is None else list(self.orders),
            "threshold": self.threshold,
            "sweeps": self.sweeps,
            "seeds": list(self.seeds),
            "out": self.out,
            "reference": dict(self.reference),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        try:
            data["march"] = MarchConfig.from_dict(data["march"])
            data["current"] = CurrentSource.from_dict(data["current"])
            if data.get("orders") is not None:
                orders = data["orders"]
                data["orders"] = tuple(orders) if isinstance(orders, list) else (orders,) * 4
            data["seeds"] = tuple(data.get("seeds", (0, 1, 2, 3, 4)))
            return cls(**data)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from exc

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("out")
        d.pop("seeds")
        return config_hash(d)

    def reference_key(self) -> dict:
        return {
            "model": self.model,
            "params": self.model_params,
            "current": self.current.to_dict(),
            "orders": self.orders,
            "threshold": self.threshold,
            "T": self.march.T,
            "reference": self.reference,
        }


def load_config(path) -> ExperimentConfig:
    """Read an :class:`ExperimentConfig` from a JSON file."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return ExperimentConfig.from_dict(data)


def build_model(cfg: ExperimentConfig) -> ModelSpec:
    p = cfg.model_params
    if cfg.model == "lif":
        return lif_model(p, cfg.current, threshold=cfg.threshold)
    if cfg.model == "izhikevich":
        return izhikevich_model(p, cfg.current)
    return hh_model(p, cfg.current)


# }}}


# {{{ presets

# Sub-problem settings as (depth, width, activation, optimizer) per part.
_TABLE = {
    "lif": [(5, 40, "tanh", "adam")],
    "lif-threshold": [(7, 60, "tanh", "adam")],
    "izhikevich": [(6, 40, "tanh", "adam"), (6, 40, "tanh", "adamax")],
    "hh-step": [(6, 20, "tanh", "adam"), (10, 20, "sin", "adamax")],
    "hh-constant": [(6, 20, "tanh", "adam"), (10, 20, "sin", "adam")],
    "fohh": [(10, 100, "tanh", "adam"), (6, 100, "sin", "adam")],
}

_FOHH_ITERS = {0.8: 70000, 0.6: 50000, 0.4: 20000}


def _train(rows, iters: int, lr: float, targets: Sequence[float], log_every: int = 50, **kw):
    return tuple(
        TrainConfig(
            arch=Architecture(d, w, act),
            optimizer=opt,
            max_iters=iters,
            target_loss=tl,
            lr=lr,
            log_every=log_every,
            **kw,
        )
        for (d, w, act, opt), tl in zip(rows, targets)
    )


def _lif(scale: str) -> ExperimentConfig:
    cur = CurrentSource.constant(0.1)
    if scale == "paper":
        march = MarchConfig(T=0.5, J=1, points=1000,
                            train=_train(_TABLE["lif"], 50000, 1e-3, [1e-10]))
    else:
        march = MarchConfig(T=0.5, J=100, points=20,
                            train=_train(_TABLE["lif"], 2000, 1e-3, [1e-8]))
    return ExperimentConfig("lif", "lif", "pinn", march, cur)


def _lif_threshold(scale: str) -> ExperimentConfig:
    cur = CurrentSource.constant(0.3)
    if scale == "paper":
        march = MarchConfig(T=0.2, J=1000, points=20,
                            train=_train(_TABLE["lif-threshold"], 10000, 1e-3, [1e-10]))
    else:
        rows = [(3, 20, "tanh", "adam")]
        march = MarchConfig(T=0.2, J=200, points=20, train=_train(rows, 500, 1e-3, [1e-8]))
    return ExperimentConfig("lif-threshold", "lif", "pinn", march, cur, threshold=True)


def _izhikevich(scale: str) -> ExperimentConfig:
    cur = CurrentSource.step(2.0, 15.0)
    if scale == "paper":
        march = MarchConfig(T=100.0, J=2000, points=20,
                            train=_train(_TABLE["izhikevich"], 20000, 1e-3, [1e-10, 1e-8]))
    else:
        rows = [(3, 20, "tanh", "adam"), (3, 20, "tanh", "adam")]
        march = MarchConfig(T=50.0, J=500, points=20,
                            train=_train(rows, 1000, 1e-2, [1e-10, 1e-6]))
    return ExperimentConfig("izhikevich", "izhikevich", "splitting-pinn", march, cur,
                            reference={"dt": 1e-4})


def _hh_step(scale: str) -> ExperimentConfig:
    cur = CurrentSource.piecewise([(2.0, 5.0, 15.0)])
    params = {"beta_m_decay": 18.0}
    if scale == "paper":
        march = MarchConfig(T=20.0, J=800, points=40,
                            train=_train(_TABLE["hh-step"], 20000, 1e-3, [1e-12, 1e-8]))
    else:
        march = MarchConfig(T=20.0, J=200, points=40,
                            train=_train(_TABLE["hh-step"], 3000, 1e-3, [1e-10, 1e-6]))
    return ExperimentConfig("hh-step", "hh", "splitting-pinn", march, cur, params)


def _hh_constant(scale: str) -> ExperimentConfig:
    cur = CurrentSource.constant(10.0)
    params = {"beta_m_decay": 18.0}
    if scale == "paper":
        march = MarchConfig(T=100.0, J=3000, points=30,
                            train=_train(_TABLE["hh-constant"], 20000, 1e-3, [1e-12, 1e-8]))
    else:
        march = MarchConfig(T=40.0, J=600, points=30,
                            train=_train(_TABLE["hh-constant"], 1000, 1e-3, [1e-10, 1e-6]))
    return ExperimentConfig("hh-constant", "hh", "splitting-pinn", march, cur, params)


def _fohh(q: float) -> Callable[[str], ExperimentConfig]:
    def make(scale: str) -> ExperimentConfig:
        cur = CurrentSource.constant(20.0)
        params = {"beta_m_decay": 18.0}
        if scale == "paper":
            march = MarchConfig(T=100.0, J=2000, points=40,
                                train=_train(_TABLE["fohh"], _FOHH_ITERS[q], 1e-3, [1e-8, 1e-12]))
            sweeps = 2
        else:
            rows = [(6, 30, "tanh", "adam"), (4, 30, "sin", "adam")]
            march = MarchConfig(T=40.0, J=200, points=40,
                                train=_train(rows, 1000, 3e-3, [1e-8, 1e-12]))
            sweeps = 3
        return ExperimentConfig(f"fohh-{q}", "fohh", "splitting-fpinn", march, cur, params,
                                orders=(q,) * 4, sweeps=sweeps)

    return make


PRESETS: dict[str, Callable[[str], ExperimentConfig]] = {
    "lif": _lif,
    "lif-threshold": _lif_threshold,
    "izhikevich": _izhikevich,
    "hh-step": _hh_step,
    "hh-constant": _hh_constant,
    "fohh-0.8": _fohh(0.8),
    "fohh-0.6": _fohh(0.6),
    "fohh-0.4": _fohh(0.4),
}


def preset(name: str, scale: str = "desk") -> ExperimentConfig:
    """Registry lookup.  ``paper`` reproduces the published settings;
    ``desk`` shortens T, J and iteration counts so a run takes minutes."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    if scale not in ("desk", "paper"):
        raise ConfigError(f"unknown scale {scale!r}")
    return PRESETS[name](scale)


# }}}


# {{{ references


def lif_exact(p: LifParams, current: CurrentSource, t, v0: Optional[float] = None,
              threshold: bool = False) -> tuple[np.ndarray, list]:
    """Closed-form LIF response to a piecewise-constant current.

    Returns ``(v(t), spike_times)``; with ``threshold`` the potential resets
    to rest whenever it reaches ``v_th``.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    tau = p.tau
    t_end = float(t.max()) if t.size else 0.0
    switches = [0.0] + [e for e in current.edges if e < t_end] + [t_end]
    # pieces of (start, v_start, v_inf) valid until the next piece
    pieces: list[tuple[float, float, float]] = []
    spikes: list[float] = []
    v = p.v_rest if v0 is None else float(v0)
    for a, b in zip(switches[:-1], switches[1:]):
        v_inf = p.v_rest + p.r * float(current(a))
        s = a
        while True:
            pieces.append((s, v, v_inf))
            if not (threshold and v_inf > p.v_th and v < p.v_th):
                break
            t_c = s + tau * math.log((v - v_inf) / (p.v_th - v_inf))
            if t_c > b:
                break
            spikes.append(t_c)
            s, v = t_c, p.v_rest
        v = v_inf + (v - v_inf) * math.exp(-(b - s) / tau)
    starts = np.array([pc[0] for pc in pieces])
    idx = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(pieces) - 1)
    s0 = starts[idx]
    vs = np.array([pc[1] for pc in pieces])[idx]
    vi = np.array([pc[2] for pc in pieces])[idx]
    return vi + (vs - vi) * np.exp(-(t - s0) / tau), spikes


@dataclass
class Reference:
    """Cached reference solution with dense evaluation."""

    kind: str
    trajectory: Trajectory
    path: Path
    evaluate: Callable
    from_cache: bool = False


def _reference_kind(cfg: ExperimentConfig) -> str:
    if cfg.model == "lif":
        return "analytic"
    if cfg.model == "izhikevich":
        return "rk4-events"
    return "collocation"


def _fode_from_nodes(traj: Trajectory, side: dict) -> FodeSolution:
    edges = np.asarray(side["edges"], dtype=float)
    p = int(side["p"])
    m = lgl_nodes(p).size
    vals = [traj.states[n * (m - 1): n * (m - 1) + m] for n in range(edges.size - 1)]
    return FodeSolution(CollocationGrid(edges, p), edges, vals, traj.names, tuple(side["orders"]))


def get_reference(cfg: ExperimentConfig, cache_dir=None) -> Reference:
    """Reference for ``cfg``, computed once and cached by content hash.

    Evaluation always goes through the cached file so fresh and cached
    references agree bitwise.
    """
    cache = Path(cache_dir if cache_dir is not None else Path(cfg.out) / "reference-cache")
    kind = _reference_kind(cfg)
    key = config_hash(cfg.reference_key())
    path = cache / f"{cfg.model}-{kind}-{key}.csv"
    side_path = path.with_suffix(".json")
    from_cache = path.exists() and side_path.exists()
    model = build_model(cfg)
    T = cfg.march.T
    if not from_cache:
        side: dict = {"kind": kind, "key": cfg.reference_key()}
        if kind == "analytic":
            n = int(cfg.reference.get("dense", 20001))
            t = np.linspace(0.0, T, n)
            v, spikes = lif_exact(cfg.model_params, cfg.current, t, threshold=cfg.threshold)
            traj = Trajectory(t, v[:, None], model.names)
            side["spike_times"] = spikes
        elif kind == "rk4-events":
            dt = float(cfg.reference.get("dt", 1e-4))
            traj = rk4_solve(model, T, dt, record_every=int(cfg.reference.get("record_every", 10)))
            side["spike_times"] = list(traj.metadata.get("spike_times", []))
        else:
            orders = cfg.orders if cfg.orders is not None else None
            sol = solve_model(model, orders, T, p=int(cfg.reference.get("p", 8)),
                              refine=int(cfg.reference.get("refine", 1)))
            traj = sol.nodes_trajectory()
            side.update(edges=[float(e) for e in sol.edges], p=sol.grid.p,
                        orders=list(sol.orders))
        write_csv(traj, path)
        side_path.write_text(json.dumps(side, sort_keys=True, default=_json_default, indent=1))
        log.info("reference written to %s", path)
    side = json.loads(side_path.read_text())
    traj = read_csv(path, {"spike_times": side.get("spike_times", [])})
    if kind == "analytic":
        p = cfg.model_params

        def evaluate(t):
            return lif_exact(p, cfg.current, t, threshold=cfg.threshold)[0][:, None]
    elif kind == "rk4-events":
        evaluate = traj.interp
    else:
        evaluate = _fode_from_nodes(traj, side).evaluate
    return Reference(kind, traj, path, evaluate, from_cache)


def _json_default(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return {k: getattr(obj, k) for k in obj.__dataclass_fields__}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj).__name__}")


# }}}


# {{{ running


def spike_times(times, values, threshold: float = 0.0) -> np.ndarray:
    """Upward threshold crossings of a sampled series, linearly interpolated."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    k = np.nonzero((v[:-1] < threshold) & (v[1:] >= threshold))[0]
    frac = (threshold - v[k]) / (v[k + 1] - v[k])
    return t[k] + frac * (t[k + 1] - t[k])


def _seeded(march: MarchConfig, seed: int) -> MarchConfig:
    train = tuple(replace(tc, seed=tc.seed + seed + k) for k, tc in enumerate(march.train))
    return replace(march, train=train, test_seed=march.test_seed + seed)


def run_solver(cfg: ExperimentConfig, seed: int = 0, loss_log: Optional[list] = None) -> Trajectory:
    """Solve ``cfg`` once with the given seed (no reference, no output)."""
    march = _seeded(cfg.march, seed)
    if cfg.scheme == "splitting-fpinn":
        return split_fohh_march(cfg.model_params, cfg.fractional_orders, cfg.current, march,
                                sweeps=cfg.sweeps, loss_log=loss_log)
    model = build_model(cfg)
    if cfg.scheme == "pinn":
        tcfg = march.train_for(0)
        return march_pinn(model, march.grid, tcfg, loss_log=loss_log,
                          test_fraction=march.test_fraction, test_seed=march.test_seed)
    if cfg.scheme == "rk4":
        steps = cfg.march.J * (cfg.march.points - 1)
        return rk4_solve(model, cfg.march.T, cfg.march.T / steps)
    scheme = IZHIKEVICH_SCHEME if cfg.model == "izhikevich" else HH_SCHEME
    return split_march(model, scheme, march, loss_log=loss_log)


@dataclass
class ErrorReport:
    """Relative L2 errors per variable on train (trajectory rows) and test
    points, as mean and standard deviation over seeds."""

    name: str
    names: tuple
    seeds: tuple
    train: dict
    test: dict
    train_std: dict
    test_std: dict
    per_seed: list = field(default_factory=list)
    abs_error: Optional[tuple] = None
    outputs: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.seeds) < 1:
            raise ValueError("seed count must be at least 1")

    def rows(self) -> list[list]:
        out = []
        for n in self.names:
            if n in self.train:
                out.append([n, self.train[n], self.train_std[n],
                            self.test.get(n, math.nan), self.test_std.get(n, math.nan)])
        return out


def _errors(traj: Trajectory, ref: Reference) -> tuple[dict, dict]:
    exact = np.atleast_2d(ref.evaluate(traj.times))
    train = {n: relative_l2_error(exact[:, k], traj.states[:, k]) for k, n in enumerate(traj.names)}
    test = {}
    tt = traj.metadata.get("test_times")
    if tt is not None and len(tt):
        ex = np.atleast_2d(ref.evaluate(np.asarray(tt)))
        ap = np.asarray(traj.metadata["test_states"])
        test = {n: relative_l2_error(ex[:, k], ap[:, k]) for k, n in enumerate(traj.names)}
    return train, test


def _write_losses(loss_log: list, path: Path) -> None:
    with path.open("w") as fh:
        fh.write("interval,component,iteration,loss\n")
        for rec in loss_log:
            hist = rec.get("history") or [(rec["iterations"], rec["loss"])]
            for it, loss in hist:
                fh.write(f"{rec['interval']},{rec['component']},{it},{loss:.17g}\n")


def _write_meta(traj: Trajectory, path: Path, cfg_hash: str) -> None:
    meta = {k: v for k, v in traj.metadata.items()}
    meta["experiment_hash"] = cfg_hash
    path.write_text(json.dumps(meta, sort_keys=True, default=_json_default, indent=1))


def _read_meta(path: Path) -> dict:
    meta = json.loads(path.read_text())
    for k in ("test_times", "test_states"):
        if k in meta:
            meta[k] = np.asarray(meta[k], dtype=float)
    return meta


def _loss_series(loss_log: list) -> list:
    """Concatenated loss history per component (iterations run on)."""
    series = []
    comps = sorted({rec["component"] for rec in loss_log})
    for c in comps:
        xs, ys, offset = [], [], 0
        for rec in loss_log:
            if rec["component"] != c:
                continue
            hist = rec.get("history") or [(rec["iterations"], rec["loss"])]
            for it, loss in hist:
                xs.append(offset + it)
                ys.append(max(float(loss), 1e-300))
            offset += rec["iterations"]
        if xs:
            series.append((f"sub-problem {c + 1}", np.array(xs, float), np.array(ys)))
    return series


def run_experiment(cfg: ExperimentConfig, out=None, resume: bool = False,
                   cache_dir=None, plots: bool = True) -> ErrorReport:
    """Run every seed of ``cfg`` and write trajectory, error and loss CSVs
    plus SVG plots under ``out/<name>``."""
    root = Path(out if out is not None else cfg.out) / cfg.name
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
    ref = get_reference(cfg, cache_dir if cache_dir is not None else Path(root.parent) / "reference-cache")
    names = ref.trajectory.names
    if cfg.scheme == "reference":
        target = root / "reference.csv"
        target.write_bytes(ref.path.read_bytes())
        zeros = {n: 0.0 for n in names}
        return ErrorReport(cfg.name, names, cfg.seeds, zeros, {}, dict(zeros), {},
                           outputs={"reference": str(ref.path), "from_cache": ref.from_cache})
    h = cfg.hash()
    per_seed, first = [], None
    for seed in cfg.seeds:
        sdir = root / f"seed-{seed}"
        sdir.mkdir(exist_ok=True)
        tpath, mpath = sdir / "trajectory.csv", sdir / "trajectory.json"
        loss_log: list = []
        if resume and tpath.exists() and mpath.exists() and _read_meta(mpath).get("experiment_hash") == h:
            traj = read_csv(tpath, _read_meta(mpath))
            log.info("seed %d: reusing %s", seed, tpath)
        else:
            traj = run_solver(cfg, seed, loss_log)
            write_csv(traj, tpath)
            _write_meta(traj, mpath, h)
            _write_losses(loss_log, sdir / "losses.csv")
            # the error is measured on exactly what was written
            traj = read_csv(tpath, _read_meta(mpath))
        train, test = _errors(traj, ref)
        per_seed.append({"seed": seed, "train": train, "test": test})
        if first is None:
            first = (traj, loss_log, sdir)
    report = _aggregate(cfg, names, per_seed)
    traj, loss_log, sdir = first
    exact = np.atleast_2d(ref.evaluate(traj.times))
    report.abs_error = (traj.times, np.abs(exact - traj.states))
    with (root / "errors.csv").open("w") as fh:
        fh.write("variable,train_mean,train_std,test_mean,test_std\n")
        for row in report.rows():
            fh.write(row[0] + "," + ",".join(f"{v:.17g}" for v in row[1:]) + "\n")
    report.outputs = {"dir": str(root), "errors": str(root / "errors.csv"),
                      "reference": str(ref.path)}
    if plots:
        for k, n in enumerate(names):
            emit_plot([("reference", ref.trajectory.times, ref.trajectory.states[:, k]),
                       ("approximation", traj.times, traj.states[:, k])],
                      root / f"solution-{n}.svg", title=f"{cfg.name}: {n}", xlabel="t", ylabel=n)
            emit_plot([(f"|error| {n}", traj.times, np.maximum(report.abs_error[1][:, k], 1e-300))],
                      root / f"abs-error-{n}.svg", title=f"{cfg.name}: absolute error in {n}",
                      xlabel="t", ylabel="|error|")
        series = _loss_series(loss_log)
        if series:
            emit_plot(series, root / "loss.svg", title=f"{cfg.name}: training loss",
                      xlabel="iteration", ylabel="loss")
    return report


def _aggregate(cfg: ExperimentConfig, names, per_seed: list) -> ErrorReport:
    def stats(key):
        mean, std = {}, {}
        for n in names:
            vals = [r[key][n] for r in per_seed if n in r[key]]
            if vals:
                mean[n] = float(np.mean(vals))
                std[n] = float(np.std(vals))
        return mean, std

    train, train_std = stats("train")
    test, test_std = stats("test")
    return ErrorReport(cfg.name, tuple(names), tuple(cfg.seeds), train, test, train_std,
                       test_std, per_seed)


# }}}


# {{{ plots

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
_W, _H = 640, 400
_ML, _MR, _MT, _MB = 70, 20, 40, 50


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return np.arange(start, hi + 0.5 * step, step)


def emit_plot(series, path, title: str = "", xlabel: str = "x", ylabel: str = "y",
              log_y: Optional[bool] = None) -> Path:
    """Write a line plot of ``[(label, x, y), ...]`` as a self-contained SVG.

    One polyline per series; a legend is drawn when there is more than one.
    With ``log_y=None`` the y axis is logarithmic when every value is
    positive and the range spans at least three decades.
    """
    if not series:
        raise ValueError("nothing to plot")
    data = []
    for label, x, y in series:
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if x.size == 0 or x.size != y.size:
            raise ValueError(f"series {label!r} is empty or ragged")
        data.append((str(label), x, y))
    ally = np.concatenate([d[2] for d in data])
    finite = ally[np.isfinite(ally)]
    if finite.size == 0:
        raise ValueError("no finite values to plot")
    if log_y is None:
        log_y = bool(np.all(finite > 0) and finite.max() / finite.min() >= 1e3)
    ty = (lambda v: np.log10(np.maximum(v, 1e-300))) if log_y else (lambda v: v)
    allx = np.concatenate([d[1] for d in data])
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ty(finite).min()), float(ty(finite).max())
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def px(v):
        return _ML + (v - x0) / (x1 - x0) * pw

    def py(v):
        return _MT + (y1 - v) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="22" text-anchor="middle" font-size="14">{_esc(title)}</text>',
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for v in _ticks(x0, x1):
        X = px(v)
        out.append(f'<line x1="{X:.2f}" y1="{_MT + ph}" x2="{X:.2f}" y2="{_MT + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{_MT + ph + 18}" text-anchor="middle">{v:.4g}</text>')
    yt = np.arange(math.ceil(y0), math.floor(y1) + 1) if log_y else _ticks(y0, y1)
    if log_y and yt.size > 8:
        yt = yt[:: int(math.ceil(yt.size / 8))]
    for v in yt:
        Y = py(v)
        lab = f"1e{int(v)}" if log_y else f"{v:.4g}"
        out.append(f'<line x1="{_ML - 5}" y1="{Y:.2f}" x2="{_ML}" y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<text x="{_ML - 8}" y="{Y + 4:.2f}" text-anchor="end">{lab}</text>')
    out.append(f'<text x="{_ML + pw / 2:.1f}" y="{_H - 10}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="15" y="{_MT + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 15 {_MT + ph / 2:.1f})">{_esc(ylabel)}</text>')
    for k, (label, x, y) in enumerate(data):
        ok = np.isfinite(y)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[ok], ty(y[ok])))
        color = _COLORS[k % len(_COLORS)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
    if len(data) > 1:
        for k, (label, _, _) in enumerate(data):
            ly = _MT + 15 + 16 * k
            color = _COLORS[k % len(_COLORS)]
            out.append(f'<line class="legend" x1="{_ML + pw - 150}" y1="{ly}" '
                       f'x2="{_ML + pw - 130}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text class="legend" x="{_ML + pw - 125}" y="{ly + 4}">{_esc(label)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n")
    return path


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# }}}
