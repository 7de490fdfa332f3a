"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (see ``conftest.py``) before asserting,
so the session summary lists every criterion even when some fail.  The
preset-driven criteria run the desk-scale settings and take minutes each.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from neurosplit.fracl1 import caputo_analytic_power, l1_apply, l1_coeffs
from neurosplit.harness import get_reference, preset, run_experiment, run_solver, spike_times
from neurosplit.models import CurrentSource, HhParams, ModelSpec, hh_model
from neurosplit.net import Architecture, forward, forward_with_tangent, grad_input, grad_params, init_params
from neurosplit.ode import rk4_solve
from neurosplit.refsolve import build_grid, soe_fit, solve_fode_system, solve_model
from neurosplit.splitting import MarchConfig, SplitScheme, split_march
from neurosplit.trajectory import read_csv


@pytest.fixture(scope="module")
def out(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def run_preset(name, out, **changes):
    # one seed keeps the desk suite within an hour
    cfg = replace(preset(name, "desk"), seeds=(0,))
    if changes:
        cfg = replace(cfg, **changes)
    t0 = time.perf_counter()
    report = run_experiment(cfg, out=out, cache_dir=out / "reference-cache", plots=False)
    return cfg, report, time.perf_counter() - t0


# {{{ fast numerical criteria


def test_01_l1_convergence_order(acceptance):
    worst = 0.0
    slopes_all = {}
    for alpha in (0.3, 0.5, 0.8):
        errs = []
        for n in (16, 32, 64, 128, 256):
            dt = 1.0 / n
            t = dt * np.arange(n + 1)
            got = l1_apply(l1_coeffs(alpha, dt, n), t**2)
            errs.append(abs(got - caputo_analytic_power(alpha, 2, 1.0)))
        slopes = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        slopes_all[alpha] = slopes
        worst = max(worst, float(np.max(np.abs(slopes - (2 - alpha)))))
    detail = "; ".join(f"a={a}: " + ",".join(f"{s:.3f}" for s in v) for a, v in slopes_all.items())
    ok = worst <= 0.15
    acceptance(1, "L1 order 2-alpha", ok, f"max |slope-(2-a)| {worst:.3f} ({detail})")
    assert ok


def test_02_l1_exact_on_linear(acceptance):
    worst = 0.0
    for alpha in (0.3, 0.5, 0.8):
        dt = 0.02
        for n in range(1, 50):
            t = dt * np.arange(n + 1)
            got = l1_apply(l1_coeffs(alpha, dt, n), 2.0 - 0.7 * t)
            worst = max(worst, abs(got + 0.7 * caputo_analytic_power(alpha, 1, t[-1])))
    ok = worst < 1e-10
    acceptance(2, "L1 exact on linear functions", ok, f"max error {worst:.2e}")
    assert ok


def test_03_soe_kernel_fit(acceptance):
    soe = soe_fit(0.5, 1e-3, 1.0, eps=1e-7)
    finer = soe_fit(0.5, 1e-3, 1.0, n_terms=2 * (soe.n_terms - 1) + 1)
    ok = soe.achieved <= 1e-7 and finer.achieved < soe.achieved
    acceptance(3, "SOE kernel fit", ok,
               f"{soe.n_terms} terms rel err {soe.achieved:.2e}; halved dy {finer.achieved:.2e}")
    assert ok


def test_04_refsolve_graded_mesh(acceptance):
    a = 0.5
    g = math.gamma(2 + a)

    def rhs(t, U):
        t = np.asarray(t, dtype=float)
        return -U + (t ** (1 + a) + g * t)[..., None]

    errs = {}
    for graded in (True, False):
        grid = build_grid(1.0, alpha_min=a, p=6, M1=32, r=4.0, graded=graded)
        traj = solve_fode_system(rhs, (a,), [0.0], grid).nodes_trajectory()
        errs[graded] = float(np.max(np.abs(traj.states[:, 0] - traj.times ** (1 + a))))
    ok = errs[True] < 1e-6 and errs[False] >= 100 * errs[True]
    acceptance(4, "graded collocation mesh", ok,
               f"graded {errs[True]:.2e}, uniform {errs[False]:.2e} (x{errs[False] / errs[True]:.1e})")
    assert ok


def test_05_refsolve_integer_limit(acceptance):
    p = HhParams(beta_m_decay=18.0)
    model = hh_model(p, CurrentSource.constant(10.0))
    sol = solve_model(model, (1.0,) * 4, 20.0, p=8)
    ref = rk4_solve(model, 20.0, 1e-4)
    err = float(np.max(np.abs(sol.evaluate(ref.times)[:, 0] - ref.states[:, 0])))
    ok = err < 1e-3
    acceptance(5, "collocation vs RK4 at unit order", ok, f"V sup error {err:.2e} mV")
    assert ok


def test_06_autodiff(acceptance):
    rng = np.random.default_rng(2024)
    worst_p = worst_x = 0.0
    for case in range(20):
        arch = Architecture(int(rng.integers(2, 5)), int(rng.integers(2, 9)),
                            str(rng.choice(["tanh", "sin"])), int(rng.integers(1, 4)),
                            int(rng.integers(0, 3)), bool(rng.integers(0, 2)))
        net = init_params(arch, case)
        net.theta[:] += 0.3 * rng.standard_normal(net.theta.size)
        t = rng.uniform(-1, 1, 4)
        target = rng.standard_normal((4, arch.out_dim))

        def loss_fn(x, dx):
            r = x - target
            return float(np.sum(r * r) + 0.5 * np.sum(dx * dx)), 2 * r, dx

        _, g = grad_params(net, t, loss_fn)
        mask = net.slope_mask()
        fd = np.zeros_like(g)
        h = 1e-5
        for k in np.flatnonzero(mask):
            old = net.theta[k]
            net.theta[k] = old + h
            lp = loss_fn(*forward_with_tangent(net, t)[:2])[0]
            net.theta[k] = old - h
            lm = loss_fn(*forward_with_tangent(net, t)[:2])[0]
            net.theta[k] = old
            fd[k] = (lp - lm) / (2 * h)
        worst_p = max(worst_p, np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-12))
        s = float(rng.uniform(-0.9, 0.9))
        hx = 1e-6
        fdx = (forward(net, s + hx) - forward(net, s - hx)) / (2 * hx)
        worst_x = max(worst_x, np.max(np.abs(grad_input(net, s) - fdx)) / max(np.max(np.abs(fdx)), 1e-3))
    ok = worst_p < 1e-5 and worst_x < 1e-4
    acceptance(6, "exact gradients vs finite differences", ok,
               f"params {worst_p:.2e}, input {worst_x:.2e}")
    assert ok


def test_07_splitting_order(acceptance):
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    rot = ModelSpec("rot", ("x", "y"), lambda t, x: np.asarray(x) @ A.T, np.array([1.0, 0.0]),
                    CurrentSource.constant(0.0), None)
    exact = np.array([np.cos(1.0), -np.sin(1.0)])
    slopes = {}
    for kind in ("lie", "strang"):
        errs = []
        for J in (10, 20, 40, 80):
            cfg = MarchConfig(T=1.0, J=J, points=5, backend="rk4", rk4_substeps=8)
            traj = split_march(rot, SplitScheme(kind, ((0,), (1,))), cfg)
            errs.append(np.linalg.norm(traj.states[-1] - exact))
        slopes[kind] = np.polyfit(np.log([10, 20, 40, 80]), np.log(errs), 1)[0] * -1
    diag = ModelSpec("diag", ("x", "y"), lambda t, x: np.asarray(x) * [-1.0, -2.0],
                     np.array([1.0, 1.0]), CurrentSource.constant(0.0), None)
    traj = split_march(diag, SplitScheme("lie", ((0,), (1,))),
                       MarchConfig(T=1.0, J=10, points=20, backend="rk4"))
    diag_err = float(np.max(np.abs(traj.states - np.column_stack(
        [np.exp(-traj.times), np.exp(-2 * traj.times)]))))
    ok = 0.8 <= slopes["lie"] <= 1.2 and 1.8 <= slopes["strang"] <= 2.2 and diag_err < 1e-9
    acceptance(7, "splitting order", ok,
               f"Lie {slopes['lie']:.3f}, Strang {slopes['strang']:.3f}, commuting {diag_err:.1e}")
    assert ok


# }}}


# {{{ preset criteria


def test_08_hh_step_current(out, acceptance):
    cfg, report, secs = run_preset("hh-step", out)
    err = report.train["v"]
    ok = err < 1e-2
    acceptance(8, "HH step current", ok, f"V rel L2 {err:.3e} (test {report.test['v']:.3e}), {secs:.0f} s")
    assert ok


def test_09_hh_constant_current(out, acceptance):
    cfg, report, secs = run_preset("hh-constant", out)
    traj = read_csv(out / cfg.name / "seed-0" / "trajectory.csv")
    ref = get_reference(cfg, out / "reference-cache")
    t = np.linspace(0.0, cfg.march.T, 40001)
    n_ref = spike_times(t, ref.evaluate(t)[:, 0]).size
    n_got = spike_times(traj.times, traj.states[:, 0]).size
    err = report.train["v"]
    ok = err < 5e-2 and n_got == n_ref
    acceptance(9, "HH constant current", ok,
               f"V rel L2 {err:.3e}, spikes {n_got} vs reference {n_ref}, {secs:.0f} s")
    assert ok


def test_10_izhikevich(out, acceptance):
    cfg, report, secs = run_preset("izhikevich", out)
    ev, eu = report.train["v"], report.train["u"]
    ok = ev < 0.2 and eu < 0.08
    acceptance(10, "Izhikevich step current", ok, f"v {ev:.4f}, u {eu:.4f}, {secs:.0f} s")
    assert ok


def _first_spike(traj) -> float:
    s = spike_times(traj.times, traj.states[:, 0])
    return float(s[0]) if s.size else math.inf


def test_11_fractional_hh(out, acceptance):
    cfg, report, secs = run_preset("fohh-0.8", out)
    err = report.train["v"]
    firsts = {0.8: _first_spike(read_csv(out / cfg.name / "seed-0" / "trajectory.csv"))}
    # the lower orders only need the first spike: same cell width, shorter window
    for q in (0.6, 0.4):
        short = preset(f"fohh-{q}", "desk")
        short = replace(short, march=replace(short.march, T=5.0, J=25))
        firsts[q] = _first_spike(run_solver(short, 0))
    ordered = firsts[0.4] < firsts[0.6] < firsts[0.8]
    ok = err < 0.15 and ordered
    acceptance(11, "fractional HH", ok,
               f"V rel L2 {err:.3e}; first spikes q=0.4/0.6/0.8: "
               f"{firsts[0.4]:.3f}/{firsts[0.6]:.3f}/{firsts[0.8]:.3f} ms, {secs:.0f} s")
    assert ok


def test_12_lif(out, acceptance):
    cfg, report, secs = run_preset("lif", out)
    err = report.train["v"]
    tcfg, _, secs2 = run_preset("lif-threshold", out)
    meta = json.loads((out / tcfg.name / "seed-0" / "trajectory.json").read_text())
    spikes = np.asarray(meta["spike_times"])
    p = tcfg.model_params
    ri = p.r * float(tcfg.current(0.0))
    expected = p.tau * math.log(ri / (ri - p.v_th))
    cell = tcfg.march.T / tcfg.march.J
    isi = np.diff(spikes)
    isi_ok = isi.size >= 2 and bool(np.all(np.abs(isi - expected) <= 2 * cell))
    ok = err < 1e-2 and isi_ok
    acceptance(12, "LIF analytic suite", ok,
               f"rel L2 {err:.3e}; ISI {isi.min():.5f}..{isi.max():.5f} vs {expected:.5f} "
               f"(cell {cell:g}), {secs + secs2:.0f} s")
    assert ok


def test_13_determinism(out, acceptance, tmp_path):
    cfg = replace(preset("lif-threshold", "desk"), seeds=(0,))
    first = out / cfg.name / "seed-0" / "trajectory.csv"
    if not first.exists():
        run_experiment(cfg, out=out, cache_dir=out / "reference-cache", plots=False)
    run_experiment(cfg, out=tmp_path, cache_dir=out / "reference-cache", plots=False)
    second = tmp_path / cfg.name / "seed-0" / "trajectory.csv"
    ok = first.read_bytes() == second.read_bytes()
    acceptance(13, "determinism", ok, f"{cfg.name} trajectory CSV {'identical' if ok else 'differs'}")
    assert ok


# }}}
