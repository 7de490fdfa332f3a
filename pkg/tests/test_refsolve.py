from __future__ import annotations

import math

import numpy as np
import pytest

from neurosplit.fracl1 import caputo_analytic_power
from neurosplit.models import CurrentSource, HhParams, hh_model
from neurosplit.refsolve import (
    CollocationGrid,
    HistoryState,
    build_grid,
    exact_kernel,
    fast_caputo_apply,
    history_update,
    lagrange_interp,
    lgl_nodes,
    local_part,
    soe_fit,
    solve_fode_system,
    solve_model,
)


def test_lgl_nodes_known_values():
    np.testing.assert_allclose(lgl_nodes(2), [-1, 0, 1], atol=1e-15)
    s = math.sqrt(3 / 7)
    np.testing.assert_allclose(lgl_nodes(4), [-1, -s, 0, s, 1], atol=1e-14)
    for p in (3, 6, 8):
        x = lgl_nodes(p)
        assert x.size == p + 1 and np.all(np.diff(x) > 0)
        np.testing.assert_allclose(x, -x[::-1], atol=1e-14)
        # interior nodes are roots of P_p'
        dP = np.polynomial.legendre.Legendre.basis(p).deriv()
        assert np.max(np.abs(dP(x[1:-1]))) < 1e-10
    with pytest.raises(ValueError):
        lgl_nodes(0)


def test_lagrange_is_exact_on_polynomials():
    nodes = 0.5 * (lgl_nodes(6) + 1)
    poly = np.polynomial.Polynomial([1.0, -2.0, 0.5, 3.0, 0.0, -1.0, 0.25])
    t = np.linspace(0, 1, 17)
    np.testing.assert_allclose(lagrange_interp(nodes, poly(nodes), t), poly(t), atol=1e-12)
    np.testing.assert_allclose(lagrange_interp(nodes, poly(nodes), t, derivative=True),
                               poly.deriv()(t), atol=1e-11)
    vals = np.column_stack([poly(nodes), 2 * poly(nodes)])
    assert lagrange_interp(nodes, vals, 0.3).shape == (2,)
    with pytest.raises(ValueError):
        lagrange_interp([0.0, 0.0], [1.0, 2.0], 0.5)


@pytest.mark.parametrize("alpha", [0.3, 0.6, 0.9])
def test_soe_meets_tolerance(alpha):
    soe = soe_fit(alpha, 1e-3, 10.0, eps=1e-10)
    assert soe.achieved < 1e-9
    ts = np.geomspace(1e-3, 10.0, 50)
    np.testing.assert_allclose(soe(ts), exact_kernel(alpha, ts), rtol=1e-9)
    with pytest.raises(ValueError):
        soe(1e-4)
    coarse = soe_fit(alpha, 1e-3, 10.0, eps=1e-5)
    assert coarse.n_terms < soe.n_terms


def test_soe_validation():
    with pytest.raises(ValueError):
        soe_fit(1.0, 1e-3, 1.0)
    with pytest.raises(ValueError):
        soe_fit(0.5, 2.0, 1.0)


@pytest.mark.parametrize("alpha", [0.4, 0.8])
def test_local_part_exact_for_polynomials_from_origin(alpha):
    p, h = 6, 0.7
    nodes = 0.5 * h * (lgl_nodes(p) + 1)
    for k in (1, 2, 5):
        got = local_part(alpha, (0.0, h), nodes**k)
        np.testing.assert_allclose(got, caputo_analytic_power(alpha, k, nodes[1:]), rtol=1e-10)
    # constants have zero Caputo derivative
    np.testing.assert_allclose(local_part(alpha, (0.0, h), np.full(p + 1, 3.0)), 0.0, atol=1e-12)
    assert local_part(alpha, (0.0, h), nodes**2, j=3) == pytest.approx(
        caputo_analytic_power(alpha, 2, nodes[3]), rel=1e-10)


def test_local_part_requires_initial_value_away_from_origin():
    with pytest.raises(ValueError):
        local_part(0.5, (1.0, 2.0), np.ones(7))


def test_unit_order_local_part_is_derivative():
    p, a, b = 5, 0.5, 1.3
    nodes = 0.5 * ((b - a) * lgl_nodes(p) + a + b)
    got = local_part(1.0, (a, b), np.sin(nodes), u0=0.0)
    np.testing.assert_allclose(got, np.cos(nodes[1:]), atol=1e-4)


@pytest.mark.parametrize("alpha", [0.3, 0.7])
def test_fast_caputo_over_several_intervals(alpha):
    # u = t^3 is reproduced exactly by p = 6 on every interval, so only the
    # SOE error remains
    p = 6
    edges = [0.0, 0.25, 0.6, 1.0, 1.5]
    ref = 0.5 * (lgl_nodes(p) + 1)
    soe = soe_fit(alpha, 0.5 * 0.35 * ref[1], 1.5, eps=1e-12)
    state = HistoryState.zeros(soe.n_terms, 1)
    for a, b in zip(edges[:-1], edges[1:]):
        nodes = a + (b - a) * ref
        got = fast_caputo_apply(state, soe, (a, b), nodes**3, 0.0, alpha)
        np.testing.assert_allclose(got, caputo_analytic_power(alpha, 3, nodes[1:]), rtol=1e-9)
        state = history_update(state, soe, (a, b), nodes**3)


def test_history_must_advance_in_order():
    soe = soe_fit(0.5, 1e-3, 2.0)
    state = HistoryState.zeros(soe.n_terms)
    with pytest.raises(ValueError):
        history_update(state, soe, (0.5, 1.0), np.ones(7))


def test_build_grid():
    g = build_grid(10.0, alpha_min=0.5, p=6, breakpoints=(2.0, 5.0))
    assert g.edges[0] == 0.0 and g.edges[-1] == 10.0
    assert 2.0 in g.edges and 5.0 in g.edges
    w = g.widths
    assert w[0] < 1e-6 and w[0] == pytest.approx(1.0 * (1 / 32) ** 4)
    u = build_grid(10.0, alpha_min=0.5, p=6, breakpoints=(2.0, 5.0), graded=False)
    assert u.n_intervals == g.n_intervals
    with pytest.raises(ValueError):
        CollocationGrid(np.array([0.0, 1.0, 1.0]), 4)
    with pytest.raises(ValueError):
        build_grid(1.0, r=0.5)


def test_manufactured_fractional_system():
    # D^a u = -u + g(t) with u = 1 + t^2 and g = D^a u + u
    alpha = 0.6
    c2 = math.gamma(3.0) / math.gamma(3.0 - alpha)

    def rhs(t, U):
        t = np.asarray(t, dtype=float)
        return -U + (c2 * t ** (2 - alpha) + 1 + t**2)[..., None]

    grid = build_grid(2.0, alpha_min=alpha, p=6, M1=16)
    sol = solve_fode_system(rhs, (alpha,), [1.0], grid)
    t = np.linspace(0, 2, 41)
    np.testing.assert_allclose(sol.evaluate(t)[:, 0], 1 + t**2, atol=1e-8)


def test_integer_order_ode():
    grid = build_grid(3.0, p=6, M1=8)
    sol = solve_fode_system(lambda t, U: -U, (1.0, 1.0), [1.0, 2.0], grid, ("a", "b"))
    t = np.linspace(0, 3, 31)
    np.testing.assert_allclose(sol.evaluate(t), np.column_stack([np.exp(-t), 2 * np.exp(-t)]), atol=1e-10)
    traj = sol.to_trajectory()
    assert traj.names == ("a", "b") and np.all(np.diff(traj.times) > 0)


def test_hh_stays_near_rest_without_input():
    # the stated initial state is only approximately an equilibrium
    p = HhParams()
    model = hh_model(p, CurrentSource.constant(0.0))
    sol = solve_model(model, (0.7,) * 4, 5.0, p=4, M1=8)
    assert np.max(np.abs(sol.evaluate(np.linspace(0, 5, 11))[:, 0] - p.v0)) < 0.5


def test_x0_shape_checked():
    with pytest.raises(ValueError):
        solve_fode_system(lambda t, U: -U, (0.5,), [1.0, 2.0], build_grid(1.0))
