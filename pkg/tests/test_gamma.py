from __future__ import annotations

import numpy as np
import pytest
import sympy as sp

from gammaz import gamma
from gammaz import structure as st

import oracles as O

HV = "x^2+(y^2+z^2)/2"


def test_gamma1_examples():
    h = st.preset("heisenberg", HV)
    assert gamma.gamma1(h, "x", "x", [0.2, 0.3, 0.4]) == pytest.approx(1)
    assert gamma.gamma1(h, "z", "z", [1, 1, 7]) == pytest.approx(0.5)
    assert gamma.gamma1_z(h, "z", "z", [1, 1, 7]) == pytest.approx(1)
    assert gamma.gamma1(h, "x*y+z", "3", [0.1, 0.2, 0.3]) == 0
    assert gamma.gamma1_z(h, "x*y+z", "3", [0.1, 0.2, 0.3]) == 0


def test_gamma1_symmetric_and_nonnegative():
    rng = np.random.default_rng(0)
    s = st.preset("se2", "0", {"g": "2+sin(theta)"})
    pts = rng.uniform(-1, 1, (50, 3))
    f, g = "theta*x + y^2", "sin(x) - theta*y"
    np.testing.assert_allclose(gamma.gamma1(s, f, g, pts), gamma.gamma1(s, g, f, pts), rtol=1e-14)
    assert np.min(gamma.gamma1(s, f, f, pts)) >= -1e-13
    assert np.min(gamma.gamma1_z(s, f, f, pts)) >= -1e-13


def test_gamma2_classical_ou():
    ou = st.preset("ou1d", "x^2/2")
    pts = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_allclose(gamma.gamma2(ou, "x", pts), 1, rtol=1e-14)
    np.testing.assert_allclose(gamma.gamma1(ou, "x", "x", pts), 1)
    # Gamma2 = (f'')^2 + (f')^2 for this V
    x = pts[:, 0]
    np.testing.assert_allclose(gamma.gamma2(ou, "x^3", pts), 36 * x**2 + 9 * x**4, rtol=1e-13, atol=1e-13)
    np.testing.assert_array_equal(gamma.gamma2_z_rho(ou, "x^3 + sin(x)", pts), 0)


def test_gamma2_linear_f_constant_frame():
    s = st.build(("x", "y"), [["1", "2"]], [["0", "1"]], "0")
    pts = np.random.default_rng(1).uniform(-1, 1, (10, 2))
    np.testing.assert_allclose(gamma.gamma2(s, "3*x - y", pts), 0, atol=1e-15)


def test_corrections_vanish_for_constant_matrices():
    s = st.build(("x", "y"), [["1", "2"]], [["0", "1"]], "x^2 + sin(y)")
    ev = gamma.evaluate(s, "x^3 + x*y^2", np.random.default_rng(2).uniform(-1, 1, (10, 2)))
    np.testing.assert_array_equal(ev.corr_z, 0)
    np.testing.assert_array_equal(ev.corr_a, 0)


def test_heisenberg_vertical_gamma2():
    h = st.preset("heisenberg", HV)
    for zc in (-3.0, 0.0, 2.5):
        assert gamma.gamma2_z_rho(h, "z", [1, 1, zc]) == pytest.approx(0.5, rel=1e-14)
    p = np.random.default_rng(3).uniform(-2, 2, (20, 3))
    np.testing.assert_allclose(gamma.gamma2_z_rho(h, "z", p), (p[:, 0] ** 2 + p[:, 1] ** 2) / 4, rtol=1e-13)


def _check_against_symbolic(s, aT, zT, V, logvol, f_sym, f_txt, X, pts, rel):
    ref = O.gamma_symbolic(aT, zT, V, logvol, f_sym, X)
    ev = gamma.evaluate(s, f_txt, pts)
    got = np.stack([ev.gamma1, ev.gamma1_z, ev.gamma2, ev.gamma2_z_rho, ev.corr_z, ev.corr_a], -1)
    for k, p in enumerate(pts):
        want = np.array(O.at(ref, X, p))
        assert np.all(np.abs(got[k] - want) <= rel * (1 + np.abs(want))), (p, got[k], want)
    return got


def test_heisenberg_gamma2_xy_against_definition():
    x, y, z = X = sp.symbols("x y z")
    aT = sp.Matrix([[1, 0, -y / 2], [0, 1, x / 2]])
    zT = sp.Matrix([[0, 0, 1]])
    s = st.preset("heisenberg", "0")
    pts = np.random.default_rng(4).uniform(-1, 1, (8, 3))
    _check_against_symbolic(s, aT, zT, sp.Integer(0), 0, x * y, "x*y", X, pts, 1e-10)


def test_se2_corrections_against_definition():
    th, x, y = X = sp.symbols("theta x y")
    beta = sp.Rational(7, 10)
    g = 2 + sp.sin(th) + sp.Rational(3, 10) * x * y
    aT = sp.Matrix([[1, 0, 0], [0, sp.exp(beta * th), 1]])
    zT = sp.Matrix([[0, 0, -g]])
    V = th**2 / 2 + x * y / 3
    f = th * x**2 + sp.sin(y) + x * y * th
    s = st.preset("se2", "theta^2/2 + x*y/3", {"beta": 0.7, "g": "2+sin(theta)+0.3*x*y"})
    pts = np.random.default_rng(5).uniform(-1, 1, (6, 3))
    got = _check_against_symbolic(s, aT, zT, V, 0, f, "theta*x^2 + sin(y) + x*y*theta", X, pts, 1e-10)
    assert np.all(np.abs(got[:, 4]) + np.abs(got[:, 5]) > 1e-3)  # corrections are active


def test_martinet_against_definition_with_volume():
    x, y, z = X = sp.symbols("x y z")
    aT = sp.Matrix([[1, 0, y**2 / 2], [0, 1, 0]])
    zT = sp.Matrix([[0, 0, 1]])
    V = (x**2 + y**2) / 2 + x * z
    s = st.preset("martinet", "(x^2+y^2)/2 + x*z")
    pts = np.random.default_rng(6).uniform(-1, 1, (6, 3))
    _check_against_symbolic(s, aT, zT, V, -y**2 / 2, x**2 * z + y**3, "x^2*z + y^3", X, pts, 1e-10)


def test_gamma2_needs_order_three():
    h = st.preset("heisenberg", "0")
    pe = st.evaluate(h, [0.1, 0.2, 0.3])
    from gammaz import exprdsl

    fj = exprdsl.eval_jet(exprdsl.parse("x*y", h.coords), [0.1, 0.2, 0.3], 2)
    with pytest.raises(ValueError):
        gamma.gamma_all(pe, fj)
