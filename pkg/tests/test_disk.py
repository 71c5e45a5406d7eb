from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rungelab.disk import (
    DiskModel,
    closed_form_sigma,
    disk_cost_curve,
    log_source_coefficients,
    minimal_norm,
    mode_norms,
    optimality_experiment,
    solid_inner_product,
    write_optimality_csv,
)
from rungelab.errors import PreconditionError
from rungelab.pareto import tikhonov_cost


@lru_cache
def _rule(n_nodes):
    return np.polynomial.legendre.leggauss(n_nodes)


def _quadrature_norms(l, R=0.5, n_nodes=2000):
    """Radial Gauss-Legendre rule with the angular integrals done exactly."""
    t, w = _rule(n_nodes)
    r = (t + 1) * R / 2
    w = w * R / 2
    l2 = np.sum(w * r ** (2 * l) * r)
    # |grad(r^l Y)|^2 = l^2 r^{2l-2} (Y^2 + Y'^2 / l^2); angular integrals 1 and l^2
    grad = np.sum(w * 2 * l**2 * r ** (2 * l - 2) * r) if l > 0 else 0.0
    return np.sqrt(l2), np.sqrt(l2 + grad)


def test_mode_norm_values():
    m1 = mode_norms(1)
    assert m1.l2_D1 == pytest.approx(0.125, abs=1e-12)
    assert m1.h1_D1 == pytest.approx(np.sqrt(4.25) / 4, abs=1e-12)
    assert m1.h1_D1 == pytest.approx(0.5153882, abs=1e-7)
    m0 = mode_norms(0)
    assert m0.l2_D1 == m0.h1_D1 == pytest.approx(0.3535534, abs=1e-7)


@pytest.mark.parametrize("l", range(21))
def test_mode_norms_match_quadrature(l):
    l2, h1 = _quadrature_norms(l)
    m = mode_norms(l)
    assert m.l2_D1 == pytest.approx(l2, rel=1e-10)
    assert m.h1_D1 == pytest.approx(h1, rel=1e-10)


def test_closed_form_sigma_values():
    assert closed_form_sigma(0) == pytest.approx(2**-1.5, abs=1e-12)
    assert closed_form_sigma(1) == pytest.approx(0.0883883, abs=1e-7)
    l = np.arange(20, 60)
    ratio = closed_form_sigma(l + 1) / closed_form_sigma(l)
    assert np.all(np.abs(ratio - 0.5) <= 0.01 * 0.5 + 0.5 / 21)
    assert np.allclose([mode_norms(k).sigma_l for k in range(30)], closed_form_sigma(np.arange(30)), rtol=1e-14)


def test_sigma_quadrature_oracle():
    # constant and degree-1 modes: L2(B_1/2) norm over the H^{1/2} boundary norm
    for l in (0, 1):
        l2, _ = _quadrature_norms(l)
        assert closed_form_sigma(l) == pytest.approx(l2 / np.sqrt(1 + l), rel=1e-12)


def test_log_spectrum_affine():
    s = closed_form_sigma(np.arange(20))
    assert np.corrcoef(np.arange(20), np.log(s))[0, 1] <= -0.99


def test_disk_model_invariants():
    m = DiskModel(10)
    assert np.array_equal(m.eigenvalues(), np.arange(11) ** 2)
    assert m.multiplicity()[0] == 1 and np.all(m.multiplicity()[1:] == 2)
    with pytest.raises(PreconditionError):
        DiskModel(0)


def test_solid_inner_product_examples():
    L = 4
    u = np.zeros((L + 1, 2))
    u[0, 0] = np.sqrt(2 * np.pi)
    assert solid_inner_product(u, u, 1.0) == pytest.approx(np.pi, rel=1e-14)
    v = np.zeros((L + 1, 2))
    v[3, 1] = 1.7
    assert solid_inner_product(u, v, 1.0) == 0.0
    w = np.zeros((L + 1, 2))
    w[1, 0] = 2.0
    assert solid_inner_product(w, w, 0.5) == pytest.approx(0.5**4 / 4 * 4.0, rel=1e-14)
    with pytest.raises(PreconditionError):
        solid_inner_product(u, np.zeros((L, 2)), 1.0)


def test_solid_inner_product_matches_polar_quadrature():
    # f = 1 + r cos t on B_1: integral of f^2 = pi + pi/4
    u = np.zeros((2, 2))
    u[0, 0] = np.sqrt(2 * np.pi)
    u[1, 0] = np.sqrt(np.pi)
    assert solid_inner_product(u, u, 1.0) == pytest.approx(np.pi + np.pi / 4, rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 15), st.integers(0, 2**31 - 1))
def test_parseval(L, seed):
    u = np.random.default_rng(seed).standard_normal((L + 1, 2))
    l = np.arange(L + 1)
    expected = np.sum(np.sum(u**2, axis=1) / (2 * l + 2))
    assert solid_inner_product(u, u, 1.0) == pytest.approx(expected, rel=1e-13)


def test_log_source_coefficients():
    c = log_source_coefficients(2.0, 10)
    assert c[0] == pytest.approx(np.log(2) * np.sqrt(2 * np.pi))
    assert c[3] == pytest.approx(-np.sqrt(np.pi) * 2.0**-3 / 3)
    with pytest.raises(PreconditionError):
        log_source_coefficients(0.5, 10)
    with pytest.raises(PreconditionError):
        log_source_coefficients(1.0, 10)


def test_log_source_series_matches_function():
    rho, L = 0.8, 200
    c = log_source_coefficients(rho, L)
    r, t = 0.45, 0.7
    l = np.arange(1, L + 1)
    series = c[0] / np.sqrt(2 * np.pi) + np.sum(c[1:] * r**l * np.cos(l * t)) / np.sqrt(np.pi)
    x = np.array([r * np.cos(t), r * np.sin(t)])
    assert series == pytest.approx(np.log(np.linalg.norm(x - [rho, 0.0])), rel=1e-12)


def test_far_source_cost_bounded():
    out = disk_cost_curve(2.0, np.logspace(-1, -10, 10), "D1", lmax=200)
    M = [r["boundary_norm"] for r in out["rows"]]
    assert max(M) < 10.0


def test_near_source_cost_superpolynomial_shape():
    eps = np.logspace(-1, -6, 21)
    near = disk_cost_curve(0.6, eps, "D1")
    far = disk_cost_curve(0.8, eps, "Dtilde")
    assert near["fits"]["mu_poly"].params[1] > 2 * far["fits"]["mu_poly"].params[1]


def test_dtilde_normalization_requires_extension():
    with pytest.raises(PreconditionError):
        disk_cost_curve(0.6, [0.1], "Dtilde")


def test_optimality_degree_one_closed_form():
    m = mode_norms(1)
    full = m.alpha_l * np.sqrt(2.0)
    assert minimal_norm(1, 0.0) == pytest.approx(full, rel=1e-14)
    assert minimal_norm(1, m.alpha_l * m.l2_D1) == 0.0


def test_optimality_matches_generic_pareto():
    for l in (2, 7, 15):
        m = mode_norms(l)
        b = 1 / (10 * l)
        tik, _, _ = tikhonov_cost(np.array([m.sigma_l]), np.array([m.alpha_l * m.l2_D1]), b)
        assert minimal_norm(l, b) == pytest.approx(tik, rel=1e-9)


def test_optimality_monotone_in_budget():
    for l in (3, 9):
        vals = [minimal_norm(l, b) for b in np.linspace(0, 0.2, 30)]
        assert np.all(np.diff(vals) <= 0)


def test_optimality_experiment(tmp_path):
    out = optimality_experiment(20)
    assert len(out["rows"]) == 20
    assert out["slope"] >= 0.9 * np.log(2) / 2
    assert out["passed"]
    path = tmp_path / "opt.csv"
    write_optimality_csv(out["rows"], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "l,l2_D1,h1_D1,sigma_l,min_boundary_norm,ratio_to_2^{l/2}"
    assert len(lines) == 21
    with pytest.raises(PreconditionError):
        optimality_experiment(41)
