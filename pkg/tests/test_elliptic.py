import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rungelab.elliptic import (
    Coefficients,
    assemble,
    coefficient_preset,
    conormal_derivative,
    constant_coefficients,
    dual_source_solve,
    green_residual,
    green_scale,
    h1_constant,
    load_field_csv,
    solve_dirichlet,
    solve_in_rect,
)
from rungelab.errors import ConfigurationError, SolvabilityError
from rungelab.geometry import build_grid


def _trace(dom, fn):
    X, Y = dom.coordinates
    return fn(X, Y).ravel()[dom.boundary]


def test_coefficient_bounds_enforced(dom32):
    with pytest.raises(ConfigurationError, match="ellipticity"):
        Coefficients(np.full(dom32.shape, 3.0), np.zeros(dom32.shape), 2.0)
    with pytest.raises(ConfigurationError, match=r"\|c\|"):
        Coefficients(np.ones(dom32.shape), np.full(dom32.shape, 5.0), 2.0)
    with pytest.raises(ConfigurationError, match="finite"):
        Coefficients(np.full(dom32.shape, np.nan), np.zeros(dom32.shape), 2.0)


def test_matrix_exactly_symmetric(dom32):
    op = assemble(dom32, coefficient_preset(dom32, "checkerboard"))
    K = op.K.toarray()
    assert np.abs(K - K.T).max() == 0.0
    assert op.coeff.K == 2.0


def test_certificate_near_two_pi_squared():
    d = build_grid(64)
    op = assemble(d, constant_coefficients(d))
    h = d.h
    discrete = 8 / h**2 * np.sin(np.pi * h / 2) ** 2
    assert op.certificate == pytest.approx(discrete, rel=1e-5)
    assert op.certificate == pytest.approx(2 * np.pi**2, rel=0.05)


def test_resonant_c_raises(dom32):
    lam_h = 8 / dom32.h**2 * np.sin(np.pi * dom32.h / 2) ** 2
    with pytest.raises(SolvabilityError, match="eigenvalue"):
        assemble(dom32, constant_coefficients(dom32, c=lam_h, K=20.0))


def test_zero_data_gives_zero(lap32):
    s = solve_dirichlet(lap32)
    assert np.all(s.u == 0.0)


def test_harmonic_quadratic_reproduced(lap32):
    d = lap32.domain
    s = lap32.solve(None, _trace(d, lambda x, y: x**2 - y**2))
    X, Y = d.coordinates
    assert np.abs(s.u - (X**2 - Y**2)).max() < 1e-12


def test_discrete_manufactured_round_trip(lap32):
    d = lap32.domain
    X, Y = d.coordinates
    ustar = np.sin(np.pi * X) * np.sin(np.pi * Y)
    F = lap32.apply(ustar)
    s = lap32.solve(F, np.zeros(d.n_boundary))
    assert np.abs(s.u - ustar).max() < 1e-10


def test_manufactured_second_order():
    errs = []
    for N in (32, 64):
        d = build_grid(N)
        op = assemble(d, constant_coefficients(d))
        X, Y = d.coordinates
        ustar = np.sin(np.pi * X) * np.sin(np.pi * Y)
        s = op.solve(-2 * np.pi**2 * ustar, np.zeros(d.n_boundary))
        errs.append(np.abs(s.u - ustar).max())
    assert 3.5 <= errs[0] / errs[1] <= 4.5


def test_conormal_of_linear_function(lap32):
    d = lap32.domain
    X, Y = d.coordinates
    dn = conormal_derivative(lap32.solve(None, _trace(d, lambda x, y: x)))
    bx, by = X.ravel()[d.boundary], Y.ravel()[d.boundary]
    corner = np.zeros(d.n_boundary, dtype=bool)
    corner[d.corner_positions] = True
    east, west = (bx == 1.0) & ~corner, (bx == 0.0) & ~corner
    ns = ((by == 0.0) | (by == 1.0)) & ~corner
    assert np.allclose(dn[east], 1.0, atol=1e-10)
    assert np.allclose(dn[west], -1.0, atol=1e-10)
    assert np.allclose(dn[ns], 0.0, atol=1e-10)


def test_conormal_of_constant_vanishes(lap32):
    dn = conormal_derivative(lap32.solve(None, np.full(lap32.domain.n_boundary, 3.0)))
    assert np.abs(dn).max() < 1e-12


def test_interior_conormal_two_sided(lap32, rng):
    d = lap32.domain
    s = lap32.solve(rng.standard_normal(d.shape), rng.standard_normal(d.n_boundary))
    inside = conormal_derivative(s, "D1", "inside")
    outside = conormal_derivative(s, "D1", "outside")
    assert np.abs(inside - outside).max() < 1e-9 * np.abs(inside).max()


def test_conormal_rejects_non_rectangle(lap32):
    s = lap32.solve()
    with pytest.raises(ConfigurationError):
        conormal_derivative(s, (0.1, 0.2))
    with pytest.raises(ConfigurationError):
        conormal_derivative(s, "D2", "outside")


def test_green_identity_random_cases(lap32, rng):
    d = lap32.domain
    for _ in range(10):
        us = lap32.solve(rng.standard_normal(d.shape), rng.standard_normal(d.n_boundary))
        ws = lap32.solve(rng.standard_normal(d.shape), rng.standard_normal(d.n_boundary))
        assert green_residual(us, ws) <= 1e-9 * green_scale(us, ws)
    assert green_residual(us, us) <= 1e-13 * green_scale(us, us)


def test_green_identity_harmonic_against_dual(lap32, rng):
    d = lap32.domain
    us = lap32.solve(None, rng.standard_normal(d.n_boundary))
    ws = dual_source_solve(lap32, rng.standard_normal(d.shape))
    assert green_residual(us, ws) <= 1e-9 * green_scale(us, ws)


def test_dual_source_zero_and_sign(lap32):
    d = lap32.domain
    assert np.all(dual_source_solve(lap32, np.zeros(d.shape)).u == 0.0)
    w = dual_source_solve(lap32, np.ones(d.shape)).u
    assert np.all(w[d.interior_mask] < 0.0)


def test_dual_source_accepts_d1_vector(lap32, rng):
    d = lap32.domain
    grid = rng.standard_normal(d.shape)
    vec = grid[d.region_nodes("D1")]
    assert np.array_equal(dual_source_solve(lap32, grid).u, dual_source_solve(lap32, vec).u)


def test_stability_constant_stable_under_refinement():
    cs = []
    for N in (32, 64):
        d = build_grid(N)
        op = assemble(d, constant_coefficients(d))
        cs.append(h1_constant(op, np.ones(d.shape)))
    assert abs(cs[1] / cs[0] - 1) <= 0.10


def test_solve_in_rect_reproduces_harmonic(lap32):
    d = lap32.domain
    X, Y = d.coordinates
    v = solve_in_rect(lap32, d.D1, X * Y)
    mask = d.rect_nodes(d.D1)
    assert np.abs(v[mask] - (X * Y)[mask]).max() < 1e-12
    assert lap32.equation_residual(v, d.D1) < 1e-9


def test_multi_rhs_independent_of_threads(lap32, rng):
    d = lap32.domain
    G = rng.standard_normal((d.n_boundary, 50))
    F = np.zeros((len(lap32.interior), 50))
    a = lap32.solve_interior_many(F, G, threads=1)
    b = lap32.solve_interior_many(F, G, threads=6)
    assert np.array_equal(a, b)


def test_field_csv_round_trip(dom32, tmp_path):
    a = coefficient_preset(dom32, "bump").a
    path = tmp_path / "a.csv"
    np.savetxt(path, a.ravel(), delimiter=",")
    assert np.allclose(load_field_csv(dom32, path), a)
    np.savetxt(path, a.ravel()[:-1], delimiter=",")
    with pytest.raises(ConfigurationError, match="node values"):
        load_field_csv(dom32, path)


_d16 = build_grid(16)
_op16 = assemble(_d16, coefficient_preset(_d16, "checkerboard", c=-1.0))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_green_identity_property(seed):
    rng = np.random.default_rng(seed)
    d = _d16
    us = _op16.solve(rng.standard_normal(d.shape), rng.standard_normal(d.n_boundary))
    ws = _op16.solve(rng.standard_normal(d.shape), rng.standard_normal(d.n_boundary))
    assert green_residual(us, ws) <= 1e-9 * green_scale(us, ws)
    assert us.residual_norm <= 1e-10 * (1 + np.abs(us.u).max())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_solution_linear_in_data(seed, s, t):
    rng = np.random.default_rng(seed)
    d = _d16
    g1, g2 = rng.standard_normal((2, d.n_boundary))
    u = _op16.solve(None, s * g1 + t * g2).u
    v = s * _op16.solve(None, g1).u + t * _op16.solve(None, g2).u
    assert np.abs(u - v).max() <= 1e-11 * (1 + np.abs(u).max())
