import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rungelab.errors import ConfigurationError
from rungelab.geometry import (
    DomainNorms,
    build_grid,
    dual_norm_on_gamma,
    gamma_gram,
    gram,
    loop_laplacian,
    pairing,
    riesz_functional,
    snap_rect,
)


def test_full_loop_has_128_nodes(dom32):
    assert dom32.n_boundary == 128
    assert len(dom32.gamma) == 128


def test_quarter_fraction_is_bottom_edge():
    d = build_grid(32, gamma_fraction=0.25)
    X, Y = d.coordinates
    nodes = d.boundary[d.gamma]
    assert len(nodes) == 32
    assert np.all(Y.ravel()[nodes] == 0.0)
    assert np.array_equal(d.gamma, build_grid(32, gamma_side="S").gamma)


def test_loop_starts_lower_left_counterclockwise(dom32):
    X, Y = dom32.coordinates
    b = dom32.boundary
    assert (X.ravel()[b[0]], Y.ravel()[b[0]]) == (0.0, 0.0)
    assert X.ravel()[b[1]] > 0 and Y.ravel()[b[1]] == 0.0
    assert (X.ravel()[b[32]], Y.ravel()[b[32]]) == (1.0, 0.0)
    assert len(np.unique(b)) == len(b)


def test_small_grid_margin_error_names_margin():
    with pytest.raises(ConfigurationError, match="margin"):
        build_grid(8, {"D1": [0.45, 0.55, 0.45, 0.55]})


def test_resolution_floor():
    with pytest.raises(ConfigurationError, match="at least 16"):
        build_grid(12, {"D1": [0.4, 0.6, 0.4, 0.6], "Dtilde": [0.2, 0.8, 0.2, 0.8]})


def test_dtilde_touching_d1_rejected():
    with pytest.raises(ConfigurationError, match="D1"):
        build_grid(32, {"Dtilde": [0.375, 0.625, 0.3, 0.7]})


def test_rect_snaps_outward():
    r = snap_rect([0.3, 0.61, 0.3, 0.61], 10)
    assert (r.i0, r.i1, r.j0, r.j1) == (3, 7, 3, 7)


def test_side_run_centered():
    d = build_grid(32, gamma_side="E", gamma_fraction=0.5)
    X, Y = d.coordinates
    ys = Y.ravel()[d.boundary[d.gamma]]
    assert np.all(X.ravel()[d.boundary[d.gamma]] == 1.0)
    assert len(ys) == 16 and np.isclose(ys.min(), 0.25) and np.isclose(ys.max(), 0.25 + 15 / 32)


def test_constant_trace_hhalf_norm(dom32):
    G = gram(dom32, "Hhalf", "D2")
    one = np.ones(dom32.n_boundary)
    assert G.norm(one) ** 2 == pytest.approx(4.0, abs=1e-12)


def test_fourier_mode_hhalf_norm(dom32):
    G = gram(dom32, "Hhalf", "D2")
    lam, Q = G.spectral_data
    h = dom32.h
    for k in (1, 5, 17):
        e = Q[:, k]
        assert pairing(e, e, h) == pytest.approx(1.0, abs=1e-12)
        assert G.norm(e) ** 2 == pytest.approx(1 + np.sqrt(lam[k]), rel=1e-10)


def test_hhalf_spectral_representation(dom32):
    G = gram(dom32, "Hhalf", "D2")
    lam, Q = G.spectral_data
    h = dom32.h
    W = h * Q  # arclength-weighted basis
    recon = W @ np.diag(1 + np.sqrt(lam)) @ W.T
    assert np.abs(recon - G.matrix).max() < 1e-10


def test_hhalf_commutes_with_loop_shift(dom32):
    G = gram(dom32, "Hhalf", "D2").matrix
    P = np.roll(np.eye(dom32.n_boundary), 1, axis=0)
    assert np.abs(P @ G - G @ P).max() < 1e-12


def test_loop_laplacian_spectrum():
    nb, h = 40, 0.1
    lam = np.sort(np.linalg.eigvalsh(loop_laplacian(nb, h)))
    k = np.arange(nb)
    expected = np.sort(4 / h**2 * np.sin(np.pi * k / nb) ** 2)
    assert np.allclose(lam, expected, atol=1e-9)


def test_l2_of_d1_indicator_converges_to_area():
    vals = []
    for N in (32, 64, 128):
        d = build_grid(N)
        G = gram(d, "L2", "D1")
        one = np.ones(len(G.nodes))
        assert G.norm(one) ** 2 == pytest.approx(d.h**2 * len(G.nodes), rel=1e-14)
        vals.append(G.norm(one) ** 2)
    errs = np.abs(np.array(vals) - 0.0625)
    assert errs[-1] < errs[0] and errs[-1] < 0.01


def test_h1_norm_of_linear_function(dom32):
    G = gram(dom32, "H1", "D1")
    X, _ = dom32.coordinates
    v = X.ravel()[G.nodes]
    # |grad x|^2 over D1 is its area; the lumped L2 part is a node sum
    grad_part = G.norm(v) ** 2 - dom32.h**2 * np.sum(v**2)
    assert grad_part == pytest.approx(0.0625, rel=1e-12)


def test_dual_norm_examples(dom32, dom32_bottom):
    assert dual_norm_on_gamma(np.zeros(dom32.n_boundary), dom32) == 0.0
    assert dual_norm_on_gamma(np.ones(dom32.n_boundary), dom32) == pytest.approx(2.0, abs=1e-12)
    f = np.ones(dom32_bottom.n_boundary)
    f[dom32_bottom.gamma] = 0.0
    assert dual_norm_on_gamma(f, dom32_bottom) == 0.0


def test_riesz_functional_round_trip(dom32_bottom, rng):
    G = gamma_gram(dom32_bottom)
    g = rng.standard_normal(len(dom32_bottom.gamma))
    f = riesz_functional(g, dom32_bottom)
    assert dual_norm_on_gamma(f, dom32_bottom, G) == pytest.approx(G.norm(g), rel=1e-10)


def test_domain_norms_match_direct(dom32_bottom, rng):
    n = DomainNorms(dom32_bottom)
    f = rng.standard_normal(dom32_bottom.n_boundary)
    assert n.dual_gamma(f) == pytest.approx(dual_norm_on_gamma(f, dom32_bottom), rel=1e-12)


def test_unknown_order_rejected(dom32):
    with pytest.raises(ConfigurationError):
        gram(dom32, "H2")
    with pytest.raises(ConfigurationError):
        gram(dom32, "Hhalf", "annulus")


_dom = build_grid(16, gamma_side="W", gamma_fraction=0.75)
_grams = [gram(_dom, o, r) for o, r in (("L2", "D1"), ("H1", "annulus"), ("H1", "G"), ("Hhalf", "D2"))]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 3), st.integers(0, 2**31 - 1))
def test_grams_positive_definite(which, seed):
    G = _grams[which]
    v = np.random.default_rng(seed).standard_normal(G.matrix.shape[0])
    assert v @ G.matrix @ v > 0
    assert np.array_equal(G.matrix, G.matrix.T)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10.0))
def test_dual_norm_duality_and_homogeneity(seed, scale):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(len(_dom.gamma))
    f = riesz_functional(g, _dom)
    Gg = gamma_gram(_dom)
    assert dual_norm_on_gamma(f, _dom, Gg) == pytest.approx(Gg.norm(g), rel=1e-10)
    assert dual_norm_on_gamma(scale * f, _dom, Gg) == pytest.approx(scale * Gg.norm(g), rel=1e-10)
    # Cauchy-Schwarz for the pairing against any Γ-supported trace
    v = rng.standard_normal(len(_dom.gamma))
    lhs = abs(pairing(f, _dom.embed_gamma(v), _dom.h))
    assert lhs <= dual_norm_on_gamma(f, _dom, Gg) * Gg.norm(v) * (1 + 1e-10)
