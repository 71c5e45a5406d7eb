"""Dirichlet problems for ``L = div(a grad) + c`` on a rectangular grid.

The discrete operator is the P1-consistent five-point flux form.  With ``S``
the stiffness form of :func:`rungelab.geometry.stiffness_matrix` and ``m`` the
lumped node masses, ``K = S - diag(m c)`` and the interior equations read
``-(K u)_p = h^2 F_p``.  Conormal derivatives are weak: for a region ``R``
and a node ``b`` on its boundary the pairing value is

    P_b = (S_R u)_b + m_R(b) (F_b - c_b u_b),

and the nodal conormal value is ``P_b / h``.  This makes the Green identity
exact at the discrete level and makes the two one-sided conormals on an
interior curve coincide.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.sparse.linalg import spsolve

from .errors import ConfigurationError, NumericalError, SolvabilityError
from .geometry import GridDomain, Rect, cell_mass, gram, pairing, stiffness_matrix

log = logging.getLogger(__name__)

SOLVABILITY_TOL = 1e-8
CHUNK_COLUMNS = 16


@dataclass(frozen=True, eq=False)
class Coefficients:
    """Isotropic coefficient ``a``, zeroth-order term ``c`` and bound ``K``.

    Both fields are grid arrays over all nodes of D2.
    """

    a: np.ndarray
    c: np.ndarray
    K: float

    def __post_init__(self):
        a, c = np.asarray(self.a, dtype=float), np.asarray(self.c, dtype=float)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(c))):
            raise ConfigurationError("coefficients must be finite")
        if self.K < 1:
            raise ConfigurationError(f"bound K must be >= 1, got {self.K}")
        if a.min() < 1.0 / self.K - 1e-14 or a.max() > self.K + 1e-14:
            raise ConfigurationError(
                f"ellipticity bound violated: a in [{a.min():.4g}, {a.max():.4g}] but K = {self.K}"
            )
        if np.abs(c).max(initial=0.0) > self.K + 1e-12:
            raise ConfigurationError(f"|c| <= K violated: max |c| = {np.abs(c).max():.4g}, K = {self.K}")


def constant_coefficients(domain: GridDomain, a: float = 1.0, c: float = 0.0, K: float | None = None) -> Coefficients:
    if K is None:
        K = max(1.0, a, 1.0 / a, abs(c))
    return Coefficients(np.full(domain.shape, float(a)), np.full(domain.shape, float(c)), K)


def bump(domain: GridDomain, rect: Rect, height: float = 1.0) -> np.ndarray:
    """Smooth cos^2 bump supported in the closed rectangle ``rect``."""
    X, Y = domain.coordinates
    x0, x1, y0, y1 = rect.bounds(domain.N)
    sx = (2 * X - (x0 + x1)) / (x1 - x0)
    sy = (2 * Y - (y0 + y1)) / (y1 - y0)
    fx = np.where(np.abs(sx) < 1, np.cos(np.pi * sx / 2) ** 2, 0.0)
    fy = np.where(np.abs(sy) < 1, np.cos(np.pi * sy / 2) ** 2, 0.0)
    return height * fx * fy


def checkerboard(domain: GridDomain, low: float = 0.5, high: float = 2.0, block: int = 4) -> np.ndarray:
    j, i = np.indices(domain.shape)
    return np.where(((i // block) + (j // block)) % 2 == 0, low, high)


def coefficient_preset(domain: GridDomain, name: str, **params) -> Coefficients:
    """Named coefficient presets: ``constant``, ``checkerboard`` and ``bump``."""
    zero = np.zeros(domain.shape)
    if name == "constant":
        return constant_coefficients(domain, params.get("a", 1.0), params.get("c", 0.0), params.get("K"))
    if name == "checkerboard":
        a = checkerboard(domain, params.get("low", 0.5), params.get("high", 2.0), params.get("block", 4))
        K = params.get("K", max(a.max(), 1.0 / a.min()))
        return Coefficients(a, zero + params.get("c", 0.0), K)
    if name == "bump":
        a = 1.0 + bump(domain, domain.Dtilde, params.get("height", 1.0))
        K = params.get("K", max(a.max(), 1.0 / a.min()))
        return Coefficients(a, zero + params.get("c", 0.0), K)
    raise ConfigurationError(f"unknown coefficient preset {name!r}")


def load_field_csv(domain: GridDomain, path: str | Path) -> np.ndarray:
    """Read a node-ordered (row-major) field from CSV."""
    values = np.loadtxt(path, delimiter=",", ndmin=1).ravel()
    if values.size != domain.n_nodes:
        raise ConfigurationError(f"{path}: expected {domain.n_nodes} node values, found {values.size}")
    return values.reshape(domain.shape)


@dataclass(frozen=True, eq=False)
class DirichletSolve:
    """Solution ``u`` of ``L u = F`` with ``u = g`` on the boundary of D2.

    ``source`` is stored with its boundary entries zeroed.
    """

    u: np.ndarray
    source: np.ndarray
    boundary_data: np.ndarray
    residual_norm: float
    operator: "DirichletOperator" = field(repr=False)


class DirichletOperator:
    """Assembled and factorized Dirichlet problem on a fixed domain.

    Immutable after construction; ``solve`` may be called concurrently.
    """

    def __init__(self, domain: GridDomain, coeff: Coefficients):
        if coeff.a.shape != domain.shape or coeff.c.shape != domain.shape:
            raise ConfigurationError("coefficient arrays do not match the grid")
        self.domain = domain
        self.coeff = coeff
        h = domain.h
        self.cells = domain.region_cells("D2")
        self.stiffness = stiffness_matrix(domain, self.cells, coeff.a)
        self.mass = cell_mass(domain, self.cells)
        self.K = (self.stiffness - sp.diags((self.mass * coeff.c).ravel())).tocsr()

        self.interior = np.flatnonzero(domain.interior_mask.ravel())
        self.boundary = domain.boundary
        self.K_II = self.K[self.interior][:, self.interior]
        self.K_IB = self.K[self.interior][:, self.boundary].tocsr()

        self._nxi = domain.D2.nx - 1
        self._lu, self._piv = self._factorize()
        self.matrix_norm = float(abs(self.K_II).sum(axis=1).max()) / h**2
        self.certificate = self._smallest_eigenvalue()
        if abs(self.certificate) < SOLVABILITY_TOL * self.matrix_norm:
            raise SolvabilityError(
                "zero is (numerically) a Dirichlet eigenvalue: "
                f"smallest |eigenvalue| {abs(self.certificate):.3e} vs matrix norm {self.matrix_norm:.3e}"
            )

    def _factorize(self):
        n = len(self.interior)
        k = self._nxi
        ab = np.zeros((3 * k + 1, n))
        A = self.K_II.tocoo()
        ab[2 * k + A.row - A.col, A.col] = A.data
        lu, piv, info = lapack.dgbtrf(ab, k, k)
        if info > 0:
            raise SolvabilityError(f"banded factorization hit an exact zero pivot at row {info}")
        if info < 0:
            raise NumericalError(f"dgbtrf rejected argument {-info}")
        return lu, piv

    def _solve_interior(self, rhs: np.ndarray) -> np.ndarray:
        x, info = lapack.dgbtrs(self._lu, self._nxi, self._nxi, rhs, self._piv)
        if info != 0:
            raise NumericalError(f"dgbtrs failed with info={info}")
        return x

    def _smallest_eigenvalue(self, rtol: float = 1e-6, maxiter: int = 500) -> float:
        """Smallest-magnitude eigenvalue of the Dirichlet matrix ``K_II / h^2`` by inverse iteration."""
        h2 = self.domain.h**2
        x = np.ones(len(self.interior))
        x /= np.linalg.norm(x)
        lam = np.inf
        for _ in range(maxiter):
            y = self._solve_interior(x[:, None])[:, 0] * h2
            ny = np.linalg.norm(y)
            if not np.isfinite(ny) or ny == 0.0:
                return 0.0
            new = float(x @ y) / ny**2
            x = y / ny
            if abs(new - lam) <= rtol * abs(new):
                return new
            lam = new
        log.warning("inverse iteration did not reach rtol=%g; last estimate %g", rtol, lam)
        return lam

    # --- solves --------------------------------------------------------------

    def solve_interior_many(self, F_int: np.ndarray, G: np.ndarray, threads: int = 1) -> np.ndarray:
        """Interior values for many right-hand sides.

        ``F_int`` has shape ``(n_interior, m)`` and ``G`` (loop data) shape
        ``(n_boundary, m)``.  Columns are processed in fixed chunks, so the
        result does not depend on ``threads``.
        """
        rhs = -(self.domain.h**2) * F_int - self.K_IB @ G
        m = rhs.shape[1]
        chunks = [slice(s, min(s + CHUNK_COLUMNS, m)) for s in range(0, m, CHUNK_COLUMNS)]
        out = np.empty_like(rhs)

        def work(sl):
            out[:, sl] = self._solve_interior(np.ascontiguousarray(rhs[:, sl]))

        if threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                list(ex.map(work, chunks))
        else:
            for sl in chunks:
                work(sl)
        return out

    def solve(self, F: np.ndarray | None = None, g: np.ndarray | None = None) -> DirichletSolve:
        dom = self.domain
        F = np.zeros(dom.shape) if F is None else np.array(F, dtype=float).reshape(dom.shape)
        F[~dom.interior_mask] = 0.0
        g = np.zeros(dom.n_boundary) if g is None else np.asarray(g, dtype=float)
        if g.shape != (dom.n_boundary,):
            raise ConfigurationError(f"boundary data must have {dom.n_boundary} loop values")
        u = np.zeros(dom.n_nodes)
        u[self.boundary] = g
        u[self.interior] = self.solve_interior_many(F.ravel()[self.interior][:, None], g[:, None])[:, 0]
        res = self.K[self.interior] @ u + dom.h**2 * F.ravel()[self.interior]
        return DirichletSolve(u.reshape(dom.shape), F, g, float(np.abs(res).max(initial=0.0)), self)

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Discrete ``L u`` at interior nodes (grid array, zero on the boundary)."""
        out = np.zeros(self.domain.n_nodes)
        out[self.interior] = -(self.K[self.interior] @ np.ravel(u)) / self.domain.h**2
        return out.reshape(self.domain.shape)

    def equation_residual(self, values: np.ndarray, rect: Rect) -> float:
        """Max |L u| over interior nodes of ``rect`` for a grid function ``values``."""
        rows = np.flatnonzero(self.domain.rect_interior_nodes(rect).ravel())
        return float(np.abs(self.K[rows] @ np.ravel(values)).max(initial=0.0)) / self.domain.h**2


def assemble(domain: GridDomain, coeff: Coefficients) -> DirichletOperator:
    """Assemble the five-point operator, factorize it and certify solvability."""
    return DirichletOperator(domain, coeff)


def solve_dirichlet(op: DirichletOperator, F: np.ndarray | None = None, g: np.ndarray | None = None) -> DirichletSolve:
    return op.solve(F, g)


def _side_cells(domain: GridDomain, rect: Rect, side: str) -> np.ndarray:
    inside = domain.rect_cells(rect)
    if side == "inside":
        return inside
    if side == "outside":
        if rect == domain.D2:
            raise ConfigurationError("the outer boundary has no outside")
        return domain.region_cells("D2") & ~inside
    raise ConfigurationError(f"side must be 'inside' or 'outside', got {side!r}")


def conormal_derivative(solve: DirichletSolve, curve: str | Rect = "D2", side: str = "inside") -> np.ndarray:
    """Weak conormal derivative on the loop of a rectangle.

    The sign convention is the outward normal of the rectangle, whichever
    side the derivative is computed from.  Returned values are nodal; pair
    them with the arclength weight ``h``.
    """
    op = solve.operator
    dom = op.domain
    rect = dom.rect(curve) if isinstance(curve, str) else curve
    if not isinstance(rect, Rect):
        raise ConfigurationError("curve must be a grid-aligned rectangle")
    cells = _side_cells(dom, rect, side)
    S = stiffness_matrix(dom, cells, op.coeff.a)
    m = cell_mass(dom, cells).ravel()
    loop = dom.loop(rect)
    u = solve.u.ravel()
    F = solve.source.ravel()
    c = op.coeff.c.ravel()
    P = (S[loop] @ u) + m[loop] * (F[loop] - c[loop] * u[loop])
    sign = 1.0 if side == "inside" else -1.0
    return sign * P / dom.h


def green_residual(us: DirichletSolve, ws: DirichletSolve) -> float:
    """|(Lu, w) - (u, L*w) - (∂ν u, w) + (u, ∂ν w)| with weak conormals on ∂D2."""
    dom = us.operator.domain
    h2 = dom.h**2
    lhs = h2 * np.sum(us.source * ws.u) - h2 * np.sum(us.u * ws.source)
    du = conormal_derivative(us)
    dw = conormal_derivative(ws)
    rhs = pairing(du, ws.boundary_data, dom.h) - pairing(us.boundary_data, dw, dom.h)
    return float(abs(lhs - rhs))


def dual_source_solve(op: DirichletOperator, h_values: np.ndarray) -> DirichletSolve:
    """Solve ``L* w = h 1_{D1}``, ``w = 0`` on ∂D2.

    ``h_values`` is either a grid array (values outside closed D1 ignored) or a
    vector over the nodes of closed D1 in row-major order.
    """
    dom = op.domain
    mask = dom.region_nodes("D1")
    F = np.zeros(dom.n_nodes)
    hv = np.asarray(h_values, dtype=float)
    if hv.shape == dom.shape:
        F[mask.ravel()] = hv[mask]
    else:
        F[np.flatnonzero(mask.ravel())] = hv
    return op.solve(F.reshape(dom.shape), None)


def solve_in_rect(op: DirichletOperator, rect: Rect, boundary_values: np.ndarray) -> np.ndarray:
    """Discrete solution of ``L v = 0`` inside ``rect`` with given values on its closed nodes' boundary.

    ``boundary_values`` is a grid array; only entries on the loop of ``rect``
    (and at its corners, which the stencil never reads) are used.  Returns a
    grid array that vanishes outside the closed rectangle.
    """
    dom = op.domain
    closed = np.flatnonzero(dom.rect_nodes(rect).ravel())
    inner = np.flatnonzero(dom.rect_interior_nodes(rect).ravel())
    edge = np.setdiff1d(closed, inner)
    bv = np.ravel(boundary_values)
    v = np.zeros(dom.n_nodes)
    v[edge] = bv[edge]
    K = op.K
    rhs = -(K[inner][:, edge] @ v[edge])
    v[inner] = spsolve(K[inner][:, inner].tocsc(), rhs)
    return v.reshape(dom.shape)


def green_scale(us: DirichletSolve, ws: DirichletSolve) -> float:
    """Data scale ``|u|_{H1} |w|_{H1} + |F1| |w| + |F2| |u|`` for relative Green residuals."""
    dom = us.operator.domain
    G1 = gram(dom, "H1", "D2")
    h = dom.h

    def h1(s):
        return G1.norm(s.u.ravel()[G1.nodes])

    def l2(x):
        return h * float(np.linalg.norm(np.ravel(x)))

    return h1(us) * h1(ws) + l2(us.source) * l2(ws.u) + l2(ws.source) * l2(us.u)


def h1_constant(op: DirichletOperator, h_values: np.ndarray) -> float:
    """Measured ratio ``||w||_{H^1(D2)} / ||h||_{L^2(D1)}`` for the dual problem."""
    dom = op.domain
    w = dual_source_solve(op, h_values)
    G1 = gram(dom, "H1", "D2")
    L2 = gram(dom, "L2", "D1")
    hv = np.asarray(h_values, dtype=float)
    hvec = hv[dom.region_nodes("D1")] if hv.shape == dom.shape else hv
    return G1.norm(w.u.ravel()[G1.nodes]) / L2.norm(hvec)
