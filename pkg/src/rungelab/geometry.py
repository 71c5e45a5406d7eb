"""Nested rectangular grid domains and the discrete Sobolev norms built on them.

All fields live on the node lattice of the outer rectangle ``D2`` with mesh
width ``h = 1/N``.  Grid functions are stored as 2-D arrays of shape
``(ny + 1, nx + 1)`` indexed ``[j, i]`` with ``x = x0 + i*h`` and
``y = y0 + j*h``; flattening is row-major.  Boundary traces are vectors
over a boundary loop, ordered counterclockwise from the lower-left corner.

The boundary norm is spectral: with ``T`` the periodic second-difference
operator on the arclength-parametrized loop and ``(lam_k, e_k)`` its
eigenpairs, ``||g||^2 = sum_k (1 + sqrt(lam_k)) <g, e_k>^2`` where the
pairing ``<f, g> = h * sum(f * g)`` weights every loop node (corners
included) by ``h``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy import ndimage

from .errors import ConfigurationError

MIN_MARGIN_CELLS = 2

_SIDES = ("S", "E", "N", "W")


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle in global lattice indices (multiples of h)."""

    i0: int
    i1: int
    j0: int
    j1: int

    @property
    def nx(self) -> int:
        return self.i1 - self.i0

    @property
    def ny(self) -> int:
        return self.j1 - self.j0

    def bounds(self, N: int) -> tuple[float, float, float, float]:
        return (self.i0 / N, self.i1 / N, self.j0 / N, self.j1 / N)

    def margin_inside(self, outer: "Rect") -> int:
        """Smallest cell gap between this rectangle and the boundary of ``outer``."""
        return min(self.i0 - outer.i0, outer.i1 - self.i1, self.j0 - outer.j0, outer.j1 - self.j1)

    def expanded_towards(self, outer: "Rect") -> "Rect":
        """Rectangle halfway (in cells, rounded down) between self and outer."""
        return Rect(
            (self.i0 + outer.i0) // 2,
            -((-(self.i1 + outer.i1)) // 2),
            (self.j0 + outer.j0) // 2,
            -((-(self.j1 + outer.j1)) // 2),
        )


def snap_rect(bounds: Sequence[float], N: int) -> Rect:
    """Snap ``[xmin, xmax, ymin, ymax]`` outward onto the lattice of width 1/N."""
    if len(bounds) != 4:
        raise ConfigurationError(f"rectangle needs 4 numbers [xmin, xmax, ymin, ymax], got {list(bounds)}")
    xmin, xmax, ymin, ymax = (float(b) for b in bounds)
    if not (0.0 <= xmin < xmax <= 1.0 and 0.0 <= ymin < ymax <= 1.0):
        raise ConfigurationError(f"rectangle {list(bounds)} is not a nonempty subset of the unit square")
    tol = 1e-9
    return Rect(
        int(np.floor(xmin * N + tol)),
        int(np.ceil(xmax * N - tol)),
        int(np.floor(ymin * N + tol)),
        int(np.ceil(ymax * N - tol)),
    )


@dataclass(frozen=True, eq=False)
class GridDomain:
    """Nested rectangles ``D1 ⋐ Dtilde ⋐ D2`` on a uniform grid plus an arc ``gamma``.

    ``gamma`` holds indices into the boundary loop of ``D2``.
    """

    N: int
    D2: Rect
    D1: Rect
    Dtilde: Rect
    gamma: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def shape(self) -> tuple[int, int]:
        return (self.D2.ny + 1, self.D2.nx + 1)

    @property
    def n_nodes(self) -> int:
        return (self.D2.ny + 1) * (self.D2.nx + 1)

    @cached_property
    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinate arrays ``(X, Y)`` of shape :attr:`shape`."""
        x = (self.D2.i0 + np.arange(self.D2.nx + 1)) / self.N
        y = (self.D2.j0 + np.arange(self.D2.ny + 1)) / self.N
        return np.meshgrid(x, y)

    def _local(self, r: Rect) -> tuple[int, int, int, int]:
        return (r.i0 - self.D2.i0, r.i1 - self.D2.i0, r.j0 - self.D2.j0, r.j1 - self.D2.j0)

    def rect(self, name: str) -> Rect:
        if name == "D2":
            return self.D2
        if name == "D1":
            return self.D1
        if name == "Dtilde":
            return self.Dtilde
        if name == "U":
            return self.outer_buffer
        raise ConfigurationError(f"unknown rectangle {name!r}")

    @cached_property
    def outer_buffer(self) -> Rect:
        """Rectangle U with Dtilde ⋐ U ⋐ D2, used to build the annulus G = U minus Dtilde."""
        u = self.Dtilde.expanded_towards(self.D2)
        if u.margin_inside(self.D2) < 1 or self.Dtilde.margin_inside(u) < 1:
            raise ConfigurationError("no room for a rectangle strictly between Dtilde and D2")
        return u

    # --- node and cell masks -------------------------------------------------

    def rect_nodes(self, r: Rect) -> np.ndarray:
        """Boolean node mask of the closed rectangle ``r``."""
        i0, i1, j0, j1 = self._local(r)
        m = np.zeros(self.shape, dtype=bool)
        m[j0 : j1 + 1, i0 : i1 + 1] = True
        return m

    def rect_cells(self, r: Rect) -> np.ndarray:
        """Boolean cell mask (shape ``(ny, nx)``) of the cells covering ``r``."""
        i0, i1, j0, j1 = self._local(r)
        m = np.zeros((self.D2.ny, self.D2.nx), dtype=bool)
        m[j0:j1, i0:i1] = True
        return m

    @cached_property
    def interior_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[1:-1, 1:-1] = True
        return m

    def region_cells(self, region: str) -> np.ndarray:
        """Cells of a named region.

        Regions: ``D2``, ``D1``, ``Dtilde``, ``U``, ``annulus`` (D2 minus D1)
        and ``G`` (U minus Dtilde).
        """
        if region in ("D2", "D1", "Dtilde", "U"):
            return self.rect_cells(self.rect(region))
        if region == "annulus":
            return self.rect_cells(self.D2) & ~self.rect_cells(self.D1)
        if region == "G":
            return self.rect_cells(self.outer_buffer) & ~self.rect_cells(self.Dtilde)
        raise ConfigurationError(f"unknown region {region!r}")

    def region_nodes(self, region: str) -> np.ndarray:
        """Node mask of a named region (nodes touching at least one region cell)."""
        if region == "D2_interior":
            return self.interior_mask.copy()
        cells = self.region_cells(region)
        m = np.zeros(self.shape, dtype=bool)
        m[:-1, :-1] |= cells
        m[1:, :-1] |= cells
        m[:-1, 1:] |= cells
        m[1:, 1:] |= cells
        return m

    def rect_interior_nodes(self, r: Rect) -> np.ndarray:
        i0, i1, j0, j1 = self._local(r)
        m = np.zeros(self.shape, dtype=bool)
        m[j0 + 1 : j1, i0 + 1 : i1] = True
        return m

    # --- boundary loops --------------------------------------------------------

    def loop(self, r: Rect | str = "D2") -> np.ndarray:
        """Flat node indices of the boundary loop of ``r``, counterclockwise from the lower-left corner."""
        if isinstance(r, str):
            r = self.rect(r)
        i0, i1, j0, j1 = self._local(r)
        ncol = self.D2.nx + 1
        south = [(j0, i) for i in range(i0, i1)]
        east = [(j, i1) for j in range(j0, j1)]
        north = [(j1, i) for i in range(i1, i0, -1)]
        west = [(j, i0) for j in range(j1, j0, -1)]
        return np.array([j * ncol + i for j, i in south + east + north + west], dtype=np.intp)

    @cached_property
    def boundary(self) -> np.ndarray:
        return self.loop(self.D2)

    @property
    def n_boundary(self) -> int:
        return len(self.boundary)

    @cached_property
    def corner_positions(self) -> np.ndarray:
        """Loop positions of the four corners of D2."""
        nx, ny = self.D2.nx, self.D2.ny
        return np.array([0, nx, nx + ny, 2 * nx + ny])

    def gamma_mask(self) -> np.ndarray:
        m = np.zeros(self.n_boundary, dtype=bool)
        m[self.gamma] = True
        return m

    def embed_gamma(self, g_gamma: np.ndarray) -> np.ndarray:
        """Extend Γ-coefficients by zero to the whole boundary loop."""
        g = np.zeros(self.n_boundary)
        g[self.gamma] = g_gamma
        return g

    def trace_to_grid(self, trace: np.ndarray) -> np.ndarray:
        """Place loop values on a zero grid array."""
        u = np.zeros(self.n_nodes)
        u[self.boundary] = trace
        return u.reshape(self.shape)


def _gamma_indices(nx: int, ny: int, side: str, fraction: float) -> np.ndarray:
    nb = 2 * (nx + ny)
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError(f"gamma fraction must lie in (0, 1], got {fraction}")
    if side == "full":
        count = max(1, int(round(fraction * nb)))
        return np.arange(count)
    if side not in _SIDES:
        raise ConfigurationError(f"gamma side must be one of N/S/E/W/full, got {side!r}")
    lengths = {"S": nx, "E": ny, "N": nx, "W": ny}
    start = {"S": 0, "E": nx, "N": nx + ny, "W": 2 * nx + ny}[side]
    n_side = lengths[side]
    count = max(1, int(round(fraction * n_side)))
    offset = (n_side - count) // 2
    return start + offset + np.arange(count)


def build_grid(
    N: int,
    layout: dict | None = None,
    gamma_fraction: float = 1.0,
    gamma_side: str = "full",
) -> GridDomain:
    """Build a :class:`GridDomain`.

    Parameters
    ----------
    N : int
        Cells per unit side; must be at least 16.
    layout : dict, optional
        Keys ``D2``, ``D1`` and optionally ``Dtilde``, each
        ``[xmin, xmax, ymin, ymax]`` in unit-square coordinates.  Rectangles are
        snapped outward onto the grid.  Defaults: ``D2`` the unit square,
        ``D1 = [3/8, 5/8]^2``, ``Dtilde`` halfway between them.
    gamma_fraction, gamma_side : float, str
        ``side="full"`` takes the first ``fraction`` of the loop of D2 starting
        at its lower-left corner; ``S/E/N/W`` takes a centered run on that side
        (a side run contains its starting corner, not its end corner).

    Raises
    ------
    ConfigurationError
        If a strict-inclusion margin is below two cells or N < 16.
    """
    layout = dict(layout or {})
    N = int(N)
    if N < 1:
        raise ConfigurationError(f"grid resolution must be positive, got {N}")
    D2 = snap_rect(layout.get("D2", [0.0, 1.0, 0.0, 1.0]), N)
    D1 = snap_rect(layout.get("D1", [0.375, 0.625, 0.375, 0.625]), N)
    if "Dtilde" in layout and layout["Dtilde"] is not None:
        Dt = snap_rect(layout["Dtilde"], N)
    else:
        Dt = D1.expanded_towards(D2)

    if D1.nx < 2 or D1.ny < 2:
        raise ConfigurationError("D1 must span at least 2 cells in each direction")
    m1 = D1.margin_inside(Dt)
    if m1 < MIN_MARGIN_CELLS:
        raise ConfigurationError(
            f"inclusion margin D1 ⋐ Dtilde is {m1} cells; at least {MIN_MARGIN_CELLS} required"
        )
    m2 = Dt.margin_inside(D2)
    if m2 < MIN_MARGIN_CELLS:
        raise ConfigurationError(
            f"inclusion margin Dtilde ⋐ D2 is {m2} cells; at least {MIN_MARGIN_CELLS} required"
        )
    if N < 16:
        raise ConfigurationError(f"grid resolution N must be at least 16, got {N}")

    gamma = _gamma_indices(D2.nx, D2.ny, gamma_side, float(gamma_fraction))
    dom = GridDomain(N=N, D2=D2, D1=D1, Dtilde=Dt, gamma=gamma)

    outside = dom.rect_nodes(D2) & ~dom.rect_nodes(D1)
    _, ncomp = ndimage.label(outside)
    if ncomp != 1:
        raise ConfigurationError("D2 minus closure(D1) is not connected")
    return dom


# --- Gram matrices ---------------------------------------------------------------


def stiffness_matrix(domain: GridDomain, cells: np.ndarray, a: np.ndarray | None = None) -> sp.csr_matrix:
    """Five-point stiffness form restricted to a set of cells.

    Each grid edge carries weight ``a_e * (number of adjacent cells in the set) / 2``
    with ``a_e`` the average of ``a`` over its two end nodes.  Over all cells of
    D2 this is the flux-form five-point Laplacian with half weights on boundary
    edges.
    """
    ny1, nx1 = domain.shape
    if a is None:
        a = np.ones((ny1, nx1))
    idx = np.arange(ny1 * nx1).reshape(ny1, nx1)
    cellw = cells.astype(float)

    # horizontal edges (j, i)-(j, i+1): cells (j-1, i) below, (j, i) above
    wh = np.zeros((ny1, nx1 - 1))
    wh[:-1, :] += cellw
    wh[1:, :] += cellw
    wh *= 0.5 * 0.5 * (a[:, :-1] + a[:, 1:])
    # vertical edges (j, i)-(j+1, i): cells (j, i-1) left, (j, i) right
    wv = np.zeros((ny1 - 1, nx1))
    wv[:, :-1] += cellw
    wv[:, 1:] += cellw
    wv *= 0.5 * 0.5 * (a[:-1, :] + a[1:, :])

    p = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    q = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    w = np.concatenate([wh.ravel(), wv.ravel()])
    keep = w != 0.0
    p, q, w = p[keep], q[keep], w[keep]
    n = ny1 * nx1
    off = sp.coo_matrix((-w, (p, q)), shape=(n, n))
    diag = np.bincount(p, w, minlength=n) + np.bincount(q, w, minlength=n)
    return (off + off.T + sp.diags(diag)).tocsr()


def cell_mass(domain: GridDomain, cells: np.ndarray) -> np.ndarray:
    """Lumped P1 node masses ``h^2 * (adjacent cells in the set) / 4`` as a grid array."""
    c = cells.astype(float)
    m = np.zeros(domain.shape)
    m[:-1, :-1] += c
    m[1:, :-1] += c
    m[:-1, 1:] += c
    m[1:, 1:] += c
    return m * domain.h**2 / 4.0


def loop_laplacian(nb: int, h: float) -> np.ndarray:
    """Periodic second-difference operator ``-d^2/ds^2`` on a loop of ``nb`` nodes."""
    T = 2.0 * np.eye(nb) - np.roll(np.eye(nb), 1, axis=0) - np.roll(np.eye(nb), -1, axis=0)
    return T / h**2


def loop_sqrt_laplacian(nb: int, h: float) -> np.ndarray:
    """Circulant square root of :func:`loop_laplacian` built from its exact symbol."""
    k = np.arange(nb)
    lam = 4.0 / h**2 * np.sin(np.pi * k / nb) ** 2
    col = np.fft.ifft(np.sqrt(lam)).real
    col = 0.5 * (col + np.roll(col[::-1], 1))
    return sla.circulant(col)


@dataclass(frozen=True, eq=False)
class SobolevGram:
    """Symmetric positive-definite Gram matrix on a nodal basis.

    ``nodes`` are flat node indices (interior orders) or loop positions
    (boundary order).  ``spectral_data`` holds ``(lam, vectors)`` of the loop
    Laplacian for the boundary order, vectors orthonormal in the arclength
    pairing.
    """

    order: str
    matrix: np.ndarray
    nodes: np.ndarray
    h: float
    spectral_data: tuple[np.ndarray, np.ndarray] | None = None

    def norm(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(v @ self.matrix @ v, 0.0)))

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(u @ self.matrix @ v)

    def restrict(self, positions: np.ndarray) -> "SobolevGram":
        """Gram of the subspace spanned by the basis functions at ``positions``."""
        positions = np.asarray(positions)
        return SobolevGram(
            self.order,
            self.matrix[np.ix_(positions, positions)],
            self.nodes[positions],
            self.h,
            self.spectral_data,
        )


def gram(domain: GridDomain, order: str, region: str = "D2") -> SobolevGram:
    """Gram matrix of a discrete Sobolev norm.

    ``order`` is ``"L2"`` (lumped ``h^2`` per node), ``"H1"`` (L2 part plus the
    five-point stiffness form over the region's cells) or ``"Hhalf"`` (spectral
    boundary norm; ``region`` names the rectangle whose loop is used).
    """
    h = domain.h
    if order in ("L2", "H1"):
        if region == "D2_interior":
            mask = domain.interior_mask
            cells = domain.region_cells("D2")
        else:
            mask = domain.region_nodes(region)
            cells = domain.region_cells(region)
        nodes = np.flatnonzero(mask.ravel())
        M = h**2 * np.eye(len(nodes))
        if order == "H1":
            S = stiffness_matrix(domain, cells)
            M = M + S[nodes][:, nodes].toarray()
        return SobolevGram(order, M, nodes, h)
    if order == "Hhalf":
        try:
            loop = domain.loop(region)
        except ConfigurationError:
            raise ConfigurationError(f"boundary order needs a rectangle loop, got region {region!r}") from None
        nb = len(loop)
        G = h * (np.eye(nb) + loop_sqrt_laplacian(nb, h))
        G = 0.5 * (G + G.T)
        lam, Q = np.linalg.eigh(loop_laplacian(nb, h))
        lam = np.clip(lam, 0.0, None)
        return SobolevGram("Hhalf", G, np.arange(nb), h, (lam, Q / np.sqrt(h)))
    raise ConfigurationError(f"unknown norm order {order!r}")


def boundary_gram(domain: GridDomain) -> SobolevGram:
    return gram(domain, "Hhalf", "D2")


def gamma_gram(domain: GridDomain) -> SobolevGram:
    """H^{1/2} Gram of the traces supported in Γ (ambient norm of the D2 loop)."""
    return boundary_gram(domain).restrict(domain.gamma)


def pairing(f: np.ndarray, g: np.ndarray, h: float) -> float:
    """Arclength-weighted pairing of two loop traces."""
    return float(h * np.dot(f, g))


def dual_norm_on_gamma(f: np.ndarray, domain: GridDomain, gram_gamma: SobolevGram | None = None) -> float:
    """H^{-1/2}(Γ) norm of the functional ``g -> <f, g>`` over traces supported in Γ."""
    G = gram_gamma if gram_gamma is not None else gamma_gram(domain)
    b = domain.h * np.asarray(f, dtype=float)[domain.gamma]
    if not np.any(b):
        return 0.0
    c = sla.cho_factor(G.matrix)
    return float(np.sqrt(max(b @ sla.cho_solve(c, b), 0.0)))


def riesz_functional(g_gamma: np.ndarray, domain: GridDomain) -> np.ndarray:
    """Loop trace ``f`` with ``<f, v> = (g, v)_{H^{1/2}}`` for every v supported in Γ."""
    G = boundary_gram(domain).matrix
    return G @ domain.embed_gamma(g_gamma) / domain.h


class DomainNorms:
    """Lazily built Gram matrices used repeatedly by the experiments."""

    def __init__(self, domain: GridDomain):
        self.domain = domain

    @cached_property
    def d1_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.domain.region_nodes("D1").ravel())

    @cached_property
    def l2_d1(self) -> SobolevGram:
        return gram(self.domain, "L2", "D1")

    @cached_property
    def h1_d1(self) -> SobolevGram:
        return gram(self.domain, "H1", "D1")

    @cached_property
    def h1_dtilde(self) -> SobolevGram:
        return gram(self.domain, "H1", "Dtilde")

    @cached_property
    def h1_annulus(self) -> SobolevGram:
        return gram(self.domain, "H1", "annulus")

    @cached_property
    def h1_g(self) -> SobolevGram:
        return gram(self.domain, "H1", "G")

    @cached_property
    def h1_d2(self) -> SobolevGram:
        return gram(self.domain, "H1", "D2")

    @cached_property
    def hhalf(self) -> SobolevGram:
        return boundary_gram(self.domain)

    @cached_property
    def hhalf_gamma(self) -> SobolevGram:
        return self.hhalf.restrict(self.domain.gamma)

    @cached_property
    def _gamma_cho(self):
        return sla.cho_factor(self.hhalf_gamma.matrix)

    def dual_gamma(self, f: np.ndarray) -> float:
        """H^{-1/2}(Γ) norm of a loop trace (see :func:`dual_norm_on_gamma`)."""
        b = self.domain.h * np.asarray(f, dtype=float)[self.domain.gamma]
        return float(np.sqrt(max(b @ sla.cho_solve(self._gamma_cho, b), 0.0)))

    def field_norm(self, g: SobolevGram, values: np.ndarray) -> float:
        """Norm of a grid array under a region Gram."""
        return g.norm(np.ravel(values)[g.nodes])
