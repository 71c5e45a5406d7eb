"""Local Dirichlet-to-Neumann maps of ``-Δ + q`` and the potential-stability experiment.

The grid operator ``div(a grad u) + c u`` is used with ``a = 1`` and
``c = -q``.  The DtN matrix is the Schur complement of the stiffness form
onto the loop nodes, restricted to Γ and divided by ``h`` so that its output
is a nodal conormal trace paired with the arclength weight ``h``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .elliptic import Coefficients, DirichletOperator, bump
from .errors import ConfigurationError, NumericalError, PreconditionError, SolvabilityError
from .fitting import fit
from .geometry import GridDomain, Rect, SobolevGram, gamma_gram, snap_rect

SYMMETRY_TOL = 1e-9
PAD_FACTOR = 4


@dataclass(frozen=True, eq=False)
class Potential:
    q: np.ndarray
    M: float
    support_region: Rect
    name: str = "q"

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if not np.all(np.isfinite(q)):
            raise ConfigurationError(f"potential {self.name} has non-finite values")
        if np.abs(q).max(initial=0.0) > self.M * (1 + 1e-12):
            raise ConfigurationError(f"potential {self.name} exceeds its bound M = {self.M}")


def make_potential(domain: GridDomain, q: np.ndarray, support=None, M: float | None = None, name: str = "q") -> Potential:
    q = np.asarray(q, dtype=float)
    if q.shape != domain.shape:
        raise ConfigurationError(f"potential {name} must have grid shape {domain.shape}")
    rect = domain.D1 if support is None else support if isinstance(support, Rect) else snap_rect(support, domain.N)
    M = float(np.abs(q).max(initial=0.0)) if M is None else float(M)
    return Potential(q, M, rect, name)


def potential_preset(domain: GridDomain, name: str, support=None, height: float = 1.0, **params) -> Potential:
    """Named potentials: ``zero``, ``bump``, ``two-bumps`` and ``checkerboard-in-support``."""
    rect = domain.D1 if support is None else support if isinstance(support, Rect) else snap_rect(support, domain.N)
    if name == "zero":
        q = np.zeros(domain.shape)
    elif name == "bump":
        q = bump(domain, rect, height)
    elif name == "two-bumps":
        mid = (rect.i0 + rect.i1) // 2
        left = Rect(rect.i0, mid, rect.j0, rect.j1)
        right = Rect(mid, rect.i1, rect.j0, rect.j1)
        q = bump(domain, left, height) - bump(domain, right, height)
    elif name in ("checkerboard-in-support", "checkerboard"):
        block = int(params.get("block", 2))
        i = np.arange(domain.shape[1])
        j = np.arange(domain.shape[0])
        sign = np.where(((j[:, None] // block) + (i[None, :] // block)) % 2 == 0, 1.0, -1.0)
        q = height * sign * domain.rect_nodes(rect)
        q[~domain.rect_interior_nodes(rect)] = 0.0
    else:
        raise ConfigurationError(f"unknown potential preset {name!r}")
    return make_potential(domain, q, rect, None, name)


def schrodinger_operator(domain: GridDomain, q: Potential) -> DirichletOperator:
    coeff = Coefficients(np.ones(domain.shape), -np.asarray(q.q, dtype=float), max(1.0, q.M))
    try:
        return DirichletOperator(domain, coeff)
    except SolvabilityError as exc:
        raise SolvabilityError(f"potential {q.name}: {exc}") from exc


@dataclass(frozen=True, eq=False)
class LocalDtN:
    """DtN matrix on Γ (nodal traces to nodal conormal values) with its norm Grams."""

    matrix: np.ndarray
    gram_in: SobolevGram
    gram_dual: SobolevGram
    domain: GridDomain = field(repr=False)
    symmetry_residual: float = 0.0

    def pairing_matrix(self) -> np.ndarray:
        return self.domain.h * self.matrix

    def with_grams(self, gram_in: SobolevGram | None = None, gram_dual: SobolevGram | None = None) -> "LocalDtN":
        return LocalDtN(
            self.matrix, gram_in or self.gram_in, gram_dual or self.gram_dual, self.domain, self.symmetry_residual
        )


def dtn_local(domain: GridDomain, q: Potential, threads: int = 1) -> LocalDtN:
    """Local DtN map of ``-Δ + q`` on Γ."""
    op = schrodinger_operator(domain, q)
    gamma = domain.gamma
    E = np.zeros((domain.n_boundary, len(gamma)))
    E[gamma, np.arange(len(gamma))] = 1.0
    U = np.zeros((domain.n_nodes, len(gamma)))
    U[op.boundary] = E
    U[op.interior] = op.solve_interior_many(np.zeros((len(op.interior), len(gamma))), E, threads=threads)
    loop_rows = op.K[op.boundary[gamma]]
    D = np.asarray(loop_rows @ U) / domain.h
    P = domain.h * D
    scale = np.abs(P).max(initial=0.0)
    sym = float(np.abs(P - P.T).max(initial=0.0) / scale) if scale > 0 else 0.0
    if sym > SYMMETRY_TOL:
        raise NumericalError(f"DtN map for {q.name} is not symmetric: residual {sym:.3e}")
    G = gamma_gram(domain)
    return LocalDtN(D, G, G, domain, sym)


def dtn_gap_norm(L1: LocalDtN, L2: LocalDtN) -> float:
    """Operator norm of ``L1 - L2`` from H^{1/2}(Γ) (``gram_in``) to the dual of ``gram_dual``.

    Equal to the largest singular value of ``R_d^{-1} (h D) R_i^{-T}`` with
    ``G = R R^T`` Cholesky factors.
    """
    if L1.matrix.shape != L2.matrix.shape or L1.domain.h != L2.domain.h:
        raise PreconditionError("DtN maps live on different grids or arcs")
    P = L1.domain.h * (L1.matrix - L2.matrix)
    if not np.any(P):
        return 0.0
    Ri = np.linalg.cholesky(L1.gram_in.matrix)
    Rd = np.linalg.cholesky(L1.gram_dual.matrix)
    B = sla.solve_triangular(Rd, P, lower=True)
    B = sla.solve_triangular(Ri, B.T, lower=True).T
    return float(np.linalg.norm(B, 2))


# --- H^{-1} distance ----------------------------------------------------------------


def trapezoid_weights(domain: GridDomain, rect: Rect) -> np.ndarray:
    """Tensor trapezoid weights of the closed rectangle on the grid (0 outside)."""
    w = np.zeros(domain.shape)
    wx = np.ones(rect.nx + 1)
    wy = np.ones(rect.ny + 1)
    wx[[0, -1]] = 0.5
    wy[[0, -1]] = 0.5
    i0, i1, j0, j1 = domain._local(rect)
    w[j0 : j1 + 1, i0 : i1 + 1] = np.outer(wy, wx)
    return w


def padded_h_minus_one(values: np.ndarray, h: float) -> float:
    """``(sum_k |c_k|^2 / (1 + |k|^2))^{1/2}`` for samples on a periodic box of spacing ``h``.

    ``c_k`` are the coefficients in the L2-orthonormal exponential basis of the
    box, so that ``sum_k |c_k|^2 = h^2 sum |values|^2``.
    """
    v = np.asarray(values)
    My, Mx = v.shape
    c = np.fft.fft2(v) * h / np.sqrt(Mx * My)
    ky = 2 * np.pi * np.fft.fftfreq(My, d=h)
    kx = 2 * np.pi * np.fft.fftfreq(Mx, d=h)
    k2 = ky[:, None] ** 2 + kx[None, :] ** 2
    return float(np.sqrt(np.sum(np.abs(c) ** 2 / (1.0 + k2))))


def _weighted_difference(q1: Potential, q2: Potential, domain: GridDomain, support: Rect | None):
    rect = support or q1.support_region
    diff = np.asarray(q1.q, dtype=float) - np.asarray(q2.q, dtype=float)
    outside = ~domain.rect_nodes(rect)
    if np.any(diff[outside] != 0.0):
        raise PreconditionError(
            f"q1 - q2 is nonzero outside the support rectangle {rect.bounds(domain.N)} "
            f"(max {np.abs(diff[outside]).max():.3e})"
        )
    return diff * trapezoid_weights(domain, rect)


def h_minus_one_distance(q1: Potential, q2: Potential, domain: GridDomain, support: Rect | None = None) -> float:
    """H^{-1}(R^2) norm of the zero extension of ``q1 - q2`` via a padded periodic box.

    The difference is integrated with trapezoid weights over the support
    rectangle; D2 is then padded with ``PAD_FACTOR`` side lengths of zeros.
    """
    w = _weighted_difference(q1, q2, domain, support)
    ny, nx = w.shape
    box = np.zeros(((PAD_FACTOR + 1) * (ny - 1), (PAD_FACTOR + 1) * (nx - 1)))
    box[:ny, :nx] = w
    return padded_h_minus_one(box, domain.h)


def l2_distance(q1: Potential, q2: Potential, domain: GridDomain, support: Rect | None = None) -> float:
    """Discrete L2 norm of ``q1 - q2`` with the same quadrature as :func:`h_minus_one_distance`."""
    w = _weighted_difference(q1, q2, domain, support)
    return float(domain.h * np.sqrt(np.sum(w**2)))


# --- stability sweep ---------------------------------------------------------------


RELATIVE_RESIDUAL_TOL = 0.25


def stability_sweep(
    domain: GridDomain,
    q1: Potential,
    perturbation: np.ndarray,
    t_values,
    support: Rect | None = None,
    threads: int = 1,
) -> dict:
    """DtN gap and H^{-1} potential distance along ``q2 = q1 + t * perturbation``.

    Fits ``y = C |log x|^{-sigma}`` over points with ``0 < x < 1``; reports the
    least-squares fit, the smallest ``C`` making it an upper envelope of the
    data and the maximal relative residual of the least-squares fit.
    """
    rect = support or q1.support_region
    pert = np.asarray(perturbation, dtype=float)
    if np.any(pert[~domain.rect_nodes(rect)] != 0.0):
        raise PreconditionError("perturbation is not supported in the support rectangle")
    L1 = dtn_local(domain, q1, threads)
    rows = []
    for t in t_values:
        t = float(t)
        q2 = Potential(q1.q + t * pert, q1.M + abs(t) * np.abs(pert).max(initial=0.0), rect, f"q1+{t:g}*dq")
        row = {"t": t, "dtn_gap": 0.0, "h_minus_one": 0.0, "symmetry": L1.symmetry_residual, "status": "ok"}
        if t == 0.0:
            row["status"] = "excluded"
            rows.append(row)
            continue
        try:
            L2 = dtn_local(domain, q2, threads)
        except SolvabilityError as exc:
            row.update(status="skipped", dtn_gap=float("nan"), h_minus_one=float("nan"), note=str(exc))
            rows.append(row)
            continue
        x = dtn_gap_norm(L1, L2)
        row.update(dtn_gap=x, h_minus_one=h_minus_one_distance(q1, q2, domain, rect), symmetry=L2.symmetry_residual)
        if x >= 1.0:
            row["status"] = "gap>1"
        rows.append(row)

    usable = [r for r in rows if r["status"] == "ok" and r["dtn_gap"] > 0]
    x = np.array([r["dtn_gap"] for r in usable])
    y = np.array([r["h_minus_one"] for r in usable])
    res = fit(x, y, "log-modulus")
    out = {"rows": rows, "fit": res, "envelope_C": None, "relative_residual": None}
    for r in rows:
        r["log_dtn_gap"] = float(np.log(r["dtn_gap"])) if r["dtn_gap"] > 0 else float("nan")
        r["fitted_omega"] = float("nan")
    if res.params is not None:
        C, sigma = res.params
        shape = np.abs(np.log(x)) ** (-sigma)
        out["envelope_C"] = float(np.max(y / shape))
        out["relative_residual"] = float(np.max(np.abs(res.predict(x) - y) / y))
        for r in usable:
            r["fitted_omega"] = float(res.predict(r["dtn_gap"]))
    ordered = sorted(usable, key=lambda r: -r["t"])
    xs = [r["dtn_gap"] for r in ordered]
    ys = [r["h_minus_one"] for r in ordered]
    out["x_decreasing"] = bool(all(b < a for a, b in zip(xs, xs[1:])))
    out["y_decreasing"] = bool(all(b < a for a, b in zip(ys, ys[1:])))
    out["max_symmetry"] = float(max((r["symmetry"] for r in rows), default=0.0))
    out["passed"] = bool(
        out["x_decreasing"]
        and out["y_decreasing"]
        and res.params is not None
        and res.params[1] > 0
        and out["relative_residual"] <= RELATIVE_RESIDUAL_TOL
        and out["max_symmetry"] <= SYMMETRY_TOL
    )
    return out


SWEEP_COLUMNS = ("t", "dtn_gap", "h_minus_one", "log_dtn_gap", "fitted_omega", "status")


def write_sweep_csv(rows, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([repr(float(r[k])) for k in SWEEP_COLUMNS[:-1]] + [r["status"]])


# --- complex geometric optics vectors ------------------------------------------------


@dataclass(frozen=True)
class CGOVectors:
    k: np.ndarray
    l: np.ndarray
    m: np.ndarray
    tau: float
    rho1: np.ndarray
    rho2: np.ndarray

    def self_products(self) -> tuple[complex, complex]:
        """Bilinear ``rho_j . rho_j`` (no conjugation); zero means ``exp(x . rho_j)`` is harmonic."""
        return complex(self.rho1 @ self.rho1), complex(self.rho2 @ self.rho2)

    def exponent_sum(self) -> np.ndarray:
        return self.rho1 + self.rho2


FRAME_TOL = 1e-12


def cgo_vectors(k, l, m, tau: float) -> CGOVectors:
    """``rho_{1,2} = ±tau m + i(-k/2 ± s l)`` with ``s = sqrt(tau^2 - |k|^2/4)``."""
    k, l, m = (np.asarray(v, dtype=float) for v in (k, l, m))
    if not (k.shape == l.shape == m.shape == (3,)):
        raise PreconditionError("k, l, m must be vectors in R^3")
    checks = {"k.l": k @ l, "k.m": k @ m, "l.m": l @ m, "|l|-1": l @ l - 1, "|m|-1": m @ m - 1}
    scale = max(1.0, float(np.linalg.norm(k)))
    bad = {name: v for name, v in checks.items() if abs(v) > FRAME_TOL * scale}
    if bad:
        raise PreconditionError(f"frame is not orthonormal/orthogonal to k: {bad}")
    kk = float(k @ k)
    # tau = |k|/2 up to rounding is the degenerate admissible case s = 0
    if tau < np.sqrt(kk) / 2 * (1 - FRAME_TOL):
        raise PreconditionError(f"tau = {tau} is below |k|/2 = {np.sqrt(kk) / 2}")
    s = np.sqrt(max(tau**2 - kk / 4, 0.0))
    rho1 = tau * m + 1j * (-k / 2 + s * l)
    rho2 = -tau * m + 1j * (-k / 2 - s * l)
    return CGOVectors(k, l, m, float(tau), rho1, rho2)
