"""The restriction operator ``A: g -> u|_{D1}``, its singular system and the spectral cutoff.

``A`` maps Γ-supported boundary data (nodal coefficients, H^{1/2} Gram
``gram_in``) to the restriction to closed D1 of the discrete solution of
``L u = 0`` (lumped L2 Gram ``gram_out``).  Its Banach adjoint sends ``h`` to
the conormal derivative on Γ of the dual solution ``L* w = h 1_{D1}``; the
Hilbert adjoint is the Gram-weighted transpose ``G_in^{-1} A^T G_out``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import least_squares
from scipy.stats import spearmanr

from .elliptic import DirichletOperator, conormal_derivative, dual_source_solve, solve_in_rect
from .errors import NumericalError, PreconditionError
from .fitting import linear_slope
from .geometry import DomainNorms, SobolevGram, pairing
from .pareto import cutoff_cost, exponent_fits, pareto_series

log = logging.getLogger(__name__)

RANK_RTOL = 1e-12
ADJOINT_TOL = 1e-8
SOLUTION_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class RestrictionOperator:
    matrix: np.ndarray
    gram_in: SobolevGram
    gram_out: SobolevGram
    operator: DirichletOperator = field(repr=False)
    norms: DomainNorms = field(repr=False)
    checks: dict = field(default_factory=dict)

    @property
    def domain(self):
        return self.operator.domain

    @property
    def coeff(self):
        return self.operator.coeff

    def apply(self, g_gamma: np.ndarray) -> np.ndarray:
        return self.matrix @ g_gamma

    def banach_adjoint(self, h: np.ndarray) -> np.ndarray:
        """Conormal trace of the dual solution on the whole loop of D2 (``A'h`` restricted to Γ is its Γ part)."""
        return conormal_derivative(dual_source_solve(self.operator, h))

    def hilbert_adjoint(self, h: np.ndarray) -> np.ndarray:
        """``A* h = G_in^{-1} A^T G_out h`` as Γ coefficients."""
        return np.linalg.solve(self.gram_in.matrix, self.matrix.T @ (self.gram_out.matrix @ h))


def adjoint_discrepancy(A: RestrictionOperator, g: np.ndarray, h: np.ndarray) -> float:
    """Relative gap between ``(Ag, h)_{L2(D1)}`` and ``<g, ∂ν w>`` on the boundary of D2."""
    lhs = A.gram_out.inner(A.apply(g), h)
    dw = A.banach_adjoint(h)
    rhs = pairing(A.domain.embed_gamma(g), dw, A.domain.h)
    scale = A.gram_in.norm(g) * A.gram_out.norm(h) + abs(lhs)
    return abs(lhs - rhs) / scale if scale > 0 else abs(lhs - rhs)


def assemble_A(op: DirichletOperator, threads: int = 1, seed: int = 0, n_checks: int = 3) -> RestrictionOperator:
    """Assemble the matrix of ``A`` column by column and verify its defining identities.

    Column ``j`` is the D1 restriction of the solution with boundary data the
    ``j``-th Γ nodal basis trace.
    """
    dom = op.domain
    norms = DomainNorms(dom)
    E = np.zeros((dom.n_boundary, len(dom.gamma)))
    E[dom.gamma, np.arange(len(dom.gamma))] = 1.0
    F0 = np.zeros((len(op.interior), E.shape[1]))
    U = np.zeros((dom.n_nodes, E.shape[1]))
    U[op.boundary] = E
    U[op.interior] = op.solve_interior_many(F0, E, threads=threads)
    matrix = U[norms.d1_nodes]
    A = RestrictionOperator(matrix, norms.hhalf_gamma, norms.l2_d1, op, norms)

    rng = np.random.default_rng(seed)
    j = int(rng.integers(len(dom.gamma)))
    col = op.solve(None, E[:, j]).u.ravel()[norms.d1_nodes]
    column_gap = float(np.abs(col - matrix[:, j]).max())
    gaps = [
        adjoint_discrepancy(A, rng.standard_normal(len(dom.gamma)), rng.standard_normal(len(norms.d1_nodes)))
        for _ in range(n_checks)
    ]
    A.checks.update(column_gap=column_gap, adjoint_discrepancy=max(gaps))
    if max(gaps) > ADJOINT_TOL:
        raise NumericalError(f"adjoint identity violated: relative discrepancy {max(gaps):.3e}")
    return A


@dataclass(frozen=True, eq=False)
class SingularSystem:
    """Triples ``(sigma_j, phi_j, psi_j)`` with ``A phi_j = sigma_j psi_j``, sigma decreasing.

    ``phi`` columns are ``gram_in``-orthonormal, ``psi`` columns ``gram_out``-orthonormal.
    """

    sigma: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    op: RestrictionOperator = field(repr=False)
    discarded: int = 0

    @property
    def count(self) -> int:
        return len(self.sigma)

    def coefficients(self, h: np.ndarray) -> np.ndarray:
        return self.psi.T @ (self.op.gram_out.matrix @ h)

    def residuals(self) -> dict:
        A = self.op
        Gi, Go = A.gram_in.matrix, A.gram_out.matrix
        R = A.matrix @ self.phi - self.psi * self.sigma
        svd_res = float(np.sqrt(np.max(np.einsum("ij,ij->j", R, Go @ R), initial=0.0)))
        I = np.eye(self.count)
        return {
            "svd_residual": svd_res,
            "phi_orthonormality": float(np.abs(self.phi.T @ Gi @ self.phi - I).max(initial=0.0)),
            "psi_orthonormality": float(np.abs(self.psi.T @ Go @ self.psi - I).max(initial=0.0)),
        }


def singular_system(A: RestrictionOperator, rtol: float = RANK_RTOL) -> SingularSystem:
    """Singular system of ``A`` between the Γ H^{1/2} Gram and the L2(D1) Gram.

    Computed from the SVD of ``R_out^T A R_in^{-T}`` with ``G = R R^T`` the
    Cholesky factors; singular values below ``rtol * sigma_1`` are discarded.
    """
    try:
        Ri = np.linalg.cholesky(A.gram_in.matrix)
        Ro = np.linalg.cholesky(A.gram_out.matrix)
        B = Ro.T @ sla.solve_triangular(Ri, A.matrix.T, lower=True).T
        U, s, Vt = np.linalg.svd(B, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(A.gram_in.matrix)
        raise NumericalError(f"singular value decomposition failed ({exc}); cond(G_in) = {cond:.3e}") from exc
    keep = s > rtol * s[0]
    s, U, V = s[keep], U[:, keep], Vt[keep].T
    phi = sla.solve_triangular(Ri.T, V, lower=False)
    psi = sla.solve_triangular(Ro.T, U, lower=False)
    return SingularSystem(s, phi, psi, A, int((~keep).sum()))


# --- spectral cutoff -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CutoffApproximant:
    """``R_alpha h`` with its spectral residual.

    ``residual`` is ``r_alpha`` (the discarded singular components);
    ``approximation_error`` is the true ``||A R_alpha h - h||``, which also
    counts the part of ``h`` outside the retained singular vectors
    (``unresolved_norm``).
    """

    alpha: float
    beta: np.ndarray
    g_alpha: np.ndarray
    residual: np.ndarray
    boundary_norm: float
    residual_norm: float
    approximation_error: float
    unresolved_norm: float
    kept: int


def check_solution(A: RestrictionOperator, h: np.ndarray, tol: float = SOLUTION_TOL) -> float:
    """Relative residual of ``L h = 0`` at interior nodes of D1; raises if above ``tol``."""
    dom = A.domain
    grid = np.zeros(dom.n_nodes)
    grid[A.norms.d1_nodes] = h
    scale = A.operator.matrix_norm * max(np.abs(h).max(initial=0.0), 1e-300)
    rel = A.operator.equation_residual(grid, dom.D1) / scale
    if rel > tol:
        raise PreconditionError(f"h is not a discrete solution in D1 (relative residual {rel:.2e})")
    return rel


def spectral_cutoff(sys: SingularSystem, h: np.ndarray, alpha: float, check: bool = True) -> CutoffApproximant:
    """``R_alpha h = sum_{sigma_j >= alpha} beta_j / sigma_j phi_j``."""
    if alpha <= 0:
        raise PreconditionError(f"alpha must be positive, got {alpha}")
    h = np.asarray(h, dtype=float)
    if check:
        check_solution(sys.op, h)
    beta = sys.coefficients(h)
    on = sys.sigma >= alpha
    g = sys.phi[:, on] @ (beta[on] / sys.sigma[on])
    r = sys.psi[:, ~on] @ beta[~on]
    Go = sys.op.gram_out
    leftover = h - sys.psi @ beta
    approx = sys.op.apply(g) - h
    bnorm = float(np.sqrt(np.sum((beta[on] / sys.sigma[on]) ** 2)))
    hnorm = Go.norm(h)
    if bnorm > hnorm / alpha * (1 + 1e-10) + 1e-300:
        raise NumericalError("cutoff norm exceeds ||h|| / alpha")
    return CutoffApproximant(
        alpha=float(alpha),
        beta=beta,
        g_alpha=g,
        residual=r,
        boundary_norm=bnorm,
        residual_norm=float(np.sqrt(np.sum(beta[~on] ** 2))),
        approximation_error=Go.norm(approx),
        unresolved_norm=Go.norm(leftover),
        kept=int(on.sum()),
    )


def cost_curve(
    sys: SingularSystem,
    h: np.ndarray,
    epsilons,
    normalization: str = "D1",
    h_tilde: np.ndarray | None = None,
) -> dict:
    """Approximation cost ``M(eps)`` of ``h`` for each error threshold.

    ``normalization="D1"`` measures the error against ``||h||_{H^1(D1)}``;
    ``"Dtilde"`` against ``||h_tilde||_{H^1(Dtilde)}`` (``h_tilde`` is a grid
    array solving the equation in Dtilde with ``h`` its D1 restriction).
    """
    eps = np.asarray(epsilons, dtype=float)
    if np.any((eps <= 0) | (eps >= 1)):
        raise PreconditionError("every epsilon must lie in (0, 1)")
    A = sys.op
    norms = A.norms
    h = np.asarray(h, dtype=float)
    check_solution(A, h)
    h1_d1 = norms.h1_d1.norm(h)
    h1_dt = norms.field_norm(norms.h1_dtilde, h_tilde) if h_tilde is not None else None
    if normalization == "D1":
        ref = h1_d1
    elif normalization == "Dtilde":
        if h_tilde is None:
            raise PreconditionError("Dtilde normalization needs h_tilde")
        ref = h1_dt
    else:
        raise PreconditionError(f"normalization must be 'D1' or 'Dtilde', got {normalization!r}")
    beta = sys.coefficients(h)
    unresolved = A.gram_out.norm(h - sys.psi @ beta)
    rows = pareto_series(sys.sigma, beta, eps * ref, unresolved)
    for e, r in zip(eps, rows):
        r["epsilon"] = float(e)
    fits = exponent_fits(eps, [r["boundary_norm"] for r in rows], [r["saturated"] for r in rows])
    return {
        "rows": rows,
        "fits": fits,
        "h1_D1": h1_d1,
        "h1_Dtilde": h1_dt,
        "l2_D1": A.gram_out.norm(h),
        "unresolved": unresolved,
        "normalization": normalization,
    }


# --- unique continuation experiments ------------------------------------------------


def harmonic_polynomial(domain, degree: int, part: str = "re", center=None, scale=None) -> np.ndarray:
    """``Re`` or ``Im`` of ``((z - center)/scale)^degree`` on the grid."""
    X, Y = domain.coordinates
    if center is None:
        x0, x1, y0, y1 = domain.D1.bounds(domain.N)
        center = ((x0 + x1) / 2, (y0 + y1) / 2)
    if scale is None:
        x0, x1, y0, y1 = domain.D1.bounds(domain.N)
        scale = max(x1 - x0, y1 - y0) / 2
    z = ((X - center[0]) + 1j * (Y - center[1])) / scale
    p = z**degree
    return p.real if part == "re" else p.imag


def discrete_solution(op: DirichletOperator, values: np.ndarray, rect: str = "D1") -> np.ndarray:
    """Discrete solution in ``rect`` matching ``values`` on its boundary (grid array)."""
    return solve_in_rect(op, op.domain.rect(rect), values)


def ucp_log_ratio(op: DirichletOperator, h: np.ndarray, norms: DomainNorms | None = None) -> dict:
    """Norms entering the logarithmic and Hölder unique continuation estimates.

    ``h`` is a vector over closed-D1 nodes.  Returns ``||w||_{H^1(D2 minus D1)}``,
    ``||h||_{L2(D1)}``, ``||∂ν w||_{H^{-1/2}(Γ)}`` and ``||w||_{H^1(G)}``.
    """
    norms = norms or DomainNorms(op.domain)
    h = np.asarray(h, dtype=float)
    hl2 = norms.l2_d1.norm(h)
    if hl2 == 0.0:
        return {"w_h1_annulus": 0.0, "h_l2": 0.0, "dnw_dual": 0.0, "w_h1_G": 0.0}
    w = dual_source_solve(op, h)
    dn = conormal_derivative(w)
    return {
        "w_h1_annulus": norms.field_norm(norms.h1_annulus, w.u),
        "h_l2": hl2,
        "dnw_dual": norms.dual_gamma(dn),
        "w_h1_G": norms.field_norm(norms.h1_g, w.u),
    }


def fit_log_modulus_ucp(x, y) -> dict:
    """Fit ``y = C / log(C / x)^mu`` (x, y normalized by ||h||) by nonlinear least squares.

    Reports the parameter covariance condition; a two-constant model is
    flagged non-identifiable when the data cannot separate ``C`` and ``mu``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0)
    x, y = x[ok], y[ok]
    if len(x) < 4:
        return {"status": "insufficient data", "C": None, "mu": None, "residual": None}
    lx, ly = np.log(x), np.log(y)
    logc_min = float(np.max(lx)) + 1e-6

    def resid(p):
        logc, mu = p
        return ly - (logc - mu * np.log(logc - lx))

    p0 = np.array([max(logc_min + 1.0, 1.0), 1.0])
    sol = least_squares(resid, p0, bounds=([logc_min, 0.0], [np.inf, np.inf]))
    J = sol.jac
    sv = np.linalg.svd(J, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    return {
        "status": "ok" if cond < 1e6 else "non-identifiable",
        "C": float(np.exp(sol.x[0])),
        "mu": float(sol.x[1]),
        "residual": float(np.sqrt(np.mean(sol.fun**2))),
        "jacobian_condition": cond,
    }


def ucp_family(
    op: DirichletOperator, degrees=range(9), parts=("re",), norms: DomainNorms | None = None
) -> dict:
    """Unique continuation ratios over harmonic polynomials of the given degrees on D1.

    By default one member per degree, ``Re ((z - c)/s)^l``; pass
    ``parts=("re", "im")`` to include the conjugate family as well.
    """
    norms = norms or DomainNorms(op.domain)
    rows = []
    for l in degrees:
        for part in parts if l > 0 else ("re",):
            hv = discrete_solution(op, harmonic_polynomial(op.domain, l, part)).ravel()[norms.d1_nodes]
            r = ucp_log_ratio(op, hv, norms)
            r.update(degree=int(l), part=part)
            rows.append(r)
    x = np.array([r["dnw_dual"] / r["h_l2"] for r in rows])
    y_ann = np.array([r["w_h1_annulus"] / r["h_l2"] for r in rows])
    y_g = np.array([r["w_h1_G"] / r["h_l2"] for r in rows])
    rho = float(spearmanr(x, y_ann).statistic)
    delta, icpt, res = linear_slope(np.log(x), np.log(y_g))
    return {
        "rows": rows,
        "spearman": rho,
        "holder_delta": delta,
        "holder_C": float(np.exp(icpt)),
        "holder_residual": res,
        "log_fit": fit_log_modulus_ucp(x, y_ann),
    }


def qwuc_check(sys: SingularSystem, h: np.ndarray, epsilon: float, rtol: float = 1e-8) -> dict:
    """Discrete version of the quantitative unique continuation chain.

    With ``u = A g`` the cheapest cutoff approximant meeting
    ``||u - h|| <= eps ||h||_{H^1(D1)}`` and ``w`` the dual solution,

        ||h||^2 = (h - u, h) + <g, ∂ν w>
                <= ||g||_{H^{1/2}} ||∂ν w||_{H^{-1/2}(Γ)} + ||u - h|| ||h||.

    Each step is checked to relative slack ``rtol``.
    """
    A = sys.op
    norms = A.norms
    h = np.asarray(h, dtype=float)
    hl2 = A.gram_out.norm(h)
    if hl2 == 0.0:
        return {"status": "ok", "passed": True, "trivial": True}
    h1 = norms.h1_d1.norm(h)
    if epsilon * h1 > 0.5 * hl2:
        return {"status": "condition violated", "passed": None, "epsilon": float(epsilon)}
    check_solution(A, h)
    beta = sys.coefficients(h)
    unresolved = A.gram_out.norm(h - sys.psi @ beta)
    _, alpha, _, kept, saturated = cutoff_cost(sys.sigma, beta, epsilon * h1, unresolved)
    g = sys.phi[:, :kept] @ (beta[:kept] / sys.sigma[:kept])
    u = A.apply(g)
    w = dual_source_solve(A.operator, h)
    dn = conormal_derivative(w)

    lhs = hl2**2
    t_pair = pairing(A.domain.embed_gamma(g), dn, A.domain.h)
    t_inner = A.gram_out.inner(h - u, h)
    g_norm = A.gram_in.norm(g)
    dn_dual = norms.dual_gamma(dn)
    err = A.gram_out.norm(u - h)
    bound = g_norm * dn_dual + err * hl2
    scale = lhs + g_norm * dn_dual + err * hl2
    identity_gap = abs(lhs - t_inner - t_pair) / scale
    cs_pair = abs(t_pair) - g_norm * dn_dual
    cs_inner = abs(t_inner) - err * hl2
    chain_ok = (
        identity_gap <= rtol
        and cs_pair <= rtol * scale
        and cs_inner <= rtol * scale
        and lhs <= bound * (1 + rtol)
    )
    # with ||u - h|| <= ||h|| / 2 the chain closes to ||h||^2 <= 2 ||g|| ||dn w||
    final_ok = saturated or lhs <= 2.0 * g_norm * dn_dual * (1 + rtol)
    return {
        "status": "saturated" if saturated else "ok",
        "passed": bool(chain_ok and final_ok),
        "epsilon": float(epsilon),
        "alpha": alpha,
        "h_l2_sq": lhs,
        "pairing_term": t_pair,
        "inner_term": t_inner,
        "g_hhalf": g_norm,
        "dnw_dual": dn_dual,
        "approx_error": err,
        "bound": bound,
        "identity_gap": identity_gap,
    }
