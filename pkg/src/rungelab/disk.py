"""Harmonic functions on the unit disk observed on the concentric disk of radius 1/2.

Everything is diagonal in the circle Fourier basis ``1/sqrt(2 pi)``,
``cos(l t)/sqrt(pi)``, ``sin(l t)/sqrt(pi)``: the degree-``l`` solid harmonic
``r^l Y_l`` has closed-form norms on ``B_{1/2}`` and boundary H^{1/2} norm
``(1 + l)^{1/2}``.  Formulas are written for a general dimension parameter
``n`` where they are dimension-generic; evaluation uses ``n = 2``.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import PreconditionError
from .fitting import linear_slope
from .pareto import exponent_fits, pareto_series

INNER_RADIUS = 0.5
OUTER_DTILDE = 0.75


@dataclass(frozen=True)
class DiskModel:
    Lmax: int
    n: int = 2
    inner_radius: float = INNER_RADIUS

    def __post_init__(self):
        if self.Lmax < 1:
            raise PreconditionError(f"Lmax must be >= 1, got {self.Lmax}")
        if self.n < 2:
            raise PreconditionError(f"n must be >= 2, got {self.n}")

    @property
    def degrees(self) -> np.ndarray:
        return np.arange(self.Lmax + 1)

    def eigenvalues(self) -> np.ndarray:
        l = self.degrees
        return l * (l + self.n - 2)

    def multiplicity(self) -> np.ndarray:
        if self.n != 2:
            raise NotImplementedError("multiplicities are tracked for n = 2 only")
        m = np.full(self.Lmax + 1, 2)
        m[0] = 1
        return m

    def sigma(self) -> np.ndarray:
        return np.array([mode_norms(l, self.n).sigma_l for l in self.degrees])


@dataclass(frozen=True)
class ModeNorms:
    l: int
    l2_D1: float
    h1_D1: float
    hhalf_boundary: float
    alpha_l: float
    sigma_l: float


def mode_norms(l: int, n: int = 2) -> ModeNorms:
    """Norms of ``g_l = r^l Y_l`` (``Y_l`` unit on the circle) on ``B_{1/2}`` and on the unit circle."""
    if l < 0 or n < 2:
        raise PreconditionError(f"need l >= 0 and n >= 2, got l={l}, n={n}")
    scale = 2.0 ** (-l - n / 2)
    l2 = (2 * l + n) ** -0.5 * scale
    h1 = np.sqrt(4 * l + 1.0 / (2 * l + n)) * scale
    lam = l * (l + n - 2)
    hhalf = np.sqrt(1.0 + np.sqrt(lam))
    return ModeNorms(l, l2, h1, hhalf, 1.0 / h1, l2 / hhalf)


def closed_form_sigma(l) -> np.ndarray | float:
    """``sigma_l = 2^{-l-3/2} / (l + 1)`` for ``n = 2``."""
    l = np.asarray(l, dtype=float)
    out = 2.0 ** (-l - 1.5) / (l + 1.0)
    return float(out) if out.ndim == 0 else out


def solid_inner_product(u, v, R: float, n: int = 2) -> float:
    """``(u, v)_{L2(B_R)}`` for harmonic ``u, v`` given by circle coefficients per degree.

    ``u`` and ``v`` have shape ``(Lmax + 1, k)`` (``k`` coefficients per degree,
    e.g. cos/sin); row ``l`` is weighted by ``R^{2l+n} / (2l+n)``.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if u.shape != v.shape:
        raise PreconditionError(f"coefficient shapes differ: {u.shape} vs {v.shape}")
    l = np.arange(u.shape[0])
    w = R ** (2 * l + n) / (2 * l + n)
    return float(np.sum(w * np.sum(u * v, axis=1)))


def solid_h1_norm(coeffs, R: float) -> float:
    """``||u||_{H1(B_R)}`` (n = 2) for circle coefficients of shape ``(Lmax + 1, k)``."""
    c = np.atleast_2d(np.asarray(coeffs, dtype=float))
    l = np.arange(c.shape[0])
    c2 = np.sum(c**2, axis=1)
    return float(np.sqrt(np.sum(c2 * (R ** (2 * l + 2) / (2 * l + 2) + l * R ** (2 * l)))))


def log_source_coefficients(x0_radius: float, lmax: int) -> np.ndarray:
    """Cosine coefficients of ``log|x - x0|`` with ``x0 = (x0_radius, 0)``.

    Valid on ``B_min(1, x0_radius)``: ``log|x - x0| = log rho - sum_l (r/rho)^l cos(l t)/l``.
    Returned in the normalized basis, index ``l = 0..lmax``.
    """
    if x0_radius <= INNER_RADIUS:
        raise PreconditionError(f"source at radius {x0_radius} lies in the closed inner disk")
    if x0_radius == 1.0:
        raise PreconditionError("source on the unit circle is excluded")
    l = np.arange(1, lmax + 1)
    c = np.empty(lmax + 1)
    c[0] = np.log(x0_radius) * np.sqrt(2 * np.pi)
    c[1:] = -np.sqrt(np.pi) * x0_radius ** (-l.astype(float)) / l
    return c


def disk_cost_curve(
    x0_radius: float,
    epsilons,
    normalization: str = "D1",
    lmax: int = 300,
) -> dict:
    """Exact approximation cost of the log source on the disk model.

    The error budget is ``eps ||h||_{H1(B_{1/2})}`` (``"D1"``) or
    ``eps ||h||_{H1(B_{3/4})}`` (``"Dtilde"``, requires ``x0_radius > 3/4``).
    """
    c = log_source_coefficients(x0_radius, lmax)
    l = np.arange(lmax + 1)
    if normalization == "D1":
        ref = solid_h1_norm(c[:, None], INNER_RADIUS)
    elif normalization == "Dtilde":
        if x0_radius <= OUTER_DTILDE:
            raise PreconditionError("the source is not harmonic on the whole middle disk")
        ref = solid_h1_norm(c[:, None], OUTER_DTILDE)
    else:
        raise PreconditionError(f"normalization must be 'D1' or 'Dtilde', got {normalization!r}")
    l2 = (2 * l + 2.0) ** -0.5 * 2.0 ** (-l - 1.0)
    sigma = closed_form_sigma(l)
    beta = c * l2
    eps = np.asarray(epsilons, dtype=float)
    rows = pareto_series(sigma, beta, eps * ref)
    for e, r in zip(eps, rows):
        r["epsilon"] = float(e)
    fits = exponent_fits(eps, [r["boundary_norm"] for r in rows], [r["saturated"] for r in rows])
    return {"rows": rows, "fits": fits, "reference_norm": ref, "normalization": normalization}


def minimal_norm(l: int, budget: float) -> float:
    """Least H^{1/2} boundary norm of harmonic ``u`` with ``||h_l - u||_{L2(B_{1/2})} <= budget``.

    Only the degree-``l`` coefficient of ``u`` helps; its optimum is
    ``alpha_l - budget / ||g_l||`` clipped at zero.
    """
    m = mode_norms(l)
    return float(m.hhalf_boundary * max(0.0, m.alpha_l - budget / m.l2_D1))


@dataclass(frozen=True)
class OptimalityRow:
    l: int
    l2_D1: float
    h1_D1: float
    sigma_l: float
    budget: float
    min_boundary_norm: float
    ratio_to_2_pow_half_l: float


SLOPE_FACTOR = 0.9


def optimality_experiment(lmax: int = 20, budget=None, fit_range=(4, 20)) -> dict:
    """Minimal approximation cost of ``h_l = g_l / ||g_l||_{H1(D1)}`` within ``budget(l)``.

    ``budget`` defaults to ``1 / (10 l)``.  Reports the slope of ``log(min norm)``
    against ``l`` over ``fit_range`` and whether it reaches ``0.9 log(2) / 2``.
    """
    if not 1 <= lmax <= 40:
        raise PreconditionError(f"lmax must lie in [1, 40], got {lmax}")
    budget = budget or (lambda l: 1.0 / (10.0 * l))
    rows = []
    for l in range(1, lmax + 1):
        m = mode_norms(l)
        mn = minimal_norm(l, budget(l))
        rows.append(OptimalityRow(l, m.l2_D1, m.h1_D1, m.sigma_l, budget(l), mn, mn / 2.0 ** (l / 2)))
    lo, hi = fit_range
    sel = [r for r in rows if lo <= r.l <= hi and r.min_boundary_norm > 0]
    target = SLOPE_FACTOR * np.log(2.0) / 2.0
    if len(sel) >= 2:
        slope, icpt, res = linear_slope([r.l for r in sel], np.log([r.min_boundary_norm for r in sel]))
    else:
        slope = icpt = res = float("nan")
    ratios = [r.ratio_to_2_pow_half_l for r in rows if r.l >= lo]
    return {
        "rows": rows,
        "slope": slope,
        "intercept": icpt,
        "residual": res,
        "slope_target": target,
        "min_ratio": float(min(ratios)) if ratios else float("nan"),
        "passed": bool(slope >= target and ratios and min(ratios) > 0),
    }


OPTIMALITY_COLUMNS = ("l", "l2_D1", "h1_D1", "sigma_l", "min_boundary_norm", "ratio_to_2^{l/2}")


def write_optimality_csv(rows, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OPTIMALITY_COLUMNS)
        for r in rows:
            d = asdict(r)
            w.writerow(
                [d["l"]]
                + [repr(float(d[k])) for k in ("l2_D1", "h1_D1", "sigma_l", "min_boundary_norm", "ratio_to_2_pow_half_l")]
            )
