"""Least-squares fits of cost and stability models in transformed coordinates.

Models (parameters ``(C, exponent)``):

``log-line``      y = C x^(-mu)            fitted as  log y = log C - mu log x
``loglog-line``   log y = C x^(-mu)        fitted as  log log y = log C + mu log(1/x)
``log-modulus``   y = C |log x|^(-sigma)   fitted as  log y = log C - sigma log|log x|
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_POINTS = 4
MODELS = ("log-line", "loglog-line", "log-modulus")


@dataclass(frozen=True)
class FitResult:
    model: str
    params: tuple[float, float] | None
    residual: float | None
    n_points: int
    status: str = "ok"

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": None if self.params is None else [float(p) for p in self.params],
            "residual": self.residual,
            "n_points": self.n_points,
            "status": self.status,
        }

    def predict(self, x) -> np.ndarray:
        if self.params is None:
            raise ValueError(f"fit has no parameters ({self.status})")
        C, e = self.params
        x = np.asarray(x, dtype=float)
        if self.model == "log-line":
            return C * x ** (-e)
        if self.model == "loglog-line":
            return np.exp(C * x ** (-e))
        return C * np.abs(np.log(x)) ** (-e)


def _transform(x: np.ndarray, y: np.ndarray, model: str):
    with np.errstate(divide="ignore", invalid="ignore"):
        if model == "log-line":
            ok = (x > 0) & (y > 0)
            return ok, np.log(x), np.log(y)
        if model == "loglog-line":
            ok = (x > 0) & (y > 1)
            return ok, np.log(1.0 / x), np.log(np.log(y))
        if model == "log-modulus":
            ok = (x > 0) & (x < 1) & (y > 0)
            return ok, np.log(np.abs(np.log(x))), np.log(y)
    raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")


def fit(x, y, model: str, mask=None) -> FitResult:
    """Fit ``model`` to the points ``(x, y)``.

    Points outside the model's domain, or excluded by ``mask``, are dropped.
    With fewer than four usable points the result is marked
    ``"insufficient data"`` and carries no parameters.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok, X, Y = _transform(x, y, model)
    if mask is not None:
        ok &= np.asarray(mask, dtype=bool)
    n = int(ok.sum())
    if n < MIN_POINTS:
        return FitResult(model, None, None, n, "insufficient data")
    X, Y = X[ok], Y[ok]
    V = np.column_stack([np.ones(n), X])
    coef, *_ = np.linalg.lstsq(V, Y, rcond=None)
    resid = Y - V @ coef
    rms = float(np.sqrt(np.mean(resid**2)))
    icpt, slope = float(coef[0]), float(coef[1])
    if model == "loglog-line":
        params = (float(np.exp(icpt)), slope)
    else:
        params = (float(np.exp(icpt)), -slope)
    return FitResult(model, params, rms, n)


def central_mask(n: int, keep: float = 0.6) -> np.ndarray:
    """Boolean mask keeping the central ``keep`` fraction of ``n`` ordered points."""
    drop = int(np.floor(n * (1.0 - keep) / 2.0))
    m = np.zeros(n, dtype=bool)
    m[drop : n - drop] = True
    return m


def linear_slope(x, y) -> tuple[float, float, float]:
    """Slope, intercept and RMS residual of an ordinary least-squares line."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    V = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(V, y, rcond=None)
    r = y - V @ coef
    return float(coef[1]), float(coef[0]), float(np.sqrt(np.mean(r**2)))
