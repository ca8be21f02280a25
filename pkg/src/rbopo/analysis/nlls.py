"""Damped Gauss-Newton (Levenberg-Marquardt) least squares.

Minimizes ``sum(w * (y - model(x, *p))**2)`` with a central-difference
Jacobian and Marquardt's diagonal scaling, so parameters of very different
magnitude (Hz next to dimensionless depths) need no manual rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rbopo.errors import ConvergenceError, DegenerateFitError

_FD_REL = np.finfo(float).eps ** (1 / 3)
_LAMBDA_UP = 10.0
_LAMBDA_DOWN = 10.0
_LAMBDA_MAX = 1e16


@dataclass(frozen=True)
class FitResult:
    params: np.ndarray
    covariance: np.ndarray
    uncertainties: np.ndarray
    residual_rms: float
    chi2: float
    dof: int
    iterations: int
    nfev: int
    converged: bool
    gradient_norm: float

    def __iter__(self):
        # allows ``params, cov = nlls_fit(...)``
        return iter((self.params, self.covariance))


def _jacobian(fn, x, p, steps):
    cols = []
    for i, h in enumerate(steps):
        up, dn = p.copy(), p.copy()
        up[i] += h
        dn[i] -= h
        cols.append((fn(x, *up) - fn(x, *dn)) / (up[i] - dn[i]))
    return np.column_stack(cols)


def nlls_fit(
    model_fn,
    p0,
    x,
    y,
    weights=None,
    *,
    xtol: float = 1e-10,
    gtol: float = 1e-12,
    max_iter: int = 200,
    lambda0: float = 1e-9,
    absolute_sigma: bool = False,
) -> FitResult:
    """Fit ``model_fn(x, *params)`` to ``y``.

    Stops when the largest relative parameter step drops below ``xtol`` or
    the scaled gradient (projection of the weighted residual on each unit
    Jacobian column) drops below ``gtol``. The covariance is the inverse
    normal matrix, scaled by the residual variance unless
    ``absolute_sigma`` is set (then weights are taken as ``1/sigma**2``).

    Raises:
        DegenerateFitError: a parameter has no effect or the normal matrix is singular.
        ConvergenceError: ``max_iter`` reached; carries the last parameters.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p = np.array(p0, dtype=float)
    n, k = len(y), len(p)
    if not np.all(np.isfinite(p)):
        raise ValueError("initial parameters must be finite")
    if n < k:
        raise ValueError(f"need at least {k} points, got {n}")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != y.shape or np.any(~(w > 0)):
        raise ValueError("weights must be positive and match the data")
    sw = np.sqrt(w)
    typical = np.where(p != 0, np.abs(p), 1.0)

    def wres(params):
        return sw * (y - model_fn(x, *params))

    r = wres(p)
    cost = r @ r
    nfev = 1
    lam = lambda0
    converged = False
    gnorm = np.inf
    it = 0
    while True:
        steps = _FD_REL * np.maximum(np.abs(p), typical)
        jac = -sw[:, None] * _jacobian(model_fn, x, p, steps)
        nfev += 2 * k
        a = jac.T @ jac
        g = jac.T @ r
        diag = np.diag(a).copy()
        if np.any(diag <= 0):
            dead = np.flatnonzero(diag <= 0).tolist()
            raise DegenerateFitError(f"parameters {dead} do not affect the model", {"params": p})
        col = np.sqrt(diag)
        gnorm = float(np.max(np.abs(g) / col))
        if cost == 0 or gnorm < gtol:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1

        scaled = a / np.outer(col, col)
        rhs = -g / col
        accepted = False
        while lam <= _LAMBDA_MAX:
            try:
                dz = np.linalg.solve(scaled + lam * np.eye(k), rhs)
            except np.linalg.LinAlgError:
                lam *= _LAMBDA_UP
                continue
            dp = dz / col
            trial = p + dp
            r_new = wres(trial)
            nfev += 1
            cost_new = r_new @ r_new
            if np.isfinite(cost_new) and cost_new <= cost:
                accepted = True
                break
            lam *= _LAMBDA_UP
        if not accepted:
            # no representable descent: the iterate is stationary to working precision
            converged = gnorm < 1e-8 * max(np.sqrt(cost), 1.0)
            break
        rel_step = float(np.max(np.abs(dp) / np.maximum(np.abs(trial), steps)))
        p, r, cost = trial, r_new, cost_new
        lam = max(lam / _LAMBDA_DOWN, 1e-12)
        if rel_step < xtol:
            converged = True
            break

    if not converged:
        raise ConvergenceError(
            f"no convergence after {it} iterations",
            params=p,
            diagnostics={"cost": float(cost), "gradient": gnorm, "lambda": lam},
        )

    steps = _FD_REL * np.maximum(np.abs(p), typical)
    jac = -sw[:, None] * _jacobian(model_fn, x, p, steps)
    a = jac.T @ jac
    dof = n - k
    try:
        cond = np.linalg.cond(a / np.sqrt(np.outer(np.diag(a), np.diag(a))))
        if not np.isfinite(cond) or cond > 1e14:
            raise np.linalg.LinAlgError
        cov = np.linalg.inv(a)
    except (np.linalg.LinAlgError, FloatingPointError):
        raise DegenerateFitError("singular normal matrix at solution", {"params": p}) from None
    chi2 = float(cost)
    if not absolute_sigma:
        cov = cov * (chi2 / dof if dof > 0 else 0.0)
    return FitResult(
        params=p,
        covariance=cov,
        uncertainties=np.sqrt(np.clip(np.diag(cov), 0, None)),
        residual_rms=float(np.sqrt(np.mean((r / sw) ** 2))),
        chi2=chi2,
        dof=dof,
        iterations=it,
        nfev=nfev,
        converged=True,
        gradient_norm=gnorm,
    )
