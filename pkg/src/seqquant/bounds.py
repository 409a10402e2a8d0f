"""Performance bounds for quantized sequential tests.

Three lower bounds are provided:

* a Wald-style ASN bound from the Bernoulli KL divergence of the error
  probabilities over the maximal post-quantizer KL divergence,
* a Hoeffding-style ASN bound from total variation, valid whenever
  alpha + beta < 1 and independent of the mixture weight kappa,
* a bound on the minimal weighted cost rho(1), obtained by minimizing
  the KL ASN bound plus the expected error costs over all operating
  points (alpha, beta) in the unit square.

The cost bound's inner objective is jointly strictly convex, so the
minimizer is unique; it is solved by a damped Newton iteration with a
coordinate-bisection fallback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .divergence import DivergenceKind, kl_bernoulli, max_divergence_over_grid
from .errors import ConfigError, NonConvergence
from .models import DEFAULT_CANDIDATE_BUDGET, ObservationModel, QuantizerParams, ThetaGrid

_EPS = 1e-12


@dataclass(frozen=True)
class BoundReport:
    """ASN bounds, the cost bound, and their maximizing parameters."""

    asn_kl: float
    asn_tv: float
    dkl_max_01: float
    dkl_max_10: float
    dtv_max: float
    argmax_kl_01: QuantizerParams
    argmax_kl_10: QuantizerParams
    argmax_tv: QuantizerParams
    bayes_bound: float | None = None
    minimizing_alpha_beta: tuple[float, float] | None = None


def asn_bound_kl(
    alpha: float, beta: float, kappa: float, dkl_max_01: float, dkl_max_10: float
) -> float:
    """Generalized Wald lower bound on the average sample number.

    Terms whose divergence maximum is infinite contribute zero (the
    bound degenerates gracefully when supports differ).
    """
    total = 0.0
    if kappa < 1.0:
        if math.isfinite(dkl_max_01):
            if dkl_max_01 <= 0.0:
                raise ConfigError("dkl_max_01 must be positive")
            total += (1.0 - kappa) * kl_bernoulli(alpha, beta) / dkl_max_01
    if kappa > 0.0:
        if math.isfinite(dkl_max_10):
            if dkl_max_10 <= 0.0:
                raise ConfigError("dkl_max_10 must be positive")
            total += kappa * kl_bernoulli(beta, alpha) / dkl_max_10
    return total


def asn_bound_tv(alpha: float, beta: float, dtv_max: float) -> float:
    """Generalized Hoeffding lower bound, (1 - alpha - beta) / dtv_max."""
    if alpha + beta >= 1.0:
        raise ConfigError("the TV bound requires alpha + beta < 1")
    if not 0.0 < dtv_max <= 1.0:
        raise ConfigError("dtv_max must lie in (0, 1]")
    return (1.0 - alpha - beta) / dtv_max


def _cost_objective_parts(
    a: float, b: float, c0: float, c1: float, lam0: float, lam1: float
):
    """Value, gradient and Hessian of the inner cost-bound objective."""
    val = c0 * kl_bernoulli(a, b) + c1 * kl_bernoulli(b, a) + lam0 * a + lam1 * b
    s = math.log(a * b / ((1.0 - a) * (1.0 - b)))
    ga = c0 * s + c1 * (b / (1.0 - a) - (1.0 - b) / a) + lam0
    gb = c1 * s + c0 * (a / (1.0 - b) - (1.0 - a) / b) + lam1
    haa = c0 * (1.0 / a + 1.0 / (1.0 - a)) + c1 * (
        b / (1.0 - a) ** 2 + (1.0 - b) / a**2
    )
    hbb = c1 * (1.0 / b + 1.0 / (1.0 - b)) + c0 * (
        a / (1.0 - b) ** 2 + (1.0 - a) / b**2
    )
    hab = c0 * (1.0 / b + 1.0 / (1.0 - b)) + c1 * (1.0 / a + 1.0 / (1.0 - a))
    return val, (ga, gb), (haa, hab, hbb)


def minimize_cost_objective(
    c0: float, c1: float, lam0: float, lam1: float, tol: float = 1e-10
) -> tuple[float, float, float]:
    """Unique minimizer of the strictly convex inner objective on [0,1]^2.

    Damped Newton with clamping to [eps, 1-eps]; falls back to
    coordinate bisection on the gradient if Newton stalls.
    """
    a, b = 0.1, 0.1
    lo, hi = _EPS, 1.0 - _EPS
    val, grad, hess = _cost_objective_parts(a, b, c0, c1, lam0, lam1)
    for _ in range(200):
        ga, gb = grad
        haa, hab, hbb = hess
        det = haa * hbb - hab * hab
        if det <= 0.0:
            break
        da = -(hbb * ga - hab * gb) / det
        db = -(haa * gb - hab * ga) / det
        decrement = -(ga * da + gb * db)
        if decrement <= tol * (1.0 + abs(val)):
            return a, b, val
        step = 1.0
        while step > 1e-14:
            an = min(max(a + step * da, lo), hi)
            bn = min(max(b + step * db, lo), hi)
            new_val, new_grad, new_hess = _cost_objective_parts(
                an, bn, c0, c1, lam0, lam1
            )
            if new_val <= val + 1e-4 * step * (ga * da + gb * db) or new_val < val:
                a, b, val, grad, hess = an, bn, new_val, new_grad, new_hess
                break
            step *= 0.5
        else:
            break
    # bisection fallback: each partial derivative is increasing in its
    # own variable, so alternate scalar root brackets
    for _ in range(200):
        moved = 0.0
        for coord in (0, 1):
            xl, xh = lo, hi
            for _ in range(80):
                xm = 0.5 * (xl + xh)
                aa, bb = (xm, b) if coord == 0 else (a, xm)
                _, g, _ = _cost_objective_parts(aa, bb, c0, c1, lam0, lam1)
                if g[coord] > 0.0:
                    xh = xm
                else:
                    xl = xm
            new = 0.5 * (xl + xh)
            moved = max(moved, abs(new - (a if coord == 0 else b)))
            if coord == 0:
                a = new
            else:
                b = new
        if moved < 1e-13:
            break
    val, _, _ = _cost_objective_parts(a, b, c0, c1, lam0, lam1)
    return a, b, val


def bayes_cost_bound(
    model: ObservationModel,
    grid: ThetaGrid,
    design,
    budget: int = DEFAULT_CANDIDATE_BUDGET,
    dkl_max_01: float | None = None,
    dkl_max_10: float | None = None,
) -> tuple[float, float, float]:
    """Lower bound on the optimal cost rho(1); returns (bound, a*, b*).

    The divergence maxima are computed over the grid unless supplied.
    """
    if design.lambda0 <= 0.0 or design.lambda1 <= 0.0:
        raise ConfigError("the cost bound requires positive cost coefficients")
    if dkl_max_01 is None:
        dkl_max_01 = max_divergence_over_grid(
            model, grid, DivergenceKind("kl", "0to1"), budget=budget
        ).value
    if dkl_max_10 is None:
        dkl_max_10 = max_divergence_over_grid(
            model, grid, DivergenceKind("kl", "1to0"), budget=budget
        ).value
    kappa = design.kappa
    c0 = (1.0 - kappa) / dkl_max_01 if (kappa < 1.0 and math.isfinite(dkl_max_01)) else 0.0
    c1 = kappa / dkl_max_10 if (kappa > 0.0 and math.isfinite(dkl_max_10)) else 0.0
    a, b, val = minimize_cost_objective(c0, c1, design.lambda0, design.lambda1)
    return val, a, b


def bound_report(
    model: ObservationModel,
    grid: ThetaGrid,
    alpha: float,
    beta: float,
    kappa: float,
    design=None,
    budget: int = DEFAULT_CANDIDATE_BUDGET,
) -> BoundReport:
    """Evaluate both ASN bounds (and the cost bound when design given)."""
    r01 = max_divergence_over_grid(model, grid, DivergenceKind("kl", "0to1"), budget)
    r10 = max_divergence_over_grid(model, grid, DivergenceKind("kl", "1to0"), budget)
    rtv = max_divergence_over_grid(model, grid, DivergenceKind("tv"), budget)
    asn_kl = asn_bound_kl(alpha, beta, kappa, r01.value, r10.value)
    asn_tv = asn_bound_tv(alpha, beta, rtv.value)
    bayes = None
    min_ab = None
    if design is not None:
        val, a_star, b_star = bayes_cost_bound(
            model, grid, design, budget, r01.value, r10.value
        )
        bayes = val
        min_ab = (a_star, b_star)
    return BoundReport(
        asn_kl=asn_kl,
        asn_tv=asn_tv,
        dkl_max_01=r01.value,
        dkl_max_10=r10.value,
        dtv_max=rtv.value,
        argmax_kl_01=r01.argmax_theta,
        argmax_kl_10=r10.argmax_theta,
        argmax_tv=rtv.argmax_theta,
        bayes_bound=bayes,
        minimizing_alpha_beta=min_ab,
    )
