"""Non-adaptive reference quantizers.

Two baselines accompany every adaptive design: the asymptotically
optimal fixed quantizer (minimizing a weighted sum of inverse KL
divergences over the grid) and the Lloyd-Max minimum-distortion
quantizer for the null distribution N(0, 1). Either can be wrapped
into a constant policy via the same fixed-point machinery as the
adaptive design, so comparisons are like for like.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import ndtr

from .divergence import kl_rows
from .errors import (
    ConfigError,
    DegeneratePolicy,
    NoInformativeQuantizer,
    NonConvergence,
)
from .models import (
    DEFAULT_CANDIDATE_BUDGET,
    ObservationModel,
    QuantizerParams,
    ThetaGrid,
    candidate_levels_array,
    pmf_table,
)
from .dp import (
    CandidateSet,
    DesignConfig,
    Policy,
    ValueFunction,
    ZGrid,
    design_policy,
)


@dataclass(frozen=True)
class BaselineKind:
    kind: Literal["asymptotic", "lloyd_max", "fixed_user"]
    theta: QuantizerParams | None = None

    def __post_init__(self):
        if self.kind not in ("asymptotic", "lloyd_max", "fixed_user"):
            raise ConfigError(f"unknown baseline kind {self.kind!r}")
        if self.kind == "fixed_user" and self.theta is None:
            raise ConfigError("fixed_user baseline needs levels")


def asymptotic_objective(
    model: ObservationModel, grid: ThetaGrid, kappa: float, levels: np.ndarray
) -> np.ndarray:
    """(1-kappa)/KL(Q0||Q1) + kappa/KL(Q1||Q0) per candidate row."""
    q0, q1 = pmf_table(model, levels, grid.transform)
    with np.errstate(divide="ignore"):
        obj = np.zeros(levels.shape[0])
        if kappa < 1.0:
            obj += (1.0 - kappa) / kl_rows(q0, q1)
        if kappa > 0.0:
            obj += kappa / kl_rows(q1, q0)
    return obj


def asymptotic_optimal_theta(
    model: ObservationModel,
    grid: ThetaGrid,
    kappa: float,
    budget: int = DEFAULT_CANDIDATE_BUDGET,
) -> QuantizerParams:
    """Exhaustive argmin of the inverse-KL criterion over the grid.

    Candidates with a vanishing divergence have infinite objective and
    are skipped; ties break to the first in enumeration order.
    """
    levels = candidate_levels_array(grid, budget=budget)
    obj = asymptotic_objective(model, grid, kappa, levels)
    idx = int(np.argmin(obj))
    if not math.isfinite(obj[idx]):
        raise NoInformativeQuantizer(
            "every candidate has a vanishing KL divergence"
        )
    return QuantizerParams(levels=tuple(levels[idx]))


def lloyd_max(
    n_symbols: int, tol: float = 1e-12, max_iter: int = 10_000
) -> QuantizerParams:
    """Minimum-MSE quantizer levels for N(0, 1).

    Fixed-point iteration: levels are midpoints of adjacent cell
    centroids, centroids are conditional means under the standard
    normal. Initialized at the quantiles k/K; levels are real-valued,
    not snapped to any grid.
    """
    if n_symbols < 2:
        raise ConfigError("lloyd_max needs at least 2 symbols")
    from scipy.special import ndtri

    levels = ndtri(np.arange(1, n_symbols) / n_symbols)
    for _ in range(max_iter):
        edges = np.concatenate(([-np.inf], levels, [np.inf]))
        phi = np.exp(-0.5 * edges[np.isfinite(edges)] ** 2) / math.sqrt(2 * math.pi)
        pdf = np.zeros(len(edges))
        pdf[np.isfinite(edges)] = phi
        mass = np.diff(ndtr(edges))
        # centroid of cell (a, b] under N(0,1): (phi(a) - phi(b)) / mass
        centroids = (pdf[:-1] - pdf[1:]) / mass
        new_levels = 0.5 * (centroids[:-1] + centroids[1:])
        delta = float(np.max(np.abs(new_levels - levels)))
        levels = new_levels
        if delta < tol:
            return QuantizerParams(levels=tuple(levels))
    raise NonConvergence(f"Lloyd-Max did not converge within {max_iter} iterations")


def fixed_quantizer_policy(
    model: ObservationModel,
    theta: QuantizerParams,
    design: DesignConfig,
    transform: str = "identity",
    zgrid: ZGrid | None = None,
    tol: float = 1e-9,
) -> tuple[ValueFunction, Policy]:
    """Wrap fixed levels as a constant policy via the one-action solve.

    Thresholds come from the restricted fixed-point equation, so the
    resulting operating characteristics are directly comparable to the
    adaptive design at equal costs.
    """
    levels = np.asarray(theta.levels, dtype=float).reshape(1, -1)
    q0, q1 = pmf_table(model, levels, transform)
    if not bool(np.any(q0 != q1)):
        # identical output distributions can never terminate the test
        raise DegeneratePolicy("fixed quantizer is uninformative")
    cand = CandidateSet(model, levels, transform)
    return design_policy(model, cand, design, zgrid=zgrid, tol=tol)
