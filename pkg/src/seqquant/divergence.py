"""KL and total-variation divergences between post-quantizer pmfs.

All KL values are in nats. Infinities are legal return values (they
signal absolute-continuity failures) and are propagated, not raised.

The Bernoulli-style two-argument divergences follow the sequential-
analysis convention: the second distribution has success probability
1-q, so kl_bernoulli(p, q) = p log(p/(1-q)) + (1-p) log((1-p)/q).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ConfigError
from .models import (
    DEFAULT_CANDIDATE_BUDGET,
    ObservationModel,
    Pmf,
    QuantizerParams,
    ThetaGrid,
    candidate_levels_array,
    pmf_table,
)


@dataclass(frozen=True)
class DivergenceKind:
    """Which divergence to maximize over the parameter grid.

    ``direction`` selects the argument order for KL ("0to1" means
    KL(Q0 || Q1)); total variation is symmetric and ignores it.
    """

    kind: Literal["kl", "tv"]
    direction: Literal["0to1", "1to0"] = "0to1"

    def __post_init__(self):
        if self.kind not in ("kl", "tv"):
            raise ConfigError(f"unknown divergence kind {self.kind!r}")
        if self.direction not in ("0to1", "1to0"):
            raise ConfigError(f"unknown direction {self.direction!r}")


@dataclass(frozen=True)
class MaxDivergenceResult:
    value: float
    argmax_theta: QuantizerParams
    argmax_index: int


def _as_probs(p) -> np.ndarray:
    if isinstance(p, Pmf):
        return p.as_array()
    return np.asarray(p, dtype=float)


def kl_pmf(p, q) -> float:
    """KL(P || Q) in nats; +inf if P puts mass where Q has none."""
    p = _as_probs(p)
    q = _as_probs(q)
    mask = p > 0.0
    if np.any(q[mask] == 0.0):
        return math.inf
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def tv_pmf(p, q) -> float:
    """Total variation distance, (1/2) * sum |P - Q|, in [0, 1]."""
    p = _as_probs(p)
    q = _as_probs(q)
    return float(0.5 * np.sum(np.abs(p - q)))


def kl_bernoulli(p: float, q: float) -> float:
    """Divergence between Bernoulli(p) and Bernoulli(1-q), in nats.

    Boundary extensions: kl(0, q) = log(1/q), kl(1, q) = log(1/(1-q)),
    kl(p, 0) = kl(p, 1) = +inf for interior p, kl(0, 1) = kl(1, 0) = 0.
    """
    if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
        raise ConfigError("kl_bernoulli arguments must lie in [0, 1]")
    if p == 0.0:
        if q == 1.0:
            return 0.0
        if q == 0.0:
            return math.inf
        return math.log(1.0 / q)
    if p == 1.0:
        if q == 0.0:
            return 0.0
        if q == 1.0:
            return math.inf
        return math.log(1.0 / (1.0 - q))
    if q == 0.0 or q == 1.0:
        return math.inf
    return p * math.log(p / (1.0 - q)) + (1.0 - p) * math.log((1.0 - p) / q)


def tv_bernoulli(p: float, q: float) -> float:
    """1 - p - q, valid only on p + q < 1."""
    if p + q >= 1.0:
        raise ConfigError(f"tv_bernoulli requires p + q < 1, got {p + q}")
    return 1.0 - p - q


def kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise KL(P || Q) for stacked pmfs; rows may hit +inf."""
    p = np.atleast_2d(p)
    q = np.atleast_2d(q)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p / q), 0.0)
    out = np.sum(np.where(np.isnan(terms), np.inf, terms), axis=1)
    return out


def max_divergence_over_grid(
    model: ObservationModel,
    grid: ThetaGrid,
    kind: DivergenceKind,
    budget: int = DEFAULT_CANDIDATE_BUDGET,
) -> MaxDivergenceResult:
    """Exhaustive divergence maximum over the parameter grid.

    Ties break to the first candidate in lexicographic enumeration
    order; the degenerate K=1 grid returns value 0.
    """
    if grid.n_symbols == 1:
        return MaxDivergenceResult(
            value=0.0, argmax_theta=QuantizerParams(levels=()), argmax_index=0
        )
    levels = candidate_levels_array(grid, budget=budget)
    q0, q1 = pmf_table(model, levels, grid.transform)
    if kind.kind == "tv":
        values = 0.5 * np.sum(np.abs(q0 - q1), axis=1)
    elif kind.direction == "0to1":
        values = kl_rows(q0, q1)
    else:
        values = kl_rows(q1, q0)
    idx = int(np.argmax(values))  # np.argmax returns the first maximizer
    return MaxDivergenceResult(
        value=float(values[idx]),
        argmax_theta=QuantizerParams(levels=tuple(levels[idx])),
        argmax_index=idx,
    )
