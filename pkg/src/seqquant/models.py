"""Gaussian hypothesis pairs, interval quantizers and post-quantizer pmfs.

Two observation models are supported, both with P0 = N(0, 1):

* ``mean_shift``:     P1 = N(mu, 1),          SNR = 20 log10(|mu|) dB
* ``variance_shift``: P1 = N(0, 1 + sigma2),  SNR = 10 log10(sigma2) dB

A K-symbol interval quantizer is parameterized by K-1 nondecreasing
levels; cells are left-open/right-closed, i.e. symbol k is emitted for
levels[k-2] < t(x) <= levels[k-1], where t is an optional input
transform (identity or absolute value).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Literal

import numpy as np
from scipy.special import ndtr

from .errors import BudgetExceeded, ConfigError

ModelKind = Literal["mean_shift", "variance_shift"]
Transform = Literal["identity", "abs"]

#: Sum-to-one tolerance for post-quantizer pmfs.
PMF_TOL = 1e-12

#: Default cap on the number of enumerated parameter vectors.
DEFAULT_CANDIDATE_BUDGET = 5_000_000


@dataclass(frozen=True)
class ObservationModel:
    """A simple-vs-simple Gaussian hypothesis pair."""

    kind: ModelKind
    mu: float = 0.0
    sigma2: float = 0.0

    def __post_init__(self):
        if self.kind == "mean_shift":
            if self.mu == 0.0 or not math.isfinite(self.mu):
                raise ConfigError("mean_shift requires a finite mu != 0")
        elif self.kind == "variance_shift":
            if self.sigma2 <= 0.0 or not math.isfinite(self.sigma2):
                raise ConfigError("variance_shift requires sigma2 > 0")
        else:
            raise ConfigError(f"unknown model kind {self.kind!r}")

    @property
    def snr_db(self) -> float:
        if self.kind == "mean_shift":
            return 20.0 * math.log10(abs(self.mu))
        return 10.0 * math.log10(self.sigma2)

    def location_scale(self, hypothesis: int) -> tuple[float, float]:
        """(mean, std) of the raw observation under H0 or H1."""
        if hypothesis not in (0, 1):
            raise ConfigError("hypothesis must be 0 or 1")
        if hypothesis == 0:
            return 0.0, 1.0
        if self.kind == "mean_shift":
            return self.mu, 1.0
        return 0.0, math.sqrt(1.0 + self.sigma2)

    def kl_unquantized(self, direction: str = "0to1") -> float:
        """Closed-form KL divergence of the raw observation pair, in nats.

        Upper-bounds every post-quantizer KL by data processing; used to
        size likelihood-ratio grids.
        """
        if self.kind == "mean_shift":
            return 0.5 * self.mu * self.mu
        v = 1.0 + self.sigma2
        if direction == "0to1":
            return 0.5 * (1.0 / v - 1.0 + math.log(v))
        if direction == "1to0":
            return 0.5 * (self.sigma2 - math.log(v))
        raise ConfigError(f"unknown direction {direction!r}")

    def cdf(self, x, hypothesis: int, transform: Transform = "identity"):
        """CDF of the transformed observation t(X) under the hypothesis.

        For ``transform="abs"`` this is the folded CDF
        P(|X| <= x) = F(x) - F(-x) for x >= 0 and 0 otherwise.
        """
        loc, scale = self.location_scale(hypothesis)
        x = np.asarray(x, dtype=float)
        if transform == "identity":
            return ndtr((x - loc) / scale)
        if transform == "abs":
            upper = ndtr((x - loc) / scale)
            lower = ndtr((-x - loc) / scale)
            return np.where(x < 0.0, 0.0, upper - lower)
        raise ConfigError(f"unknown transform {transform!r}")


def make_model(
    kind: ModelKind,
    *,
    mu: float | None = None,
    sigma2: float | None = None,
    snr_db: float | None = None,
) -> ObservationModel:
    """Build a model from its natural parameter or from an SNR in dB.

    SNR 0 dB maps to mu = 1 (mean shift) and sigma2 = 1 (variance shift).
    """
    if kind == "mean_shift":
        if sigma2 is not None:
            raise ConfigError("sigma2 is not a mean_shift parameter")
        if (mu is None) == (snr_db is None):
            raise ConfigError("give exactly one of mu or snr_db")
        if mu is None:
            mu = 10.0 ** (snr_db / 20.0)
        return ObservationModel(kind="mean_shift", mu=float(mu))
    if kind == "variance_shift":
        if mu is not None:
            raise ConfigError("mu is not a variance_shift parameter")
        if (sigma2 is None) == (snr_db is None):
            raise ConfigError("give exactly one of sigma2 or snr_db")
        if sigma2 is None:
            sigma2 = 10.0 ** (snr_db / 10.0)
        return ObservationModel(kind="variance_shift", sigma2=float(sigma2))
    raise ConfigError(f"unknown model kind {kind!r}")


@dataclass(frozen=True)
class QuantizerParams:
    """K-1 nondecreasing quantizer levels (K = number of output symbols)."""

    levels: tuple[float, ...]

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        object.__setattr__(self, "levels", levels)
        if any(b < a for a, b in zip(levels, levels[1:])):
            raise ConfigError(f"levels must be nondecreasing, got {levels}")

    @property
    def n_symbols(self) -> int:
        return len(self.levels) + 1


def quantize(params: QuantizerParams, transform: Transform, x: float) -> int:
    """Map a raw observation to a symbol in {1, ..., K}.

    Cells are left-open/right-closed: symbol 1 for t(x) <= levels[0],
    symbol K for t(x) > levels[-1].
    """
    t = abs(x) if transform == "abs" else x
    # number of levels strictly below t, +1
    return int(np.searchsorted(np.asarray(params.levels), t, side="left")) + 1


@dataclass(frozen=True)
class Pmf:
    """Post-quantizer distribution over symbols {1..K}.

    ``probs[k-1]`` is the mass of symbol k; ``support`` lists symbols
    with strictly positive mass.
    """

    probs: tuple[float, ...]
    support: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if any(p < 0.0 for p in probs):
            raise ConfigError("pmf entries must be nonnegative")
        if abs(sum(probs) - 1.0) > PMF_TOL:
            raise ConfigError(f"pmf sums to {sum(probs)!r}, not 1")
        support = tuple(k + 1 for k, p in enumerate(probs) if p > 0.0)
        object.__setattr__(self, "support", support)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)


def post_quantizer_pmf(
    model: ObservationModel,
    hypothesis: int,
    params: QuantizerParams,
    transform: Transform = "identity",
) -> Pmf:
    """Distribution of the quantized observation under H0 or H1."""
    edges = np.asarray(params.levels, dtype=float)
    cdf = model.cdf(edges, hypothesis, transform)
    probs = np.diff(np.concatenate(([0.0], cdf, [1.0])))
    probs = np.clip(probs, 0.0, None)  # guard fp negatives at duplicate levels
    return Pmf(probs=tuple(probs))


@dataclass(frozen=True)
class ThetaGrid:
    """Finite search grid for the quantizer levels.

    Every candidate is a nondecreasing (K-1)-vector with entries drawn
    from {theta_min, theta_min + step, ...} up to theta_max; duplicates
    are allowed (an empty cell simply has zero mass).
    """

    theta_min: float
    theta_max: float
    step: float
    n_symbols: int
    transform: Transform = "identity"

    def __post_init__(self):
        if not self.theta_min < self.theta_max:
            raise ConfigError("theta_min must be < theta_max")
        if self.step <= 0.0:
            raise ConfigError("step must be positive")
        if self.n_symbols < 1:
            raise ConfigError("n_symbols must be >= 1")
        if self.transform == "abs" and self.theta_min < 0.0:
            raise ConfigError("abs transform requires theta_min >= 0")
        if self.transform not in ("identity", "abs"):
            raise ConfigError(f"unknown transform {self.transform!r}")

    @property
    def points(self) -> np.ndarray:
        n = int(math.floor((self.theta_max - self.theta_min) / self.step + 1e-9)) + 1
        return self.theta_min + self.step * np.arange(n)

    @property
    def candidate_count(self) -> int:
        g = len(self.points)
        return math.comb(g + self.n_symbols - 2, self.n_symbols - 1)


def enumerate_theta_grid(
    grid: ThetaGrid, budget: int = DEFAULT_CANDIDATE_BUDGET
) -> Iterator[QuantizerParams]:
    """Yield every candidate in lexicographic order.

    Raises BudgetExceeded before yielding anything if the combinatorial
    count is above ``budget``.
    """
    count = grid.candidate_count
    if count > budget:
        raise BudgetExceeded(count, budget)
    points = grid.points.tolist()
    for combo in itertools.combinations_with_replacement(points, grid.n_symbols - 1):
        yield QuantizerParams(levels=combo)


def candidate_levels_array(
    grid: ThetaGrid, budget: int = DEFAULT_CANDIDATE_BUDGET
) -> np.ndarray:
    """All candidates as an (n_candidates, K-1) array, enumeration order."""
    count = grid.candidate_count
    if count > budget:
        raise BudgetExceeded(count, budget)
    k1 = grid.n_symbols - 1
    out = np.fromiter(
        itertools.chain.from_iterable(
            itertools.combinations_with_replacement(grid.points.tolist(), k1)
        ),
        dtype=float,
        count=count * k1,
    )
    return out.reshape(count, k1)


def pmf_table(
    model: ObservationModel, levels: np.ndarray, transform: Transform
) -> tuple[np.ndarray, np.ndarray]:
    """Post-quantizer pmfs under both hypotheses for a batch of candidates.

    ``levels`` has shape (n, K-1); returns (q0, q1), each (n, K).
    """
    levels = np.atleast_2d(np.asarray(levels, dtype=float))
    n, k1 = levels.shape
    ones = np.ones((n, 1))
    zeros = np.zeros((n, 1))
    out = []
    for hypothesis in (0, 1):
        cdf = model.cdf(levels, hypothesis, transform)
        q = np.diff(np.hstack([zeros, cdf, ones]), axis=1)
        out.append(np.clip(q, 0.0, None))
    return out[0], out[1]
