"""Bellman fixed point on the likelihood-ratio grid and policy machinery.

The minimal expected remaining cost rho(z) of the jointly designed
quantizer/sequential test satisfies

    rho(z) = min{ lam0, z*lam1, r_kappa(z) + min_theta D_rho(z; theta) },
    D_rho(z; theta) = sum_k rho(z * Q1(k)/Q0(k)) * Q0(k)   (k in supp Q0),
    r_kappa(z) = (1 - kappa) + kappa * z,

with the optimal cost given by rho(1). The solver discretizes z on a
uniform log grid and iterates the right-hand side from the upper bound
rho_0 = min(lam0, lam1*z); iterates are pointwise nonincreasing. Full
argmin scans over the candidate set are interleaved with cheap sweeps
that keep the last argmin frozen, which changes nothing about the fixed
point or the monotonicity but cuts the number of expensive scans.

Grid sizing caveat: for kappa = 0 the accept-H1 threshold sits near
log B + lam0 * D_KL (sampling under H1 is free), which can be far above
Wald's guess. ``suggest_zgrid`` accounts for this and ``design_policy``
widens automatically when a stopping region still falls outside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import (
    ConfigError,
    DegeneratePolicy,
    GridTooNarrow,
    NonConvergence,
)
from .models import (
    DEFAULT_CANDIDATE_BUDGET,
    ObservationModel,
    Pmf,
    QuantizerParams,
    ThetaGrid,
    Transform,
    candidate_levels_array,
    pmf_table,
)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 100_000

#: Stopping branches win ties against continuation within this margin,
#: which suppresses phantom continuation points from interpolation noise.
BRANCH_MARGIN = 1e-9


@dataclass(frozen=True)
class DesignConfig:
    """Cost coefficients and the sampling-cost mixture weight.

    kappa = 0 penalizes samples under H0 only, kappa = 1 under H1 only;
    interior kappa is the Bayesian prior probability of H1.
    """

    lambda0: float
    lambda1: float
    kappa: float = 0.0

    def __post_init__(self):
        if self.lambda0 < 0.0 or self.lambda1 < 0.0:
            raise ConfigError("cost coefficients must be nonnegative")
        if not 0.0 <= self.kappa <= 1.0:
            raise ConfigError("kappa must lie in [0, 1]")


@dataclass(frozen=True)
class ZGrid:
    """Uniform grid in log z, adjusted so that log z = 0 is a grid point.

    The requested endpoints may shift by less than one spacing during
    the adjustment.
    """

    log_z_min: float
    log_z_max: float
    n_points: int = 2001

    def __post_init__(self):
        if self.n_points < 201:
            raise ConfigError("zgrid needs at least 201 points")
        if not self.log_z_min < 0.0 < self.log_z_max:
            raise ConfigError("zgrid must bracket log z = 0")
        dz = (self.log_z_max - self.log_z_min) / (self.n_points - 1)
        j0 = round(-self.log_z_min / dz)
        j0 = min(max(j0, 1), self.n_points - 2)
        object.__setattr__(self, "log_z_min", -j0 * dz)
        object.__setattr__(self, "log_z_max", (self.n_points - 1 - j0) * dz)
        object.__setattr__(self, "_j_one", j0)

    @property
    def dz(self) -> float:
        return (self.log_z_max - self.log_z_min) / (self.n_points - 1)

    @property
    def index_of_one(self) -> int:
        return self._j_one

    @property
    def log_z(self) -> np.ndarray:
        return self.log_z_min + self.dz * np.arange(self.n_points)

    @property
    def z(self) -> np.ndarray:
        return np.exp(self.log_z)

    @classmethod
    def from_error_targets(
        cls, alpha: float, beta: float, n_points: int = 2001, margin: float = 5.0
    ) -> "ZGrid":
        """Range from Wald's threshold approximations plus a log margin."""
        if not (0.0 < alpha < 1.0 and 0.0 < beta < 1.0):
            raise ConfigError("targets must lie in (0, 1)")
        log_a = math.log((1.0 - beta) / alpha)
        log_b = math.log(beta / (1.0 - alpha))
        return cls(min(log_b, -1.0) - margin, max(log_a, 1.0) + margin, n_points)


def suggest_zgrid(
    model: ObservationModel,
    design: DesignConfig,
    n_points: int = 2001,
    margin: float = 5.0,
) -> ZGrid:
    """Estimate a z-grid wide enough to contain both stopping regions.

    Each threshold is bounded by two mechanisms: the per-step sampling
    cost r_kappa(z) overtaking the stopping cost, and (when one side of
    the sampling cost vanishes) the cost of riding the likelihood drift
    across the whole continuation region, which scales like lambda times
    the unquantized KL divergence.
    """
    lam0 = max(design.lambda0, 2.0)
    lam1 = max(design.lambda1, 2.0)
    kap = design.kappa
    d01 = model.kl_unquantized("0to1")
    d10 = model.kl_unquantized("1to0")
    ride_hi = -math.log(lam1) + design.lambda0 * d01
    cost_hi = math.log(lam0) - math.log(max(kap, 1e-300))
    hi = max(min(ride_hi, cost_hi), math.log(lam0))
    ride_lo = math.log(lam0) - design.lambda1 * d10
    cost_lo = -math.log(lam1) + math.log(max(1.0 - kap, 1e-300))
    lo = min(max(ride_lo, cost_lo), -math.log(lam1))
    return ZGrid(min(lo, -1.0) - margin, max(hi, 1.0) + margin, n_points)


@dataclass(eq=False)
class ValueFunction:
    """rho sampled on the z-grid, plus solver metadata."""

    zgrid: ZGrid
    design: DesignConfig
    rho: np.ndarray
    iterations: int
    sup_norm_residual: float
    residual_trace: tuple = ()
    _d_min: np.ndarray | None = field(default=None, repr=False)
    _eta_idx: np.ndarray | None = field(default=None, repr=False)
    _levels: np.ndarray | None = field(default=None, repr=False)
    _active: np.ndarray | None = field(default=None, repr=False)
    n_full_scans: int = 0

    def __call__(self, z: float) -> float:
        """Interpolated rho with the solver's extrapolation rules."""
        if z < 0.0:
            raise ConfigError("rho is defined on z >= 0")
        if z == 0.0:
            return 0.0
        g = self.zgrid
        p = (math.log(z) - g.log_z_min) / g.dz
        n = g.n_points
        if p < 0.0:
            return float(self.rho[0] * math.exp(g.dz * p))
        if p >= n - 1:
            return float(self.rho[n - 1]) if p == n - 1 else self.design.lambda0
        i = int(p)
        w = p - i
        return float(self.rho[i] * (1.0 - w) + self.rho[i + 1] * w)


@dataclass(frozen=True)
class OperatingCharacteristics:
    """Error probabilities and average sample numbers of a policy."""

    alpha: float
    beta: float
    asn0: float
    asn1: float
    kappa: float

    @property
    def asn_kappa(self) -> float:
        return (1.0 - self.kappa) * self.asn0 + self.kappa * self.asn1


@dataclass(eq=False)
class Policy:
    """Thresholds plus the per-grid-point quantizer lookup table."""

    model: ObservationModel
    design: DesignConfig
    zgrid: ZGrid
    transform: Transform
    log_a: float
    log_b: float
    j_a: int
    j_b: int
    cont_levels: np.ndarray  # (n_cont, K-1), rows follow the grid

    @property
    def n_symbols(self) -> int:
        return self.cont_levels.shape[1] + 1

    @property
    def cont_log_z(self) -> np.ndarray:
        return self.zgrid.log_z[self.j_b + 1 : self.j_a]

    @property
    def eta_table(self) -> dict[float, QuantizerParams]:
        return {
            float(lz): QuantizerParams(levels=tuple(row))
            for lz, row in zip(self.cont_log_z, self.cont_levels)
        }


class CandidateSet:
    """Post-quantizer pmfs for a batch of parameter vectors.

    Kernel tables (weights and log-ratio shifts in grid units) are cached
    per grid spacing so the pmfs are computed once per calibration.
    """

    def __init__(self, model: ObservationModel, levels: np.ndarray, transform: Transform):
        levels = np.ascontiguousarray(np.atleast_2d(np.asarray(levels, dtype=float)))
        self.levels = levels
        self.transform = transform
        self.q0, self.q1 = pmf_table(model, levels, transform)
        self._tables: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    @classmethod
    def from_grid(
        cls,
        model: ObservationModel,
        grid: ThetaGrid,
        budget: int = DEFAULT_CANDIDATE_BUDGET,
    ) -> "CandidateSet":
        if grid.n_symbols == 1:
            levels = np.empty((1, 0))
        else:
            levels = candidate_levels_array(grid, budget=budget)
        return cls(model, levels, grid.transform)

    @property
    def n_candidates(self) -> int:
        return self.levels.shape[0]

    def tables(self, dz: float) -> tuple[np.ndarray, np.ndarray]:
        cached = self._tables.get(dz)
        if cached is not None:
            return cached
        with np.errstate(divide="ignore", invalid="ignore"):
            shift = np.log(self.q1 / self.q0) / dz
        dead = self.q0 <= 0.0
        shift[dead] = 0.0
        q0w = self.q0.copy()
        q0w[dead] = 0.0
        out = (np.ascontiguousarray(q0w), np.ascontiguousarray(shift))
        self._tables = {dz: out}  # keep at most one spacing alive
        return out


def _solve_on_candidates(
    cand: CandidateSet,
    design: DesignConfig,
    zgrid: ZGrid,
    tol: float,
    max_iter: int,
    eta_warm: np.ndarray | None = None,
    active_warm: np.ndarray | None = None,
) -> ValueFunction:
    lam0, lam1, kappa = design.lambda0, design.lambda1, design.kappa
    z = zgrid.z
    dz = zgrid.dz
    n = zgrid.n_points
    q0w, shift = cand.tables(dz)
    n_cand = cand.n_candidates
    stop_vals = np.minimum(lam0, lam1 * z)
    r_kappa = (1.0 - kappa) + kappa * z
    scale = max(1.0, lam0)

    rho = stop_vals.copy()
    buf = np.empty_like(rho)
    d_min = np.empty_like(rho)
    eta = np.empty(n, dtype=np.int64)
    mask = np.empty(n_cand, dtype=np.uint8)
    iterations = 0
    trace: list[float] = []

    # Restricted scans over a near-optimal candidate subset make most
    # iterations cheap; every convergence claim is still certified by a
    # full scan, so the returned residual is exact.
    use_active = n_cand > 4000
    gap_abs = 1e-6 * scale
    gap_rel = 2e-4
    active: np.ndarray | None = None
    act_tables: tuple[np.ndarray, np.ndarray] | None = None
    if use_active and active_warm is not None and len(active_warm) > 0:
        active = np.asarray(active_warm, dtype=np.int64)
        act_tables = (q0w[active], shift[active])

    def run_sweeps(eta_idx: np.ndarray, target: float, cap: int) -> None:
        nonlocal rho, buf, iterations
        cap = min(cap, max(max_iter - iterations - 1, 0))
        for _ in range(cap):
            change = _kernels.sweep_bellman_fixed(
                rho, buf, dz, lam0, stop_vals, r_kappa, eta_idx, q0w, shift
            )
            rho, buf = buf, rho
            iterations += 1
            if change <= target:
                break

    def full_scan(collect: bool) -> float:
        nonlocal iterations
        if collect:
            mask[:] = 0
            # collect near-best candidates where continuation is (close
            # to) winning under the scan being performed right now
            cont_cut = stop_vals - r_kappa + 1e-4 * scale
            _kernels.scan_continuation_mask(
                rho, dz, lam0, q0w, shift, gap_abs, gap_rel, cont_cut, d_min, eta, mask
            )
        else:
            _kernels.scan_continuation(rho, dz, lam0, q0w, shift, d_min, eta)
        iterations += 1
        t_rho = np.minimum(stop_vals, r_kappa + d_min)
        residual = float(np.max(np.abs(rho - t_rho)))
        trace.append(residual)
        return residual

    def finish(residual: float) -> ValueFunction:
        return ValueFunction(
            n_full_scans=full_scans,
            zgrid=zgrid,
            design=design,
            rho=rho,
            iterations=iterations,
            sup_norm_residual=residual,
            residual_trace=tuple(trace),
            _d_min=d_min.copy(),
            _eta_idx=eta.copy(),
            _levels=cand.levels,
            _active=active,
        )

    def apply_update() -> None:
        nonlocal rho, buf
        t_rho = np.minimum(stop_vals, r_kappa + d_min)
        np.minimum(t_rho, rho, out=t_rho)
        rho, buf = t_rho, rho

    def rebuild_active() -> None:
        nonlocal active, act_tables
        active = np.nonzero(mask)[0].astype(np.int64)
        act_tables = (q0w[active], shift[active])

    if eta_warm is not None and eta_warm.shape == (n,):
        run_sweeps(eta_warm, tol * 1e-2 * scale, 50_000)

    full_scans = 0
    prev_eta: np.ndarray | None = None
    while iterations < max_iter:
        if not use_active or act_tables is None:
            # cold full scan; from the second one on, harvest the active set
            collect = use_active and full_scans >= 1
            residual = full_scan(collect)
            full_scans += 1
            if residual <= tol:
                return finish(residual)
            apply_update()
            if collect:
                rebuild_active()
        else:
            aq, ash = act_tables
            _kernels.scan_continuation(rho, dz, lam0, aq, ash, d_min, eta)
            iterations += 1
            np.take(active, eta, out=eta)
            t_rho = np.minimum(stop_vals, r_kappa + d_min)
            residual = float(np.max(np.abs(rho - t_rho)))
            trace.append(residual)
            np.minimum(t_rho, rho, out=t_rho)
            rho, buf = t_rho, rho
            if residual <= tol:
                # the subset reached its fixed point: certify against all
                # candidates; on failure enlarge the gap and recollect on
                # the next full scan
                residual = full_scan(collect=False)
                full_scans += 1
                if residual <= tol:
                    return finish(residual)
                gap_abs *= 4.0
                gap_rel *= 4.0
                apply_update()
                active = None
                act_tables = None
        # the argmin only matters where continuation actually wins;
        # outside that region it may jitter forever
        cont = r_kappa + d_min < stop_vals
        stable = prev_eta is not None and bool(
            np.array_equal(eta[cont], prev_eta[cont])
        )
        prev_eta = eta.copy()
        if stable:
            # argmin settled: polish the fixed-policy system to a stall so
            # the next scan certifies the residual near machine precision
            # (the monotone clamp makes an exact stall reachable)
            run_sweeps(prev_eta, 0.0, 30_000)
        else:
            run_sweeps(prev_eta, max(tol * 0.05, residual * 1e-4), 20_000)

    raise NonConvergence(
        f"Bellman residual {trace[-1]:.3e} > tol {tol:.3e} "
        f"after {iterations} iterations",
        residual_trace=trace,
    )


def solve_rho(
    model: ObservationModel,
    grid: ThetaGrid,
    design: DesignConfig,
    zgrid: ZGrid,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    budget: int = DEFAULT_CANDIDATE_BUDGET,
) -> ValueFunction:
    """Solve the fixed-point equation over the full parameter grid."""
    if tol <= 0.0:
        raise ConfigError("tol must be positive")
    cand = CandidateSet.from_grid(model, grid, budget=budget)
    return _solve_on_candidates(cand, design, zgrid, tol, max_iter)


def solve_rho_fixed(
    model: ObservationModel,
    theta: QuantizerParams,
    transform: Transform,
    design: DesignConfig,
    zgrid: ZGrid,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> ValueFunction:
    """Solve the fixed point with the parameter vector frozen at theta."""
    levels = np.asarray(theta.levels, dtype=float).reshape(1, -1)
    cand = CandidateSet(model, levels, transform)
    return _solve_on_candidates(cand, design, zgrid, tol, max_iter)


def d_rho(vf: ValueFunction, z: float, pmf0, pmf1) -> float:
    """Continuation functional sum_{k in supp pmf0} vf(z*l_k) * pmf0(k)."""
    if z <= 0.0:
        raise ConfigError("d_rho requires z > 0")
    p0 = pmf0.as_array() if isinstance(pmf0, Pmf) else np.asarray(pmf0, float)
    p1 = pmf1.as_array() if isinstance(pmf1, Pmf) else np.asarray(pmf1, float)
    total = 0.0
    for q0k, q1k in zip(p0, p1):
        if q0k > 0.0:
            total += q0k * vf(z * q1k / q0k)
    return total


def bellman_rhs(
    vf: ValueFunction,
    z: float,
    candidates: Sequence[tuple],
) -> float:
    """Right-hand side of the fixed-point equation at a single z."""
    design = vf.design
    best = math.inf
    for pmf0, pmf1 in candidates:
        v = d_rho(vf, z, pmf0, pmf1)
        if v < best:
            best = v
    r = (1.0 - design.kappa) + design.kappa * z
    return min(design.lambda0, design.lambda1 * z, r + best)


def extract_policy(
    vf: ValueFunction,
    model: ObservationModel,
    grid: ThetaGrid,
    design: DesignConfig,
    budget: int = DEFAULT_CANDIDATE_BUDGET,
) -> Policy:
    """Read thresholds and the quantizer lookup table off the value function.

    log_A is the smallest grid point where stopping for H1 attains the
    Bellman minimum, log_B the largest where stopping for H0 does; the
    points strictly between form the continuation region. Stopping wins
    ties within BRANCH_MARGIN.
    """
    if design != vf.design:
        raise ConfigError("design does not match the one the solver used")
    if vf._levels is not None and vf._d_min is not None and vf._eta_idx is not None:
        levels, d_min, eta = vf._levels, vf._d_min, vf._eta_idx
    else:
        cand = CandidateSet.from_grid(model, grid, budget=budget)
        levels = cand.levels
        q0w, shift = cand.tables(vf.zgrid.dz)
        d_min = np.empty(vf.zgrid.n_points)
        eta = np.empty(vf.zgrid.n_points, dtype=np.int64)
        _kernels.scan_continuation(
            vf.rho, vf.zgrid.dz, design.lambda0, q0w, shift, d_min, eta
        )
    return _policy_from_scan(vf, model, grid.transform, levels, d_min, eta)


def _policy_from_scan(
    vf: ValueFunction,
    model: ObservationModel,
    transform: Transform,
    levels: np.ndarray,
    d_min: np.ndarray,
    eta: np.ndarray,
) -> Policy:
    design = vf.design
    z = vf.zgrid.z
    lam0, lam1, kappa = design.lambda0, design.lambda1, design.kappa
    v_cont = (1.0 - kappa) + kappa * z + d_min
    stop_val = np.minimum(lam0, lam1 * z)
    stop_wins = stop_val <= v_cont + BRANCH_MARGIN
    h1_side = lam0 <= lam1 * z
    stop_h0 = stop_wins & ~h1_side
    stop_h1 = stop_wins & h1_side

    if not stop_h0.any() or not stop_h1.any():
        raise GridTooNarrow(
            missing_low=not stop_h0.any(), missing_high=not stop_h1.any()
        )
    j_b = int(np.nonzero(stop_h0)[0].max())
    j_a = int(np.nonzero(stop_h1)[0].min())
    if j_a - j_b <= 1:
        raise DegeneratePolicy(
            "no continuation region: immediate stopping is optimal "
            f"(lambda0={lam0}, lambda1={lam1})"
        )
    cont_levels = np.ascontiguousarray(levels[eta[j_b + 1 : j_a]])
    return Policy(
        model=model,
        design=design,
        zgrid=vf.zgrid,
        transform=transform,
        log_a=float(vf.zgrid.log_z[j_a]),
        log_b=float(vf.zgrid.log_z[j_b]),
        j_a=j_a,
        j_b=j_b,
        cont_levels=cont_levels,
    )


def design_policy(
    model: ObservationModel,
    cand: CandidateSet,
    design: DesignConfig,
    zgrid: ZGrid | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    eta_warm: np.ndarray | None = None,
    active_warm: np.ndarray | None = None,
    max_widen: int = 4,
) -> tuple[ValueFunction, Policy]:
    """Solve and extract, widening the z-grid until both thresholds fit."""
    if zgrid is None:
        zgrid = suggest_zgrid(model, design)
    for _ in range(max_widen + 1):
        vf = _solve_on_candidates(
            cand, design, zgrid, tol, max_iter, eta_warm, active_warm
        )
        try:
            policy = _policy_from_scan(
                vf, model, cand.transform, cand.levels, vf._d_min, vf._eta_idx
            )
            return vf, policy
        except GridTooNarrow as err:
            span = zgrid.log_z_max - zgrid.log_z_min
            lo = zgrid.log_z_min - (span if err.missing_low else 0.0)
            hi = zgrid.log_z_max + (span if err.missing_high else 0.0)
            zgrid = ZGrid(lo, hi, zgrid.n_points)
            eta_warm = None
    raise NonConvergence(
        f"stopping regions still outside the z-grid after {max_widen} widenings"
    )


def evaluate_policy(
    model: ObservationModel,
    policy: Policy,
    tol: float = 1e-10,
    max_sweeps: int = 500_000,
) -> OperatingCharacteristics:
    """Operating characteristics by solving the grid recursions.

    The four linear systems (acceptance probabilities and expected
    sample counts under each hypothesis) are iterated to a stall well
    below ``tol``; alpha, beta and the ASNs are read off at z = 1.
    """
    design = policy.design
    zg = policy.zgrid
    uniq, inverse = np.unique(policy.cont_levels, axis=0, return_inverse=True)
    cand = CandidateSet(model, uniq, policy.transform)
    q0w, shift = cand.tables(zg.dz)
    n = zg.n_points
    eta_idx = np.zeros(n, dtype=np.int64)
    eta_idx[policy.j_b + 1 : policy.j_a] = np.asarray(inverse, dtype=np.int64).ravel()

    z = zg.z
    lam1 = design.lambda1
    a = np.where(np.arange(n) >= policy.j_a, 1.0, 0.0)
    bw = np.where(np.arange(n) <= policy.j_b, lam1 * z, 0.0)
    n0 = np.zeros(n)
    nw1 = np.zeros(n)
    outs = [np.empty_like(v) for v in (a, bw, n0, nw1)]

    scale = max(1.0, design.lambda0, lam1)
    stall = 1e-15 * scale
    change = math.inf
    for _ in range(max_sweeps):
        change = _kernels.sweep_operating(
            a, bw, n0, nw1, outs[0], outs[1], outs[2], outs[3],
            z, zg.dz, lam1, policy.j_b, policy.j_a, eta_idx, q0w, shift,
        )
        (a, bw, n0, nw1), outs = outs, [a, bw, n0, nw1]
        if change <= stall:
            break
    if change > tol * scale:
        raise NonConvergence(
            f"policy evaluation stalled at change {change:.3e} > {tol:.1e}"
        )
    j1 = zg.index_of_one
    beta = float(bw[j1] / lam1) if lam1 > 0.0 else 0.0
    return OperatingCharacteristics(
        alpha=float(a[j1]),
        beta=beta,
        asn0=float(n0[j1]),
        asn1=float(nw1[j1]),
        kappa=design.kappa,
    )
