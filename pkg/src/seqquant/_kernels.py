"""Numba kernels for the log-likelihood-ratio grid recursions.

Conventions shared by every kernel:

* Functions live on a uniform grid in log z with spacing ``dz``; symbol
  likelihood ratios become translations, so an update reads the current
  array at fractional index p = j + log(q1/q0)/dz.
* Inside the grid, values are linearly interpolated in (log z, value).
* Beyond the right edge the read saturates to a constant.
* Beyond the left edge the read is either a constant or decays like z
  itself (vals[0] * exp(dz * p), exact for functions proportional to z
  near zero).
* Candidate tables are fixed-stride (n_candidates, K) arrays; unused
  symbol slots carry weight 0 and shift 0. A symbol with q1 = 0 carries
  shift = -inf, which the left-edge rules map to the correct limit.

All loops reduce sequentially over candidates in enumeration order, so
results are bit-identical for any thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX_A = _U64(0xBF58476D1CE4E5B9)
_MIX_B = _U64(0x94D049BB133111EB)
_TWO_PI = 6.283185307179586
_INV_2_53 = 1.1102230246251565e-16  # 2^-53


@njit(cache=True, inline="always")
def _eval_scaled(vals, p, n, dz, right_const):
    """Interpolated read with z-proportional decay below the grid."""
    if p < 0.0:
        return vals[0] * np.exp(dz * p)
    if p >= n - 1.0:
        if p == n - 1.0:
            return vals[n - 1]
        return right_const
    i = int(p)
    w = p - i
    return vals[i] * (1.0 - w) + vals[i + 1] * w


@njit(cache=True, inline="always")
def _eval_const(vals, p, n, left_const, right_const):
    """Interpolated read with constant extensions on both sides."""
    if p < 0.0:
        return left_const
    if p >= n - 1.0:
        if p == n - 1.0:
            return vals[n - 1]
        return right_const
    i = int(p)
    w = p - i
    return vals[i] * (1.0 - w) + vals[i + 1] * w


@njit(cache=True, parallel=True)
def scan_continuation(rho, dz, lam0, q0w, shift, out_d, out_arg):
    """Exhaustive argmin of the continuation functional per grid point.

    out_d[j]   = min over candidates t of sum_k q0w[t,k]*rho_hat(j+shift[t,k])
    out_arg[j] = first minimizing candidate index (enumeration order).
    """
    n = rho.shape[0]
    n_cand = q0w.shape[0]
    n_sym = q0w.shape[1]
    for j in prange(n):
        best = np.inf
        best_t = -1
        for t in range(n_cand):
            acc = 0.0
            for k in range(n_sym):
                w = q0w[t, k]
                if w > 0.0:
                    acc += w * _eval_scaled(rho, j + shift[t, k], n, dz, lam0)
            if acc < best:
                best = acc
                best_t = t
        out_d[j] = best
        out_arg[j] = best_t


@njit(cache=True, parallel=True)
def scan_continuation_mask(
    rho, dz, lam0, q0w, shift, gap_abs, gap_rel, cont_cut, out_d, out_arg, out_mask
):
    """Argmin scan that also flags near-minimal candidates.

    Flags candidate t when its value comes within gap_abs + gap_rel*|min|
    of the per-point minimum, collected only where the minimum beats
    cont_cut[j] (= stopping value minus per-sample cost, plus slack): in
    stopping regions the update takes the stopping branch for any
    overestimated d_min, so candidates competitive only there can never
    change the iterate. Writes to out_mask only ever store 1, so the
    parallel union is deterministic.
    """
    n = rho.shape[0]
    n_cand = q0w.shape[0]
    n_sym = q0w.shape[1]
    for j in prange(n):
        best = np.inf
        best_t = -1
        for t in range(n_cand):
            acc = 0.0
            for k in range(n_sym):
                w = q0w[t, k]
                if w > 0.0:
                    acc += w * _eval_scaled(rho, j + shift[t, k], n, dz, lam0)
            if acc < best:
                best = acc
                best_t = t
        if best <= cont_cut[j]:
            cutoff = best + gap_abs + gap_rel * abs(best)
            for t in range(n_cand):
                if out_mask[t] == 0:
                    acc = 0.0
                    for k in range(n_sym):
                        w = q0w[t, k]
                        if w > 0.0:
                            acc += w * _eval_scaled(rho, j + shift[t, k], n, dz, lam0)
                    if acc <= cutoff:
                        out_mask[t] = 1
        out_d[j] = best
        out_arg[j] = best_t


@njit(cache=True)
def sweep_bellman_fixed(rho_in, rho_out, dz, lam0, stop_vals, r_kappa, eta_idx, q0w, shift):
    """One Bellman update with the candidate choice frozen per grid point.

    rho_out = min(stop_vals, r_kappa + D_eta rho_in, rho_in); the final
    clamp keeps the iterate sequence exactly nonincreasing in floating
    point. Returns the sup-norm change.
    """
    n = rho_in.shape[0]
    n_sym = q0w.shape[1]
    change = 0.0
    for j in range(n):
        t = eta_idx[j]
        acc = 0.0
        for k in range(n_sym):
            w = q0w[t, k]
            if w > 0.0:
                acc += w * _eval_scaled(rho_in, j + shift[t, k], n, dz, lam0)
        v = r_kappa[j] + acc
        s = stop_vals[j]
        if s < v:
            v = s
        if rho_in[j] < v:
            v = rho_in[j]
        rho_out[j] = v
        d = rho_in[j] - v
        if d > change:
            change = d
    return change


@njit(cache=True)
def sweep_operating(
    a_in,
    bw_in,
    n0_in,
    nw1_in,
    a_out,
    bw_out,
    n0_out,
    nw1_out,
    z,
    dz,
    lam1,
    j_b,
    j_a,
    eta_idx,
    q0w,
    shift,
):
    """One sweep of the four policy-evaluation systems.

    All four recursions run under the H0 symbol distribution with the
    H1-side quantities carried in likelihood-ratio-weighted form, so
    their sum reproduces the Bellman cost identically on the grid:

      a   : P(accept H1)                 a = 1 above A, 0 below B
      bw  : lam1 * z * P1(accept H0)     bw = lam1*z below B, 0 above A
      n0  : E0[remaining samples]        0 outside (B, A)
      nw1 : z * E1[remaining samples]    0 outside (B, A)

    Returns the sup-norm change across the four arrays.
    """
    n = a_in.shape[0]
    n_sym = q0w.shape[1]
    change = 0.0
    for j in range(n):
        if j <= j_b:
            va = 0.0
            vb = lam1 * z[j]
            v0 = 0.0
            v1 = 0.0
        elif j >= j_a:
            va = 1.0
            vb = 0.0
            v0 = 0.0
            v1 = 0.0
        else:
            t = eta_idx[j]
            acc_a = 0.0
            acc_b = 0.0
            acc_0 = 0.0
            acc_1 = 0.0
            for k in range(n_sym):
                w = q0w[t, k]
                if w > 0.0:
                    p = j + shift[t, k]
                    acc_a += w * _eval_const(a_in, p, n, 0.0, 1.0)
                    acc_b += w * _eval_scaled(bw_in, p, n, dz, 0.0)
                    acc_0 += w * _eval_const(n0_in, p, n, 0.0, 0.0)
                    acc_1 += w * _eval_const(nw1_in, p, n, 0.0, 0.0)
            va = acc_a
            vb = acc_b
            v0 = 1.0 + acc_0
            v1 = z[j] + acc_1
        a_out[j] = va
        bw_out[j] = vb
        n0_out[j] = v0
        nw1_out[j] = v1
        d = abs(va - a_in[j])
        if d > change:
            change = d
        d = abs(vb - bw_in[j])
        if d > change:
            change = d
        d = abs(v0 - n0_in[j])
        if d > change:
            change = d
        d = abs(v1 - nw1_in[j])
        if d > change:
            change = d
    return change


@njit(cache=True, inline="always")
def _mix64(x):
    x = (x ^ (x >> _U64(30))) * _MIX_A
    x = (x ^ (x >> _U64(27))) * _MIX_B
    return x ^ (x >> _U64(31))


@njit(cache=True, inline="always")
def _next_u01(state):
    """Advance a splitmix64 state; returns (state, uniform in (0, 1])."""
    state = state + _GOLDEN
    x = _mix64(state)
    return state, (np.float64(x >> _U64(11)) + 1.0) * _INV_2_53


@njit(cache=True, parallel=True)
def simulate_runs(
    seed,
    n_runs,
    loc,
    scale,
    use_abs,
    log_a,
    log_b,
    log_z_min,
    inv_dz,
    j_lo,
    j_hi,
    levels_tab,
    llr_tab,
    max_steps,
    out_tau,
    out_decision,
    out_log_z,
):
    """Monte Carlo runs of a quantized sequential test.

    Each run uses its own splitmix64 stream keyed by (seed, run index),
    so results do not depend on scheduling. Decisions: 1 = accept H1,
    0 = accept H0, -1 = truncated at max_steps.

    levels_tab (n_cont, K-1) and llr_tab (n_cont, K) hold the quantizer
    levels and per-symbol log likelihood ratios for the continuation
    grid points j_lo..j_hi; the lookup uses the nearest grid point in
    log z, clamped into that range.
    """
    n_levels = levels_tab.shape[1]
    for r in prange(n_runs):
        state = _mix64(_U64(seed) + _U64(r) * _GOLDEN)
        logz = 0.0
        steps = 0
        decision = np.int8(-1)
        while True:
            if logz >= log_a:
                decision = np.int8(1)
                break
            if logz <= log_b:
                decision = np.int8(0)
                break
            if steps >= max_steps:
                decision = np.int8(-1)
                break
            jj = int(np.rint((logz - log_z_min) * inv_dz))
            if jj < j_lo:
                jj = j_lo
            elif jj > j_hi:
                jj = j_hi
            row = jj - j_lo
            state, u1 = _next_u01(state)
            state, u2 = _next_u01(state)
            x = loc + scale * (np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2))
            t = abs(x) if use_abs else x
            y = 0
            for k in range(n_levels):
                if t > levels_tab[row, k]:
                    y += 1
                else:
                    break
            logz += llr_tab[row, y]
            steps += 1
        out_tau[r] = steps
        out_decision[r] = decision
        out_log_z[r] = logz
