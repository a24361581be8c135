"""Equilibrium distribution of the transformed chain by boundary compensation.

The interior balance equations are satisfied by product forms gamma^k delta^l
whose parameters lie on a cubic kernel curve. Starting from gamma_0 = rho^2,
alternately repairing the vertical-boundary error (which fixes a new gamma
for the current delta) and the horizontal-boundary error (which fixes a new
delta plus the l in {0, 1} boundary coefficients) produces a geometrically
convergent series of product-form terms. A direct linear solve of the balance
equations on a small box around the origin supplies the states where the
series converges slowly, and a single normalization finishes the job.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import GridError, NumericsError, StabilityError
from .grids import TRANSFORMED, ProbabilityGrid
from .model import ModelParams, transformed_inflows

__all__ = [
    "KernelRootPair",
    "CompensationSeries",
    "CompensationResult",
    "kernel_residual",
    "kernel_scale",
    "initial_gamma",
    "delta_root",
    "gamma_root",
    "vertical_coefficient",
    "horizontal_coefficients",
    "leading_boundary_coefficients",
    "compute_series",
    "evaluate_series",
    "asymptotic_ratios",
    "solve",
]

EPSILON_FLOOR = 1e-12  # 64-bit arithmetic cannot honour the 1e-30 regime

_MAX_STOP_ITER = 200


@dataclass(frozen=True)
class KernelRootPair:
    gamma: float
    delta: float


@dataclass(frozen=True)
class CompensationSeries:
    """Root and coefficient sequences of the compensation expansion.

    Index i runs over compensation steps: ``gammas`` holds gamma_0..gamma_{N+1}
    (one past the last delta, since the pair form couples c_{i+1} gamma_{i+1}
    with delta_i), ``deltas``/``d`` hold index 0..N, ``c[i]`` stores c_{i+1},
    and ``e0``/``e1`` hold the l in {0, 1} boundary coefficients including the
    leading term's own pair at index 0.
    """

    gammas: np.ndarray
    deltas: np.ndarray
    d: np.ndarray
    c: np.ndarray
    e0: np.ndarray
    e1: np.ndarray
    normalization: float = float("nan")

    @property
    def n_terms(self) -> int:
        return len(self.deltas) - 1


@dataclass(frozen=True)
class CompensationResult:
    series: CompensationSeries
    grid: ProbabilityGrid
    T: int
    inner_box: int
    n_used: int
    epsilon_requested: float
    epsilon_used: float
    converged: bool
    mass_history: tuple[float, ...]
    l2_seam_mismatch: float  # max |box solve - series form| on the l = 2 row


def kernel_residual(gamma: float, delta: float, params: ModelParams) -> float:
    """LHS - RHS of the interior product-form (kernel) equation."""
    p = params
    lhs = (1.0 - p.p_hold) * gamma * delta
    rhs = (p.p_dep * gamma + p.p_fwd) * delta**2 + p.p_both * delta**3 + p.p_dep * gamma**2
    return lhs - rhs


def kernel_scale(gamma: float, delta: float, params: ModelParams) -> float:
    """Magnitude of the largest kernel monomial; reference for relative residuals."""
    p = params
    return max(
        abs((1.0 - p.p_hold) * gamma * delta),
        abs((p.p_dep * gamma + p.p_fwd) * delta**2),
        abs(p.p_both * delta**3),
        abs(p.p_dep * gamma**2),
    )


def initial_gamma(params: ModelParams) -> float:
    """Starting decay rate gamma_0 = rho^2 (requires a stable system)."""
    rho = params.rho
    if rho >= 1.0:
        raise StabilityError(f"load {rho:.4f} >= 1; equilibrium does not exist")
    return rho * rho


def _bracketed_root(f, lo: float, hi: float) -> float:
    """Root of f in (lo, hi) by bisection with a safeguarded secant step.

    Requires f(lo) < 0 < f(hi). The bracket shrinks to relative width 4*eps
    (clamped by 1e-14 absolute), which the kernel-residual invariants need for
    roots that are themselves tiny.
    """
    fa, fb = f(lo), f(hi)
    if fa == 0.0:
        return lo
    if fb == 0.0:
        return hi
    if fa > 0.0 or fb < 0.0:
        raise NumericsError(
            f"no sign change on bracket ({lo:.6e}, {hi:.6e}): f = ({fa:.3e}, {fb:.3e})"
        )
    a, b = lo, hi
    for _ in range(300):
        width = b - a
        if width <= max(4.0 * np.finfo(float).eps * b, 1e-300):
            break
        # secant proposal from the bracket endpoints, kept safely interior
        denom = fb - fa
        x = b - fb * width / denom if denom != 0 else a + 0.5 * width
        if not (a + 0.05 * width <= x <= b - 0.05 * width):
            x = a + 0.5 * width
        fx = f(x)
        if fx == 0.0:
            return x
        if fx < 0.0:
            a, fa = x, fx
        else:
            b, fb = x, fx
    return 0.5 * (a + b)


def delta_root(gamma: float, params: ModelParams) -> float:
    """The unique delta in (0, gamma/2) on the kernel curve for fixed gamma.

    The half-gamma bracket is the proven localization radius for the small
    delta-root, so the sign change in it is guaranteed.
    """
    if not (0.0 < gamma < 1.0):
        raise NumericsError(f"gamma must be in (0,1), got {gamma}")
    return _bracketed_root(lambda d: kernel_residual(gamma, d, params), 0.0, gamma / 2.0)


def gamma_root(delta: float, params: ModelParams) -> float:
    """The unique gamma in (0, 0.8*delta) on the kernel curve for fixed delta."""
    if not (0.0 < delta < 1.0):
        raise NumericsError(f"delta must be in (0,1), got {delta}")
    return _bracketed_root(lambda g: kernel_residual(g, delta, params), 0.0, 0.8 * delta)


def vertical_coefficient(
    gamma_i: float, gamma_ip1: float, delta_i: float, d_i: float, params: ModelParams
) -> float:
    """Coefficient c_{i+1} pairing gamma_{i+1} with delta_i on the k = 0 column.

    Chosen so that d_i gamma_i^k delta_i^l + c_{i+1} gamma_{i+1}^k delta_i^l
    satisfies the vertical-boundary balance equations (l >= 3).
    """
    p = params
    base = delta_i * (1.0 - p.lbar * p.abar - p.p_both) - p.lbar * p.a * delta_i**2
    num = base - p.p_dep * gamma_i
    den = base - p.p_dep * gamma_ip1
    if den == 0.0 or not math.isfinite(den):
        raise NumericsError(
            f"vertical compensation denominator vanished at gamma={gamma_ip1!r}, delta={delta_i!r}"
        )
    return -num / den * d_i


def _horizontal_rows(gamma: float, params: ModelParams) -> np.ndarray:
    """Rows of the l in {0,1,2} balance equations acting on (e0, e1)."""
    p = params
    return np.array(
        [
            [gamma * (1.0 - p.p_hold), -(gamma * p.p_dep + p.p_fwd)],
            [-gamma * (p.p_fwd + 2.0 * gamma * p.p_dep), gamma * (1.0 - p.p_hold - p.p_both)],
            [gamma**2 * p.p_both, gamma**2 * p.p_dep],
        ]
    )


def _product_term_rows(gamma: float, delta: float, params: ModelParams) -> np.ndarray:
    """Same three equations acting on a product-form coefficient times delta^2."""
    p = params
    return np.array(
        [
            p.p_both,
            gamma * p.p_dep + p.p_fwd + delta * p.p_both,
            gamma * (1.0 - p.p_hold)
            - gamma * delta * p.p_dep
            - delta * p.p_fwd
            - delta**2 * p.p_both,
        ]
    )


def leading_boundary_coefficients(
    gamma0: float, delta0: float, d0: float, params: ModelParams
) -> tuple[float, float]:
    """Boundary coefficients (e0, e1) of the leading term d0 gamma0^k delta0^l.

    Three horizontal balance equations constrain two unknowns; the system is
    consistent precisely because gamma0 = rho^2 (the level-crossing argument
    behind the starting value). Solved by least squares with a consistency
    check, so parameter points where the geometry degenerates are reported
    instead of silently mis-solved.
    """
    M = _horizontal_rows(gamma0, params)
    r = _product_term_rows(gamma0, delta0, params) * d0 * delta0**2
    sol, *_ = np.linalg.lstsq(M, r, rcond=None)
    resid = float(np.linalg.norm(M @ sol - r))
    scale = float(np.linalg.norm(r)) + 1e-300
    if resid > 1e-9 * scale:
        raise NumericsError(
            f"leading-term boundary system inconsistent (residual {resid:.3e}); "
            "is gamma0 = rho^2 satisfied?"
        )
    return float(sol[0]), float(sol[1])


def horizontal_coefficients(
    gamma_ip1: float,
    delta_i: float,
    delta_ip1: float,
    c_ip1: float,
    params: ModelParams,
) -> tuple[float, float, float]:
    """Solve for (e0_{i+1}, e1_{i+1}, d_{i+1}) of one horizontal repair step.

    The combined term c_{i+1} gamma^k delta_i^l + d_{i+1} gamma^k delta_{i+1}^l
    (l >= 2) with boundary values e0 gamma^k, e1 gamma^k must satisfy the three
    horizontal balance equations; that is a 3x3 linear system.
    """
    M = np.zeros((3, 3))
    M[:, :2] = _horizontal_rows(gamma_ip1, params)
    M[:, 2] = -_product_term_rows(gamma_ip1, delta_ip1, params) * delta_ip1**2
    r = _product_term_rows(gamma_ip1, delta_i, params) * c_ip1 * delta_i**2
    try:
        sol = np.linalg.solve(M, r)
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"horizontal repair system singular: {exc}") from exc
    resid = float(np.max(np.abs(M @ sol - r)))
    if not np.all(np.isfinite(sol)) or resid > 1e-8 * (np.max(np.abs(r)) + 1e-300):
        raise NumericsError("horizontal repair system ill-conditioned")
    return float(sol[0]), float(sol[1]), float(sol[2])


def compute_series(params: ModelParams, n_terms: int) -> CompensationSeries:
    """Roots and coefficients through compensation step ``n_terms``."""
    g0 = initial_gamma(params)
    gammas = [g0]
    deltas = [delta_root(g0, params)]
    d = [1.0]
    c: list[float] = []
    e0_0, e1_0 = leading_boundary_coefficients(g0, deltas[0], d[0], params)
    e0 = [e0_0]
    e1 = [e1_0]
    for i in range(n_terms + 1):
        gammas.append(gamma_root(deltas[i], params))
        c.append(vertical_coefficient(gammas[i], gammas[i + 1], deltas[i], d[i], params))
        if i == n_terms:
            break
        deltas.append(delta_root(gammas[i + 1], params))
        e0i, e1i, di = horizontal_coefficients(
            gammas[i + 1], deltas[i], deltas[i + 1], c[i], params
        )
        e0.append(e0i)
        e1.append(e1i)
        d.append(di)
    return CompensationSeries(
        gammas=np.array(gammas),
        deltas=np.array(deltas),
        d=np.array(d),
        c=np.array(c),
        e0=np.array(e0),
        e1=np.array(e1),
    )


def asymptotic_ratios(params: ModelParams) -> tuple[float, float]:
    """Limit ratios (w, w_hat) of successive kernel roots.

    Roots of lbar*abar*a - w*(1 - hold) + lam*(a^2+abar^2)*w^2 = 0; exactly one
    lies inside the unit circle (w) and one outside (w_hat). Successive root
    ratios satisfy delta_i/gamma_i -> w and gamma_{i+1}/delta_i -> 1/w_hat.
    """
    if params.rho >= 1.0:
        raise StabilityError("ratio limits require a stable system")
    p = params
    a2 = p.p_fwd          # lam*(a^2 + abar^2)
    a1 = -(1.0 - p.p_hold)
    a0 = p.p_dep
    disc = a1 * a1 - 4 * a2 * a0
    if disc <= 0:
        raise NumericsError("ratio quadratic has no two distinct real roots")
    sq = math.sqrt(disc)
    # stable quadratic formula: avoid cancellation in the small root
    q = -(a1 - sq) / 2.0  # a1 < 0 so -a1 + sq > 0
    w_small = a0 / q
    w_big = q / a2
    return (w_small, w_big) if abs(w_small) < abs(w_big) else (w_big, w_small)


def _series_values_l2plus(series: CompensationSeries, n: int, ks: np.ndarray, ls: np.ndarray) -> np.ndarray:
    """Partial series over pair terms for rows l >= 2: sum_i (d_i g_i^k + c_i g_{i+1}^k) delta_i^l."""
    g = series.gammas
    gk = np.power.outer(g[: n + 2], ks.astype(float))   # (n+2, K)
    dl = np.power.outer(series.deltas[: n + 1], ls.astype(float))  # (n+1, L)
    coef = series.d[: n + 1, None] * gk[: n + 1] + series.c[: n + 1, None] * gk[1 : n + 2]
    return coef.T @ dl  # (K, L)


def _series_values_boundary(series: CompensationSeries, n: int, ks: np.ndarray, l: int) -> np.ndarray:
    """Partial series for rows l in {0, 1}, valid for k >= 1."""
    e = series.e0 if l == 0 else series.e1
    gk = np.power.outer(series.gammas[: n + 1], ks.astype(float))
    return e[: n + 1] @ gk


def evaluate_series(k: int, l: int, series: CompensationSeries, n_terms: int | None = None) -> float:
    """Unnormalized series value at a state in the explicit-form regimes.

    Valid for l >= 3 (pair form) and for l in {0, 1} with k >= 1 (boundary
    form). Other states — the l = 2 row and the states near the origin — are
    produced by the inner-box solve of :func:`solve`; asking for them here is
    a domain error.
    """
    n = series.n_terms if n_terms is None else n_terms
    if n > series.n_terms:
        raise GridError(f"series holds {series.n_terms} terms, requested {n}")
    if l >= 3:
        return float(_series_values_l2plus(series, n, np.array([k]), np.array([l]))[0, 0])
    if l in (0, 1) and k >= 1:
        return float(_series_values_boundary(series, n, np.array([k]), l)[0])
    raise GridError(f"state ({k}, {l}) is outside the series regimes (use solve())")


def _outer_values(series: CompensationSeries, n: int, T: int, B: int) -> np.ndarray:
    """Unnormalized values on [0,T]^2 with NaN on the inner box [0,B]^2.

    The l = 2 column outside the box uses the pair form as well; its stated
    range starts one row higher, and the mismatch against the inner-box solve
    is reported as a diagnostic by the caller.
    """
    vals = np.full((T + 1, T + 1), np.nan)
    ks = np.arange(T + 1)
    ls2 = np.arange(2, T + 1)
    vals[:, 2:] = _series_values_l2plus(series, n, ks, ls2)
    ks1 = np.arange(1, T + 1)
    vals[1:, 0] = _series_values_boundary(series, n, ks1, 0)
    vals[1:, 1] = _series_values_boundary(series, n, ks1, 1)
    vals[0, 0] = np.nan
    vals[0, 1] = np.nan
    vals[: B + 1, : B + 1] = np.nan
    return vals


def _inner_box_system(params: ModelParams, B: int):
    """Sparse balance-equation system on [0,B]^2 plus the out-of-box stencil taps."""
    size = (B + 1) ** 2
    idx = lambda k, l: k * (B + 1) + l
    rows, cols, vals = [], [], []
    taps = []  # (row, source_k, source_l, prob) with source outside the box
    for k in range(B + 1):
        for l in range(B + 1):
            r = idx(k, l)
            rows.append(r)
            cols.append(r)
            vals.append(1.0)
            for k2, l2, pr in transformed_inflows((k, l), params):
                if k2 <= B and l2 <= B:
                    rows.append(r)
                    cols.append(idx(k2, l2))
                    vals.append(-pr)
                else:
                    taps.append((r, k2, l2, pr))
    A = sp.csc_matrix(sp.coo_matrix((vals, (rows, cols)), shape=(size, size)))
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise NumericsError(f"inner-box balance system is singular: {exc}") from exc
    tap_rows = np.array([t[0] for t in taps], dtype=int)
    tap_probs = np.array([t[3] for t in taps])
    tap_states = [(t[1], t[2]) for t in taps]
    return lu, tap_rows, tap_probs, tap_states


def solve(
    params: ModelParams, epsilon: float = 1e-12, *, T_min: int | None = None
) -> CompensationResult:
    """Full compensation solve: series + inner-box closure + normalization.

    Iterates the series depth until the relative change of the unnormalized
    total mass on the truncated grid drops below ``epsilon`` (clamped at the
    64-bit floor). Returns the normalized grid and every sequence needed to
    evaluate the expansion. ``T_min`` enlarges the grid beyond the
    epsilon-derived truncation when a consumer needs more states (decay
    diagnostics want a deep tail, for instance).
    """
    epsilon_requested = epsilon
    epsilon = max(epsilon, EPSILON_FLOOR)
    rho = params.rho
    if rho >= 1.0:
        raise StabilityError(f"load {rho:.4f} >= 1; equilibrium does not exist")

    g0 = initial_gamma(params)
    # coefficient depth justified by the 0.4^i envelope of the root sequence
    n_hard = max(int(math.ceil(math.log(epsilon) / math.log(0.4))) + 6, 8)
    series = compute_series(params, n_hard)
    T = max(int(math.ceil(math.log(epsilon) / math.log(g0))), 3, T_min or 3)
    # the box must always cover the three origin states solved via their own equations
    B = max(T // 2, 2)

    lu, tap_rows, tap_probs, tap_states = _inner_box_system(params, B)
    tap_k = np.array([s[0] for s in tap_states])
    tap_l = np.array([s[1] for s in tap_states])

    def tap_values(n: int) -> np.ndarray:
        out = np.empty(len(tap_states))
        hi = tap_l >= 2
        if hi.any():
            g = series.gammas
            gk = np.power(g[: n + 2, None], tap_k[hi][None, :])
            dl = np.power(series.deltas[: n + 1, None], tap_l[hi][None, :])
            coef = series.d[: n + 1, None] * gk[: n + 1] + series.c[: n + 1, None] * gk[1 : n + 2]
            out[hi] = (coef * dl).sum(axis=0)
        lo = ~hi
        if lo.any():
            gk = np.power(series.gammas[: n + 1, None], tap_k[lo][None, :])
            evecs = np.where(tap_l[lo][None, :] == 0, series.e0[: n + 1, None], series.e1[: n + 1, None])
            out[lo] = (evecs * gk).sum(axis=0)
        return out

    mass_history: list[float] = []
    converged = False
    grid_un = None
    n_used = series.n_terms
    for n in range(1, series.n_terms + 1):
        outer = _outer_values(series, n, T, B)
        rhs = np.zeros((B + 1) ** 2)
        np.add.at(rhs, tap_rows, tap_probs * tap_values(n))
        inner = lu.solve(rhs)
        grid_un = outer.copy()
        grid_un[: B + 1, : B + 1] = inner.reshape(B + 1, B + 1)
        mass = float(grid_un.sum())
        mass_history.append(mass)
        if len(mass_history) >= 2:
            rel = abs(mass_history[-1] - mass_history[-2]) / abs(mass)
            if rel < epsilon:
                converged = True
                n_used = n
                break
        if n >= _MAX_STOP_ITER:
            break
    if grid_un is None:
        raise NumericsError("series iteration produced no grid")
    if not converged:
        last = (
            abs(mass_history[-1] - mass_history[-2]) / abs(mass_history[-1])
            if len(mass_history) >= 2
            else float("nan")
        )
        raise NumericsError(
            f"compensation stopping rule not met after {len(mass_history)} terms; "
            f"last relative change {last:.3e}"
        )

    total = float(grid_un.sum())
    grid_vals = grid_un / total
    # round-off guard: the construction is sign-definite, anything below is noise
    floor = -1e-13 * float(grid_vals.max())
    if float(grid_vals.min()) < floor:
        raise NumericsError(f"normalized grid has negative entry {grid_vals.min():.3e}")
    np.maximum(grid_vals, 0.0, out=grid_vals)
    grid_vals /= grid_vals.sum()

    # diagnostic: the l = 2 row is produced by the box solve; compare with the
    # pair-form series where both are available (outside states use the series)
    ks_diag = np.arange(max(B // 2, 3), B + 1)
    series_l2 = _series_values_l2plus(series, n_used, ks_diag, np.array([2]))[:, 0] / total
    seam = float(np.max(np.abs(series_l2 - grid_vals[ks_diag, 2]))) if len(ks_diag) else 0.0

    series = replace(series, normalization=1.0 / total)
    grid = ProbabilityGrid(grid_vals, TRANSFORMED)
    grid.validate(sum_tol=1e-12, neg_tol=0.0)
    return CompensationResult(
        series=series,
        grid=grid,
        T=T,
        inner_box=B,
        n_used=n_used,
        epsilon_requested=epsilon_requested,
        epsilon_used=epsilon,
        converged=converged,
        mass_history=tuple(mass_history),
        l2_seam_mismatch=seam,
    )
