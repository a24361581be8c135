"""Slot-by-slot Monte Carlo simulation of the two-relay system.

Timing follows the early-arrival convention: the arrival (if any) joins the
shorter queue at the start of the slot — fair coin on a tie — then every
relay that is non-empty after the arrival attempts transmission with
probability ``a``; a lone attempt departs, two attempts collide and nothing
departs. The state is recorded at slot boundaries, matching the equilibrium
distribution the analytic solvers compute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import RelayQError
from .grids import TRANSFORMED, ProbabilityGrid
from .model import ModelParams
from .oracle import choose_truncation

__all__ = ["SimConfig", "SimResult", "simulate", "estimate_stability_boundary", "step"]

_CHUNK = 65536


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    warmup_slots: int = 10_000
    measure_slots: int = 1_000_000
    replications: int = 10

    def __post_init__(self) -> None:
        if self.measure_slots < 1:
            raise ValueError("measure_slots must be >= 1")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.warmup_slots < 0:
            raise ValueError("warmup_slots must be >= 0")


@dataclass(frozen=True)
class SimResult:
    e_qsum: float
    e_qsum_ci: float
    e_sojourn: float
    e_sojourn_ci: float
    correlation: float | None
    correlation_ci: float | None
    empirical: ProbabilityGrid  # transformed coordinates, overflow excluded
    overflow_mass: float
    grid_cap: int
    per_replication_qsum: tuple[float, ...]


def step(q1: int, q2: int, arrival: bool, tie_to_q1: bool, att1: bool, att2: bool) -> tuple[int, int]:
    """One slot of the early-arrival dynamics from state (q1, q2).

    ``att1``/``att2`` are the per-relay attempt draws; they only matter for a
    relay that is non-empty after the arrival is placed. Exposed so the slot
    mechanics can be exercised (and label-swapped) directly in tests.
    """
    if arrival:
        if q1 < q2:
            q1 += 1
        elif q2 < q1:
            q2 += 1
        elif tie_to_q1:
            q1 += 1
        else:
            q2 += 1
    t1 = att1 and q1 > 0
    t2 = att2 and q2 > 0
    if t1 and not t2:
        q1 -= 1
    elif t2 and not t1:
        q2 -= 1
    return q1, q2


def _replication_rng(seed: int, r: int) -> np.random.Generator:
    # replication seeds derive from (seed, index); the pooled entropy keeps
    # replication streams independent of each other and of the base seed
    return np.random.default_rng(np.random.SeedSequence((seed, r)))


def _run_one(params: ModelParams, config: SimConfig, r: int, cap: int):
    rng = _replication_rng(config.seed, r)
    lam, a = params.lam, params.a
    q1 = q2 = 0
    n_total = config.warmup_slots + config.measure_slots
    counts = np.zeros((cap + 1, cap + 1), dtype=np.int64)
    overflow = 0
    s1 = s2 = s11 = s22 = s12 = 0.0
    measured = 0
    done = 0
    while done < n_total:
        n = min(_CHUNK, n_total - done)
        u = rng.random((4, n))
        arr = u[0] < lam
        tie = u[1] < 0.5
        at1 = u[2] < a
        at2 = u[3] < a
        for t in range(n):
            slot = done + t
            if slot >= config.warmup_slots:
                # record the state seen at the slot boundary
                k, l = (q1, q2 - q1) if q1 <= q2 else (q2, q1 - q2)
                if k <= cap and l <= cap:
                    counts[k, l] += 1
                else:
                    overflow += 1
                s1 += q1
                s2 += q2
                s11 += q1 * q1
                s22 += q2 * q2
                s12 += q1 * q2
                measured += 1
            q1, q2 = step(q1, q2, arr[t], tie[t], at1[t], at2[t])
        done += n
    m = float(measured)
    mom = dict(q1=s1 / m, q2=s2 / m, q11=s11 / m, q22=s22 / m, q12=s12 / m)
    return counts, overflow, mom


def simulate(params: ModelParams, config: SimConfig) -> SimResult:
    """Replicated simulation with Student-t confidence intervals.

    Stability is not required: unstable parameter points simply show linear
    queue growth in the averages. Identical (params, config) pairs produce
    bitwise identical results.
    """
    stab = params.lam - 2 * params.a * params.abar < 0
    cap = 2 * choose_truncation(params, 1e-10) if stab else 100

    qsums, sojourns, correls = [], [], []
    counts = np.zeros((cap + 1, cap + 1), dtype=np.int64)
    overflow = 0
    for r in range(config.replications):
        c, ov, mom = _run_one(params, config, r, cap)
        counts += c
        overflow += ov
        qsum = mom["q1"] + mom["q2"]
        qsums.append(qsum)
        sojourns.append(qsum / params.lam)
        var1 = mom["q11"] - mom["q1"] ** 2
        var2 = mom["q22"] - mom["q2"] ** 2
        cov = mom["q12"] - mom["q1"] * mom["q2"]
        denom = math.sqrt(var1 * var2) if var1 > 0 and var2 > 0 else 0.0
        correls.append(cov / denom if denom > 0 else None)

    def mean_ci(xs: list[float]) -> tuple[float, float]:
        arr = np.asarray(xs, dtype=float)
        mean = float(arr.mean())
        if len(arr) < 2:
            return mean, float("inf")
        half = float(
            stats.t.ppf(0.975, len(arr) - 1) * arr.std(ddof=1) / math.sqrt(len(arr))
        )
        return mean, half

    e_qsum, ci_qsum = mean_ci(qsums)
    e_soj, ci_soj = mean_ci(sojourns)
    have_corr = [c for c in correls if c is not None]
    if len(have_corr) == len(correls) and have_corr:
        corr, ci_corr = mean_ci(have_corr)
    else:
        corr, ci_corr = None, None

    total = counts.sum() + overflow
    empirical = ProbabilityGrid(counts / total, TRANSFORMED)
    return SimResult(
        e_qsum=e_qsum,
        e_qsum_ci=ci_qsum,
        e_sojourn=e_soj,
        e_sojourn_ci=ci_soj,
        correlation=corr,
        correlation_ci=ci_corr,
        empirical=empirical,
        overflow_mass=overflow / total,
        grid_cap=cap,
        per_replication_qsum=tuple(qsums),
    )


def _growth_slope(lam: float, a: float, slots: int, rng: np.random.Generator) -> float:
    """Least-squares slope of the total queue length sampled along one run."""
    q1 = q2 = 0
    sample_every = 50
    samples = []
    done = 0
    while done < slots:
        n = min(_CHUNK, slots - done)
        u = rng.random((4, n))
        arr = u[0] < lam
        tie = u[1] < 0.5
        at1 = u[2] < a
        at2 = u[3] < a
        for t in range(n):
            if (done + t) % sample_every == 0:
                samples.append(q1 + q2)
            q1, q2 = step(q1, q2, arr[t], tie[t], at1[t], at2[t])
        done += n
    y = np.asarray(samples, dtype=float)
    x = np.arange(len(y), dtype=float) * sample_every
    slope = np.polyfit(x, y, 1)[0]
    return float(slope)


def estimate_stability_boundary(a: float, config: SimConfig, *, slots: int = 250_000) -> float:
    """Empirical critical arrival probability at attempt probability ``a``.

    Bisects on the arrival probability, classifying each run as unstable when
    the fitted growth slope of Q1+Q2 exceeds a threshold sized between the
    stable-side transient and the unstable-side drift. The true boundary is
    2*a*(1-a).
    """
    if not (0.0 < a < 1.0):
        raise RelayQError("attempt probability must be in (0,1)")
    threshold = 1.2e-3
    lo, hi = 0.01, 0.99
    probe = 0

    def unstable(lam: float) -> bool:
        nonlocal probe
        probe += 1
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, 7_700_000 + probe)))
        return _growth_slope(lam, a, slots, rng) > threshold

    if unstable(lo) or not unstable(hi):
        raise RelayQError("bisection endpoints do not bracket the boundary")
    while hi - lo > 0.008:
        mid = 0.5 * (lo + hi)
        if unstable(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
