"""System parameters and the slot-level transition structure.

The network has one saturated source, two relays with infinite buffers, and
a collision channel. Time is slotted (early-arrival convention): a Bernoulli
arrival at the start of a slot joins the shorter relay queue (fair coin on a
tie), every relay that is non-empty *after* the arrival attempts transmission
with probability ``a``, a lone attempt succeeds, two simultaneous attempts
collide and both packets are retained.

Two Markov chains describe the system: the original queue-length pair
(Q1, Q2) on the quadrant, and the transformed chain
(k, l) = (min(Q1, Q2), |Q1 - Q2|) that the analytic solvers work on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridError

__all__ = [
    "ModelParams",
    "RegionStep",
    "DriftVectors",
    "StabilityReport",
    "load",
    "is_stable",
    "drift_vectors",
    "classify_region",
    "transition_distribution",
    "transformed_transition_distribution",
    "transform_state",
    "balance_residuals",
    "lambda_for_load",
]


@dataclass(frozen=True)
class ModelParams:
    """Arrival probability ``lam`` and per-relay attempt probability ``a``.

    Both must lie strictly inside (0, 1); the degenerate boundary systems are
    rejected because several derived quantities divide by ``a``, ``1-a`` or
    ``1-lam``. Only the symmetric system is modelled: both relays share ``a``
    and ties are broken with a fair coin.
    """

    lam: float
    a: float

    def __post_init__(self) -> None:
        if not (0.0 < self.lam < 1.0):
            raise ValueError(f"arrival probability must be in (0,1), got {self.lam}")
        if not (0.0 < self.a < 1.0):
            raise ValueError(f"attempt probability must be in (0,1), got {self.a}")

    @property
    def abar(self) -> float:
        return 1.0 - self.a

    @property
    def lbar(self) -> float:
        return 1.0 - self.lam

    @property
    def rho(self) -> float:
        """System load; the chain is positive recurrent iff rho < 1."""
        return self.lam * (self.abar**2 + self.a**2) / (2 * self.lbar * self.abar * self.a)

    # Recurring one-slot event probabilities (both relays busy unless noted).
    @property
    def p_fwd(self) -> float:
        """Arrival and no departure: lam*(abar^2 + a^2)."""
        return self.lam * (self.abar**2 + self.a**2)

    @property
    def p_dep(self) -> float:
        """No arrival, exactly one departure from a given relay: lbar*abar*a."""
        return self.lbar * self.abar * self.a

    @property
    def p_both(self) -> float:
        """Arrival and one departure from a given relay: lam*a*abar."""
        return self.lam * self.a * self.abar

    @property
    def p_lone(self) -> float:
        """No arrival, a lone busy relay departs: lbar*a."""
        return self.lbar * self.a

    @property
    def p_hold(self) -> float:
        """Interior self-loop: lbar*(abar^2 + a^2) + lam*a*abar."""
        return self.lbar * (self.abar**2 + self.a**2) + self.p_both


@dataclass(frozen=True)
class RegionStep:
    """Step distribution of the original chain at one state: (di, dj, prob)."""

    region: str
    steps: tuple[tuple[int, int, float], ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class DriftVectors:
    """Mean one-step jump (E_x, E_y) per homogeneity region."""

    h: tuple[float, float]
    v: tuple[float, float]
    hp: tuple[float, float]
    vp: tuple[float, float]
    d: tuple[float, float]


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    margin: float  # lam - 2*a*abar; negative means stable


def load(params: ModelParams) -> float:
    """System load lam*(abar^2+a^2) / (2*lbar*abar*a)."""
    return params.rho


def is_stable(params: ModelParams) -> StabilityReport:
    """Stability verdict with the drift margin lam - 2*a*abar."""
    margin = params.lam - 2 * params.a * params.abar
    return StabilityReport(stable=margin < 0.0, margin=margin)


def lambda_for_load(rho: float, a: float) -> float:
    """Arrival probability giving load ``rho`` at attempt probability ``a``."""
    if rho <= 0:
        raise ValueError("load must be positive")
    ab = 1.0 - a
    c = 2 * rho * ab * a
    return c / (ab * ab + a * a + c)


def drift_vectors(params: ModelParams) -> DriftVectors:
    lam, a, ab = params.lam, params.a, params.abar
    ex_h = -a * ab
    ey_h = lam - a * ab
    ex_hp = -a * (params.lbar + lam * ab)
    ey_hp = lam * (ab * ab + a * a + a * ab)
    e_d = 0.5 * (lam - 2 * a * ab)
    return DriftVectors(
        h=(ex_h, ey_h),
        v=(ey_h, ex_h),
        hp=(ex_hp, ey_hp),
        vp=(ey_hp, ex_hp),
        d=(e_d, e_d),
    )


def classify_region(i: int, j: int) -> str:
    """One of H, V, Hp, Vp, D, O — the six homogeneity regions."""
    if i < 0 or j < 0:
        raise ValueError("states are non-negative pairs")
    if i == 0 and j == 0:
        return "O"
    if i == j:
        return "D"
    if j == 0:
        return "Hp"
    if i == 0:
        return "Vp"
    return "H" if i > j else "V"


def transition_distribution(state: tuple[int, int], params: ModelParams) -> RegionStep:
    """One-step law of the original chain (Q1, Q2) at ``state``.

    Destinations stay componentwise non-negative by construction; the step
    probabilities of each region sum to one.
    """
    i, j = state
    region = classify_region(i, j)
    p = params
    if region == "O":
        steps = ((0, 1, p.lam * p.abar / 2), (1, 0, p.lam * p.abar / 2),
                 (0, 0, p.lbar + p.lam * p.a))
    elif region == "Hp":
        steps = ((0, 1, p.p_fwd), (-1, 0, p.p_lone), (-1, 1, p.p_both),
                 (0, 0, p.lbar * p.abar + p.p_both))
    elif region == "Vp":
        steps = ((1, 0, p.p_fwd), (0, -1, p.p_lone), (1, -1, p.p_both),
                 (0, 0, p.lbar * p.abar + p.p_both))
    elif region == "D":
        steps = ((1, 0, p.p_fwd / 2), (0, 1, p.p_fwd / 2), (0, -1, p.p_dep),
                 (-1, 0, p.p_dep), (1, -1, p.p_both / 2), (-1, 1, p.p_both / 2),
                 (0, 0, p.p_hold))
    elif region == "H":
        steps = ((0, 1, p.p_fwd), (0, -1, p.p_dep), (-1, 0, p.p_dep),
                 (-1, 1, p.p_both), (0, 0, p.p_hold))
    else:  # V
        steps = ((1, 0, p.p_fwd), (0, -1, p.p_dep), (-1, 0, p.p_dep),
                 (1, -1, p.p_both), (0, 0, p.p_hold))
    return RegionStep(region=region, steps=steps)


def transform_state(i: int, j: int) -> tuple[int, int]:
    """(Q1, Q2) -> (min, absolute difference)."""
    return (min(i, j), abs(i - j))


def transformed_transition_distribution(
    state: tuple[int, int], params: ModelParams
) -> tuple[tuple[int, int, float], ...]:
    """One-step law of the transformed chain (min, diff) at ``state``.

    Lumping the original chain over the (i, j) <-> (j, i) symmetry gives a
    Markov chain on the quadrant whose balance equations are the ones the
    analytic solvers consume. Steps are (dk, dl, prob).
    """
    k, l = state
    p = params
    if k == 0 and l == 0:
        return ((0, 1, p.lam * p.abar), (0, 0, p.lbar + p.lam * p.a))
    if k == 0 and l == 1:
        return ((0, -1, p.p_lone), (1, -1, p.p_fwd),
                (0, 0, p.lbar * p.abar + 2 * p.p_both))
    if k == 0:  # l >= 2
        return ((0, -1, p.p_lone), (1, -1, p.p_fwd), (1, -2, p.p_both),
                (0, 0, p.lbar * p.abar + p.p_both))
    if l == 0:  # diagonal states
        return ((0, 1, p.p_fwd), (-1, 1, 2 * p.p_dep), (-1, 2, p.p_both),
                (0, 0, p.p_hold))
    if l == 1:
        return ((1, -1, p.p_fwd), (0, -1, p.p_dep), (-1, 1, p.p_dep),
                (0, 0, p.p_hold + p.p_both))
    # k >= 1, l >= 2
    return ((1, -1, p.p_fwd), (0, -1, p.p_dep), (-1, 1, p.p_dep),
            (1, -2, p.p_both), (0, 0, p.p_hold))


# Offsets (dk, dl) from which some transformed-chain step can land on a state.
_INFLOW_OFFSETS = (
    (0, 0), (0, 1), (-1, 1), (-1, 2), (1, -1), (1, -2), (1, 0), (0, -1), (-1, 0),
)


def transformed_inflows(
    state: tuple[int, int], params: ModelParams
) -> tuple[tuple[int, int, float], ...]:
    """Sources (k', l', prob) with a one-step transition into ``state``."""
    k, l = state
    out = []
    for dk, dl in _INFLOW_OFFSETS:
        k2, l2 = k - dk, l - dl
        if k2 < 0 or l2 < 0:
            continue
        pr = 0.0
        for sk, sl, q in transformed_transition_distribution((k2, l2), params):
            if k2 + sk == k and l2 + sl == l:
                pr += q
        if pr > 0.0:
            out.append((k2, l2, pr))
    return tuple(out)


def balance_residuals(values: np.ndarray, params: ModelParams) -> np.ndarray:
    """Residual |pi - inflow| of the transformed-chain balance equations.

    ``values`` is a (T+1)x(T+1) array over 0 <= k, l <= T. Entries whose
    equation stencil reaches outside the array are NaN. An exact stationary
    vector of the (untruncated) chain has residual ~ solver precision on
    every non-NaN entry.
    """
    pi = np.asarray(values, dtype=float)
    if pi.ndim != 2 or pi.shape[0] != pi.shape[1] or pi.shape[0] < 5:
        raise GridError("need a square grid of size at least 5x5")
    T = pi.shape[0] - 1
    p = params
    res = np.full_like(pi, np.nan)

    hold, fwd, dep, both, lone = p.p_hold, p.p_fwd, p.p_dep, p.p_both, p.p_lone
    lb_ab = p.lbar * p.abar

    # interior rows, Eq. for k>=1, l>=3 (stencil reaches k-1, k+1, l+2)
    k = np.arange(1, T)
    l = np.arange(3, T - 1)
    if len(k) and len(l):
        K, L = np.meshgrid(k, l, indexing="ij")
        res[1:T, 3:T - 1] = pi[K, L] - (
            pi[K, L] * hold + pi[K, L + 1] * dep + pi[K - 1, L + 1] * fwd
            + pi[K - 1, L + 2] * both + pi[K + 1, L - 1] * dep
        )
    kk = np.arange(1, T)
    if len(kk) and T >= 4:
        # l = 0 row (diagonal states of the original chain)
        res[1:T, 0] = pi[kk, 0] - (
            pi[kk, 0] * hold + pi[kk, 1] * dep + pi[kk - 1, 1] * fwd + pi[kk - 1, 2] * both
        )
        # l = 1 row
        res[1:T, 1] = pi[kk, 1] - (
            pi[kk, 1] * (hold + both) + pi[kk, 2] * dep + pi[kk - 1, 2] * fwd
            + pi[kk - 1, 3] * both + pi[kk, 0] * fwd + pi[kk + 1, 0] * 2 * dep
        )
        # l = 2 row
        res[1:T, 2] = pi[kk, 2] - (
            pi[kk, 2] * hold + pi[kk, 3] * dep + pi[kk - 1, 3] * fwd
            + pi[kk - 1, 4] * both + pi[kk + 1, 0] * both + pi[kk + 1, 1] * dep
        )
    # k = 0 column
    ll = np.arange(3, T)
    res[0, 3:T] = pi[0, ll] - (
        pi[0, ll] * (lb_ab + both) + pi[0, ll + 1] * lone + pi[1, ll - 1] * dep
    )
    res[0, 2] = pi[0, 2] - (
        pi[0, 2] * (lb_ab + both) + pi[0, 3] * lone + pi[1, 1] * dep + pi[1, 0] * both
    )
    res[0, 1] = pi[0, 1] - (
        pi[0, 1] * (lb_ab + 2 * both) + pi[0, 2] * lone + pi[1, 0] * 2 * dep
        + pi[0, 0] * p.lam * p.abar
    )
    res[0, 0] = pi[0, 0] - (pi[0, 0] * (p.lbar + p.lam * p.a) + pi[0, 1] * lone)
    return np.abs(res)


def max_interior_residual(values: np.ndarray, params: ModelParams) -> float:
    """Largest balance residual over states with a full in-grid stencil."""
    res = balance_residuals(values, params)
    return float(np.nanmax(res))
