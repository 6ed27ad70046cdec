"""Resolvent-series measures: a whole ladder of quasi-stationary candidates.

For every rate lam strictly between the kernel's spectral radius and 1,
the normalized resolvent series anchored at a large state x,

    mu = ( sum_l lam^{-l} delta_x K^l ) / S,   S = sum_l lam^{-l} K^l(x, alive),

satisfies the exact one-step identity  mu K = lam mu - (lam/S) delta_x.
The defect lam/S shrinks as the anchor grows (S blows up), which is the
finite-window shadow of the construction of a continuum of
quasi-stationary distributions indexed by their absorption parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DivergenceError, DomainError, RangeError
from .kernel import (
    QsdEstimate,
    TruncatedKernel,
    spectral_radius,
    survival_log_profile,
)
from .model import Vector


@dataclass
class QsdFamilyEntry:
    lam: float
    anchor: Vector
    anchor_index: int
    mu: np.ndarray
    normalizer: float        # S
    one_step_defect: float   # |mu K - lam mu|_1, equals lam/S up to the tail
    identity_residual: float  # |mu K - lam mu + (lam/S) delta_anchor|_1
    terms: int


def resolvent_measure(
    K: TruncatedKernel,
    lam: float,
    anchor,
    tail_tol: float = 1e-12,
    theta: float | None = None,
    max_terms: int = 200_000,
) -> QsdFamilyEntry:
    """Sum the series until the projected tail is negligible, then normalize.

    Requires theta(K) < lam < 1: below the spectral radius the series
    diverges, and lam = 1 is the trivial stationary endpoint.
    """
    if lam >= 1.0:
        raise DomainError(f"lam must lie in (theta, 1); got {lam}")
    if theta is None:
        theta = spectral_radius(K).theta
    if lam <= theta:
        raise DivergenceError(
            f"the resolvent series diverges at lam={lam} <= spectral radius {theta}")
    rho = theta / lam
    idx = K.state_index(anchor)
    v = np.zeros(K.n_states)
    v[idx] = 1.0
    acc = v.copy()
    S = 1.0
    for ell in range(1, max_terms + 1):
        v = (v @ K.matrix) / lam
        t = float(v.sum())
        acc += v
        S += t
        schedule_bound = rho ** (ell + 1) / (1.0 - rho)
        projected_tail = t * rho / (1.0 - rho)
        if schedule_bound <= tail_tol and projected_tail <= tail_tol * max(S, 1.0):
            break
    else:
        raise ConvergenceError(
            f"resolvent series at lam={lam} still above tail_tol={tail_tol} "
            f"after {max_terms} terms")
    mu = acc / S
    push = mu @ K.matrix
    defect_vec = push - lam * mu
    one_step_defect = float(np.abs(defect_vec).sum())
    defect_vec[idx] += lam / S
    identity_residual = float(np.abs(defect_vec).sum())
    return QsdFamilyEntry(
        lam=lam, anchor=K.states[idx], anchor_index=idx, mu=mu,
        normalizer=S, one_step_defect=one_step_defect,
        identity_residual=identity_residual, terms=ell,
    )


def default_lambda_grid(theta: float, count: int = 8, hi: float = 0.95) -> list[float]:
    """Geometric grid in (theta + 0.05, 0.95), avoiding both endpoints' traps."""
    lo = theta + 0.05
    if lo >= hi:
        raise DomainError(
            f"no room for a rate grid: theta + 0.05 = {lo} is not below {hi}")
    return list(np.exp(np.linspace(math.log(lo), math.log(hi), count)))


def default_anchor_ladder(K: TruncatedKernel, z_star=None) -> list[Vector]:
    """Anchor states of growing size, aligned with the Perron direction.

    The n-th anchor is round(n * d) with d = z_star scaled to max entry 1,
    clipped to the truncation window; for one-type models this is simply
    1, 2, ..., R.
    """
    if z_star is None:
        d = np.ones(K.p)
    else:
        d = np.asarray(z_star, dtype=float)
        d = d / d.max()
    ladder: list[Vector] = []
    for n in range(1, K.radius + 1):
        x = tuple(int(c) for c in np.round(n * d))
        if sum(x) == 0 or sum(x) > K.radius or x not in K.index:
            continue
        if not ladder or x != ladder[-1]:
            ladder.append(x)
    return ladder


@dataclass
class FamilyReport:
    entries: list[QsdFamilyEntry]
    defect_monotone: dict[float, bool]  # per lam: defect strictly decreasing in anchor

    @property
    def flagged(self) -> list[float]:
        return [lam for lam, mono in self.defect_monotone.items() if not mono]


def build_family(
    K: TruncatedKernel,
    lambda_grid,
    anchors=None,
    tail_tol: float = 1e-12,
    theta: float | None = None,
    z_star=None,
) -> FamilyReport:
    """One entry per (rate, anchor); flags rates whose defect fails to shrink.

    The normalizer S grows along the anchor ladder, so the defect lam/S must
    decrease; a rate that breaks the trend is reported, not asserted.
    """
    if theta is None:
        theta = spectral_radius(K).theta
    if anchors is None:
        anchors = default_anchor_ladder(K, z_star)
    entries = []
    monotone: dict[float, bool] = {}
    for lam in lambda_grid:
        per_anchor = [resolvent_measure(K, lam, x, tail_tol=tail_tol, theta=theta)
                      for x in anchors]
        entries.extend(per_anchor)
        defects = [e.one_step_defect for e in per_anchor]
        monotone[lam] = all(b < a for a, b in zip(defects, defects[1:]))
    return FamilyReport(entries=entries, defect_monotone=monotone)


@dataclass
class Upsilon0Estimate:
    """Smallest rate whose inverse-power extinction moment stays finite.

    On a finite truncation the extinction-time tail is geometric with rate
    theta(K), so the estimator is theta(K) itself; the survival-profile
    regression is attached as a consistency check, not a second estimate.
    """

    upsilon0: float
    theta: float
    regression_rate: float
    gap: float
    window: tuple[int, int]
    state: Vector


def estimate_upsilon0(
    K: TruncatedKernel,
    q: QsdEstimate | None = None,
    n_max: int = 120,
    min_points: int = 5,
) -> Upsilon0Estimate:
    """upsilon0-hat = theta(K), cross-checked by the survival tail slope."""
    if q is None:
        q = spectral_radius(K)
    state = K.states[int(np.argmax(q.eta))]
    logs = survival_log_profile(K, state, n_max)
    finite = np.isfinite(logs)
    n_hi = int(np.max(np.where(finite)[0]))
    n_lo = max(1, n_hi // 2)
    if n_hi - n_lo + 1 < min_points:
        raise RangeError(
            f"survival from {state} underflows after {n_hi} steps; "
            "not enough tail for the consistency regression")
    ns = np.arange(n_lo, n_hi + 1)
    slope, _ = np.polyfit(ns, logs[n_lo:n_hi + 1], 1)
    rate = float(math.exp(slope))
    return Upsilon0Estimate(
        upsilon0=q.theta, theta=q.theta, regression_rate=rate,
        gap=abs(rate - q.theta), window=(n_lo, n_hi), state=state,
    )
