"""Trajectory ensembles, survival-rate estimation and conditional laws.

Paths are advanced generation by generation, vectorized across the whole
ensemble; each couple's draw is keyed by (seed, path, generation, type,
couple index), so tallies are independent of scheduling and identical to
stepping the paths one at a time with :class:`~bgwqsd.streams.CoupleStream`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, StatisticsError
from .kernel import QsdEstimate, TruncatedKernel
from .model import ModelSpec, Vector, check_state
from .streams import mix, uniforms


@dataclass
class TrajectoryBatch:
    """Seeded ensemble of simulated paths.

    extinction_times[i] is the first generation with an empty population,
    or -1 if the path is still alive at the horizon (censored).  Censored
    paths count as survivors but contribute no extinction-time statistics.
    states_at[n] histograms the survivor states at generation n.
    """

    digest: str
    z0: Vector
    horizon: int
    n_traj: int
    seed: int
    extinction_times: np.ndarray
    capped: np.ndarray
    states_at: dict[int, dict[Vector, int]]
    n_capped: int = 0

    def survivors_at(self, n: int) -> int:
        t = self.extinction_times
        return int(np.sum((t == -1) | (t > n)))

    def survival_curve(self) -> np.ndarray:
        """Survivor fraction at n = 0..horizon (non-increasing)."""
        t = self.extinction_times
        extinct = np.bincount(t[t >= 0], minlength=self.horizon + 2)
        # survivors at n = paths with T > n, plus censored paths
        alive = self.n_traj - np.cumsum(extinct)[: self.horizon + 1]
        return alive / self.n_traj


def simulate_batch(
    spec: ModelSpec,
    z0,
    horizon: int,
    n_traj: int,
    seed: int,
    population_cap: int = 10_000_000,
) -> TrajectoryBatch:
    """Simulate n_traj independent paths from z0 up to the horizon.

    z0 may be a single state or a dict law {state: probability}; in the
    latter case initial states are drawn from it (counter-keyed, so still
    reproducible).  Paths stop at absorption.  A path whose total couple
    count exceeds population_cap is frozen and marked capped (it still
    counts as a survivor); this should never trigger for subcritical
    models and is reported when it does.
    """
    from .artifacts import model_digest

    if n_traj < 1:
        raise DomainError("n_traj must be positive")
    p, q = spec.p, spec.q
    if isinstance(z0, dict):
        atoms = [check_state(spec, z) for z in z0]
        probs = np.array([float(pr) for pr in z0.values()])
        if abs(probs.sum() - 1.0) > 1e-9 or probs.min() < 0:
            raise DomainError("initial law must be a probability vector")
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        u = uniforms(seed, 0xC0FFEE, np.arange(n_traj))
        picks = np.searchsorted(cdf, u, side="right").clip(0, len(atoms) - 1)
        states = np.array(atoms, dtype=np.int64)[picks]
        z0_record = atoms[int(np.argmax(probs))]
    else:
        z0_record = check_state(spec, z0)
        states = np.tile(np.array(z0_record, dtype=np.int64), (n_traj, 1))
    z0 = z0_record
    times = np.full(n_traj, -1, dtype=np.int64)
    capped = np.zeros(n_traj, dtype=bool)
    times[states.sum(axis=1) == 0] = 0
    states_at: dict[int, dict[Vector, int]] = {}

    def record(n: int) -> None:
        alive_mask = (states.sum(axis=1) > 0) & (times == -1) & ~capped
        hist: dict[Vector, int] = {}
        if np.any(alive_mask):
            uniq, counts = np.unique(states[alive_mask], axis=0, return_counts=True)
            hist = {tuple(int(v) for v in row): int(c) for row, c in zip(uniq, counts)}
        states_at[n] = hist

    record(0)
    for n in range(1, horizon + 1):
        idx = np.where((times == -1) & ~capped)[0]
        if idx.size == 0:
            for m in range(n, horizon + 1):
                states_at[m] = {}
            break
        Z = states[idx]
        m = idx.size
        W = np.zeros((m, q), dtype=np.int64)
        for i in range(p):
            counts = Z[:, i]
            tot = int(counts.sum())
            if tot == 0:
                continue
            path_rep = np.repeat(idx, counts)
            starts = np.repeat(np.cumsum(counts) - counts, counts)
            couple_idx = np.arange(tot) - starts
            u = uniforms(seed, path_rep, n, i, couple_idx)
            vecs = spec.offspring[i].vectors[spec.offspring[i].sample_indices(u)]
            seg = np.repeat(np.arange(m), counts)
            for j in range(q):
                W[:, j] += np.bincount(seg, weights=vecs[:, j], minlength=m).astype(np.int64)
        nxt = _mate_rows(spec, W)
        states[idx] = nxt
        tot_next = nxt.sum(axis=1)
        died = idx[tot_next == 0]
        times[died] = n
        over = idx[tot_next > population_cap]
        capped[over] = True
        record(n)

    return TrajectoryBatch(
        digest=model_digest(spec), z0=z0, horizon=horizon, n_traj=n_traj,
        seed=seed, extinction_times=times, capped=capped, states_at=states_at,
        n_capped=int(capped.sum()),
    )


def _mate_rows(spec: ModelSpec, w: np.ndarray) -> np.ndarray:
    kind = spec.mating.kind
    if kind == "identity":
        return w
    if kind == "perfect_fidelity":
        return np.minimum(w[:, 0], w[:, 1]).reshape(-1, 1)
    if kind == "promiscuous":
        return (w[:, 0] * (w[:, 1] >= 1)).reshape(-1, 1)
    from .model import mating_apply
    return np.array([mating_apply(spec.mating, row) for row in w], dtype=np.int64)


# ---------------------------------------------------------------------------
# Decay-rate estimation
# ---------------------------------------------------------------------------

@dataclass
class Theta0Estimate:
    theta_hat: float
    ci: tuple[float, float]
    window: tuple[int, int]
    survivors_at_end: int
    n_boot: int


def estimate_theta0(
    batch: TrajectoryBatch,
    min_survivors: int = 50,
    drop_fraction: float = 0.2,
    n_boot: int = 200,
) -> Theta0Estimate:
    """Slope of log survivor fraction, with a bootstrap confidence interval.

    The window ends at the last generation with at least ``min_survivors``
    alive and drops the leading ``drop_fraction`` of generations, where a
    polynomial prefactor can bend the curve before the exponential regime
    sets in.
    """
    curve = batch.survival_curve()
    counts = np.round(curve * batch.n_traj).astype(np.int64)
    usable = np.where(counts >= min_survivors)[0]
    if usable.size == 0 or usable.max() < 2:
        raise StatisticsError(
            f"fewer than {min_survivors} survivors beyond generation 1; "
            "increase n_traj or lower the horizon")
    n_end = int(usable.max())
    n_start = max(1, int(math.ceil(drop_fraction * n_end)))
    if n_end - n_start < 1:
        raise StatisticsError("survival window too short for a slope fit")
    ns = np.arange(n_start, n_end + 1)
    slope, _ = np.polyfit(ns, np.log(curve[n_start:n_end + 1]), 1)
    theta_hat = float(math.exp(slope))

    # bootstrap over path outcomes (extinction-time categories)
    t = batch.extinction_times
    cats, cat_counts = np.unique(t, return_counts=True)
    probs = cat_counts / batch.n_traj
    rng = np.random.default_rng(int(mix(batch.seed, 0xB0075EED)))
    slopes = np.empty(n_boot)
    for b in range(n_boot):
        resampled = rng.multinomial(batch.n_traj, probs)
        alive = np.zeros(n_end + 1, dtype=np.int64)
        for cat, c in zip(cats, resampled):
            if cat == -1:
                alive += c
            else:
                alive[:min(int(cat), n_end + 1)] += c
        frac = alive[n_start:n_end + 1] / batch.n_traj
        if np.any(frac <= 0):
            slopes[b] = np.nan
            continue
        slopes[b], _ = np.polyfit(ns, np.log(frac), 1)
    slopes = slopes[np.isfinite(slopes)]
    if slopes.size < max(10, n_boot // 4):
        raise StatisticsError("bootstrap resamples kept dying inside the window")
    lo, hi = np.exp(np.percentile(slopes, [2.5, 97.5]))
    return Theta0Estimate(theta_hat=theta_hat, ci=(float(lo), float(hi)),
                          window=(n_start, n_end),
                          survivors_at_end=int(counts[n_end]), n_boot=n_boot)


# ---------------------------------------------------------------------------
# Conditional (Yaglom) laws
# ---------------------------------------------------------------------------

def conditional_law(
    batch: TrajectoryBatch, n: int, min_survivors: int = 200
) -> dict[Vector, float]:
    """Empirical law of the state at n conditioned on survival."""
    if n not in batch.states_at:
        raise DomainError(f"generation {n} was not recorded (horizon {batch.horizon})")
    hist = batch.states_at[n]
    total = sum(hist.values())
    if total < min_survivors:
        raise StatisticsError(
            f"{total} survivors at generation {n} < threshold {min_survivors}")
    return {z: c / total for z, c in hist.items()}


def tv_distance(d1: dict[Vector, float], d2: dict[Vector, float]) -> float:
    """Total variation distance between two finitely supported laws."""
    keys = set(d1) | set(d2)
    return 0.5 * sum(abs(d1.get(k, 0.0) - d2.get(k, 0.0)) for k in keys)


def qsd_as_law(K: TruncatedKernel, q: QsdEstimate) -> dict[Vector, float]:
    return {z: float(pr) for z, pr in zip(K.states, q.nu) if pr > 0}


@dataclass
class YaglomRow:
    n: int
    survivors: int
    tv: float | None
    noise_floor: float | None


@dataclass
class YaglomResult:
    rows: list[YaglomRow]
    gamma_hat: float | None
    envelope_C: float | None
    fit_window: list[int]
    eventually_decreasing: bool
    notes: list[str] = field(default_factory=list)


def yaglom_convergence(
    spec: ModelSpec,
    z0,
    horizons,
    qsd_law: dict[Vector, float],
    n_traj: int,
    seed: int,
    min_survivors: int = 200,
    batch: TrajectoryBatch | None = None,
) -> YaglomResult:
    """Total-variation distance of the conditional law to the target QSD.

    Fits a geometric envelope C * gamma^n through the horizons whose TV
    estimate sits clearly above its own sampling noise floor (three floors,
    at least three points); beyond that the estimator is dominated by
    noise-induced bias of order sqrt(support size / survivors), which is
    reported instead of fitted.
    """
    horizons = sorted(set(int(n) for n in horizons))
    if not horizons:
        raise DomainError("no horizons requested")
    if batch is None:
        batch = simulate_batch(spec, z0, horizon=max(horizons), n_traj=n_traj, seed=seed)
    rows: list[YaglomRow] = []
    notes: list[str] = []
    for n in horizons:
        hist = batch.states_at.get(n, {})
        m = sum(hist.values())
        if m < min_survivors:
            rows.append(YaglomRow(n=n, survivors=m, tv=None, noise_floor=None))
            continue
        law = {z: c / m for z, c in hist.items()}
        tv = tv_distance(law, qsd_law)
        floor = 0.5 * sum(math.sqrt(2.0 * pr * (1.0 - pr) / (math.pi * m))
                          for pr in qsd_law.values())
        rows.append(YaglomRow(n=n, survivors=m, tv=tv, noise_floor=floor))

    usable = [r for r in rows if r.tv is not None and r.tv > 0.0
              and r.tv >= 3.0 * r.noise_floor]
    gamma_hat = None
    envelope_C = None
    fit_window = [r.n for r in usable]
    if len(usable) >= 3:
        xs = np.array([r.n for r in usable], dtype=float)
        ys = np.log([r.tv for r in usable])
        slope, _ = np.polyfit(xs, ys, 1)
        gamma_hat = float(math.exp(slope))
        envelope_C = float(max(r.tv / gamma_hat ** r.n for r in usable))
    else:
        notes.append("fewer than 3 horizons above the noise floor; no envelope fitted")

    decreasing = True
    for prev, cur in zip(usable, usable[1:]):
        if cur.tv > prev.tv + (cur.noise_floor or 0.0):
            decreasing = False
    return YaglomResult(rows=rows, gamma_hat=gamma_hat, envelope_C=envelope_C,
                        fit_window=fit_window, eventually_decreasing=decreasing,
                        notes=notes)
