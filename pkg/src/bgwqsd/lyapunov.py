"""Foster-Lyapunov drift for the weight Q_a = P^a and the four-part
exponential-convergence diagnostic (minorization, drift pair, Harnack
ratio, aperiodicity) with the explicit construction of the lower drift
function phi_2.

The drift inequality being verified on states 0 < |z| <= R is

    E_z[ Q_a(Z_1) 1_{Z_1 != 0} ]  <=  theta_a Q_a(z) + C_a,

with theta_a below the kernel decay rate theta_0.  Along rays k * z_star
the left side divided by Q_a(k z_star) approaches lambda_star^a, which is
why exponents a with lambda_star^a < theta_0 admit such a pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import DomainError
from .kernel import QsdEstimate, TruncatedKernel
from .model import ModelSpec, Vector, step_distribution
from .spectral import SpectralResult, lyapunov_weight
from .streams import CoupleStream
from . import model as _model


# ---------------------------------------------------------------------------
# Moment condition
# ---------------------------------------------------------------------------

@dataclass
class MomentCheck:
    """Is lambda_star^r < theta_0?  Finite-support laws always have the moments."""

    r: float
    lambda_star: float
    theta0_hat: float
    ok: bool
    margin: float           # theta0_hat - lambda_star^r
    min_exponent: float     # |log theta0| / |log lambda_star|, the implied floor for r
    subcritical: bool
    reason: str = ""
    max_moment: float = 0.0


def check_moment_assumption(
    spec: ModelSpec, s: SpectralResult, theta0_hat: float, r: float
) -> MomentCheck:
    if r <= 1:
        raise DomainError("the moment exponent r must exceed 1")
    lam = s.lambda_star
    max_moment = float(max(law.moment(r).max() for law in spec.offspring))
    if lam >= 1:
        return MomentCheck(r=r, lambda_star=lam, theta0_hat=theta0_hat, ok=False,
                           margin=float("-inf"), min_exponent=float("nan"),
                           subcritical=False, reason="not subcritical",
                           max_moment=max_moment)
    margin = theta0_hat - lam ** r
    min_exponent = abs(math.log(theta0_hat)) / abs(math.log(lam))
    return MomentCheck(r=r, lambda_star=lam, theta0_hat=theta0_hat,
                       ok=margin > 0, margin=margin, min_exponent=min_exponent,
                       subcritical=True,
                       reason="" if margin > 0 else
                       f"lambda_star^r = {lam ** r:.6g} >= theta0_hat = {theta0_hat:.6g}",
                       max_moment=max_moment)


# ---------------------------------------------------------------------------
# Drift verification
# ---------------------------------------------------------------------------

@dataclass
class DriftRatio:
    k: int
    state: Vector
    ratio: float  # lhs / Q_a along the ray k * z_star


@dataclass
class LyapunovReport:
    a: float
    theta_a: float
    C_a: float
    checked_radius: int
    mode: str
    feasible: bool              # a grid below theta0_hat existed at all
    theta0_hat: float
    lambda_star_pow_a: float
    violations: list[tuple[Vector, float, float]]  # (state, lhs, rhs)
    undetermined: list[tuple[Vector, float, float]] = field(default_factory=list)
    ratios: list[DriftRatio] = field(default_factory=list)
    lhs: dict[Vector, float] = field(default_factory=dict)
    weights: dict[Vector, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.feasible and not self.violations


def _theta_grid(lo: float, hi: float, size: int = 64) -> np.ndarray:
    return np.exp(np.linspace(math.log(lo), math.log(hi), size))


def verify_drift(
    spec: ModelSpec,
    s: SpectralResult,
    a: float,
    radius: int,
    theta0_hat: float,
    mode: str = "exact",
    budget: int = 100_000,
    seed: int = 0,
    grid_size: int = 64,
    cap: float = 1e18,
) -> LyapunovReport:
    """Evaluate the drift on every state of the window and fit (theta_a, C_a).

    The left side uses the exact one-step law (mode="exact") or a Monte
    Carlo mean with a recorded confidence interval (mode="mc", ``budget``
    draws per state; states whose interval straddles the bound are reported
    as undetermined, never as violations).  theta_a is the smallest point
    of a geometric grid in (lambda_star^a, theta0_hat); C_a is the smallest
    constant making the inequality hold everywhere at that slope.
    """
    from .kernel import enumerate_states

    if mode not in ("exact", "mc"):
        raise DomainError(f"unknown drift mode {mode!r}")
    states = enumerate_states(spec.p, radius)
    lam_a = s.lambda_star ** a

    weights: dict[Vector, float] = {}

    def qa(z: Vector) -> float:
        if z not in weights:
            weights[z] = lyapunov_weight(spec, s, z, a)
        return weights[z]

    lhs: dict[Vector, float] = {}
    half_ci: dict[Vector, float] = {}
    for z in states:
        if mode == "exact":
            total = 0.0
            for y, pr in step_distribution(spec, z, cap=cap).items():
                if sum(y) > 0:
                    total += float(pr) * qa(y)
            lhs[z] = total
        else:
            vals = _mc_weight_samples(spec, s, z, a, budget, seed)
            lhs[z] = float(vals.mean())
            half_ci[z] = 1.96 * float(vals.std(ddof=1)) / math.sqrt(len(vals))

    feasible = lam_a < theta0_hat
    if feasible:
        grid = _theta_grid(lam_a * (1 + 1e-9), theta0_hat * (1 - 1e-9), grid_size)
        theta_a = float(grid[0])
    else:
        theta_a = lam_a  # no admissible slope below theta0_hat; report as infeasible
    C_a = max(0.0, max(lhs[z] - theta_a * qa(z) for z in states))

    violations, undetermined = [], []
    for z in states:
        rhs = theta_a * qa(z) + C_a
        if mode == "mc" and abs(lhs[z] - rhs) <= half_ci[z]:
            undetermined.append((z, lhs[z], rhs))
        elif lhs[z] > rhs + 1e-12:
            violations.append((z, lhs[z], rhs))

    ratios = []
    d = s.z_star / s.z_star.max()
    for k in range(1, radius + 1):
        z = tuple(int(c) for c in np.round(k * d))
        if 0 < sum(z) <= radius and z in lhs and qa(z) > 0:
            ratios.append(DriftRatio(k=k, state=z, ratio=lhs[z] / qa(z)))

    return LyapunovReport(
        a=a, theta_a=theta_a, C_a=C_a, checked_radius=radius, mode=mode,
        feasible=feasible, theta0_hat=theta0_hat, lambda_star_pow_a=lam_a,
        violations=violations, undetermined=undetermined, ratios=ratios,
        lhs=lhs, weights=dict(weights),
    )


def _mc_weight_samples(
    spec: ModelSpec, s: SpectralResult, z: Vector, a: float, budget: int, seed: int
) -> np.ndarray:
    """Q_a(Z_1) 1_{Z_1 != 0} over `budget` coupled draws from state z."""
    cache: dict[Vector, float] = {}
    out = np.empty(budget)
    for k in range(budget):
        stream = CoupleStream(seed, path=k, generation=0)
        y = _model.step(spec, z, stream)
        if y not in cache:
            cache[y] = 0.0 if sum(y) == 0 else lyapunov_weight(spec, s, y, a)
        out[k] = cache[y]
    return out


# ---------------------------------------------------------------------------
# Exponential-convergence criteria (minorization / drift pair / Harnack /
# aperiodicity) on a truncated kernel
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceCriteriaReport:
    """Diagnostics for exponential convergence to a quasi-stationary law.

    verdicts holds pass/fail for the four criteria (keys "E1", "E2'",
    "E3", "E4") plus the derived "E2" once phi_2 is constructed.  The
    small set, the functions phi_1 (upper drift) and phi_2 (lower drift)
    and every constant are reported so each claim can be re-checked by
    plain matrix algebra.
    """

    small_set: list[Vector]
    small_radius: int
    theta0_hat: float
    theta_a: float
    C_a: float
    n1: int | None
    c1: float
    theta1: float
    c2: float
    c3: float
    c3_stabilized: bool
    theta2: float
    phi2_steps: int | None
    phi1: np.ndarray
    phi2: np.ndarray | None
    phi2_identity_residual: float
    phi2_inf_bound: float
    aperiodicity: dict[Vector, bool]
    periods: dict[Vector, int | None]
    verdicts: dict[str, bool]
    notes: list[str]

    @property
    def ok(self) -> bool:
        return all(self.verdicts.get(k, False) for k in ("E1", "E2'", "E3", "E4", "E2"))


def _state_periods(K: TruncatedKernel) -> dict[Vector, int | None]:
    """Period of each state's communication class; None when no return exists."""
    n = K.n_states
    _, labels = connected_components(K.matrix, directed=True, connection="strong")
    A = K.matrix.tocoo()
    diag = K.matrix.diagonal()
    periods: dict[int, int | None] = {}
    for comp in np.unique(labels):
        members = np.where(labels == comp)[0]
        if members.size == 1:
            i = int(members[0])
            periods[comp] = 1 if diag[i] > 0 else None
            continue
        # gcd of (level[u] + 1 - level[v]) over intra-class edges, via BFS levels
        inside = set(int(i) for i in members)
        adj: dict[int, list[int]] = {i: [] for i in inside}
        for u, v in zip(A.row, A.col):
            if int(u) in inside and int(v) in inside:
                adj[int(u)].append(int(v))
        root = int(members[0])
        level = {root: 0}
        frontier = [root]
        g = 0
        while frontier:
            nxt = []
            for u in frontier:
                for v in adj[u]:
                    if v not in level:
                        level[v] = level[u] + 1
                        nxt.append(v)
                    else:
                        g = math.gcd(g, level[u] + 1 - level[v])
            frontier = nxt
        periods[comp] = abs(g) if g else None
    return {K.states[i]: periods[labels[i]] for i in range(n)}


def verify_convergence_criteria(
    K: TruncatedKernel,
    q: QsdEstimate,
    spec: ModelSpec | None = None,
    s: SpectralResult | None = None,
    a: float = 2.5,
    weights=None,
    small_set_policy: str = "auto",
    window: int = 200,
    n1_cap: int = 50,
    phi2_cap: int = 200,
    drift_pair: tuple[float, float] | None = None,
) -> ConvergenceCriteriaReport:
    """Run the four-part diagnostic on the truncated kernel.

    Weights come from the model's eigenfunction (spec + s given), an
    explicit vector, or default to 1 (any bounded weight works on a finite
    window, at the price of a small set covering everything).  The drift
    pair (theta_a, C_a) may be injected from verify_drift; otherwise it is
    fitted on the kernel itself.

    small_set_policy: "auto" picks the smallest radius r1 >= p with
    Q_a >= C_a/(theta1 - theta_a) outside, mirroring how the drift constant
    is absorbed into a compact set; "radius=r" forces r1 = r.
    """
    A = K.matrix
    n = K.n_states
    notes: list[str] = []
    theta0 = q.theta

    if weights is not None:
        Q = np.asarray(weights, dtype=float)
        if Q.shape != (n,):
            raise DomainError("weights must give one value per kernel state")
    elif spec is not None and s is not None:
        Q = np.array([lyapunov_weight(spec, s, z, a) for z in K.states])
    else:
        Q = np.ones(n)
        notes.append("no eigenfunction available; using constant weights")
    if Q.min() <= 0:
        raise DomainError("Lyapunov weights must be strictly positive")

    lhs_Q = A @ Q
    if drift_pair is not None:
        theta_a, C_a = drift_pair
    else:
        lo = (s.lambda_star ** a) if s is not None else theta0 / 4.0
        if lo >= theta0:
            notes.append(f"lambda_star^a = {lo:.6g} >= theta0 = {theta0:.6g}; "
                         "drift slope clipped below theta0")
            lo = theta0 / 2.0
        theta_a = float(_theta_grid(lo * (1 + 1e-9), theta0 * (1 - 1e-9))[0])
        C_a = max(0.0, float(np.max(lhs_Q - theta_a * Q)))

    theta1 = 0.5 * (theta_a + theta0)
    sizes = np.array([sum(z) for z in K.states])

    if small_set_policy == "auto":
        need = C_a / (theta1 - theta_a) if theta1 > theta_a else float("inf")
        r1 = K.radius
        for r in range(K.p, K.radius + 1):
            outside = sizes > r
            if not np.any(outside) or np.all(Q[outside] >= need):
                r1 = r
                break
    elif small_set_policy.startswith("radius="):
        r1 = int(small_set_policy.split("=", 1)[1])
    else:
        raise DomainError(f"unknown small_set_policy {small_set_policy!r}")
    in_small = sizes <= r1
    small_indices = np.where(in_small)[0]
    small_set = [K.states[i] for i in small_indices]
    if not small_set:
        raise DomainError(f"small set of radius {r1} contains no state")

    verdicts: dict[str, bool] = {}

    # E1: minorization at the reference state (1, ..., 1)
    ref = (1,) * K.p
    n1: int | None = None
    c1 = 0.0
    if ref not in K.index:
        verdicts["E1"] = False
        notes.append(f"reference state {ref} is outside the truncation window")
    else:
        ref_idx = K.index[ref]
        B = np.zeros((len(small_indices), n))
        B[np.arange(len(small_indices)), small_indices] = 1.0
        for m in range(1, n1_cap + 1):
            B = B @ A
            col_min = float(B[:, ref_idx].min())
            if col_min > 0.0:
                n1, c1 = m, col_min
                break
        verdicts["E1"] = n1 is not None
        if n1 is None:
            notes.append(f"no m <= {n1_cap} with min_x P_x(Z_m = {ref}) > 0")

    # E2': phi_1 = Q / inf Q satisfies the upper drift with room only on the small set
    phi1 = Q / Q.min()
    lhs_phi1 = A @ phi1
    c2 = max(0.0, float(np.max(lhs_phi1[in_small] - theta1 * phi1[in_small])))
    slack = lhs_phi1 - theta1 * phi1 - np.where(in_small, c2, 0.0)
    bad = np.where(slack > 1e-12)[0]
    verdicts["E2'"] = (theta_a < theta0) and bad.size == 0
    if bad.size:
        notes.append(
            "upper drift fails outside the small set at "
            f"{[K.states[i] for i in bad[:5]]}" + ("..." if bad.size > 5 else ""))

    # E3: Harnack-type ratio of survival probabilities over the small set
    alive = np.ones(n)
    c3 = 1.0
    ratios = np.empty(window + 1)
    ratios[0] = 1.0
    e3_ok = True
    for m in range(1, window + 1):
        alive = A @ alive
        lo_val = float(alive[in_small].min())
        hi_val = float(alive[in_small].max())
        if lo_val <= 0.0:
            e3_ok = False
            notes.append(f"a small-set state is dead by step {m}; Harnack ratio diverges")
            ratios[m:] = np.inf
            break
        ratios[m] = hi_val / lo_val
        c3 = max(c3, ratios[m])
    c3_stabilized = bool(
        e3_ok and (np.max(ratios[1:window // 2 + 1]) == c3
                   or abs(ratios[window] - ratios[window // 2]) <= 1e-8 * c3))
    verdicts["E3"] = e3_ok and math.isfinite(c3)

    # E4: aperiodicity, state by state
    periods = _state_periods(K)
    aperiodicity = {z: (per is None or per == 1) for z, per in periods.items()}
    verdicts["E4"] = all(aperiodicity.values())
    if not verdicts["E4"]:
        worst = {z: per for z, per in periods.items() if per not in (None, 1)}
        notes.append(f"periodic states detected: {worst}")

    # phi_2 construction: find m with min over the small set of
    # theta2^{-m} P_z(Z_m in small set) >= 1, then average the first m
    # occupation probabilities with geometric weights.
    theta2 = 0.5 * (theta1 + theta0)
    g = np.where(in_small, 1.0, 0.0)   # g_k = theta2^{-k} (A^k 1_small)
    g_hist = [g.copy()]
    m_star: int | None = None
    for m in range(1, phi2_cap + 1):
        g = (A @ g) / theta2
        g_hist.append(g.copy())
        if float(g[in_small].min()) >= 1.0:
            m_star = m
            break
    phi2 = None
    phi2_res = float("inf")
    phi2_inf = 0.0
    if m_star is None:
        verdicts["E2"] = False
        notes.append(
            f"no m <= {phi2_cap} with theta2^-m P_z(Z_m in small set) >= 1 on the "
            "small set; the lower drift function could not be constructed")
    else:
        denom = sum(theta2 ** (-k) for k in range(m_star))
        phi2 = sum(g_hist[k] for k in range(m_star)) / denom
        push = A @ phi2
        identity_rhs = (theta2 / denom) * (g_hist[m_star] - np.where(in_small, 1.0, 0.0))
        phi2_res = float(np.max(np.abs(push - theta2 * phi2 - identity_rhs)))
        phi2_inf = float(phi2[in_small].min())
        drift_ok = bool(np.all(push >= theta2 * phi2 - 1e-12))
        bounds_ok = phi2.max() <= 1.0 + 1e-12 and phi2_inf >= 1.0 / denom - 1e-12
        verdicts["E2"] = verdicts["E2'"] and drift_ok and bounds_ok
        if not drift_ok:
            notes.append("constructed phi_2 violates the lower drift somewhere")

    return ConvergenceCriteriaReport(
        small_set=small_set, small_radius=r1, theta0_hat=theta0,
        theta_a=theta_a, C_a=C_a, n1=n1, c1=c1, theta1=theta1, c2=c2,
        c3=c3, c3_stabilized=c3_stabilized, theta2=theta2,
        phi2_steps=m_star, phi1=phi1, phi2=phi2,
        phi2_identity_residual=phi2_res, phi2_inf_bound=phi2_inf,
        aperiodicity=aperiodicity, periods=periods, verdicts=verdicts, notes=notes,
    )
