"""Mean growth operator of the process and its nonlinear Perron eigen-data.

For a population profile z in R_+^p (couples per type, possibly fractional),
the operator

    M(z) = lim_k  xi(floor(k * z @ mean_matrix)) / k

is the deterministic large-population growth map: expected children per
type, pushed through the mating function, per unit of population.  It is
positively homogeneous, monotone and concave.  Its Perron data
(lambda_star, z_star) and the scaling eigenfunction P with
M^n(z)/lambda_star^n -> P(z) z_star drive everything downstream:
lambda_star < 1 is the subcritical regime and P^a supplies the Lyapunov
weights.

Built-in matings have closed forms for M; table matings use the defining
limit with a doubling-k agreement test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DegenerateModelError, DomainError
from .model import ModelSpec, mating_apply


@dataclass
class SpectralResult:
    """Perron data of the growth operator.

    z_star is l1-normalized; the eigenfunction is anchored by P(z_star) = 1.
    n0 is the primitivity index when check_primitivity found one.
    """

    lambda_star: float
    z_star: np.ndarray
    iterations: int
    residual: float
    n0: int | None = None


def growth_operator(
    spec: ModelSpec, z, k0: int = 16384, table_tol: float = 1e-3
) -> np.ndarray:
    """Evaluate M(z) for z >= 0.

    identity         -> z @ V
    perfect_fidelity -> min of the two coordinates of z @ V
    promiscuous      -> first coordinate of z @ V if the second is positive
    custom_table     -> floor-limit evaluated at k in {k0, 2k0, 4k0, 8k0},
                        accepted when successive values agree within
                        table_tol (relative); the floor error is O(1/k), so
                        agreement across doublings bounds it empirically.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (spec.p,):
        raise DomainError(f"expected a vector of length p={spec.p}, got shape {z.shape}")
    if np.any(z < 0):
        raise DomainError("growth operator is defined on the non-negative orthant")
    zv = z @ spec.mean_matrix
    kind = spec.mating.kind
    if kind == "identity":
        return zv
    if kind == "perfect_fidelity":
        return np.array([min(zv[0], zv[1])])
    if kind == "promiscuous":
        return np.array([zv[0] if zv[1] > 0 else 0.0])

    evals = []
    for k in (k0, 2 * k0, 4 * k0, 8 * k0):
        w = np.floor(k * zv).astype(np.int64)
        evals.append(np.array(mating_apply(spec.mating, w), dtype=float) / k)
    scale = max(np.max(np.abs(v)) for v in evals) or 1.0
    for prev, cur in zip(evals, evals[1:]):
        if np.max(np.abs(cur - prev)) > table_tol * scale:
            raise ConvergenceError(
                "table mating limit did not stabilize over the k schedule "
                f"{[k0, 2*k0, 4*k0, 8*k0]}: evaluations {[v.tolist() for v in evals]}")
    return evals[-1]


def power_iterate(
    spec: ModelSpec, tol: float = 1e-12, max_iter: int = 10000
) -> SpectralResult:
    """Normalized fixed-point iteration z <- M(z)/|M(z)|_1 from the uniform profile.

    The eigenvalue estimate is |M(z_n)|_1.  Stops when both the iterate and
    the estimate are Cauchy within tol; there is no proven geometric rate
    for general concave maps, hence the hard iteration cap.
    """
    z = np.full(spec.p, 1.0 / spec.p)
    lam_prev = None
    trace: list[float] = []
    for it in range(1, max_iter + 1):
        w = growth_operator(spec, z)
        lam = float(w.sum())
        if lam <= 0:
            raise DegenerateModelError(
                f"growth operator vanished at iterate {it}: M({z.tolist()}) = 0")
        z_next = w / lam
        trace.append(lam)
        step_gap = float(np.abs(z_next - z).sum())
        lam_gap = abs(lam - lam_prev) if lam_prev is not None else np.inf
        z = z_next
        lam_prev = lam
        if step_gap <= tol and lam_gap <= tol * max(1.0, lam):
            residual = float(np.abs(growth_operator(spec, z) - lam * z).sum())
            return SpectralResult(lambda_star=lam, z_star=z, iterations=it, residual=residual)
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations; "
        f"last eigenvalue estimates: {trace[-8:]}")


def eval_eigenfunction(
    spec: ModelSpec,
    s: SpectralResult,
    z,
    n: int = 64,
    rel_tol: float = 1e-9,
) -> float:
    """Value of the scaling eigenfunction P at z, with P(z_star) = 1.

    Computed as |M^n(z)|_1 / lambda_star^n via the rescaled iteration
    w <- M(w)/lambda_star.  The ratio must stabilize: the values at n and
    2n have to agree within rel_tol, otherwise the state is flagged as
    non-stabilized rather than silently returned.
    """
    z = np.asarray(z, dtype=float)
    if np.all(z == 0):
        return 0.0
    w = z.copy()
    val_n = None
    for j in range(1, 2 * n + 1):
        w = growth_operator(spec, w) / s.lambda_star
        total = float(w.sum())
        if total == 0.0:
            return 0.0
        if j == n:
            val_n = total
    if abs(total - val_n) > rel_tol * max(abs(total), 1e-300):
        raise ConvergenceError(
            f"eigenfunction ratio did not stabilize at z={z.tolist()}: "
            f"value {val_n} at n={n} vs {total} at 2n")
    return total


def lyapunov_weight(spec: ModelSpec, s: SpectralResult, z, a: float, **kw) -> float:
    """Q_a(z) = P(z)^a, the polynomial-moment Lyapunov weight."""
    return eval_eigenfunction(spec, s, z, **kw) ** a


@dataclass
class PrimitivityReport:
    """Outcome of the primitivity probe.

    n0 is the least m <= max_m with M^m(e_i) > 0 for every basis vector,
    double-checked at m+1.  On failure, ``failures`` lists the
    (basis index, coordinate) pairs still vanishing at the deepest level.
    """

    n0: int | None
    max_m: int
    failures: list[tuple[int, int]]

    @property
    def ok(self) -> bool:
        return self.n0 is not None


def check_primitivity(spec: ModelSpec, max_m: int = 50, eps: float = 1e-12) -> PrimitivityReport:
    """Probe whether iterates of M eventually make every coordinate positive."""
    p = spec.p
    # positive[m][i]: all coordinates of M^m(e_i) exceed eps after l1 normalization
    positive = np.zeros((max_m + 2, p), dtype=bool)
    last_bad: dict[int, np.ndarray] = {}
    for i in range(p):
        w = np.zeros(p)
        w[i] = 1.0
        for m in range(1, max_m + 2):
            w = growth_operator(spec, w)
            total = w.sum()
            if total <= 0:
                last_bad[i] = np.arange(p)
                break
            w = w / total
            positive[m, i] = bool(np.all(w > eps))
            if not positive[m, i]:
                # remember the deepest level at which this basis vector failed
                last_bad[i] = np.where(w <= eps)[0]
    for m in range(1, max_m + 1):
        if positive[m].all() and positive[m + 1].all():
            return PrimitivityReport(n0=m, max_m=max_m, failures=[])
    failures = [(i, int(j)) for i, js in sorted(last_bad.items()) for j in js]
    return PrimitivityReport(n0=None, max_m=max_m, failures=failures)
