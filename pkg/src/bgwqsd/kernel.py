"""Truncated sub-Markov kernels and their quasi-stationary eigen-data.

The kernel of the absorbed process is K(x, .) = P_x(Z_1 in ., Z_1 != 0),
restricted here to the finite window {z in N^p : 0 < |z|_1 <= R}.  Mass
jumping beyond the radius is recorded per row as ``escaped`` and never
redistributed, so the truncated matrix is dominated by the true kernel and
every spectral radius theta(R) is a certified lower bound of the
untruncated decay parameter, non-decreasing in R.

States are indexed colexicographically so indices are stable across runs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import (
    ConvergenceError,
    DomainError,
    PeriodicityError,
    RangeError,
    ResourceError,
)
from .model import ModelSpec, Vector, step_distribution
from .streams import uniforms

Matrix = sp.csr_matrix


def enumerate_states(p: int, radius: int) -> list[Vector]:
    """All states with 0 < |z|_1 <= radius, in colexicographic order."""
    if radius < 1:
        raise DomainError(f"radius {radius} gives an empty state space")
    states = [z for z in itertools.product(range(radius + 1), repeat=p)
              if 0 < sum(z) <= radius]
    states.sort(key=lambda z: tuple(reversed(z)))
    return states


@dataclass
class TruncatedKernel:
    """Sub-Markov matrix on the truncation window plus the dropped masses.

    Every row satisfies matrix-row-sum + escaped + absorbed = 1 (within
    1e-10 for exact builds; exactly on the stored counts for Monte Carlo
    builds).
    """

    radius: int
    p: int
    states: list[Vector]
    matrix: Matrix
    absorbed: np.ndarray
    escaped: np.ndarray
    build_mode: str  # "exact" | "mc" | "synthetic"
    samples: int | None = None
    seed: int | None = None
    counts: sp.csr_matrix | None = None
    absorbed_counts: np.ndarray | None = None
    escaped_counts: np.ndarray | None = None
    index: dict[Vector, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {z: i for i, z in enumerate(self.states)}

    @property
    def n_states(self) -> int:
        return len(self.states)

    def state_index(self, z) -> int:
        if isinstance(z, (int, np.integer)):
            i = int(z)
            if not 0 <= i < self.n_states:
                raise DomainError(f"state index {i} out of range")
            return i
        z = tuple(int(c) for c in z)
        try:
            return self.index[z]
        except KeyError:
            raise DomainError(f"{z} is not in the truncation window") from None

    def row_conservation_gap(self) -> float:
        rows = np.asarray(self.matrix.sum(axis=1)).ravel()
        return float(np.max(np.abs(rows + self.absorbed + self.escaped - 1.0)))


def build_kernel_exact(spec: ModelSpec, radius: int, cap: float = 1e18) -> TruncatedKernel:
    """Kernel rows from the exact one-step law; nothing is sampled."""
    states = enumerate_states(spec.p, radius)
    index = {z: i for i, z in enumerate(states)}
    zero = spec.zero_state()
    absorbed = np.zeros(len(states))
    escaped = np.zeros(len(states))
    rows, cols, vals = [], [], []
    for i, x in enumerate(states):
        try:
            dist = step_distribution(spec, x, cap=cap)
        except ResourceError as exc:
            raise ResourceError(f"state {x}: {exc}") from exc
        for y, pr in dist.items():
            pr = float(pr)
            if y == zero:
                absorbed[i] += pr
            elif sum(y) > radius:
                escaped[i] += pr
            else:
                rows.append(i)
                cols.append(index[y])
                vals.append(pr)
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(len(states), len(states)))
    return TruncatedKernel(
        radius=radius, p=spec.p, states=states, matrix=matrix,
        absorbed=absorbed, escaped=escaped, build_mode="exact",
    )


def build_kernel_mc(
    spec: ModelSpec, radius: int, samples: int, seed: int
) -> TruncatedKernel:
    """Kernel rows as empirical one-step distributions.

    Row x uses `samples` draws keyed by (seed, state index, sample index,
    parent type, couple index), so the result is bit-identical for a given
    (model, radius, samples, seed) no matter how rows are scheduled.
    Counts are stored exactly; row conservation holds on the counts.
    """
    if samples < 1:
        raise DomainError("samples must be positive")
    states = enumerate_states(spec.p, radius)
    index = {z: i for i, z in enumerate(states)}
    n = len(states)
    absorbed_counts = np.zeros(n, dtype=np.int64)
    escaped_counts = np.zeros(n, dtype=np.int64)
    rows, cols, cnts = [], [], []
    for si, x in enumerate(states):
        w = np.zeros((samples, spec.q), dtype=np.int64)
        for i, xi in enumerate(x):
            if xi == 0:
                continue
            sample_idx = np.repeat(np.arange(samples), xi)
            couple_idx = np.tile(np.arange(xi), samples)
            u = uniforms(seed, si, sample_idx, i, couple_idx)
            vecs = spec.offspring[i].vectors[spec.offspring[i].sample_indices(u)]
            for j in range(spec.q):
                w[:, j] += np.bincount(sample_idx, weights=vecs[:, j],
                                       minlength=samples).astype(np.int64)
        nxt = _apply_mating_rows(spec, w)
        tot = nxt.sum(axis=1)
        absorbed_counts[si] = int(np.sum(tot == 0))
        escaped_counts[si] = int(np.sum(tot > radius))
        keep = (tot > 0) & (tot <= radius)
        if np.any(keep):
            uniq, counts = np.unique(nxt[keep], axis=0, return_counts=True)
            for y, c in zip(uniq, counts):
                rows.append(si)
                cols.append(index[tuple(int(v) for v in y)])
                cnts.append(int(c))
    counts_m = sp.csr_matrix((cnts, (rows, cols)), shape=(n, n), dtype=np.int64)
    matrix = counts_m.astype(float) / samples
    return TruncatedKernel(
        radius=radius, p=spec.p, states=states, matrix=sp.csr_matrix(matrix),
        absorbed=absorbed_counts / samples, escaped=escaped_counts / samples,
        build_mode="mc", samples=samples, seed=seed,
        counts=counts_m, absorbed_counts=absorbed_counts, escaped_counts=escaped_counts,
    )


def _apply_mating_rows(spec: ModelSpec, w: np.ndarray) -> np.ndarray:
    """Vectorized mating over rows of children vectors."""
    kind = spec.mating.kind
    if kind == "identity":
        return w
    if kind == "perfect_fidelity":
        return np.minimum(w[:, 0], w[:, 1]).reshape(-1, 1)
    if kind == "promiscuous":
        return (w[:, 0] * (w[:, 1] >= 1)).reshape(-1, 1)
    from .model import mating_apply  # table lookup; row loop
    return np.array([mating_apply(spec.mating, row) for row in w], dtype=np.int64)


def kernel_from_matrix(
    matrix, states: list[Vector] | None = None, radius: int | None = None
) -> TruncatedKernel:
    """Wrap a raw sub-stochastic matrix as a synthetic kernel.

    Used for hand-built examples; absorbed mass is the row deficit and
    nothing escapes.
    """
    m = sp.csr_matrix(np.asarray(matrix, dtype=float))
    n = m.shape[0]
    if m.shape != (n, n):
        raise DomainError("kernel matrix must be square")
    if m.nnz and m.data.min() < 0:
        raise DomainError("kernel entries must be non-negative")
    rows = np.asarray(m.sum(axis=1)).ravel()
    if rows.max() > 1 + 1e-12:
        raise DomainError("kernel rows must sum to at most 1")
    if states is None:
        states = [(i + 1,) for i in range(n)]
    return TruncatedKernel(
        radius=radius if radius is not None else max(sum(z) for z in states),
        p=len(states[0]), states=list(states), matrix=m,
        absorbed=1.0 - rows, escaped=np.zeros(n), build_mode="synthetic",
    )


# ---------------------------------------------------------------------------
# Eigen-data
# ---------------------------------------------------------------------------

@dataclass
class CommClass:
    indices: np.ndarray
    states: list[Vector]
    theta: float


@dataclass
class ClassDecomposition:
    classes: list[CommClass]
    theta_bar: float
    theta_gap: float | None  # |theta_bar - theta| when a global theta was supplied


@dataclass
class QsdEstimate:
    """Quasi-stationary eigen-data of a truncated kernel.

    nu is the left eigenvector normalized to a probability vector (the QSD
    on the truncation), eta the right eigenvector normalized to max entry 1
    (the survival eigenfunction), theta their common eigenvalue.
    """

    theta: float
    nu: np.ndarray
    eta: np.ndarray
    residual_left: float
    residual_right: float
    iterations: int
    method: str
    classes: ClassDecomposition | None = None
    j_estimates: list["JEstimate"] | None = None


def _residuals(A: Matrix, theta: float, nu: np.ndarray, eta: np.ndarray) -> tuple[float, float]:
    left = float(np.abs(nu @ A - theta * nu).sum())
    right = float(np.max(np.abs(A @ eta - theta * eta)) / max(np.max(np.abs(eta)), 1e-300))
    return left, right


def _dense_eigendata(A: Matrix) -> tuple[float, np.ndarray, np.ndarray]:
    """Spectral radius with left/right eigenvectors via dense linear algebra.

    The eigenvectors are taken as the smallest singular directions of
    (A - theta I), which stays well-behaved for defective eigenvalues.
    """
    m = A.toarray()
    eigvals = np.linalg.eigvals(m)
    theta = float(np.max(np.abs(eigvals)))
    shifted = m - theta * np.eye(m.shape[0])
    _, _, vt = np.linalg.svd(shifted)
    eta = np.real(vt[-1])
    _, _, vt = np.linalg.svd(shifted.T)
    nu = np.real(vt[-1])
    for vec in (nu, eta):
        if vec.sum() < 0:
            vec *= -1.0
        np.clip(vec, 0.0, None, out=vec)
    if nu.sum() <= 0 or np.max(eta) <= 0:
        raise ConvergenceError("dense eigen solve produced a sign-indefinite eigenvector")
    return theta, nu / nu.sum(), eta / np.max(eta)


def spectral_radius(
    K: TruncatedKernel,
    tol: float = 1e-12,
    max_iter: int = 20000,
    method: str = "auto",
) -> QsdEstimate:
    """Simultaneous left/right power iteration on the sub-Markov matrix.

    theta is the Rayleigh estimate through both iterates.  Irreducible
    aperiodic kernels converge geometrically; reducible kernels that stall
    between classes fall back to a dense solve (method="auto", up to 512
    states).  A sustained period-2 oscillation of the estimate raises
    PeriodicityError: analyse the kernel per communication class instead.
    """
    A = K.matrix
    n = K.n_states
    row_sums = np.asarray(A.sum(axis=1)).ravel()
    if not np.any(row_sums > 0):
        raise DomainError("kernel has no state with positive alive mass")
    if method == "dense":
        theta, nu, eta = _dense_eigendata(A)
        rl, rr = _residuals(A, theta, nu, eta)
        return QsdEstimate(theta, nu, eta, rl, rr, iterations=0, method="dense")

    nu = np.full(n, 1.0 / n)
    eta = np.ones(n)
    rl = rr = float("inf")
    osc_run = 0
    prev_nu, prev2_nu = None, None
    for it in range(1, max_iter + 1):
        nu_next = nu @ A
        eta_next = A @ eta
        mass_l = nu_next.sum()
        mass_r = eta_next.max()
        if mass_l <= 0 or mass_r <= 0:
            break  # one iterate died; defer to the dense path
        nu_next /= mass_l
        eta_next /= mass_r
        denom = float(nu_next @ eta_next)
        theta = float(nu_next @ (A @ eta_next) / denom) if denom > 0 else float(mass_l)
        rl, rr = _residuals(A, theta, nu_next, eta_next)
        if rl <= tol and rr <= tol:
            return QsdEstimate(theta, nu_next, eta_next, rl, rr, iterations=it, method="power")
        if prev2_nu is not None:
            flip = float(np.abs(nu_next - prev_nu).sum())
            same = float(np.abs(nu_next - prev2_nu).sum())
            osc_run = osc_run + 1 if (same <= 1e-13 and flip > 1e-6) else 0
            if osc_run >= 4:
                raise PeriodicityError(
                    "power iteration oscillates with period 2; the kernel looks "
                    "periodic — run communication_classes / a per-class analysis")
        prev2_nu, prev_nu = prev_nu, nu_next
        nu, eta = nu_next, eta_next
    if method == "power" or n > 512:
        raise ConvergenceError(
            f"left/right power iteration did not reach tol={tol} in {max_iter} "
            f"iterations (last residuals {rl:.3e}/{rr:.3e}); kernel may be reducible")
    theta, nu, eta = _dense_eigendata(A)
    rl, rr = _residuals(A, theta, nu, eta)
    return QsdEstimate(theta, nu, eta, rl, rr, iterations=max_iter, method="power+dense")


def communication_classes(
    K: TruncatedKernel, theta: float | None = None, tol: float = 1e-8
) -> ClassDecomposition:
    """Strongly connected components of the positive-entry digraph.

    Each class carries the spectral radius of its diagonal sub-block; their
    maximum equals the kernel's spectral radius, which is asserted against
    ``theta`` (computed here if not supplied).
    """
    n_comp, labels = connected_components(K.matrix, directed=True, connection="strong")
    classes = []
    dense = K.matrix.toarray()
    for c in range(n_comp):
        idx = np.where(labels == c)[0]
        block = dense[np.ix_(idx, idx)]
        if idx.size == 1:
            th = float(block[0, 0])
        else:
            th = float(np.max(np.abs(np.linalg.eigvals(block))))
        classes.append(CommClass(indices=idx, states=[K.states[i] for i in idx], theta=th))
    classes.sort(key=lambda c: -c.theta)
    theta_bar = classes[0].theta
    if theta is None:
        try:
            theta = spectral_radius(K).theta
        except PeriodicityError:
            theta = spectral_radius(K, method="dense").theta
    gap = abs(theta_bar - theta)
    if gap > tol:
        raise ConvergenceError(
            f"class-wise spectral radius {theta_bar} disagrees with the kernel's "
            f"{theta} by {gap:.3e} (> {tol})")
    return ClassDecomposition(classes=classes, theta_bar=theta_bar, theta_gap=gap)


# ---------------------------------------------------------------------------
# Survival profiles and the polynomial survival exponent
# ---------------------------------------------------------------------------

def _survival_arrays(K: TruncatedKernel, z, n_max: int) -> tuple[np.ndarray, np.ndarray]:
    """(probabilities, log-probabilities) of staying alive inside the window.

    Escaped mass is dropped, so entry n lower-bounds the untruncated
    survival probability.  The iteration renormalizes once values dip near
    the underflow floor, keeping the log profile accurate far beyond it.
    """
    i = K.state_index(z)
    v = np.zeros(K.n_states)
    v[i] = 1.0
    probs = np.empty(n_max + 1)
    logs = np.empty(n_max + 1)
    probs[0], logs[0] = 1.0, 0.0
    logscale = 0.0
    for n in range(1, n_max + 1):
        v = v @ K.matrix
        s = float(v.sum())
        if s <= 0.0:
            probs[n:] = 0.0
            logs[n:] = -np.inf
            return probs, logs
        logs[n] = math.log(s) + logscale
        if logscale == 0.0:
            probs[n] = s  # untouched linear value: exact while representable
        else:
            probs[n] = math.exp(logs[n]) if logs[n] >= -745 else 0.0
        if s < 1e-250:
            logscale += math.log(s)
            v = v / s
    return probs, logs


def survival_profile(K: TruncatedKernel, z, n_max: int) -> np.ndarray:
    """P_z(alive inside the truncation at n) for n = 0..n_max; non-increasing."""
    return _survival_arrays(K, z, n_max)[0]


def survival_log_profile(K: TruncatedKernel, z, n_max: int) -> np.ndarray:
    """Log survival probabilities; -inf once the mass is exactly zero."""
    return _survival_arrays(K, z, n_max)[1]


@dataclass
class JEstimate:
    """Fit of the polynomial factor in survival ~ theta^n n^j."""

    state: Vector
    j: int | None  # None = indeterminate (fit too far from an integer)
    slope: float
    intercept: float
    rms_residual: float
    window: tuple[int, int]


def estimate_j(
    K: TruncatedKernel,
    q: QsdEstimate,
    z,
    n_range: tuple[int, int] = (8, 80),
    round_tol: float = 0.2,
) -> JEstimate:
    """Least-squares exponent of log P_z(alive at n) - n log theta ~ j log n + c.

    Reducible kernels can carry an integer polynomial factor on top of the
    exponential decay; the fitted slope is accepted as that integer only
    when it lies within ``round_tol`` of one.
    """
    n_lo, n_hi = int(n_range[0]), int(n_range[1])
    if not 1 <= n_lo < n_hi:
        raise RangeError(f"invalid fit window {n_range}")
    logs = survival_log_profile(K, z, n_hi)
    ns = np.arange(n_lo, n_hi + 1)
    y = logs[n_lo:n_hi + 1] - ns * math.log(q.theta)
    if not np.all(np.isfinite(y)):
        raise RangeError(
            f"survival from {z} underflows to zero inside the window {n_range}; "
            "shorten the window")
    x = np.log(ns)
    slope, intercept = np.polyfit(x, y, 1)
    fit = slope * x + intercept
    rms = float(np.sqrt(np.mean((y - fit) ** 2)))
    j = int(round(slope)) if abs(slope - round(slope)) <= round_tol and round(slope) >= 0 else None
    state = K.states[K.state_index(z)]
    return JEstimate(state=state, j=j, slope=float(slope), intercept=float(intercept),
                     rms_residual=rms, window=(n_lo, n_hi))


def solve_qsd(
    K: TruncatedKernel,
    tol: float = 1e-12,
    max_iter: int = 20000,
    method: str = "auto",
    j_window: tuple[int, int] = (8, 80),
) -> QsdEstimate:
    """Full eigen-analysis: theta/nu/eta, class decomposition, j per state."""
    est = spectral_radius(K, tol=tol, max_iter=max_iter, method=method)
    est.classes = communication_classes(K, theta=est.theta)
    js = []
    for z in K.states:
        try:
            js.append(estimate_j(K, est, z, n_range=j_window))
        except RangeError:
            js.append(JEstimate(state=z, j=None, slope=float("nan"),
                                intercept=float("nan"), rms_residual=float("nan"),
                                window=j_window))
    est.j_estimates = js
    return est
