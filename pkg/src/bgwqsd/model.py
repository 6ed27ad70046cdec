"""Two-sex multitype branching process: states, offspring laws, mating, stepping.

A population state is a vector of couple counts, one entry per couple type
(p types).  Each couple draws a children vector in N^q from its type's
finite-support offspring law; the children of all couples are summed and a
mating function xi: N^q -> N^p turns them into next-generation couples.
The zero state is absorbing because xi(0) = 0.

Two ways to advance one generation:

* :func:`step` samples, using counter-based streams (reproducible and
  scheduling-independent);
* :func:`step_distribution` computes the exact one-step law by convolving
  the per-couple offspring laws and pushing the result through the mating
  function.  When offspring probabilities are given as exact rationals the
  convolution is carried out in exact rational arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import DomainError, ModelValidationError, ResourceError
from .streams import CoupleStream, uniforms

Prob = Union[Fraction, float]
Vector = tuple[int, ...]

MATING_KINDS = ("identity", "perfect_fidelity", "promiscuous", "custom_table")

_PROB_SUM_TOL = 1e-12


def parse_probability(value) -> Prob:
    """Accept a decimal or an exact rational written as "a/b".

    Rationals stay :class:`fractions.Fraction` all the way into the
    convolution oracle; decimals stay floats.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, int):
        return Fraction(value)
    return float(value)


@dataclass
class MatingFunction:
    """Mating function xi: N^q -> N^p with its super-additivity certificate.

    ``alpha`` and ``beta`` certify the sub-affine cap
    ``xi(x) <= alpha * |x| + beta`` componentwise (|.| the l1-norm); for the
    built-in kinds they are filled in automatically.  ``custom_table``
    functions are defined on the box [0, box]^q; with a certificate
    declared they extend beyond it by positive homogeneity at box
    resolution (clipped by the affine cap), without one lookups outside
    the box fail.
    """

    kind: str
    p: int
    q: int
    table: dict[Vector, Vector] | None = None
    box: int | None = None
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in MATING_KINDS:
            raise ModelValidationError(f"unknown mating kind {self.kind!r}")
        if self.kind == "identity" and self.p != self.q:
            raise ModelValidationError("identity mating requires p == q")
        if self.kind in ("perfect_fidelity", "promiscuous") and (self.p, self.q) != (1, 2):
            raise ModelValidationError(f"{self.kind} mating requires p = 1, q = 2")
        if self.kind == "custom_table":
            if self.table is None or self.box is None:
                raise ModelValidationError("custom_table mating needs a table and a box size")
            self.table = {tuple(int(c) for c in k): tuple(int(c) for c in v)
                          for k, v in self.table.items()}
        if self.alpha is None:
            if self.kind == "custom_table":
                pass  # no implicit certificate for tables
            else:
                self.alpha = np.ones(self.p)
                self.beta = np.zeros(self.p)
        else:
            self.alpha = np.asarray(self.alpha, dtype=float)
            self.beta = (np.zeros(self.p) if self.beta is None
                         else np.asarray(self.beta, dtype=float))

    def __call__(self, w: Sequence[int]) -> Vector:
        return mating_apply(self, w)


def mating_apply(mating: MatingFunction, w: Sequence[int]) -> Vector:
    """Apply the mating function to a children vector w in N^q."""
    w = tuple(int(c) for c in w)
    if len(w) != mating.q:
        raise DomainError(f"children vector has length {len(w)}, expected q={mating.q}")
    if any(c < 0 for c in w):
        raise DomainError(f"children vector must be non-negative, got {w}")
    kind = mating.kind
    if kind == "identity":
        return w
    if kind == "perfect_fidelity":
        return (min(w[0], w[1]),)
    if kind == "promiscuous":
        return (w[0] if w[1] >= 1 else 0,)
    # custom_table
    if max(w) <= mating.box:
        try:
            return mating.table[w]
        except KeyError:
            raise DomainError(f"mating table has no entry for {w}") from None
    if mating.alpha is None:
        raise DomainError(
            f"{w} is outside the [0,{mating.box}]^{mating.q} table box and no "
            "affine certificate is declared")
    # beyond the box, extend by positive homogeneity at box resolution:
    # scale the argument onto the box boundary, look up, scale back.  The
    # declared affine cap stays as a hard ceiling.  (Extending by the cap
    # itself would make every table grow like alpha*|x| in the large-
    # population limit, contradicting the table's own in-box behaviour.)
    r = max(w) / mating.box
    y = tuple(int(c / r + 0.5) for c in w)
    try:
        val = mating.table[y]
    except KeyError:
        raise DomainError(
            f"mating table has no entry for {y}, the box projection of {w}") from None
    cap = mating.alpha * sum(w) + mating.beta
    return tuple(int(min(np.floor(r * v), c)) for v, c in zip(val, np.floor(cap)))


@dataclass
class OffspringLaw:
    """Finite-support children law of one couple type.

    support: list of (vector in N^q, probability) pairs.  Probabilities may
    be Fractions (exact) or floats; they must sum to 1 within 1e-12.
    """

    support: list[tuple[Vector, Prob]]
    vectors: np.ndarray = field(init=False, repr=False)
    cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.support:
            raise ModelValidationError("offspring law has empty support")
        self.support = [(tuple(int(c) for c in v), parse_probability(pr))
                        for v, pr in self.support]
        total = sum(pr for _, pr in self.support)
        if abs(float(total) - 1.0) > _PROB_SUM_TOL:
            raise ModelValidationError(
                f"offspring probabilities sum to {float(total)!r}, off by more than 1e-12")
        if any(float(pr) < 0 for _, pr in self.support):
            raise ModelValidationError("offspring probabilities must be non-negative")
        if any(min(v) < 0 for v, _ in self.support):
            raise ModelValidationError("offspring vectors must be non-negative")
        self.vectors = np.array([v for v, _ in self.support], dtype=np.int64)
        probs = np.array([float(pr) for _, pr in self.support])
        self.cdf = np.cumsum(probs)
        self.cdf[-1] = 1.0  # guard searchsorted against rounding

    def mean(self) -> np.ndarray:
        """Expected children vector (float)."""
        return np.array([float(sum(pr * v[j] for v, pr in self.support))
                         for j in range(self.vectors.shape[1])])

    def moment(self, r: float) -> np.ndarray:
        """r-th absolute moment per child coordinate (finite support: always finite)."""
        return np.array([float(sum(float(pr) * v[j] ** r for v, pr in self.support))
                         for j in range(self.vectors.shape[1])])

    def sample_indices(self, u: np.ndarray) -> np.ndarray:
        """Inverse-CDF lookup: uniform draws -> support indices."""
        return np.searchsorted(self.cdf, u, side="right").clip(0, len(self.support) - 1)


@dataclass
class ModelSpec:
    """Complete description of a two-sex branching model.

    mean_matrix[i, j] is the expected number of type-j children of a type-i
    couple; it is derived from the offspring laws at construction.
    """

    p: int
    q: int
    mating: MatingFunction
    offspring: list[OffspringLaw]
    mean_matrix: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.p < 1 or self.q < 1:
            raise ModelValidationError("p and q must be positive")
        if (self.mating.p, self.mating.q) != (self.p, self.q):
            raise ModelValidationError("mating dimensions disagree with the model's (p, q)")
        if len(self.offspring) != self.p:
            raise ModelValidationError(
                f"need one offspring law per couple type: got {len(self.offspring)}, p={self.p}")
        for law in self.offspring:
            if law.vectors.shape[1] != self.q:
                raise ModelValidationError("offspring vectors must have length q")
        self.mean_matrix = np.vstack([law.mean() for law in self.offspring])

    def zero_state(self) -> Vector:
        return (0,) * self.p


def check_state(spec: ModelSpec, z: Sequence[int]) -> Vector:
    z = tuple(int(c) for c in z)
    if len(z) != spec.p or any(c < 0 for c in z):
        raise DomainError(f"{z} is not a state in N^{spec.p}")
    return z


# ---------------------------------------------------------------------------
# Sampling path
# ---------------------------------------------------------------------------

def sample_offspring_matrix(
    spec: ModelSpec, counts: Sequence[int], stream: CoupleStream
) -> list[np.ndarray]:
    """Per-type matrices of children vectors, one row per couple.

    Couples are keyed (type-major, index-minor) in the stream, so two calls
    that share a prefix of couples of a type receive identical rows for that
    prefix.  Coupled comparisons (monotonicity in the initial condition,
    path-level super-additivity) are built on this.
    """
    out = []
    for i, n in enumerate(counts):
        n = int(n)
        if n == 0:
            out.append(np.zeros((0, spec.q), dtype=np.int64))
            continue
        u = stream.couple_uniforms(i, n)
        idx = spec.offspring[i].sample_indices(u)
        out.append(spec.offspring[i].vectors[idx])
    return out


def step(spec: ModelSpec, z: Sequence[int], stream: CoupleStream) -> Vector:
    """Sample one generation: z couples -> children -> next couples."""
    z = check_state(spec, z)
    if sum(z) == 0:
        return z
    mats = sample_offspring_matrix(spec, z, stream)
    w = np.zeros(spec.q, dtype=np.int64)
    for m in mats:
        if m.shape[0]:
            w += m.sum(axis=0)
    return mating_apply(spec.mating, w)


# ---------------------------------------------------------------------------
# Exact one-step law
# ---------------------------------------------------------------------------

def _convolve(d1: dict, d2: dict) -> dict:
    out: dict = {}
    for v1, p1 in d1.items():
        for v2, p2 in d2.items():
            v = tuple(a + b for a, b in zip(v1, v2))
            pr = p1 * p2
            if v in out:
                out[v] = out[v] + pr
            else:
                out[v] = pr
    return out


def _power(base: dict, one, k: int, zero_vec: Vector) -> dict:
    """k-fold convolution by binary exponentiation; `one` is the unit weight."""
    acc = {zero_vec: one}
    while k:
        if k & 1:
            acc = _convolve(acc, base)
        k >>= 1
        if k:
            base = _convolve(base, base)
    return acc


def _law_power(law: OffspringLaw, k: int, q: int) -> dict[Vector, Prob]:
    """k-fold convolution of one offspring law.

    Rational laws run on integer numerators over a common denominator
    (exact, and much faster than reducing Fractions at every product);
    laws with float atoms run in floats.
    """
    num, den = _law_power_raw(law, k, q)
    if den is None:
        return num
    return {v: Fraction(n, den) for v, n in num.items()}


def _law_power_raw(law: OffspringLaw, k: int, q: int) -> tuple[dict, int | None]:
    """As _law_power but keeping integer numerators: returns (dict, denominator).

    denominator is None for the float path (the dict then holds floats).
    """
    zero = (0,) * q
    if all(isinstance(pr, Fraction) for _, pr in law.support):
        D = math.lcm(*(pr.denominator for _, pr in law.support))
        base = {v: int(pr * D) for v, pr in law.support}
        return _power(base, 1, k, zero), D ** k
    base_f = {v: float(pr) for v, pr in law.support}
    return _power(base_f, 1.0, k, zero), None


def step_distribution(
    spec: ModelSpec, z: Sequence[int], cap: float = 1e18
) -> dict[Vector, Prob]:
    """Exact law of the next state given the current one.

    Convolves the per-couple offspring laws (exactly, in rational arithmetic
    when the law probabilities are rationals) and pushes the children law
    through the mating function.  The returned dict maps states in N^p
    (including the zero state) to probabilities summing to 1.

    The guard ``prod_i |support_i|^{z_i} <= cap`` rejects requests whose
    support enumeration could blow up; callers should fall back to Monte
    Carlo estimation in that case.
    """
    z = check_state(spec, z)
    log_cost = sum(zi * math.log(max(len(law.support), 1))
                   for zi, law in zip(z, spec.offspring))
    if log_cost > math.log(cap):
        raise ResourceError(
            f"exact one-step law from {z} exceeds the support budget cap={cap:g}; "
            "use Monte Carlo sampling instead")
    if sum(z) == 0:
        return {z: Fraction(1)}
    # keep the whole cross-type convolution in one arithmetic domain:
    # integer numerators over a running denominator when every involved law
    # is rational, plain floats otherwise
    parts = [_law_power_raw(spec.offspring[i], zi, spec.q)
             for i, zi in enumerate(z) if zi]
    exact = all(den is not None for _, den in parts)
    if exact:
        children: dict = {(0,) * spec.q: 1}
        denom = 1
        for num, den in parts:
            children = _convolve(children, num)
            denom *= den
    else:
        children = {(0,) * spec.q: 1.0}
        for i, zi in enumerate(z):
            if zi:
                children = _convolve(children, _law_power(spec.offspring[i], zi, spec.q))
    out: dict[Vector, Prob] = {}
    for w, pr in children.items():
        y = mating_apply(spec.mating, w)
        if y in out:
            out[y] = out[y] + pr
        else:
            out[y] = pr
    if exact:
        out = {y: Fraction(n, denom) for y, n in out.items()}
    total = float(sum(out.values()))
    if abs(total - 1.0) > _PROB_SUM_TOL:
        raise ModelValidationError(f"one-step law sums to {total!r}; offspring law is malformed")
    return out


def step_mean(spec: ModelSpec, z: Sequence[int], cap: float = 1e18) -> np.ndarray:
    """Exact expectation of the next state, from the one-step law."""
    dist = step_distribution(spec, z, cap=cap)
    mean = np.zeros(spec.p)
    for y, pr in dist.items():
        mean += float(pr) * np.array(y, dtype=float)
    return mean


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass
class Violation:
    check: str
    witness: object
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation]
    alpha: np.ndarray | None
    beta: np.ndarray | None

    @property
    def ok(self) -> bool:
        return not self.violations


def _box_points(box: int, q: int) -> Iterable[Vector]:
    idx = np.indices((box + 1,) * q).reshape(q, -1).T
    return (tuple(int(c) for c in row) for row in idx)


def validate_model(
    spec: ModelSpec,
    n_samples: int = 2000,
    seed: int = 0,
    radius: int | None = None,
) -> ValidationReport:
    """Check the model's standing assumptions; return every violation found.

    Checked: xi(0) = 0; super-additivity xi(x1+x2) >= xi(x1) + xi(x2) and the
    sub-affine cap xi(x) <= alpha|x| + beta (both certified analytically for
    the built-in matings, checked on enumerated or sampled pairs for tables);
    and the column condition sum_i mean_matrix[i, j] > 0 for every j.

    With ``radius`` given, a custom table must also cover every children
    vector reachable from ``radius`` couples.
    """
    violations: list[Violation] = []
    m = spec.mating

    zero = (0,) * spec.q
    try:
        if mating_apply(m, zero) != (0,) * spec.p:
            violations.append(Violation("mating_zero", zero, "xi(0) != 0"))
    except DomainError as exc:
        violations.append(Violation("mating_zero", zero, f"xi(0) undefined: {exc}"))

    col_sums = spec.mean_matrix.sum(axis=0)
    for j, s in enumerate(col_sums):
        if s <= 0:
            violations.append(Violation(
                "column_sum", j, f"column {j} of the mean matrix sums to {s}; "
                "no couple type ever produces children of this sex/type"))

    if m.kind == "custom_table":
        violations.extend(_check_table(m, n_samples, seed))
        if radius is not None:
            max_children = max(int(law.vectors.sum(axis=1).max()) for law in spec.offspring)
            reach = radius * max_children
            if reach > m.box:
                violations.append(Violation(
                    "table_box", radius,
                    f"children vectors from {radius} couples can reach l1-norm {reach}, "
                    f"beyond the [0,{m.box}]^{m.q} table box"))
    # built-in matings are super-additive and sub-affine by construction

    return ValidationReport(violations, m.alpha, m.beta)


def _check_table(m: MatingFunction, n_samples: int, seed: int) -> list[Violation]:
    """Exhaustively (small boxes) or by sampling check Assumption-style bounds."""
    violations = []
    points = [pt for pt in _box_points(m.box, m.q)]
    n_pairs = len(points) ** 2

    if n_pairs <= max(n_samples, 4096):
        pairs = ((x1, x2) for x1 in points for x2 in points)
    else:
        u = uniforms(seed, np.arange(2 * n_samples)) * len(points)
        idx = u.astype(np.int64).clip(0, len(points) - 1)
        pairs = ((points[idx[2 * k]], points[idx[2 * k + 1]]) for k in range(n_samples))

    for x1, x2 in pairs:
        s = tuple(a + b for a, b in zip(x1, x2))
        if max(s) > m.box:
            # the certified domain is the box itself; the homogeneous
            # extension carries O(1) quantization and is not held to the
            # inequality here
            continue
        try:
            xs, x1v, x2v = mating_apply(m, s), mating_apply(m, x1), mating_apply(m, x2)
        except DomainError as exc:
            violations.append(Violation("table_domain", (x1, x2), str(exc)))
            continue
        if any(a < b + c for a, b, c in zip(xs, x1v, x2v)):
            violations.append(Violation(
                "superadditivity", (x1, x2),
                f"xi({s}) = {xs} < xi({x1}) + xi({x2}) = "
                f"{tuple(b + c for b, c in zip(x1v, x2v))}"))

    if m.alpha is not None:
        for x in points:
            val = mating_apply(m, x)
            cap = m.alpha * sum(x) + m.beta
            if np.any(np.array(val, dtype=float) > cap + 1e-12):
                violations.append(Violation(
                    "subaffinity", x, f"xi({x}) = {val} exceeds the cap alpha|x|+beta = {cap}"))

    # deduplicate per (check, witness)
    seen, unique = set(), []
    for v in violations:
        key = (v.check, repr(v.witness))
        if key not in seen:
            seen.add(key)
            unique.append(v)
    return unique
