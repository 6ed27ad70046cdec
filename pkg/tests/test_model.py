"""Process definition: mating, exact one-step law, sampling, validation."""

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from bgwqsd import (
    MatingFunction,
    ModelSpec,
    OffspringLaw,
    mating_apply,
    step,
    step_distribution,
    validate_model,
)
from bgwqsd.errors import DomainError, ModelValidationError, ResourceError
from bgwqsd.model import sample_offspring_matrix
from bgwqsd.montecarlo import simulate_batch
from bgwqsd.streams import CoupleStream


# -- mating -----------------------------------------------------------------

def test_perfect_fidelity_is_min():
    m = MatingFunction(kind="perfect_fidelity", p=1, q=2)
    assert mating_apply(m, (3, 5)) == (3,)
    assert mating_apply(m, (0, 0)) == (0,)


def test_promiscuous_needs_a_male():
    m = MatingFunction(kind="promiscuous", p=1, q=2)
    assert mating_apply(m, (4, 0)) == (0,)
    assert mating_apply(m, (4, 1)) == (4,)
    assert mating_apply(m, (4, 9)) == (4,)


def test_identity_keeps_vector():
    m = MatingFunction(kind="identity", p=3, q=3)
    assert mating_apply(m, (1, 0, 2)) == (1, 0, 2)


def test_mating_dimension_rules():
    with pytest.raises(ModelValidationError):
        MatingFunction(kind="identity", p=2, q=3)
    with pytest.raises(ModelValidationError):
        MatingFunction(kind="perfect_fidelity", p=1, q=3)


def test_table_lookup_and_extension():
    table = {(x, y): (min(x, y),) for x in range(3) for y in range(3)}
    m = MatingFunction(kind="custom_table", p=1, q=2, table=table, box=2,
                       alpha=np.array([1.0]), beta=np.array([0.0]))
    assert mating_apply(m, (1, 2)) == (1,)
    # beyond the box: homogeneous extension at box resolution,
    # (5,7) -> scale 3.5 -> table[(1,2)] = 1 -> floor(3.5)
    assert mating_apply(m, (5, 7)) == (3,)
    # the extension is exact on rays through box lattice points and has
    # O(|x|/box) quantization off them
    fine = {(x, y): (min(x, y),) for x in range(9) for y in range(9)}
    mf = MatingFunction(kind="custom_table", p=1, q=2, table=fine, box=8,
                        alpha=np.array([1.0]), beta=np.array([0.0]))
    assert mating_apply(mf, (16, 16)) == (16,)
    assert mating_apply(mf, (16, 24)) == (15,)
    no_cert = MatingFunction(kind="custom_table", p=1, q=2, table=table, box=2)
    with pytest.raises(DomainError):
        mating_apply(no_cert, (5, 7))


def test_table_missing_entry_is_domain_error():
    table = {(0, 0): (0,), (1, 1): (1,)}
    m = MatingFunction(kind="custom_table", p=1, q=2, table=table, box=1)
    with pytest.raises(DomainError):
        mating_apply(m, (0, 1))


# -- offspring laws and model structure --------------------------------------

def test_probabilities_must_sum_to_one():
    with pytest.raises(ModelValidationError):
        OffspringLaw([((0, 0), Fraction(1, 2)), ((1, 0), Fraction(1, 4))])


def test_rational_strings_are_exact():
    law = OffspringLaw([((0,), "1/3"), ((1,), "2/3")])
    assert law.support[0][1] == Fraction(1, 3)


def test_mean_matrix_matches_expectation(two_child):
    assert np.allclose(two_child.mean_matrix, [[0.375, 0.375]], atol=1e-12)


def test_mean_matrix_classical(classical):
    assert np.allclose(classical.mean_matrix, [[0.5, 0.2], [0.1, 0.4]], atol=1e-12)


# -- validation ---------------------------------------------------------------

def test_identity_model_passes(classical):
    assert validate_model(classical).ok


def test_perfect_fidelity_passes_with_certificate(two_child):
    report = validate_model(two_child)
    assert report.ok
    assert np.allclose(report.alpha, [1.0]) and np.allclose(report.beta, [0.0])


def test_table_equal_to_min_passes(table_model):
    assert validate_model(table_model, radius=4).ok


def test_table_with_nonzero_origin_fails():
    table = {(x, y): (1,) for x in range(2) for y in range(2)}
    m = MatingFunction(kind="custom_table", p=1, q=2, table=table, box=1,
                       alpha=np.array([2.0]), beta=np.array([1.0]))
    law = OffspringLaw([((0, 0), Fraction(1, 2)), ((1, 1), Fraction(1, 2))])
    spec = ModelSpec(p=1, q=2, mating=m, offspring=[law])
    report = validate_model(spec)
    assert any(v.check == "mating_zero" for v in report.violations)


def test_superadditivity_counterexample_is_reported():
    # xi(x, y) = ceil((x+y)/2): xi(1,0) + xi(0,1) = 2 > xi(1,1) = 1
    table = {(x, y): (math.ceil((x + y) / 2),) for x in range(4) for y in range(4)}
    m = MatingFunction(kind="custom_table", p=1, q=2, table=table, box=3,
                       alpha=np.array([1.0]), beta=np.array([1.0]))
    law = OffspringLaw([((0, 0), Fraction(1, 2)), ((1, 1), Fraction(1, 2))])
    spec = ModelSpec(p=1, q=2, mating=m, offspring=[law])
    report = validate_model(spec)
    bad = [v for v in report.violations if v.check == "superadditivity"]
    assert bad
    # the reported witness really does violate the inequality
    x1, x2 = bad[0].witness
    s = tuple(a + b for a, b in zip(x1, x2))
    assert any(a < b + c for a, b, c in
               zip(mating_apply(m, s), mating_apply(m, x1), mating_apply(m, x2)))


def test_column_sum_failure_reported():
    # males are never produced: promiscuous mating can never fire
    law = OffspringLaw([((0, 0), Fraction(1, 10)), ((1, 0), Fraction(9, 10))])
    spec = ModelSpec(p=1, q=2, mating=MatingFunction(kind="promiscuous", p=1, q=2),
                     offspring=[law])
    report = validate_model(spec)
    assert any(v.check == "column_sum" for v in report.violations)


def test_table_box_too_small_for_radius(table_model):
    # 8 couples can produce up to 16 children, beyond the [0,8]^2 box
    report = validate_model(table_model, radius=8)
    assert any(v.check == "table_box" for v in report.violations)


# -- exact one-step law -------------------------------------------------------

def test_two_child_one_couple_dist(two_child):
    # independent enumeration: one couple has 6 equally explicit outcomes;
    # only the (1 female, 1 male) family survives the min mating
    dist = step_distribution(two_child, (1,))
    assert dist == {(0,): Fraction(7, 8), (1,): Fraction(1, 8)}


def test_zero_state_is_absorbing(two_child):
    assert step_distribution(two_child, (0,)) == {(0,): Fraction(1)}
    stream = CoupleStream(seed=1)
    assert step(two_child, (0,), stream) == (0,)


def test_deterministic_extinction():
    law = OffspringLaw([((0,), Fraction(1))])
    spec = ModelSpec(p=1, q=1, mating=MatingFunction(kind="identity", p=1, q=1),
                     offspring=[law])
    assert step_distribution(spec, (5,)) == {(0,): Fraction(1)}


@pytest.mark.parametrize("z", [(1,), (2,), (3,)])
def test_convolution_matches_product_enumeration(two_child, z):
    # oracle: enumerate every per-couple outcome combination directly
    law = two_child.offspring[0]
    expected: dict = {}
    for combo in itertools.product(law.support, repeat=z[0]):
        w = tuple(sum(v[j] for v, _ in combo) for j in range(2))
        y = mating_apply(two_child.mating, w)
        pr = math.prod((p for _, p in combo), start=Fraction(1))
        expected[y] = expected.get(y, Fraction(0)) + pr
    assert step_distribution(two_child, z) == expected


def test_cross_type_convolution_matches_enumeration(classical):
    z = (2, 1)
    laws = classical.offspring
    expected: dict = {}
    pools = [laws[0].support, laws[0].support, laws[1].support]
    for combo in itertools.product(*pools):
        w = tuple(sum(v[j] for v, _ in combo) for j in range(2))
        pr = math.prod((p for _, p in combo), start=Fraction(1))
        expected[w] = expected.get(w, Fraction(0)) + pr
    assert step_distribution(classical, z) == expected


def test_exact_law_sums_to_one(wide_family):
    dist = step_distribution(wide_family, (5,))
    assert sum(dist.values()) == Fraction(1)


def test_support_budget_cap(wide_family):
    with pytest.raises(ResourceError):
        step_distribution(wide_family, (9,), cap=1e9)


# -- sampling -----------------------------------------------------------------

def test_step_matches_batch_paths(two_child):
    batch = simulate_batch(two_child, (3,), horizon=4, n_traj=1, seed=123)
    state = (3,)
    for n in range(1, 5):
        state = step(two_child, state, CoupleStream(seed=123, path=0, generation=n))
        hist = batch.states_at[n]
        if sum(state) == 0:
            assert hist == {}
            break
        assert hist == {state: 1}


@pytest.mark.parametrize("z", [(1,), (2,), (3,)])
def test_empirical_step_matches_exact_law(two_child, z):
    n = 10**6
    batch = simulate_batch(two_child, z, horizon=1, n_traj=n, seed=77)
    hist = dict(batch.states_at[1])
    hist[(0,)] = n - sum(hist.values())
    exact = step_distribution(two_child, z)
    keys = set(hist) | set(exact)
    l1 = sum(abs(hist.get(k, 0) / n - float(exact.get(k, 0))) for k in keys)
    assert l1 <= 0.01


def test_coupled_monotonicity(two_child):
    # same draws for shared couples: bigger initial state dominates path by path
    for seed in range(5):
        stream = CoupleStream(seed=seed, generation=1)
        big = sample_offspring_matrix(two_child, (7,), stream)[0]
        for z in (1, 3, 5):
            small = sample_offspring_matrix(two_child, (z,), stream)[0]
            assert np.array_equal(big[:z], small)
            w_small = small.sum(axis=0)
            w_big = big.sum(axis=0)
            assert mating_apply(two_child.mating, w_big) >= \
                mating_apply(two_child.mating, w_small)


def test_pathwise_superadditivity(two_child):
    # step(z1 + z2) >= step(z1) + step(z2) when the extra couples' draws
    # are the tail rows of the combined offspring matrix
    for seed in range(10):
        stream = CoupleStream(seed=seed, generation=2)
        z1, z2 = 3, 4
        mat = sample_offspring_matrix(two_child, (z1 + z2,), stream)[0]
        w1 = mat[:z1].sum(axis=0)
        w2 = mat[z1:].sum(axis=0)
        combined = mating_apply(two_child.mating, w1 + w2)
        split = tuple(a + b for a, b in zip(mating_apply(two_child.mating, w1),
                                            mating_apply(two_child.mating, w2)))
        assert all(c >= s for c, s in zip(combined, split))
