"""Growth operator, Perron data, scaling eigenfunction, primitivity."""

from fractions import Fraction

import numpy as np
import pytest

from bgwqsd import (
    MatingFunction,
    ModelSpec,
    OffspringLaw,
    check_primitivity,
    eval_eigenfunction,
    growth_operator,
    power_iterate,
    step_distribution,
)
from bgwqsd.errors import DegenerateModelError


def _identity_model(mean_matrix):
    """Identity-mating model with the requested integer-friendly means."""
    p = len(mean_matrix)
    laws = []
    for row in mean_matrix:
        support = []
        rest = Fraction(1)
        for j, mj in enumerate(row):
            frac = Fraction(mj).limit_denominator(100)
            vec = tuple(1 if k == j else 0 for k in range(p))
            support.append((vec, frac))
            rest -= frac
        support.append(((0,) * p, rest))
        laws.append(OffspringLaw(support))
    return ModelSpec(p=p, q=p, mating=MatingFunction(kind="identity", p=p, q=p),
                     offspring=laws)


# -- operator values -----------------------------------------------------------

def test_identity_operator_is_matrix_action(classical):
    out = growth_operator(classical, [1.0, 0.0])
    assert np.allclose(out, [0.5, 0.2], atol=1e-12)


def test_min_mating_operator(two_child):
    assert np.allclose(growth_operator(two_child, [1.0]), [0.375], atol=1e-12)


def test_promiscuous_operator_closed_form():
    law = OffspringLaw([((0, 0), Fraction(1, 10)),
                        ((1, 0), Fraction(3, 5)),
                        ((1, 1), Fraction(3, 10))])
    spec = ModelSpec(p=1, q=2, mating=MatingFunction(kind="promiscuous", p=1, q=2),
                     offspring=[law])
    assert np.allclose(spec.mean_matrix, [[0.9, 0.3]], atol=1e-12)
    assert np.allclose(growth_operator(spec, [1.0]), [0.9], atol=1e-12)


def test_table_operator_matches_closed_form(table_model, two_child):
    for z in ([1.0], [0.3], [2.5]):
        assert np.allclose(growth_operator(table_model, z),
                           growth_operator(two_child, z), atol=1e-4)


# -- power iteration -----------------------------------------------------------

def test_classical_perron_root(classical, classical_spectral):
    s = classical_spectral
    # independent dense oracle on the transposed mean matrix
    oracle = max(np.linalg.eigvals(classical.mean_matrix.T).real)
    assert abs(s.lambda_star - 0.6) <= 1e-8
    assert abs(s.lambda_star - oracle) <= 1e-10
    assert abs(s.z_star.sum() - 1.0) <= 1e-12
    assert s.residual <= 1e-10


def test_min_mating_perron_root(two_child_spectral):
    assert abs(two_child_spectral.lambda_star - 0.375) <= 1e-12
    assert np.allclose(two_child_spectral.z_star, [1.0])


def test_doubling_means_doubles_lambda(classical, classical_spectral):
    doubled_laws = []
    for law in classical.offspring:
        doubled_laws.append(OffspringLaw(
            [(tuple(2 * c for c in v), pr) for v, pr in law.support]))
    doubled = ModelSpec(p=2, q=2, mating=classical.mating, offspring=doubled_laws)
    s2 = power_iterate(doubled)
    assert abs(s2.lambda_star - 2 * classical_spectral.lambda_star) <= 1e-10


def test_degenerate_operator_raises():
    law = OffspringLaw([((0, 0), Fraction(1))])
    spec = ModelSpec(p=1, q=2, mating=MatingFunction(kind="perfect_fidelity", p=1, q=2),
                     offspring=[law])
    with pytest.raises(DegenerateModelError):
        power_iterate(spec)


# -- scaling eigenfunction -------------------------------------------------------

def test_eigenfunction_normalization(classical, classical_spectral):
    s = classical_spectral
    assert abs(eval_eigenfunction(classical, s, s.z_star) - 1.0) <= 1e-10
    assert abs(eval_eigenfunction(classical, s, 2 * s.z_star) - 2.0) <= 1e-10


def test_eigenfunction_is_linear_for_identity(classical, classical_spectral):
    # dense oracle: for a linear growth map the eigenfunction is u . z with
    # u the eigenvector of the mean matrix acting on the right
    s = classical_spectral
    vals, vecs = np.linalg.eig(classical.mean_matrix)
    u = np.abs(vecs[:, np.argmax(vals.real)].real)
    expected = lambda z: float(u @ z) / float(u @ s.z_star)
    for z in ([1.0, 0.0], [0.0, 1.0], [2.0, 3.0], [0.4, 0.1]):
        assert abs(eval_eigenfunction(classical, s, z) - expected(np.array(z))) <= 1e-9


def test_eigenfunction_counts_couples_for_one_type(two_child, two_child_spectral):
    for z in (1.0, 2.0, 7.5):
        assert abs(eval_eigenfunction(two_child, two_child_spectral, [z]) - z) <= 1e-12


def test_eigenfunction_zero_at_zero(classical, classical_spectral):
    assert eval_eigenfunction(classical, classical_spectral, [0.0, 0.0]) == 0.0


# -- primitivity -----------------------------------------------------------------

def test_one_type_model_is_primitive(two_child):
    assert check_primitivity(two_child).n0 == 1


def test_positive_matrix_is_primitive(classical):
    assert check_primitivity(classical).n0 == 1


def test_permutation_matrix_is_periodic():
    spec = _identity_model([[0, 1], [1, 0]])
    report = check_primitivity(spec, max_m=20)
    assert report.n0 is None
    assert report.failures


# -- operator properties ---------------------------------------------------------

GRID_2D = [np.array(z) for z in
           ([1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [2.0, 1.0], [0.3, 1.7], [5.0, 0.2])]


@pytest.mark.parametrize("a", [0.5, 2.0, 10.0])
def test_homogeneity(classical, two_child, a):
    for spec, zs in ((classical, GRID_2D), (two_child, [np.array([1.0]), np.array([3.0])])):
        for z in zs:
            lhs = growth_operator(spec, a * z)
            rhs = a * growth_operator(spec, z)
            assert np.abs(lhs - rhs).sum() <= 1e-10 * a * np.abs(rhs).sum() + 1e-300


def test_monotonicity(classical):
    rng = np.random.default_rng(3)
    for _ in range(50):
        z = rng.uniform(0, 3, size=2)
        dz = rng.uniform(0, 2, size=2)
        assert np.all(growth_operator(classical, z + dz) >=
                      growth_operator(classical, z) - 1e-12)


@pytest.mark.parametrize("t", [0.25, 0.5, 0.75])
def test_concavity_on_segments(two_child, classical, t):
    pairs = [(np.array([1.0]), np.array([4.0])),
             (np.array([0.2]), np.array([2.5]))]
    for z1, z2 in pairs:
        mid = growth_operator(two_child, t * z1 + (1 - t) * z2)
        chord = t * growth_operator(two_child, z1) + (1 - t) * growth_operator(two_child, z2)
        assert np.all(mid >= chord - 1e-10)
    for z1, z2 in [(GRID_2D[0], GRID_2D[1]), (GRID_2D[3], GRID_2D[4])]:
        mid = growth_operator(classical, t * z1 + (1 - t) * z2)
        chord = t * growth_operator(classical, z1) + (1 - t) * growth_operator(classical, z2)
        assert np.all(mid >= chord - 1e-10)


def test_eigen_relation_on_grid(classical, classical_spectral):
    s = classical_spectral
    for z in GRID_2D:
        pz = eval_eigenfunction(classical, s, z)
        pmz = eval_eigenfunction(classical, s, growth_operator(classical, z))
        assert abs(pmz - s.lambda_star * pz) <= 1e-9 * max(pz, 1e-12)


def test_scaled_mean_bound(two_child):
    # exact one-step means never exceed the operator value per unit
    m1 = growth_operator(two_child, [1.0])
    for k in range(1, 21):
        dist = step_distribution(two_child, (k,))
        mean = sum(float(pr) * np.array(y, dtype=float) for y, pr in dist.items())
        assert np.all(mean / k <= m1 + 1e-12)


def test_eigenfunction_supermartingale(two_child, two_child_spectral):
    s = two_child_spectral
    for z in range(1, 11):
        dist = step_distribution(two_child, (z,))
        drift = sum(float(pr) * eval_eigenfunction(two_child, s, np.array(y, float))
                    for y, pr in dist.items() if sum(y) > 0)
        assert drift <= s.lambda_star * z + 1e-10
