"""Trajectory ensembles, decay-rate estimation, conditional laws, TV."""

from fractions import Fraction

import numpy as np
import pytest

from bgwqsd import (
    MatingFunction,
    ModelSpec,
    OffspringLaw,
    build_kernel_exact,
    conditional_law,
    estimate_theta0,
    qsd_as_law,
    simulate_batch,
    spectral_radius,
    survival_profile,
    tv_distance,
    yaglom_convergence,
)
from bgwqsd.errors import StatisticsError


# -- batches ---------------------------------------------------------------------

def test_zero_start_is_extinct_at_time_zero(two_child):
    b = simulate_batch(two_child, (0,), horizon=5, n_traj=100, seed=1)
    assert np.all(b.extinction_times == 0)
    assert b.survivors_at(0) == 0


def test_same_seed_same_batch(two_child):
    b1 = simulate_batch(two_child, (2,), horizon=10, n_traj=5000, seed=3)
    b2 = simulate_batch(two_child, (2,), horizon=10, n_traj=5000, seed=3)
    assert np.array_equal(b1.extinction_times, b2.extinction_times)
    assert b1.states_at == b2.states_at


def test_survivor_counts_non_increasing(wide_family):
    b = simulate_batch(wide_family, (3,), horizon=15, n_traj=20_000, seed=8)
    counts = [b.survivors_at(n) for n in range(16)]
    assert all(a >= b_ for a, b_ in zip(counts, counts[1:]))


def test_survival_matches_geometric_rate(two_child):
    n_traj = 200_000
    b = simulate_batch(two_child, (1,), horizon=12, n_traj=n_traj, seed=21)
    curve = b.survival_curve()
    for n in range(13):
        p = 0.125 ** n
        assert abs(curve[n] - p) <= 3 * np.sqrt(p * (1 - p) / n_traj) + 1e-12


def test_population_cap_reported(wide_family):
    b = simulate_batch(wide_family, (6,), horizon=8, n_traj=2000, seed=4,
                       population_cap=7)
    assert b.n_capped > 0
    # capped paths still count as survivors
    assert b.survivors_at(8) >= b.n_capped


# -- decay-rate estimation -----------------------------------------------------------

def test_theta_estimate_covers_true_rate(two_child):
    b = simulate_batch(two_child, (1,), horizon=20, n_traj=10**6, seed=42)
    est = estimate_theta0(b)
    lo, hi = est.ci
    assert lo <= 0.125 <= hi
    assert abs(est.theta_hat - 0.125) <= 0.01


def test_deterministic_extinction_has_no_slope():
    law = OffspringLaw([((0,), Fraction(1))])
    spec = ModelSpec(p=1, q=1, mating=MatingFunction(kind="identity", p=1, q=1),
                     offspring=[law])
    b = simulate_batch(spec, (5,), horizon=10, n_traj=1000, seed=1)
    with pytest.raises(StatisticsError):
        estimate_theta0(b)


def test_classical_rate_recovered(classical):
    b = simulate_batch(classical, (2, 2), horizon=25, n_traj=300_000, seed=13)
    est = estimate_theta0(b)
    lo, hi = est.ci
    assert lo - 0.01 <= 0.6 <= hi + 0.01


def test_mc_rate_consistent_with_kernel(wide_family):
    K = build_kernel_exact(wide_family, 10)
    theta_R = spectral_radius(K).theta
    b = simulate_batch(wide_family, (4,), horizon=18, n_traj=10**6, seed=17)
    est = estimate_theta0(b)
    # the truncated rate lower-bounds the true decay rate the batch sees
    assert est.theta_hat >= theta_R - 0.02
    assert abs(est.theta_hat - theta_R) <= 0.02


def test_survival_dominates_truncated_profile(wide_family):
    n_traj = 200_000
    K = build_kernel_exact(wide_family, 6)
    prof = survival_profile(K, (2,), 12)
    b = simulate_batch(wide_family, (2,), horizon=12, n_traj=n_traj, seed=31)
    curve = b.survival_curve()
    for n in range(13):
        sigma = np.sqrt(max(prof[n] * (1 - prof[n]), 1e-12) / n_traj)
        assert curve[n] >= prof[n] - 3 * sigma


# -- conditional laws ----------------------------------------------------------------

def test_conditional_law_at_zero_is_point_mass(wide_family):
    b = simulate_batch(wide_family, (3,), horizon=2, n_traj=1000, seed=2)
    assert conditional_law(b, 0, min_survivors=10) == {(3,): 1.0}


def test_single_alive_state_conditional_law(two_child):
    # from one couple the chain lives on a single state, so the conditional
    # law is that point mass at every horizon with survivors
    b = simulate_batch(two_child, (1,), horizon=4, n_traj=100_000, seed=6)
    for n in range(1, 5):
        law = conditional_law(b, n, min_survivors=20)
        assert law == {(1,): 1.0}


def test_insufficient_survivors_raises(two_child):
    b = simulate_batch(two_child, (1,), horizon=10, n_traj=500, seed=9)
    with pytest.raises(StatisticsError):
        conditional_law(b, 8, min_survivors=200)


def test_tv_distance_properties():
    d1 = {(1,): 0.5, (2,): 0.5}
    d2 = {(1,): 0.25, (3,): 0.75}
    assert tv_distance(d1, d1) == 0.0
    assert tv_distance(d1, d2) == tv_distance(d2, d1)
    assert 0.0 <= tv_distance(d1, d2) <= 1.0
    assert tv_distance({(1,): 1.0}, {(2,): 1.0}) == 1.0


# -- Yaglom convergence ---------------------------------------------------------------

def test_stationary_start_stays_put(wide_family, wide_family_kernel6, wide_family_qsd6):
    nu = qsd_as_law(wide_family_kernel6, wide_family_qsd6)
    res = yaglom_convergence(wide_family, nu, range(1, 7), nu,
                             n_traj=400_000, seed=11)
    for row in res.rows:
        if row.tv is not None:
            # statistical noise plus the (measured ~5e-4) truncation bias
            assert row.tv <= 3 * row.noise_floor + 2e-3


def test_exact_point_mass_case(two_child):
    K = build_kernel_exact(two_child, 1)
    q = spectral_radius(K)
    res = yaglom_convergence(two_child, (1,), range(1, 5), qsd_as_law(K, q),
                             n_traj=200_000, seed=23)
    for row in res.rows:
        if row.tv is not None:
            assert row.tv == 0.0


def test_tv_decreases_on_irreducible_model(wide_family, wide_family_kernel6,
                                           wide_family_qsd6):
    nu = qsd_as_law(wide_family_kernel6, wide_family_qsd6)
    res = yaglom_convergence(wide_family, (6,), range(1, 11), nu,
                             n_traj=400_000, seed=29)
    assert res.eventually_decreasing
    assert res.gamma_hat is not None and res.gamma_hat < 1.0
    fitted = [r for r in res.rows if r.n in res.fit_window]
    assert all(r.tv <= res.envelope_C * res.gamma_hat ** r.n + 1e-12 for r in fitted)
