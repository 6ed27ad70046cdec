"""Ready-made example models used across tests, demos and docs."""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Sequence

import numpy as np

from .model import MatingFunction, ModelSpec, OffspringLaw


def fair_split_min_mating_model(family_size_probs: Sequence[Fraction]) -> ModelSpec:
    """One couple type, perfect-fidelity mating, fair independent sex split.

    ``family_size_probs[n]`` is the probability of n children; each child is
    independently female with probability 1/2, and the children vector is
    (#females, #males).  The offspring support is expanded exactly.
    """
    probs = [Fraction(pr) for pr in family_size_probs]
    if sum(probs) != 1:
        raise ValueError("family size probabilities must sum to 1 exactly")
    support = []
    for n, pn in enumerate(probs):
        if pn == 0:
            continue
        for k in range(n + 1):
            support.append(((k, n - k), pn * math.comb(n, k) * Fraction(1, 2 ** n)))
    law = OffspringLaw(support)
    mating = MatingFunction(kind="perfect_fidelity", p=1, q=2)
    return ModelSpec(p=1, q=2, mating=mating, offspring=[law])


def two_child_model() -> ModelSpec:
    """At most two children per couple: sizes 0/1/2 with probs 1/2, 1/4, 1/4.

    Small enough to check everything by hand: the one-couple state maps to
    one couple again only via a (1 female, 1 male) pair, with probability
    1/4 * 1/2 = 1/8, and dies otherwise.  Couple counts never increase, so
    truncated kernels are lower triangular.
    """
    return fair_split_min_mating_model([Fraction(1, 2), Fraction(1, 4), Fraction(1, 4)])


def wide_family_model() -> ModelSpec:
    """Family sizes up to 4, so one couple can produce two couples.

    Truncations of this model are irreducible and aperiodic: every state
    reaches every other within the radius, and single states have return
    loops.  Mean family size 1.4 puts the growth rate at exactly 0.7 while
    the pairing loss drags the survival decay rate well below it, leaving
    room for drift exponents a with 0.7^a below the decay rate.  Used for
    the Yaglom-limit and convergence-criteria studies.
    """
    return fair_split_min_mating_model(
        [Fraction(7, 20), Fraction(1, 5), Fraction(1, 4), Fraction(1, 10), Fraction(1, 10)]
    )


def classical_two_type_model() -> ModelSpec:
    """Identity mating, p = q = 2: an ordinary two-type branching process.

    Mean matrix [[0.5, 0.2], [0.1, 0.4]], whose Perron root is exactly 0.6.
    """
    type1 = OffspringLaw([
        ((0, 0), Fraction(2, 5)),
        ((1, 0), Fraction(2, 5)),
        ((0, 1), Fraction(1, 10)),
        ((1, 1), Fraction(1, 10)),
    ])
    type2 = OffspringLaw([
        ((0, 0), Fraction(1, 2)),
        ((1, 0), Fraction(1, 10)),
        ((0, 1), Fraction(2, 5)),
    ])
    mating = MatingFunction(kind="identity", p=2, q=2)
    return ModelSpec(p=2, q=2, mating=mating, offspring=[type1, type2])


def min_table_model(box: int = 8) -> ModelSpec:
    """The two-child model with its mating given as an explicit table.

    The table stores min(x, y) on [0, box]^2 with the affine certificate
    alpha = (1,), beta = (0,); beyond the box the certificate cap applies.
    Exercises the custom-table code paths against closed forms.
    """
    table = {(x, y): (min(x, y),) for x in range(box + 1) for y in range(box + 1)}
    mating = MatingFunction(
        kind="custom_table", p=1, q=2, table=table, box=box,
        alpha=np.array([1.0]), beta=np.array([0.0]),
    )
    base = two_child_model()
    return ModelSpec(p=1, q=2, mating=mating, offspring=base.offspring)
