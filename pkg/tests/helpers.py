"""Shared fixtures: the worked intro task and randomized micro-instances."""

from __future__ import annotations

import random

from wcpref.asp import Atom, parse_constraint
from wcpref.learner import HypothesisSpace, ModeBias, OrderingExample, expand_mode_bias


def intro_task():
    """The single-feature task with three items and three orderings."""
    bias = ModeBias(
        value_features=("p",),
        category_constants=(1, 2),
        maxp=2,
    )
    contexts = {
        "item0": frozenset({Atom("category", (2,)), Atom("value", ("p", 1))}),
        "item1": frozenset({Atom("category", (1,)), Atom("value", ("p", 2))}),
        "item2": frozenset({Atom("category", (2,)), Atom("value", ("p", 3))}),
    }
    examples = [
        OrderingExample("o0", contexts["item2"], contexts["item1"], ">", 2, "item2", "item1"),
        OrderingExample("o1", contexts["item2"], contexts["item0"], ">", 2, "item2", "item0"),
        OrderingExample("o2", contexts["item1"], contexts["item0"], "<", 1, "item1", "item0"),
    ]
    return bias, contexts, examples


INTRO_EXPANSION = [
    ":~ value(p,V1).[1@2, V1]",
    ":~ value(p,V1).[-1@2, V1]",
    ":~ value(p,V1).[V1@2, V1]",
    ":~ value(p,V1).[-V1@2, V1]",
    ":~ value(p,V1).[V1@1, V1]",
    ":~ value(p,V1).[-1@1, V1]",
    ":~ value(p,V1).[1@1, V1]",
    ":~ value(p,V1).[-V1@1, V1]",
]


def intro_space() -> HypothesisSpace:
    return expand_mode_bias(intro_task()[0])


def intro_expansion_constraints():
    return {parse_constraint(s) for s in INTRO_EXPANSION}


def random_micro_instance(rng: random.Random):
    """A tiny random learning instance with |space| <= 20.

    Small feature values make cross-feature contribution collisions (the
    dedup edge case) common on purpose.
    """
    while True:
        maxp = rng.randint(1, 2)
        n_features = rng.randint(1, 5)
        forms = rng.sample(["1", "-1", "V1", "-V1"], rng.randint(1, 2))
        with_cat = rng.random() < 0.3
        size = n_features * len(forms) * maxp
        if with_cat:
            size += 2 * min(len(forms), 2) * maxp  # two category-only constants
        if size <= 20:
            break
    features = tuple(f"f{i}" for i in range(n_features))
    bias = ModeBias(
        value_features=features,
        category_constants=(1, 2) if with_cat else (),
        weight_forms=tuple(forms),
        maxp=maxp,
        allow_category_only=with_cat,
    )
    space = expand_mode_bias(bias)

    n_items = rng.randint(2, 4)
    contexts = []
    for _ in range(n_items):
        atoms = {Atom("category", (rng.randint(1, 2),))}
        atoms.update(Atom("value", (f, rng.randint(0, 4))) for f in features)
        contexts.append(frozenset(atoms))

    examples = []
    for n in range(rng.randint(1, 6)):
        i = rng.randrange(n_items)
        j = rng.randrange(n_items - 1)
        if j >= i:
            j += 1
        examples.append(
            OrderingExample(
                id=f"o{n}",
                first=contexts[i],
                second=contexts[j],
                symbol=rng.choice(["<", ">", "=", "<=", ">="]),
                penalty=rng.randint(1, 3),
            )
        )
    return space, examples
