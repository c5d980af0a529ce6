"""Whole-system checks at pinned tolerances and wall-clock budgets.

Each test fixes its seeds and asserts exact integers, hard numeric
tolerances, or directional properties with stated margins: the worked
cost-semantics example, bias expansion, learner-vs-exhaustive agreement,
the survey-rating mapping, eigensolver accuracy, the salience selection
rate, metric sanity, and the two experiment-level trends (locality and
the component-space speedup).
"""

from __future__ import annotations

import math
import os
import random
import time

import numpy as np
import pytest

from wcpref.asp import (
    Atom,
    LABEL_FIRST,
    Theory,
    WeakConstraint,
    classify_pair,
    compare,
    evaluate_cost,
    parse_constraint,
    parse_theory,
    rank_items,
)
from wcpref.dataset import FeatureSpec, Item, PairSample, Schema, item_atoms, save_items, save_schema
from wcpref.learner import brute_force_learn, expand_mode_bias, learn
from wcpref.metrics import fidelity_report, gt_map, gt_theory
from wcpref.oracle import TheoryOracle
from wcpref.pca import fit, jacobi_eigh, kaiser_select, indirect_select, salience_select
from wcpref.pipeline import ExperimentConfig, OracleSettings, PcaSettings, run_global, run_local
from wcpref.sampling import pi_distance

from helpers import intro_expansion_constraints, intro_task, random_micro_instance


# ---------------------------------------------------------------------------
# Weak-constraint semantics on the worked choice program
# ---------------------------------------------------------------------------

P_FACTS = frozenset({Atom("p", ("a",)), Atom("p", ("b",)), Atom("p", ("c",))})
QA, QB, QC = Atom("q", ("a",)), Atom("q", ("b",)), Atom("q", ("c",))

# q(b)'s weight of 3 is spelled as three unit constraints with distinct
# tie-break terms; their contributions sum to 3 whenever q(b) holds.
CHOICE_THEORY = Theory.of(
    [
        WeakConstraint((QA,), "1", 2, ("a",)),
        WeakConstraint((QB,), "1", 1, ("b", 1)),
        WeakConstraint((QB,), "1", 1, ("b", 2)),
        WeakConstraint((QB,), "1", 1, ("b", 3)),
        WeakConstraint((QC,), "-1", 2, ("c",)),
    ]
)

EIGHT_ANSWER_SETS = [
    P_FACTS,
    P_FACTS | {QB},
    P_FACTS | {QC},
    P_FACTS | {QB, QC},
    P_FACTS | {QA},
    P_FACTS | {QA, QC},
    P_FACTS | {QA, QB},
    P_FACTS | {QA, QB, QC},
]


def test_choice_program_optimum_and_tie_break_costs():
    t0 = time.perf_counter()
    ranking = rank_items(CHOICE_THEORY, EIGHT_ANSWER_SETS)
    # the single optimum is {p(a), p(b), p(c), q(c)} ...
    assert ranking[0] == [2]
    # ... with integer costs 0 at level 1 and -1 at level 2
    best = evaluate_cost(EIGHT_ANSWER_SETS[2], CHOICE_THEORY)
    assert best.cost_at(1) == 0
    assert best.cost_at(2) == -1
    # {.., q(a), q(b), q(c)} beats {.., q(a), q(b)}: tied 3 at level 1,
    # then 0 vs 1 at level 2
    cost_a = evaluate_cost(P_FACTS | {QA, QB, QC}, CHOICE_THEORY)
    cost_b = evaluate_cost(P_FACTS | {QA, QB}, CHOICE_THEORY)
    assert cost_a.cost_at(1) == cost_b.cost_at(1) == 3
    assert cost_a.cost_at(2) == 0
    assert cost_b.cost_at(2) == 1
    assert compare(cost_a, cost_b) == LABEL_FIRST
    assert time.perf_counter() - t0 < 1.0


# ---------------------------------------------------------------------------
# Mode-bias expansion and end-to-end learning on the three-item task
# ---------------------------------------------------------------------------

def test_single_feature_bias_expands_to_the_eight_known_constraints():
    t0 = time.perf_counter()
    from wcpref.learner import ModeBias

    space = expand_mode_bias(ModeBias(value_features=("p",), maxp=2))
    assert set(space.candidates) == intro_expansion_constraints()
    assert len(space.candidates) == 8
    assert time.perf_counter() - t0 < 1.0


def test_three_item_task_learns_the_canonical_singleton_at_objective_two():
    t0 = time.perf_counter()
    bias, _contexts, examples = intro_task()
    space = expand_mode_bias(bias)
    result = learn(space, examples)
    assert result.objective == 2
    assert result.optimal
    assert result.theory == Theory.of([parse_constraint(":~ value(p,V1).[V1@1, V1]")], maxp=2)
    reference = brute_force_learn(space, examples)
    assert reference.objective == 2
    assert reference.theory == result.theory
    assert time.perf_counter() - t0 < 5.0


def test_search_matches_the_exhaustive_reference_on_200_micro_instances():
    t0 = time.perf_counter()
    rng = random.Random(2025)
    for _ in range(200):
        space, examples = random_micro_instance(rng)
        got = learn(space, examples)
        ref = brute_force_learn(space, examples)
        assert got.objective == ref.objective
        assert got.theory == ref.theory  # canonical tie-break agrees too
    assert time.perf_counter() - t0 < 120.0


# ---------------------------------------------------------------------------
# Survey-rating mapping on the worked browning pair
# ---------------------------------------------------------------------------

def _browning_pair_labels(learned: Theory, reference: Theory):
    """Labels both theories give the pair r1(browning)=3 vs r2(browning)=1."""
    r1 = frozenset({Atom("value", ("browning", 3))})
    r2 = frozenset({Atom("value", ("browning", 1))})
    return classify_pair(learned, r1, r2), classify_pair(reference, r1, r2)


def test_rating_3_maps_to_positive_weight_at_level_2_and_agrees():
    t0 = time.perf_counter()
    mapping = gt_map(3)
    assert mapping.g_bar == 2
    assert mapping.m == 2
    assert mapping.level == 2
    assert mapping.weight == "V1"
    learned = parse_theory(":~ value(browning,V1).[V1@1, V1]")
    reference = gt_theory(learned, {"browning": 3}).theory
    assert reference.render().strip() == ":~ value(browning,V1).[V1@2, V1]"
    ours, theirs = _browning_pair_labels(learned, reference)
    assert ours == theirs  # both prefer the low-browning item
    assert time.perf_counter() - t0 < 1.0


def test_rating_7_maps_to_minus_3_and_flips_the_browning_pair():
    mapping = gt_map(7)
    assert mapping.g_bar == -2
    assert mapping.m == -3
    assert mapping.level == 3
    assert mapping.weight == "-V1"
    learned = parse_theory(":~ value(browning,V1).[V1@1, V1]")
    reference = gt_theory(learned, {"browning": 7}).theory
    ours, theirs = _browning_pair_labels(learned, reference)
    assert ours != theirs  # the reference now prefers high browning
    assert ours == -theirs


# ---------------------------------------------------------------------------
# Eigensolver accuracy and the Kaiser count
# ---------------------------------------------------------------------------

def test_eigen_residuals_and_reconstruction_on_random_symmetric_matrices():
    rng = np.random.default_rng(6)
    for _ in range(100):
        n = int(rng.integers(2, 13))
        m = rng.normal(size=(n, n))
        sym = (m + m.T) / 2.0
        values, vectors = jacobi_eigh(sym)
        for j in range(n):
            residual = np.linalg.norm(sym @ vectors[:, j] - values[j] * vectors[:, j])
            assert residual <= 1e-8
        rebuilt = vectors @ np.diag(values) @ vectors.T
        assert np.abs(rebuilt - sym).max() <= 1e-6


def test_kaiser_count_matches_an_independent_eigenvalue_routine():
    rng = np.random.default_rng(17)
    base = rng.normal(size=(40, 3))
    mixing = rng.normal(size=(3, 8))
    data = base @ mixing + 0.3 * rng.normal(size=(40, 8))
    model = fit(data, standardize=True)
    mean = data.mean(axis=0)
    std = data.std(axis=0, ddof=1)
    z = (data - mean) / std
    corr = z.T @ z / (len(data) - 1)
    independent = int((np.linalg.eigvalsh(corr) >= 1.0).sum())
    assert kaiser_select(model) == independent


# ---------------------------------------------------------------------------
# Salience selection rate under gamma-distributed loadings
# ---------------------------------------------------------------------------

def test_salience_threshold_keeps_a_few_percent_of_gamma_loadings():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    columns = rng.gamma(shape=1.3, scale=0.1, size=(2084, 48))  # >= 1e5 draws
    kept = sum(len(salience_select(column)[0]) for column in columns)
    fraction = kept / columns.size
    assert 0.02 <= fraction <= 0.10
    assert time.perf_counter() - t0 < 10.0


# ---------------------------------------------------------------------------
# Metric sanity
# ---------------------------------------------------------------------------

def test_theory_is_perfectly_faithful_to_its_own_oracle():
    theory = parse_theory(
        ":~ value(x,V1).[V1@2, V1]\n:~ value(y,V1).[-V1@1, V1]", maxp=2
    )
    features = ("x", "y", "z")
    rng = random.Random(123)
    items = [
        Item(i, f"i{i}", {f: rng.randint(0, 9) for f in features}) for i in range(50)
    ]
    by_id = {item.id: item for item in items}
    pairs = []
    for n in range(1000):
        first, second = rng.sample(range(50), 2)
        pairs.append(PairSample(first, second))
    oracle = TheoryOracle(theory, features)
    labels = oracle.label_pairs(pairs, by_id)
    contexts = {item.id: frozenset(item_atoms(item, features, None)) for item in items}
    report = fidelity_report(theory, pairs, labels, contexts)
    assert report.fidelity == 1.0
    assert report.count == 1000


def test_query_distance_worked_cases():
    schema = Schema(
        (
            FeatureSpec("u", "continuous", (-100.0, 100.0)),
            FeatureSpec("v", "continuous", (-100.0, 100.0)),
            FeatureSpec("c", "categorical", (1, 2, 3)),
        )
    )

    def pair(u1, v1, c1, u2, v2, c2, base):
        return (
            Item(base, "x", {"u": u1, "v": v1, "c": c1}),
            Item(base + 1, "y", {"u": u2, "v": v2, "c": c2}),
        )

    query = pair(1.0, 2.0, 1, 3.0, 4.0, 2, base=0)
    assert pi_distance(query, query, schema) == 0.0
    mismatch = pair(1.0, 2.0, 3, 3.0, 4.0, 2, base=2)
    assert pi_distance(query, mismatch, schema) == 3.0
    offset = pair(1.0 + 3.0, 2.0 + 4.0, 1, 3.0, 4.0, 2, base=4)
    assert pi_distance(query, offset, schema) == 5.0  # a 3-4-5 triangle


# ---------------------------------------------------------------------------
# Locality: tight neighbourhoods track the black box better than wide ones
# ---------------------------------------------------------------------------

def _lexicographic_world(tmp_path):
    """Four tiny-domain features under a three-level lexicographic oracle.

    Small domains make top-level ties common, so many queries are decided
    by lower-priority features -- exactly the cases where only a tight
    neighbourhood can reveal the locally decisive feature to a learner
    capped at a single constraint.
    """
    schema = Schema(tuple(FeatureSpec(f, "ordinal", (0, 2)) for f in "abcd"))
    save_schema(tmp_path / "schema.json", schema)
    rng = random.Random(19)
    items = [
        Item(i, f"r{i}", {f: rng.randint(0, 2) for f in "abcd"}) for i in range(40)
    ]
    save_items(tmp_path / "items.csv", items, schema)
    (tmp_path / "gt.lp").write_text(
        ":~ value(a,V1).[V1@3, V1]\n"
        ":~ value(b,V1).[-V1@2, V1]\n"
        ":~ value(c,V1).[V1@1, V1]\n"
    )
    return tmp_path


def _mean_query_fidelity(world, sigma):
    config = ExperimentConfig(
        mode="local",
        seed=0,
        schema_path=str(world / "schema.json"),
        items_path=str(world / "items.csv"),
        oracle=OracleSettings(
            kind="theory", path=str(world / "gt.lp"), flip_prob=0.1, noise_seed=5
        ),
        maxp=3,
        m=45,
        sigma=sigma,
        n_queries=20,
        max_constraints=1,
    )
    manifests = run_local(config)
    assert len(manifests) == 20
    return sum(m.metrics_row["Fidelity"] for m in manifests) / len(manifests)


def test_tight_neighbourhoods_track_the_black_box_better_than_wide_ones(tmp_path):
    t0 = time.perf_counter()
    world = _lexicographic_world(tmp_path)
    tight = _mean_query_fidelity(world, sigma=0.01)
    wide = _mean_query_fidelity(world, sigma=1.0)
    assert tight - wide >= 0.05  # at least five percentage points
    assert time.perf_counter() - t0 < 600.0


# ---------------------------------------------------------------------------
# Component-space learning is faster without losing fidelity
# ---------------------------------------------------------------------------

def _correlated_world(tmp_path):
    """23 correlated continuous features dominated by one latent score.

    Every feature tracks the score with small noise, so the leading
    principal component recovers the oracle's preference direction and a
    five-component space supports a faithful one-constraint surrogate.
    """
    n_feat = 23
    names = [f"f{i:02d}" for i in range(n_feat)]
    schema = Schema(tuple(FeatureSpec(n, "continuous", (0.0, 60.0)) for n in names))
    save_schema(tmp_path / "schema.json", schema)
    rng = random.Random(42)
    items = []
    for i in range(60):
        score = rng.uniform(5.0, 35.0)
        values = {"f00": round(score, 1)}
        for j, name in enumerate(names[1:], start=1):
            coupling = 0.6 + 0.3 * math.sin(j)
            noise = rng.gauss(0.0, 1.5)
            values[name] = round(min(60.0, max(0.0, 5.0 + coupling * score + noise)), 1)
        items.append(Item(i, f"r{i}", values))
    save_items(tmp_path / "items.csv", items, schema)
    (tmp_path / "gt.lp").write_text(
        ":~ value(f00,V1).[V1@2, V1]\n:~ value(f01,V1).[-V1@1, V1]\n"
    )
    return tmp_path


def _timed_run(world, pca_mode):
    config = ExperimentConfig(
        mode="global",
        seed=10,
        schema_path=str(world / "schema.json"),
        items_path=str(world / "items.csv"),
        oracle=OracleSettings(
            kind="theory", path=str(world / "gt.lp"), theory_factor=10
        ),
        maxp=5,
        n_train=45,
        n_test=105,
        quantize_factor=1,
        time_limit=300.0,
        pca=PcaSettings(mode=pca_mode, n_components=5, factor=100),
    )
    manifest = run_global(config)
    return manifest.timings["learn"], manifest.metrics_row["Fidelity"]


def test_component_space_learning_is_five_times_faster_with_close_fidelity(tmp_path):
    t0 = time.perf_counter()
    world = _correlated_world(tmp_path)
    full_time, full_fidelity = _timed_run(world, "none")
    reduced_time, reduced_fidelity = _timed_run(world, "direct")
    assert reduced_time <= full_time / 5.0
    assert full_fidelity - reduced_fidelity <= 0.05
    assert time.perf_counter() - t0 < 900.0


# ---------------------------------------------------------------------------
# Published-figure check, gated on the external survey dataset
# ---------------------------------------------------------------------------

RECIPES_ITEMS_VAR = "WCPREF_RECIPES_ITEMS"


def test_published_survey_dataset_reduction_profile():
    """Exact published percentages depend on external artifacts.

    The original figures come from the authors' trained networks, their
    sampled pairs, and an external solver binary, none of which ship with
    this package; they are therefore not reproducible here.  What is
    checkable, given the survey dataset itself, is the reduction profile:
    selection over the first 8 components keeps 15 of the 48 features,
    and 17 components explain about 76% of the variance.
    """
    path = os.environ.get(RECIPES_ITEMS_VAR)
    if not path:
        pytest.skip(
            f"survey dataset not available (set {RECIPES_ITEMS_VAR}); the "
            "published figures also need the authors' networks, samples, "
            "and solver binary, so only this gated profile is checkable"
        )
    from wcpref.dataset import default_recipe_schema, load_items
    from wcpref.pca import matrix_from_items

    schema = default_recipe_schema("class")
    items = load_items(path, schema)
    names = [spec.name for spec in schema if spec.kind != "categorical"]
    assert len(names) == 48
    model = fit(matrix_from_items(items, names), names, standardize=True)
    kept, _report = indirect_select(model, 8)
    assert len(kept) == 15
    explained = sum(model.explained_variance_ratio[:17])
    assert explained == pytest.approx(0.76, abs=0.02)
