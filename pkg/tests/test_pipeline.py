"""End-to-end tests for the global, local, and classifier pipelines."""

import csv
import io
import random

import pytest

from wcpref.asp import parse_theory
from wcpref.dataset import FeatureSpec, Item, PairSample, Schema, save_pairs
from wcpref.oracle import TheoryOracle
from wcpref.pipeline import (
    ExperimentConfig,
    OracleSettings,
    PcaSettings,
    PipelineError,
    RunManifest,
    aggregate_local,
    build_report_rows,
    config_from_dict,
    config_to_dict,
    load_config,
    load_manifest,
    recompute_metrics,
    render_csv,
    render_theories,
    report,
    resolve_oracle,
    run_classifier,
    run_global,
    run_local,
    save_manifest,
)

GT_TEXT = ":~ value(a,V1).[V1@1, V1]"


def small_schema(rating=None):
    return Schema(
        (
            FeatureSpec("a", "ordinal", (0.0, 5.0), gt_rating=rating),
            FeatureSpec("b", "ordinal", (0.0, 5.0)),
        )
    )


def small_oracle(schema):
    return TheoryOracle(parse_theory(GT_TEXT), ["a", "b"], category_feature=None)


def global_config(**overrides):
    base = dict(
        mode="global",
        seed=7,
        n_train=20,
        n_test=15,
        sample_mode="synthetic-features",
        maxp=2,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def wide_pool(n_items=40, n_features=6, seed=3):
    rng = random.Random(seed)
    schema = Schema(
        tuple(FeatureSpec(f"f{i}", "ordinal", (0.0, 9.0)) for i in range(n_features))
    )
    items = [
        Item(i, f"item{i}", {f"f{j}": rng.randint(0, 9) for j in range(n_features)})
        for i in range(n_items)
    ]
    return schema, items


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

class TestConfig:
    def test_round_trip_through_dict(self):
        config = global_config(
            pca=PcaSettings(mode="direct", n_components=3),
            oracle=OracleSettings(kind="table", path="predictions.csv"),
        )
        assert config_from_dict(config_to_dict(config)) == config

    def test_json_file_round_trip(self, tmp_path):
        import json

        config = global_config()
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config_to_dict(config)))
        assert load_config(path) == config

    def test_bad_mode_rejected(self):
        with pytest.raises(PipelineError, match="mode"):
            ExperimentConfig(mode="banana", seed=0)

    def test_bad_pca_mode_rejected(self):
        with pytest.raises(PipelineError, match="pca"):
            PcaSettings(mode="both")

    def test_oracle_settings_validation(self):
        with pytest.raises(PipelineError, match="path"):
            OracleSettings(kind="mlp")
        with pytest.raises(PipelineError, match="argv"):
            OracleSettings(kind="command")
        with pytest.raises(PipelineError, match="kind"):
            OracleSettings(kind="psychic")

    def test_unknown_config_key_rejected(self):
        with pytest.raises(PipelineError, match="bad config"):
            config_from_dict({"mode": "global", "seed": 0, "frobnicate": 1})

    def test_mode_mismatch_rejected_by_runners(self):
        schema = small_schema()
        config = global_config()
        with pytest.raises(PipelineError, match="local"):
            run_local(config, schema=schema, oracle=small_oracle(schema))


# ---------------------------------------------------------------------------
# Global pipeline
# ---------------------------------------------------------------------------

class TestRunGlobal:
    def test_recovers_the_oracle_theory(self):
        schema = small_schema()
        manifest = run_global(global_config(), schema=schema, oracle=small_oracle(schema))
        assert manifest.theory_text == GT_TEXT
        assert manifest.metrics_row["Fidelity"] == 1.0
        assert manifest.metrics_row["#WC"] == 1
        assert not manifest.empty_theory
        assert not manifest.timed_out
        assert len(manifest.test_pairs) == 15

    def test_same_config_and_seed_reproduce_the_artifacts(self):
        schema = small_schema()
        first = run_global(global_config(), schema=schema, oracle=small_oracle(schema))
        second = run_global(global_config(), schema=schema, oracle=small_oracle(schema))
        assert first.theory_text == second.theory_text

        def frozen(manifest):  # identical modulo wall-clock timings
            return {k: v for k, v in manifest.metrics_row.items() if k != "Time(s)"}

        assert frozen(first) == frozen(second)
        assert first.test_pairs == second.test_pairs
        assert first.contexts == second.contexts

    def test_different_seeds_draw_different_samples(self):
        schema = small_schema()
        first = run_global(global_config(seed=1), schema=schema, oracle=small_oracle(schema))
        second = run_global(global_config(seed=2), schema=schema, oracle=small_oracle(schema))
        assert first.test_pairs != second.test_pairs

    def test_no_test_pairs_evaluates_on_the_training_pairs(self):
        schema = small_schema()
        manifest = run_global(
            global_config(n_train=12, n_test=0), schema=schema, oracle=small_oracle(schema)
        )
        assert len(manifest.test_pairs) == 12

    def test_item_pool_mode(self):
        schema, items = wide_pool()
        oracle = TheoryOracle(
            parse_theory(":~ value(f0,V1).[V1@1, V1]"), schema.names, category_feature=None
        )
        manifest = run_global(
            global_config(sample_mode="item-pool", n_train=25, n_test=10),
            schema=schema,
            items=items,
            oracle=oracle,
        )
        assert manifest.metrics_row["Fidelity"] == 1.0
        assert set(manifest.contexts) <= {item.id for item in items}

    def test_gt_columns_from_schema_ratings(self):
        # Rating 3 maps to a positive weight, matching the oracle's sign.
        schema = small_schema(rating=3)
        manifest = run_global(global_config(), schema=schema, oracle=small_oracle(schema))
        assert manifest.metrics_row["accuracy_GT"] == 1.0
        assert manifest.extras["gt_theory"] == ":~ value(a,V1).[V1@2, V1]"

    def test_opposed_rating_scores_zero_gt_accuracy(self):
        schema = small_schema(rating=7)
        manifest = run_global(global_config(), schema=schema, oracle=small_oracle(schema))
        assert manifest.metrics_row["Fidelity"] == 1.0
        assert manifest.metrics_row["accuracy_GT"] < 1.0

    def test_no_ratings_leave_gt_columns_empty(self):
        schema = small_schema()
        manifest = run_global(global_config(), schema=schema, oracle=small_oracle(schema))
        assert manifest.metrics_row["accuracy_GT"] is None

    def test_stage_timings_sum_within_total(self):
        schema = small_schema()
        manifest = run_global(global_config(), schema=schema, oracle=small_oracle(schema))
        stages = sum(v for k, v in manifest.timings.items() if k != "total")
        assert stages <= manifest.timings["total"] + 1e-6
        assert set(manifest.timings) >= {"sample", "label", "learn", "evaluate", "total"}

    def test_metrics_row_is_recomputable_from_the_manifest(self):
        schema = small_schema(rating=3)
        manifest = run_global(global_config(), schema=schema, oracle=small_oracle(schema))
        recomputed = recompute_metrics(manifest)
        assert recomputed.fidelity == manifest.metrics_row["Fidelity"]
        assert recomputed.macro_precision == manifest.metrics_row["Precision_BB"]

    def test_manifest_json_round_trip(self, tmp_path):
        schema = small_schema(rating=3)
        manifest = run_global(global_config(), schema=schema, oracle=small_oracle(schema))
        path = tmp_path / "manifest.json"
        save_manifest(path, manifest)
        assert load_manifest(path) == manifest


class TestGlobalWithPca:
    def test_indirect_reduction_records_kept_features(self):
        schema, items = wide_pool()
        oracle = TheoryOracle(
            parse_theory(":~ value(f0,V1).[V1@1, V1]"), schema.names, category_feature=None
        )
        manifest = run_global(
            global_config(
                sample_mode="item-pool",
                n_train=25,
                n_test=10,
                pca=PcaSettings(mode="indirect", n_components=2),
            ),
            schema=schema,
            items=items,
            oracle=oracle,
        )
        assert manifest.extras["scanned_components"] == 2
        assert set(manifest.extras["kept_features"]) <= set(schema.names)
        learned_features = {
            atom.args[0]
            for wc in manifest.theory().constraints
            for atom in wc.body
            if atom.predicate == "value"
        }
        assert learned_features <= set(manifest.extras["kept_features"])

    def test_direct_reduction_learns_in_component_space(self):
        schema, items = wide_pool()
        oracle = TheoryOracle(
            parse_theory(":~ value(f0,V1).[V1@1, V1]"), schema.names, category_feature=None
        )
        manifest = run_global(
            global_config(
                sample_mode="item-pool",
                n_train=25,
                n_test=10,
                pca=PcaSettings(mode="direct", n_components=2),
            ),
            schema=schema,
            items=items,
            oracle=oracle,
        )
        assert manifest.extras["projected_components"] == 2
        for atoms in manifest.contexts.values():
            assert all(atom.startswith("value(pc") for atom in atoms)
        assert manifest.metrics_row["accuracy_GT"] is None
        if not manifest.empty_theory:
            assert "retro_projection" in manifest.extras

    def test_component_request_clamps_to_the_model_width(self):
        schema, items = wide_pool()
        oracle = TheoryOracle(
            parse_theory(":~ value(f0,V1).[V1@1, V1]"), schema.names, category_feature=None
        )
        manifest = run_global(
            global_config(
                sample_mode="item-pool",
                n_train=10,
                n_test=5,
                pca=PcaSettings(mode="direct", n_components=50),
            ),
            schema=schema,
            items=items,
            oracle=oracle,
        )
        assert manifest.extras["projected_components"] == len(schema.names)


# ---------------------------------------------------------------------------
# Local pipeline
# ---------------------------------------------------------------------------

def local_config(**overrides):
    base = dict(mode="local", seed=11, m=12, sigma=0.5, maxp=2, n_queries=2)
    base.update(overrides)
    return ExperimentConfig(**base)


class TestRunLocal:
    def test_one_manifest_per_query_testing_on_the_query(self):
        schema, items = wide_pool(n_items=10)
        oracle = TheoryOracle(
            parse_theory(":~ value(f0,V1).[V1@1, V1]"), schema.names, category_feature=None
        )
        manifests = run_local(local_config(), schema=schema, items=items, oracle=oracle)
        assert [m.query_index for m in manifests] == [0, 1]
        for manifest in manifests:
            assert manifest.mode == "local"
            assert len(manifest.test_pairs) == 1
            first, second, label = manifest.test_pairs[0]
            assert (first, second) == tuple(manifest.extras["query_items"])
            assert label in (-1, 0, 1)
            assert manifest.metrics_row["Fidelity"] in (0.0, 1.0)
            assert len(manifest.extras["penalties"]) == 12

    def test_deterministic_per_query_streams(self):
        schema, items = wide_pool(n_items=10)
        oracle = TheoryOracle(
            parse_theory(":~ value(f0,V1).[V1@1, V1]"), schema.names, category_feature=None
        )
        first = run_local(local_config(), schema=schema, items=items, oracle=oracle)
        second = run_local(local_config(), schema=schema, items=items, oracle=oracle)
        assert [m.theory_text for m in first] == [m.theory_text for m in second]
        assert [m.test_pairs for m in first] == [m.test_pairs for m in second]

    def test_explicit_queries_and_pairs_file(self, tmp_path):
        schema, items = wide_pool(n_items=6)
        oracle = TheoryOracle(
            parse_theory(":~ value(f0,V1).[V1@1, V1]"), schema.names, category_feature=None
        )
        queries = [(items[0], items[1])]
        direct = run_local(
            local_config(n_queries=1), schema=schema, oracle=oracle, queries=queries
        )
        pairs_path = tmp_path / "pairs.csv"
        save_pairs(pairs_path, {"u1": [PairSample(items[0].id, items[1].id)]})
        via_file = run_local(
            local_config(n_queries=1, pairs_path=str(pairs_path)),
            schema=schema,
            items=items,
            oracle=oracle,
        )
        assert direct[0].theory_text == via_file[0].theory_text
        assert direct[0].test_pairs == via_file[0].test_pairs

    def test_aggregate_excludes_empty_theories(self):
        row_template = dict(
            mode="local", config={}, timings={}, maxp=1, objective=0, optimal=True,
            backend="x", timed_out=False, test_pairs=(), contexts={},
        )
        full = RunManifest(
            theory_text=GT_TEXT, empty_theory=False,
            metrics_row={"Fidelity": 1.0, "Time(s)": 2.0, "#WC": 1, "accuracy_GT": None},
            **row_template,
        )
        half = RunManifest(
            theory_text=GT_TEXT, empty_theory=False,
            metrics_row={"Fidelity": 0.0, "Time(s)": 1.0, "#WC": 3, "accuracy_GT": 1.0},
            **row_template,
        )
        empty = RunManifest(
            theory_text="", empty_theory=True,
            metrics_row={"Fidelity": 0.0, "Time(s)": 1.0, "#WC": 0, "accuracy_GT": None},
            **row_template,
        )
        row = aggregate_local([full, half, empty])
        assert row["Fidelity"] == 0.5
        assert row["Time(s)"] == 1.5
        assert row["#WC"] == 2.0
        assert row["accuracy_GT"] == 1.0  # averaged over rows that have it
        assert row["ExclusionRate"] == pytest.approx(1 / 3)
        assert row["Queries"] == 3

    def test_aggregate_of_all_empty_runs(self):
        schema, items = wide_pool(n_items=8)
        oracle = TheoryOracle(
            parse_theory(":~ value(f0,V1).[V1@1, V1]"), schema.names, category_feature=None
        )
        manifests = run_local(
            local_config(max_constraints=0), schema=schema, items=items, oracle=oracle
        )
        assert all(m.empty_theory for m in manifests)
        row = aggregate_local(manifests)
        assert row["ExclusionRate"] == 1.0
        assert row["Fidelity"] is None

    def test_aggregate_rejects_nothing(self):
        with pytest.raises(PipelineError, match="aggregate"):
            aggregate_local([])


# ---------------------------------------------------------------------------
# Classifier pipeline
# ---------------------------------------------------------------------------

def classifier_world(n_pairs=12, seed=5):
    schema, items = wide_pool(n_items=10, seed=seed)
    oracle = TheoryOracle(
        parse_theory(":~ value(f0,V1).[V1@1, V1]"), schema.names, category_feature=None
    )
    rng = random.Random(seed)
    pairs = []
    seen = set()
    while len(pairs) < n_pairs:
        a, b = rng.sample(range(len(items)), 2)
        if (a, b) in seen:
            continue
        seen.add((a, b))
        pairs.append(PairSample(a, b, oracle.label(items[a], items[b])))
    return schema, items, pairs


class TestRunClassifier:
    def test_split_sizes_and_accuracy(self):
        schema, items, pairs = classifier_world()
        config = ExperimentConfig(mode="classifier", seed=2, n_train=8, maxp=2)
        manifest = run_classifier(config, schema=schema, items=items, pairs=pairs)
        assert manifest.extras["train_pairs"] == 8
        assert manifest.extras["test_pairs"] == 4
        assert manifest.metrics_row["Accuracy"] == 1.0
        assert "Fidelity" not in manifest.metrics_row
        assert len(manifest.test_pairs) == 4

    def test_seeded_split_is_deterministic(self):
        schema, items, pairs = classifier_world()
        config = ExperimentConfig(mode="classifier", seed=2, n_train=8, maxp=2)
        first = run_classifier(config, schema=schema, items=items, pairs=pairs)
        second = run_classifier(config, schema=schema, items=items, pairs=pairs)
        assert first.test_pairs == second.test_pairs
        assert first.theory_text == second.theory_text

    def test_unlabeled_pairs_are_dropped(self):
        schema, items, pairs = classifier_world()
        pairs = pairs + [PairSample(0, 9, None)]
        config = ExperimentConfig(mode="classifier", seed=2, n_train=8, maxp=2)
        manifest = run_classifier(config, schema=schema, items=items, pairs=pairs)
        assert manifest.extras["dropped_unlabeled"] == 1

    def test_single_label_training_is_flagged(self):
        schema, items, _ = classifier_world()
        pairs = [PairSample(i, i + 1, 1) for i in range(0, 8, 2)]
        config = ExperimentConfig(mode="classifier", seed=0, n_train=3, maxp=2)
        manifest = run_classifier(config, schema=schema, items=items, pairs=pairs)
        assert manifest.extras["single_label_training"]

    def test_consuming_every_pair_for_training_is_rejected(self):
        schema, items, pairs = classifier_world()
        config = ExperimentConfig(mode="classifier", seed=2, n_train=12, maxp=2)
        with pytest.raises(PipelineError, match="no test pairs"):
            run_classifier(config, schema=schema, items=items, pairs=pairs)


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

class TestReport:
    def _manifests(self):
        schema = small_schema(rating=3)
        oracle = small_oracle(schema)
        baseline = run_global(global_config(), schema=schema, oracle=oracle)
        variant = run_global(
            global_config(n_train=8, n_test=6, seed=9), schema=schema, oracle=oracle
        )
        return baseline, variant

    def test_variant_rows_carry_signed_deltas(self):
        baseline, variant = self._manifests()
        rows = build_report_rows([baseline, variant], labels=["base", "fast"])
        assert [r["Config"] for r in rows] == ["base", "fast", "fast (delta)"]
        delta = rows[2]
        assert delta["Fidelity"] == pytest.approx(
            variant.metrics_row["Fidelity"] - baseline.metrics_row["Fidelity"]
        )
        assert delta["#WC"] == variant.metrics_row["#WC"] - baseline.metrics_row["#WC"]

    def test_single_manifest_has_no_delta_row(self):
        baseline, _ = self._manifests()
        rows = build_report_rows([baseline])
        assert len(rows) == 1

    def test_wc_column_matches_the_constraint_count(self):
        baseline, variant = self._manifests()
        for manifest in (baseline, variant):
            assert manifest.metrics_row["#WC"] == len(manifest.theory().constraints)

    def test_csv_renders_and_parses(self):
        baseline, variant = self._manifests()
        bundle = report([baseline, variant], labels=["base", "fast"])
        parsed = list(csv.DictReader(io.StringIO(bundle.csv_text)))
        assert parsed[0]["Config"] == "base"
        assert parsed[0]["Fidelity"] == f"{baseline.metrics_row['Fidelity']:.4f}"
        assert parsed[2]["Config"] == "fast (delta)"
        assert parsed[2]["Fidelity"].startswith(("+", "-"))
        assert parsed[2]["#WC"].startswith(("+", "-"))

    def test_theories_rendered_with_gloss(self):
        baseline, _ = self._manifests()
        text = render_theories([baseline], labels=["base"])
        assert GT_TEXT in text
        assert "Lower a is better" in text

    def test_report_writes_files(self, tmp_path):
        baseline, variant = self._manifests()
        bundle = report([baseline, variant], out_dir=tmp_path / "out")
        for path in bundle.paths.values():
            assert (tmp_path / "out").exists()
            assert open(path, encoding="utf-8").read()

    def test_extra_rows_are_appended(self):
        baseline, _ = self._manifests()
        rows = build_report_rows(
            [baseline], extra_rows={"aggregate": {"Fidelity": 0.5, "ExclusionRate": 0.1}}
        )
        assert rows[-1]["Config"] == "aggregate"
        assert rows[-1]["ExclusionRate"] == 0.1

    def test_empty_report_rejected(self):
        with pytest.raises(PipelineError, match="report"):
            build_report_rows([])


# ---------------------------------------------------------------------------
# Oracle resolution
# ---------------------------------------------------------------------------

class TestResolveOracle:
    def test_theory_oracle_from_file(self, tmp_path):
        schema = small_schema()
        path = tmp_path / "oracle.lp"
        path.write_text(GT_TEXT + "\n")
        oracle = resolve_oracle(
            OracleSettings(kind="theory", path=str(path)), schema.names, schema
        )
        low = Item(0, "low", {"a": 1, "b": 0})
        high = Item(1, "high", {"a": 4, "b": 0})
        assert oracle.label(low, high) == 1

    def test_noise_wrapper_applied(self, tmp_path):
        schema = small_schema()
        path = tmp_path / "oracle.lp"
        path.write_text(GT_TEXT + "\n")
        noisy = resolve_oracle(
            OracleSettings(kind="theory", path=str(path), flip_prob=0.5, noise_seed=1),
            schema.names,
            schema,
        )
        low = Item(0, "low", {"a": 1, "b": 0})
        high = Item(1, "high", {"a": 4, "b": 0})
        labels = {noisy.label(Item(i, "x", low.values), high) for i in range(40)}
        assert len(labels) > 1  # some labels flipped

    def test_table_oracle_from_csv(self, tmp_path):
        path = tmp_path / "table.csv"
        path.write_text("id1,id2,label\n0,1,-1\n")
        oracle = resolve_oracle(OracleSettings(kind="table", path=str(path)), ["a"])
        assert oracle.label(Item(0, "x", {"a": 0}), Item(1, "y", {"a": 0})) == -1
