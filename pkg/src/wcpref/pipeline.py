"""Experiment orchestration: global, local, and classifier pipelines.

A pipeline run samples pairs, labels them (by a black-box oracle or the
user's own labels), optionally reduces the feature space, learns a
weak-constraint theory, evaluates it, and records everything in a
:class:`RunManifest`.  Every artifact except wall-clock timings is a pure
function of (config, seed).
"""

from __future__ import annotations

import csv
import io
import json
import os
import random
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Tuple

from . import pca as pca_mod
from .asp import Theory, describe_theory, parse_atom, parse_theory
from .dataset import (
    Item,
    PairSample,
    Schema,
    item_atoms,
    load_items,
    load_pairs,
    load_schema,
    quantize,
)
from .learner import (
    LearnBudget,
    ModeBias,
    expand_mode_bias,
    learn,
    orderings_from_labels,
    save_task,
)
from .metrics import (
    MetricsReport,
    fidelity_report,
    gt_report,
    gt_theory,
    ratings_from_schema,
)
from .oracle import (
    CommandOracle,
    MlpOracle,
    NoisyOracle,
    Oracle,
    TableOracle,
    TheoryOracle,
    load_mlp,
)
from .sampling import (
    GlobalSampleConfig,
    LocalSampleConfig,
    local_penalties,
    perturb_local,
    sample_global,
)

MODES = ("global", "local", "classifier")
PCA_MODES = ("none", "indirect", "direct")
ORACLE_KINDS = ("theory", "mlp", "table", "command")


class PipelineError(ValueError):
    """Raised for invalid experiment configurations or missing inputs."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PcaSettings:
    """Feature-space reduction: off, subset selection, or component space.

    ``indirect`` keeps the original features salient in the first
    ``n_components`` principal components; ``direct`` replaces the
    features with the first ``n_components`` integerized component
    scores (quantized at ``factor``), retro-projected at explanation
    time under the ``retro_n`` cap.
    """

    mode: str = "none"
    n_components: int = 8
    factor: int = 100
    retro_n: int = 8

    def __post_init__(self) -> None:
        if self.mode not in PCA_MODES:
            raise PipelineError(f"pca mode must be one of {PCA_MODES}, got {self.mode!r}")
        for name in ("n_components", "factor", "retro_n"):
            if getattr(self, name) < 1:
                raise PipelineError(f"{name} must be >= 1")


@dataclass(frozen=True)
class OracleSettings:
    """Declarative oracle choice, resolvable to an :class:`Oracle`."""

    kind: str
    path: Optional[str] = None
    argv: tuple = ()
    theory_factor: int = 1
    flip_prob: float = 0.0
    noise_seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ORACLE_KINDS:
            raise PipelineError(f"oracle kind must be one of {ORACLE_KINDS}, got {self.kind!r}")
        if self.kind == "command":
            if not self.argv:
                raise PipelineError("command oracle needs a non-empty argv")
        elif self.path is None:
            raise PipelineError(f"{self.kind} oracle needs a path")
        if not 0.0 <= self.flip_prob < 1.0:
            raise PipelineError("flip_prob must lie in [0, 1)")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a pipeline run depends on, JSON-serializable."""

    mode: str
    seed: int
    schema_path: Optional[str] = None
    items_path: Optional[str] = None
    pairs_path: Optional[str] = None
    user: Optional[str] = None
    oracle: Optional[OracleSettings] = None
    pca: PcaSettings = field(default_factory=PcaSettings)
    maxp: int = 5
    maxv: int = 1
    category_condition: bool = False
    n_train: int = 45
    n_test: int = 105
    sample_mode: str = "item-pool"
    m: int = 45
    sigma: float = 0.1
    penalty_mode: str = "distance"
    n_queries: int = 1
    quantize_factor: int = 1
    max_constraints: Optional[int] = None
    time_limit: Optional[float] = None
    beam_width: Optional[int] = None
    record_task: bool = False
    output_dir: Optional[str] = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise PipelineError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not isinstance(self.seed, int):
            raise PipelineError("seed must be an integer")
        if self.maxp < 1:
            raise PipelineError(f"maxp must be >= 1, got {self.maxp}")
        if self.maxv != 1:
            raise PipelineError("only maxv=1 is supported")
        for name in ("n_queries", "quantize_factor"):
            if getattr(self, name) < 1:
                raise PipelineError(f"{name} must be >= 1")


def config_to_dict(config: ExperimentConfig) -> dict:
    data = {
        k: v
        for k, v in vars(config).items()
        if k not in ("oracle", "pca") and v is not None
    }
    data["pca"] = dict(vars(config.pca))
    if config.oracle is not None:
        oracle = {k: v for k, v in vars(config.oracle).items() if v is not None}
        oracle["argv"] = list(config.oracle.argv)
        data["oracle"] = oracle
    return data


def config_from_dict(data: Mapping) -> ExperimentConfig:
    payload = dict(data)
    if "pca" in payload and payload["pca"] is not None:
        payload["pca"] = PcaSettings(**payload["pca"])
    if "oracle" in payload and payload["oracle"] is not None:
        oracle = dict(payload["oracle"])
        oracle["argv"] = tuple(oracle.get("argv", ()))
        payload["oracle"] = OracleSettings(**oracle)
    try:
        return ExperimentConfig(**payload)
    except TypeError as exc:
        raise PipelineError(f"bad config: {exc}") from None


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def resolve_oracle(
    settings: OracleSettings,
    feature_names: Sequence[str],
    schema: Optional[Schema] = None,
) -> Oracle:
    """Build the configured oracle; network/command oracles see raw features."""
    if settings.kind == "theory":
        if schema is None:
            raise PipelineError("a theory oracle needs the schema")
        with open(settings.path, "r", encoding="utf-8") as fh:
            theory = parse_theory(fh.read())
        base: Oracle = TheoryOracle(
            theory,
            _value_features(schema),
            category_feature=_category_feature(schema),
            factor=settings.theory_factor,
        )
    elif settings.kind == "mlp":
        base = MlpOracle(load_mlp(settings.path), feature_names)
    elif settings.kind == "table":
        base = TableOracle.from_csv(settings.path)
    else:
        base = CommandOracle(settings.argv, feature_names)
    if settings.flip_prob > 0:
        return NoisyOracle(base, settings.flip_prob, settings.noise_seed)
    return base


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunManifest:
    """The complete record of one pipeline run.

    ``contexts`` stores each item's ground atoms as rendered strings and
    ``test_pairs`` stores (first id, second id, reference label) triples,
    so every metrics row is recomputable from the manifest alone.
    """

    mode: str
    config: Mapping
    timings: Mapping
    theory_text: str
    maxp: int
    objective: int
    optimal: bool
    backend: str
    empty_theory: bool
    timed_out: bool
    metrics_row: Mapping
    test_pairs: tuple
    contexts: Mapping
    query_index: Optional[int] = None
    extras: Mapping = field(default_factory=dict)

    def theory(self) -> Theory:
        return parse_theory(self.theory_text, maxp=self.maxp)

    def parsed_contexts(self) -> dict:
        return {
            item_id: frozenset(parse_atom(text) for text in atoms)
            for item_id, atoms in self.contexts.items()
        }


def manifest_to_dict(manifest: RunManifest) -> dict:
    data = dict(vars(manifest))
    data["test_pairs"] = [list(t) for t in manifest.test_pairs]
    data["contexts"] = {str(k): list(v) for k, v in manifest.contexts.items()}
    data["extras"] = dict(manifest.extras)
    data["config"] = dict(manifest.config)
    data["timings"] = dict(manifest.timings)
    data["metrics_row"] = dict(manifest.metrics_row)
    return data


def manifest_from_dict(data: Mapping) -> RunManifest:
    payload = dict(data)
    payload["test_pairs"] = tuple(tuple(t) for t in payload["test_pairs"])
    payload["contexts"] = {int(k): tuple(v) for k, v in payload["contexts"].items()}
    return RunManifest(**payload)


def save_manifest(path, manifest: RunManifest) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest_to_dict(manifest), fh, indent=2)
        fh.write("\n")


def load_manifest(path) -> RunManifest:
    with open(path, "r", encoding="utf-8") as fh:
        return manifest_from_dict(json.load(fh))


def recompute_metrics(manifest: RunManifest) -> MetricsReport:
    """Re-derive the agreement report from the manifest's own record."""
    pairs = [PairSample(f, s) for f, s, _ in manifest.test_pairs]
    labels = [label for _, _, label in manifest.test_pairs]
    return fidelity_report(manifest.theory(), pairs, labels, manifest.parsed_contexts())


# ---------------------------------------------------------------------------
# Shared stage helpers
# ---------------------------------------------------------------------------

@contextmanager
def _stage(timings: dict, name: str):
    start = time.perf_counter()
    try:
        yield
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - start


def _value_features(schema: Schema) -> tuple:
    return tuple(spec.name for spec in schema if spec.kind != "categorical")


def _category_feature(schema: Schema) -> Optional[str]:
    if "category" in schema and schema["category"].kind == "categorical":
        return "category"
    return None


def _category_constants(schema: Schema) -> tuple:
    name = _category_feature(schema)
    if name is None:
        return ()
    return tuple(int(c) for c in schema[name].domain)


def _contexts(items, value_features, category_feature) -> dict:
    return {
        item.id: item_atoms(item, value_features, category_feature) for item in items
    }


def _labeled(pairs, labels) -> tuple:
    return tuple(
        PairSample(p.first, p.second, label) for p, label in zip(pairs, labels)
    )


def _resolve_schema(config: ExperimentConfig, schema: Optional[Schema]) -> Schema:
    if schema is not None:
        return schema
    if config.schema_path:
        return load_schema(config.schema_path)
    raise PipelineError("no schema: pass one or set schema_path")


def _resolve_items(config: ExperimentConfig, schema: Schema, items) -> tuple:
    if items is not None:
        return tuple(items)
    if config.items_path:
        return tuple(load_items(config.items_path, schema))
    return ()


def _resolve_oracle(config: ExperimentConfig, schema: Schema, oracle) -> Oracle:
    if oracle is not None:
        return oracle
    if config.oracle is None:
        raise PipelineError("no oracle: pass one or set the oracle config")
    return resolve_oracle(config.oracle, schema.names, schema)


def _bias(config: ExperimentConfig, schema: Schema, value_features) -> ModeBias:
    with_category = config.category_condition and _category_feature(schema) is not None
    return ModeBias(
        value_features=tuple(value_features),
        category_constants=_category_constants(schema) if with_category else (),
        maxp=config.maxp,
        allow_category_condition=with_category,
    )


def _budget(config: ExperimentConfig) -> LearnBudget:
    return LearnBudget(
        max_constraints=config.max_constraints,
        time_limit=config.time_limit,
        beam_width=config.beam_width,
    )


def _store_contexts(contexts: Mapping) -> dict:
    return {
        item_id: tuple(atom.render() for atom in atoms)
        for item_id, atoms in contexts.items()
    }


def _record_task(extras, config, bias, contexts, examples) -> None:
    if config.record_task:
        named = {f"item-{item_id}": atoms for item_id, atoms in contexts.items()}
        extras["task"] = save_task(bias, named, examples)


def _gt_columns(theory, ratings, pairs, contexts, extras) -> dict:
    """accuracy/precision/recall against the rating-derived reference."""
    columns = {"accuracy_GT": None, "precision_GT": None, "recall_GT": None}
    if not ratings or not pairs:
        return columns
    gt = gt_theory(theory, ratings)
    extras["gt_theory"] = gt.theory.render()
    extras["gt_skipped_features"] = list(gt.skipped_features)
    if gt.theory.is_empty:
        return columns
    report = gt_report(theory, gt, pairs, contexts)
    columns["accuracy_GT"] = report.fidelity
    columns["precision_GT"] = report.macro_precision
    columns["recall_GT"] = report.macro_recall
    return columns


def _metrics_row(report: MetricsReport, learn_seconds, n_wc, gt_columns, prefix="BB") -> dict:
    if prefix == "BB":
        row = {
            "Fidelity": report.fidelity,
            "Precision_BB": report.macro_precision,
            "Recall_BB": report.macro_recall,
        }
    else:
        row = {
            "Accuracy": report.fidelity,
            "Precision": report.macro_precision,
            "Recall": report.macro_recall,
        }
    row["Time(s)"] = learn_seconds
    row["#WC"] = n_wc
    row.update(gt_columns)
    return row


# ---------------------------------------------------------------------------
# Global pipeline
# ---------------------------------------------------------------------------

def run_global(
    config: ExperimentConfig,
    schema: Optional[Schema] = None,
    items: Optional[Sequence[Item]] = None,
    oracle: Optional[Oracle] = None,
    ratings: Optional[Mapping[str, int]] = None,
) -> RunManifest:
    """Sample the whole task region, label via the oracle, learn, evaluate."""
    if config.mode != "global":
        raise PipelineError(f"run_global needs mode='global', got {config.mode!r}")
    timings: dict = {}
    total_start = time.perf_counter()
    schema = _resolve_schema(config, schema)
    pool = _resolve_items(config, schema, items)
    oracle = _resolve_oracle(config, schema, oracle)
    if ratings is None:
        ratings = ratings_from_schema(schema)
    extras: dict = {}

    with _stage(timings, "sample"):
        sample = sample_global(
            pool,
            GlobalSampleConfig(config.n_train, config.n_test, config.sample_mode, config.seed),
            schema,
        )
    raw_by_id = {item.id: item for item in sample.items}

    with _stage(timings, "label"):
        train_labels = oracle.label_pairs(sample.train, raw_by_id)
        test_labels = oracle.label_pairs(sample.test, raw_by_id)

    with _stage(timings, "reduce"):
        quantized, _ = quantize(sample.items, config.quantize_factor, schema)
        model = None
        if config.pca.mode == "none":
            context_items = quantized
            value_features = _value_features(schema)
            category = _category_feature(schema)
        else:
            names = _value_features(schema)
            model = pca_mod.fit(pca_mod.matrix_from_items(sample.items, names), names)
            n_eff = min(config.pca.n_components, model.n_components)
            if config.pca.mode == "indirect":
                kept, reduction = pca_mod.indirect_select(model, n_eff)
                context_items = quantized
                value_features = kept
                category = _category_feature(schema)
                extras["kept_features"] = list(kept)
                extras["scanned_components"] = reduction.n_components
            else:
                context_items, _ = pca_mod.project(
                    model, sample.items, n_eff, config.pca.factor
                )
                value_features = pca_mod.pc_feature_names(n_eff)
                category = None
                extras["projected_components"] = n_eff
    contexts = _contexts(context_items, value_features, category)

    with _stage(timings, "expand"):
        bias = _bias(config, schema, value_features)
        space = expand_mode_bias(bias)
    extras["space_size"] = len(space)

    with _stage(timings, "learn"):
        examples = orderings_from_labels(_labeled(sample.train, train_labels), contexts)
        result = learn(space, examples, _budget(config))
    _record_task(extras, config, bias, contexts, examples)

    eval_pairs = sample.test if sample.test else sample.train
    eval_labels = test_labels if sample.test else train_labels
    with _stage(timings, "evaluate"):
        report = fidelity_report(result.theory, eval_pairs, eval_labels, contexts)
        if config.pca.mode == "direct":
            gt_columns = {"accuracy_GT": None, "precision_GT": None, "recall_GT": None}
            try:
                extras["retro_projection"] = {
                    k: list(v)
                    for k, v in pca_mod.retro_project(
                        result.theory, model, config.pca.retro_n
                    ).items()
                }
            except pca_mod.PcaError as exc:
                extras["retro_projection_error"] = str(exc)
        else:
            gt_columns = _gt_columns(result.theory, ratings, eval_pairs, contexts, extras)
    timings["total"] = time.perf_counter() - total_start

    return RunManifest(
        mode="global",
        config=config_to_dict(config),
        timings=timings,
        theory_text=result.theory.render(),
        maxp=result.theory.maxp,
        objective=result.objective,
        optimal=result.optimal,
        backend=result.backend,
        empty_theory=result.theory.is_empty,
        timed_out=not result.optimal,
        metrics_row=_metrics_row(report, timings["learn"], len(result.theory.constraints), gt_columns),
        test_pairs=tuple((p.first, p.second, label) for p, label in zip(eval_pairs, eval_labels)),
        contexts=_store_contexts(contexts),
        extras=extras,
    )


# ---------------------------------------------------------------------------
# Local pipeline
# ---------------------------------------------------------------------------

def _resolve_queries(
    config: ExperimentConfig,
    schema: Schema,
    items: tuple,
    queries,
) -> list:
    if queries is not None:
        return [tuple(q) for q in queries]
    if config.pairs_path:
        by_user = load_pairs(config.pairs_path)
        pairs = _pairs_for_user(by_user, config.user)
        by_id = {item.id: item for item in items}
        missing = [p for p in pairs if p.first not in by_id or p.second not in by_id]
        if missing:
            raise PipelineError(f"query pair {missing[0]} references unknown items")
        return [
            (by_id[p.first], by_id[p.second]) for p in pairs[: config.n_queries]
        ]
    if len(items) < 2:
        raise PipelineError("local mode needs query pairs or an item pool")
    drawn = sample_global(
        items,
        GlobalSampleConfig(config.n_queries, 0, "item-pool", config.seed),
        schema,
    )
    by_id = {item.id: item for item in items}
    return [(by_id[p.first], by_id[p.second]) for p in drawn.train]


def _pairs_for_user(by_user: Mapping, user: Optional[str]) -> list:
    if user is not None:
        if user not in by_user:
            raise PipelineError(f"no pairs for user {user!r}")
        return list(by_user[user])
    if len(by_user) == 1:
        return list(next(iter(by_user.values())))
    raise PipelineError(f"pairs file has users {sorted(by_user)}; pick one")


def run_local(
    config: ExperimentConfig,
    schema: Optional[Schema] = None,
    items: Optional[Sequence[Item]] = None,
    oracle: Optional[Oracle] = None,
    queries: Optional[Sequence[Tuple[Item, Item]]] = None,
    ratings: Optional[Mapping[str, int]] = None,
) -> list:
    """Perturb each query's neighbourhood, learn there, test on the query."""
    if config.mode != "local":
        raise PipelineError(f"run_local needs mode='local', got {config.mode!r}")
    schema = _resolve_schema(config, schema)
    pool = _resolve_items(config, schema, items)
    oracle = _resolve_oracle(config, schema, oracle)
    if ratings is None:
        ratings = ratings_from_schema(schema)
    resolved = _resolve_queries(config, schema, pool, queries)
    return [
        _run_one_query(config, schema, oracle, ratings, query, index)
        for index, query in enumerate(resolved)
    ]


def _run_one_query(
    config: ExperimentConfig,
    schema: Schema,
    oracle: Oracle,
    ratings: Mapping[str, int],
    query: Tuple[Item, Item],
    query_index: int,
) -> RunManifest:
    timings: dict = {}
    total_start = time.perf_counter()
    extras: dict = {"query_items": [query[0].id, query[1].id]}

    with _stage(timings, "sample"):
        perturbation = perturb_local(
            query,
            LocalSampleConfig(
                m=config.m,
                sigma=config.sigma,
                penalty_mode=config.penalty_mode,
                seed=config.seed,
            ),
            schema,
            query_index=query_index,
        )
        raw_by_id = {item.id: item for item in perturbation.raw_items}
        sample_pairs = [
            (raw_by_id[p.first], raw_by_id[p.second]) for p in perturbation.pairs
        ]
        penalties = local_penalties(query, sample_pairs, schema, config.penalty_mode)

    with _stage(timings, "label"):
        train_labels = oracle.label_pairs(perturbation.pairs, raw_by_id)
        query_label = oracle.label(query[0], query[1])

    value_features = _value_features(schema)
    category = _category_feature(schema)
    contexts = _contexts(
        (*perturbation.items, *perturbation.query_items), value_features, category
    )

    with _stage(timings, "expand"):
        bias = _bias(config, schema, value_features)
        space = expand_mode_bias(bias)
    extras["space_size"] = len(space)
    extras["penalties"] = list(penalties)

    with _stage(timings, "learn"):
        examples = orderings_from_labels(
            _labeled(perturbation.pairs, train_labels), contexts, penalties
        )
        result = learn(space, examples, _budget(config))
    _record_task(extras, config, bias, contexts, examples)

    test_pairs = [perturbation.query_pair]
    with _stage(timings, "evaluate"):
        report = fidelity_report(result.theory, test_pairs, [query_label], contexts)
        gt_columns = _gt_columns(result.theory, ratings, test_pairs, contexts, extras)
    timings["total"] = time.perf_counter() - total_start

    return RunManifest(
        mode="local",
        config=config_to_dict(config),
        timings=timings,
        theory_text=result.theory.render(),
        maxp=result.theory.maxp,
        objective=result.objective,
        optimal=result.optimal,
        backend=result.backend,
        empty_theory=result.theory.is_empty,
        timed_out=not result.optimal,
        metrics_row=_metrics_row(report, timings["learn"], len(result.theory.constraints), gt_columns),
        test_pairs=((test_pairs[0].first, test_pairs[0].second, query_label),),
        contexts=_store_contexts(contexts),
        query_index=query_index,
        extras=extras,
    )


def aggregate_local(manifests: Sequence[RunManifest]) -> dict:
    """Mean metrics across queries, excluding empty-theory runs.

    The exclusion rate is reported alongside; an all-empty batch yields a
    row of Nones with exclusion rate 1.
    """
    if not manifests:
        raise PipelineError("nothing to aggregate")
    kept = [m for m in manifests if not m.empty_theory]
    row: dict = {}
    columns = list(manifests[0].metrics_row)
    for column in columns:
        values = [
            m.metrics_row[column] for m in kept if m.metrics_row[column] is not None
        ]
        row[column] = sum(values) / len(values) if values else None
    row["ExclusionRate"] = 1.0 - len(kept) / len(manifests)
    row["Queries"] = len(manifests)
    return row


# ---------------------------------------------------------------------------
# Classifier pipeline
# ---------------------------------------------------------------------------

def run_classifier(
    config: ExperimentConfig,
    schema: Optional[Schema] = None,
    items: Optional[Sequence[Item]] = None,
    pairs: Optional[Sequence[PairSample]] = None,
    ratings: Optional[Mapping[str, int]] = None,
) -> RunManifest:
    """Learn directly from labeled pairs, scoring accuracy on a held-out split."""
    if config.mode != "classifier":
        raise PipelineError(f"run_classifier needs mode='classifier', got {config.mode!r}")
    timings: dict = {}
    total_start = time.perf_counter()
    schema = _resolve_schema(config, schema)
    pool = _resolve_items(config, schema, items)
    if ratings is None:
        ratings = ratings_from_schema(schema)
    if pairs is None:
        if not config.pairs_path:
            raise PipelineError("classifier mode needs labeled pairs")
        pairs = _pairs_for_user(load_pairs(config.pairs_path), config.user)
    labeled = [p for p in pairs if p.label is not None]
    if len(labeled) < 2:
        raise PipelineError("classifier mode needs at least 2 labeled pairs")
    extras: dict = {"dropped_unlabeled": len(pairs) - len(labeled)}

    with _stage(timings, "sample"):
        order = list(range(len(labeled)))
        random.Random(config.seed).shuffle(order)
        if config.n_train >= len(labeled):
            raise PipelineError(
                f"n_train={config.n_train} leaves no test pairs out of {len(labeled)}"
            )
        train = [labeled[i] for i in order[: config.n_train]]
        test = [labeled[i] for i in order[config.n_train :]]
    extras["train_pairs"] = len(train)
    extras["test_pairs"] = len(test)
    extras["single_label_training"] = len({p.label for p in train}) == 1

    with _stage(timings, "reduce"):
        quantized, _ = quantize(pool, config.quantize_factor, schema)
    value_features = _value_features(schema)
    category = _category_feature(schema)
    contexts = _contexts(quantized, value_features, category)

    with _stage(timings, "expand"):
        bias = _bias(config, schema, value_features)
        space = expand_mode_bias(bias)
    extras["space_size"] = len(space)

    with _stage(timings, "learn"):
        examples = orderings_from_labels(train, contexts)
        result = learn(space, examples, _budget(config))
    _record_task(extras, config, bias, contexts, examples)

    with _stage(timings, "evaluate"):
        report = fidelity_report(result.theory, test, [p.label for p in test], contexts)
        gt_columns = _gt_columns(result.theory, ratings, test, contexts, extras)
    timings["total"] = time.perf_counter() - total_start

    return RunManifest(
        mode="classifier",
        config=config_to_dict(config),
        timings=timings,
        theory_text=result.theory.render(),
        maxp=result.theory.maxp,
        objective=result.objective,
        optimal=result.optimal,
        backend=result.backend,
        empty_theory=result.theory.is_empty,
        timed_out=not result.optimal,
        metrics_row=_metrics_row(
            report, timings["learn"], len(result.theory.constraints), gt_columns, prefix="user"
        ),
        test_pairs=tuple((p.first, p.second, p.label) for p in test),
        contexts=_store_contexts(contexts),
        extras=extras,
    )


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

CSV_COLUMNS = (
    "Config",
    "Fidelity",
    "Accuracy",
    "Precision_BB",
    "Recall_BB",
    "Precision",
    "Recall",
    "Time(s)",
    "#WC",
    "accuracy_GT",
    "precision_GT",
    "recall_GT",
    "ExclusionRate",
    "Queries",
)


@dataclass(frozen=True)
class ReportBundle:
    rows: tuple
    csv_text: str
    theories_text: str
    paths: Mapping


def build_report_rows(
    manifests: Sequence[RunManifest],
    labels: Optional[Sequence[str]] = None,
    extra_rows: Optional[Mapping[str, Mapping]] = None,
) -> list:
    """One row per manifest; every row after the first also gets a row of
    signed differences against the first (the baseline)."""
    if not manifests:
        raise PipelineError("nothing to report")
    labels = list(labels) if labels is not None else [
        f"run{i}" for i in range(len(manifests))
    ]
    if len(labels) != len(manifests):
        raise PipelineError("labels must align with manifests")
    rows = []
    baseline = manifests[0].metrics_row
    for label, manifest in zip(labels, manifests):
        rows.append({"Config": label, **manifest.metrics_row})
        if manifest is manifests[0]:
            continue
        delta = {"Config": f"{label} (delta)"}
        for column, value in manifest.metrics_row.items():
            base = baseline.get(column)
            if isinstance(value, (int, float)) and isinstance(base, (int, float)):
                delta[column] = value - base
        rows.append(delta)
    for label, row in (extra_rows or {}).items():
        rows.append({"Config": label, **row})
    return rows


def _format_cell(column: str, value, is_delta: bool) -> str:
    if value is None or value == "":
        return ""
    if column == "#WC" or column == "Queries":
        return f"{value:+d}" if is_delta else str(int(value))
    if isinstance(value, float) or isinstance(value, int):
        return f"{value:+.4f}" if is_delta else f"{value:.4f}"
    return str(value)


def render_csv(rows: Sequence[Mapping]) -> str:
    columns = [
        c for c in CSV_COLUMNS if any(c in row and row[c] is not None for row in rows)
    ]
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        is_delta = str(row.get("Config", "")).endswith("(delta)")
        writer.writerow(
            {
                c: _format_cell(c, row.get(c), is_delta and c != "Config")
                for c in columns
                if c in row
            }
        )
    return buffer.getvalue()


def render_theories(
    manifests: Sequence[RunManifest], labels: Optional[Sequence[str]] = None
) -> str:
    """Each manifest's theory in learner syntax plus a natural-language gloss."""
    labels = list(labels) if labels is not None else [
        f"run{i}" for i in range(len(manifests))
    ]
    blocks = []
    for label, manifest in zip(labels, manifests):
        theory = manifest.theory()
        lines = [f"== {label} =="]
        if theory.is_empty:
            lines.append("(empty theory)")
        else:
            lines.append(theory.render())
            lines.append("")
            lines.append(describe_theory(theory))
        retro = manifest.extras.get("retro_projection")
        if retro:
            lines.append("")
            for pc, features in retro.items():
                lines.append(f"{pc} stands for: {', '.join(features) or '(none salient)'}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def report(
    manifests: Sequence[RunManifest],
    out_dir=None,
    labels: Optional[Sequence[str]] = None,
    extra_rows: Optional[Mapping[str, Mapping]] = None,
) -> ReportBundle:
    """Assemble the result table and rendered theories; write them if asked."""
    rows = build_report_rows(manifests, labels, extra_rows)
    csv_text = render_csv(rows)
    theories_text = render_theories(manifests, labels)
    paths: dict = {}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        paths["table"] = os.path.join(out_dir, "results.csv")
        paths["theories"] = os.path.join(out_dir, "theories.txt")
        with open(paths["table"], "w", encoding="utf-8") as fh:
            fh.write(csv_text)
        with open(paths["theories"], "w", encoding="utf-8") as fh:
            fh.write(theories_text)
        for index, manifest in enumerate(manifests):
            name = f"manifest-{index}.json"
            paths[name] = os.path.join(out_dir, name)
            save_manifest(paths[name], manifest)
    return ReportBundle(tuple(rows), csv_text, theories_text, paths)
