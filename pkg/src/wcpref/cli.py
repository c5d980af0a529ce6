"""Command-line interface for the preference-explanation toolkit.

Every stage of the pipelines is exposed as a subcommand so runs can be
scripted piecemeal (sample, label, reduce, learn, evaluate) or end to end
(``learn global|local|classifier``).  Learn commands read a JSON config
file when given; command-line flags override file values.
"""

from __future__ import annotations

import json
from typing import Optional

import click

from . import pca as pca_mod
from .dataset import (
    aggregate_ingredients,
    aggregate_schema,
    load_class_map,
    load_items,
    load_pairs,
    load_schema,
    save_items,
    save_pairs,
    save_schema,
)
from .learner import export_ilasp_task, load_task
from .metrics import median_bandwidth, mmd as mmd_value
from .oracle import TrainConfig, pair_vector, save_mlp, train_mlp
from .pipeline import (
    ORACLE_KINDS,
    PCA_MODES,
    PipelineError,
    aggregate_local,
    config_from_dict,
    load_manifest,
    recompute_metrics,
    report as build_report,
    resolve_oracle,
    run_classifier,
    run_global,
    run_local,
    OracleSettings,
)
from .sampling import (
    GLOBAL_MODES,
    PENALTY_MODES,
    GlobalSampleConfig,
    LocalSampleConfig,
    local_penalties,
    perturb_local,
    sample_global,
)


@click.group()
def cli() -> None:
    """Learn weak-constraint theories that explain pairwise rankers."""


main = cli


def _fail(exc: Exception) -> None:
    raise click.ClickException(str(exc))


def _matrix(items, schema):
    names = [spec.name for spec in schema if spec.kind != "categorical"]
    return pca_mod.matrix_from_items(items, names), names


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------

@cli.command()
@click.option("--items", "items_path", required=True, type=click.Path(exists=True))
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--aggregate", is_flag=True, help="Fold ingredient classes into meta-classes.")
@click.option("--class-map", "class_map_path", type=click.Path(exists=True))
@click.option("--schema-out", "schema_out", type=click.Path())
def ingest(items_path, schema_path, out_path, aggregate, class_map_path, schema_out):
    """Validate an item CSV against a schema, optionally aggregating it."""
    try:
        schema = load_schema(schema_path)
        items = load_items(items_path, schema)
        if aggregate:
            class_map = load_class_map(class_map_path)
            items = [aggregate_ingredients(item, class_map) for item in items]
            schema = aggregate_schema(schema, class_map)
        save_items(out_path, items, schema)
        if schema_out:
            save_schema(schema_out, schema)
    except Exception as exc:  # surface data errors as exit code 1
        _fail(exc)
    click.echo(f"wrote {len(items)} items with {len(schema)} features to {out_path}")


# ---------------------------------------------------------------------------
# pca fit | select | project
# ---------------------------------------------------------------------------

@cli.group()
def pca() -> None:
    """Principal-component analysis of an item pool."""


@pca.command("fit")
@click.option("--items", "items_path", required=True, type=click.Path(exists=True))
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--standardize/--no-standardize", default=True)
def pca_fit(items_path, schema_path, out_path, standardize):
    """Fit a full decomposition on the non-categorical features."""
    try:
        schema = load_schema(schema_path)
        matrix, names = _matrix(load_items(items_path, schema), schema)
        model = pca_mod.fit(matrix, names, standardize=standardize)
        pca_mod.save_model(out_path, model)
    except Exception as exc:
        _fail(exc)
    ratios = ", ".join(f"{r:.3f}" for r in model.explained_variance_ratio[:5])
    click.echo(f"{model.n_components} components; leading variance ratios: {ratios}")


@pca.command("select")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--n", type=int, default=None, help="Scan the first n components for salient features.")
def pca_select(model_path, n):
    """Report the Kaiser count and, with --n, the salient original features."""
    try:
        model = pca_mod.load_model(model_path)
        kaiser = pca_mod.kaiser_select(model)
        click.echo(f"kaiser_components={kaiser}")
        if n is not None:
            kept, _report = pca_mod.indirect_select(model, n)
            click.echo(f"kept_features={','.join(kept) if kept else '(none)'}")
    except Exception as exc:
        _fail(exc)


@pca.command("project")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--items", "items_path", required=True, type=click.Path(exists=True))
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--k", required=True, type=int)
@click.option("--factor", type=int, default=100, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def pca_project(model_path, items_path, schema_path, k, factor, out_path):
    """Write items' integerized component scores as a pc1..pck item CSV."""
    try:
        schema = load_schema(schema_path)
        items = load_items(items_path, schema)
        model = pca_mod.load_model(model_path)
        pc_items, _ = pca_mod.project(model, items, k, factor)
        save_items(out_path, pc_items, pca_mod.pc_schema(k))
    except Exception as exc:
        _fail(exc)
    click.echo(f"wrote {len(pc_items)} projected items to {out_path}")


# ---------------------------------------------------------------------------
# sample global | local
# ---------------------------------------------------------------------------

@cli.group()
def sample() -> None:
    """Draw training pairs (whole region or a query neighbourhood)."""


@sample.command("global")
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--items", "items_path", type=click.Path(exists=True))
@click.option("--seed", required=True, type=int)
@click.option("--n-train", default=45, show_default=True, type=int)
@click.option("--n-test", default=105, show_default=True, type=int)
@click.option("--sample-mode", type=click.Choice(GLOBAL_MODES), default="item-pool", show_default=True)
@click.option("--pairs-out", required=True, type=click.Path())
@click.option("--items-out", type=click.Path(), help="Persist sampled items (required for synthetic mode).")
def sample_global_cmd(schema_path, items_path, seed, n_train, n_test, sample_mode, pairs_out, items_out):
    """Sample ordered item pairs uniformly across the task region."""
    try:
        schema = load_schema(schema_path)
        pool = load_items(items_path, schema) if items_path else ()
        if sample_mode == "synthetic-features" and not items_out:
            raise PipelineError("synthetic mode materializes items; pass --items-out")
        drawn = sample_global(
            pool, GlobalSampleConfig(n_train, n_test, sample_mode, seed), schema
        )
        save_pairs(pairs_out, {"train": drawn.train, "test": drawn.test})
        if items_out:
            save_items(items_out, drawn.items, schema)
    except Exception as exc:
        _fail(exc)
    click.echo(f"wrote {len(drawn.train)} train and {len(drawn.test)} test pairs to {pairs_out}")


@sample.command("local")
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--items", "items_path", required=True, type=click.Path(exists=True))
@click.option("--query", required=True, help="Query pair as 'FIRST_ID,SECOND_ID'.")
@click.option("--seed", required=True, type=int)
@click.option("--m", default=45, show_default=True, type=int)
@click.option("--sigma", default=0.1, show_default=True, type=float)
@click.option("--factor", type=int, default=None, help="Override the derived quantization factor.")
@click.option("--penalty-mode", type=click.Choice(PENALTY_MODES), default="distance", show_default=True)
@click.option("--items-out", required=True, type=click.Path())
@click.option("--pairs-out", required=True, type=click.Path())
@click.option("--penalties-out", type=click.Path())
def sample_local_cmd(
    schema_path, items_path, query, seed, m, sigma, factor, penalty_mode,
    items_out, pairs_out, penalties_out,
):
    """Perturb a query pair's neighbourhood into a local training set."""
    try:
        schema = load_schema(schema_path)
        by_id = {item.id: item for item in load_items(items_path, schema)}
        first_id, second_id = (int(part) for part in query.split(","))
        pair = (by_id[first_id], by_id[second_id])
        perturbation = perturb_local(
            pair,
            LocalSampleConfig(m=m, sigma=sigma, factor=factor, penalty_mode=penalty_mode, seed=seed),
            schema,
        )
        save_items(items_out, [*perturbation.items, *perturbation.query_items], schema)
        save_pairs(
            pairs_out,
            {"train": perturbation.pairs, "query": [perturbation.query_pair]},
        )
        if penalties_out:
            raw = {item.id: item for item in perturbation.raw_items}
            sample_pairs = [(raw[p.first], raw[p.second]) for p in perturbation.pairs]
            penalties = local_penalties(pair, sample_pairs, schema, penalty_mode)
            with open(penalties_out, "w", encoding="utf-8") as fh:
                json.dump(penalties, fh)
                fh.write("\n")
    except Exception as exc:
        _fail(exc)
    click.echo(f"wrote {len(perturbation.pairs)} neighbourhood pairs to {pairs_out}")


# ---------------------------------------------------------------------------
# oracle label | train
# ---------------------------------------------------------------------------

def oracle_options(f):
    options = [
        click.option("--oracle-kind", type=click.Choice(ORACLE_KINDS), default=None),
        click.option("--oracle-path", type=click.Path(), default=None),
        click.option("--oracle-cmd", default=None, help="External command, space separated."),
        click.option("--theory-factor", type=int, default=None),
        click.option("--flip-prob", type=float, default=None),
        click.option("--noise-seed", type=int, default=None),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def _oracle_overrides(oracle_kind, oracle_path, oracle_cmd, theory_factor, flip_prob, noise_seed):
    overrides = {}
    if oracle_kind is not None:
        overrides["kind"] = oracle_kind
    if oracle_path is not None:
        overrides["path"] = oracle_path
    if oracle_cmd is not None:
        overrides["argv"] = tuple(oracle_cmd.split())
    if theory_factor is not None:
        overrides["theory_factor"] = theory_factor
    if flip_prob is not None:
        overrides["flip_prob"] = flip_prob
    if noise_seed is not None:
        overrides["noise_seed"] = noise_seed
    return overrides


@cli.group("oracle")
def oracle_group() -> None:
    """Label pairs with a black box, or train the built-in network."""


@oracle_group.command("label")
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True))
@click.option("--items", "items_path", required=True, type=click.Path(exists=True))
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@oracle_options
def oracle_label(pairs_path, items_path, schema_path, out_path, **oracle_flags):
    """Fill in the label column of a pairs CSV via the configured oracle."""
    try:
        overrides = _oracle_overrides(**oracle_flags)
        if "kind" not in overrides:
            raise PipelineError("pass --oracle-kind")
        settings = OracleSettings(**overrides)
        schema = load_schema(schema_path)
        by_id = {item.id: item for item in load_items(items_path, schema)}
        oracle = resolve_oracle(settings, schema.names, schema)
        labeled = {}
        count = 0
        for user, pairs in load_pairs(pairs_path).items():
            labels = oracle.label_pairs(pairs, by_id)
            labeled[user] = [
                type(p)(p.first, p.second, label) for p, label in zip(pairs, labels)
            ]
            count += len(pairs)
        save_pairs(out_path, labeled)
    except Exception as exc:
        _fail(exc)
    click.echo(f"labeled {count} pairs into {out_path}")


@oracle_group.command("train")
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True))
@click.option("--items", "items_path", required=True, type=click.Path(exists=True))
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--user", default=None, help="Train on one user's pairs (default: all).")
@click.option("--hidden", default="64,64,64", show_default=True,
              help="Comma-separated sizes for the three hidden layers.")
@click.option("--learning-rate", default=0.0005, show_default=True, type=float)
@click.option("--epochs", default=500, show_default=True, type=int)
@click.option("--batch-size", default=16, show_default=True, type=int)
@click.option("--validation-fraction", default=0.2, show_default=True, type=float)
@click.option("--train-seed", default=0, show_default=True, type=int)
def oracle_train(
    pairs_path, items_path, schema_path, out_path, user, hidden,
    learning_rate, epochs, batch_size, validation_fraction, train_seed,
):
    """Train the built-in network on labeled pairs and save it as JSON."""
    try:
        schema = load_schema(schema_path)
        by_id = {item.id: item for item in load_items(items_path, schema)}
        groups = load_pairs(pairs_path)
        if user is not None:
            if user not in groups:
                raise PipelineError(f"no pairs for user {user!r}")
            groups = {user: groups[user]}
        rows, labels = [], []
        for pairs in groups.values():
            for pair in pairs:
                if pair.label is None:
                    continue
                rows.append(pair_vector(by_id[pair.first], by_id[pair.second], schema.names))
                labels.append(pair.label)
        if not rows:
            raise PipelineError("no labeled pairs to train on")
        hidden_sizes = tuple(int(part) for part in hidden.split(","))
        model = train_mlp(
            rows,
            labels,
            TrainConfig(
                learning_rate=learning_rate,
                epochs=epochs,
                batch_size=batch_size,
                seed=train_seed,
                validation_fraction=validation_fraction,
            ),
            hidden_sizes,
        )
        save_mlp(out_path, model)
    except Exception as exc:
        _fail(exc)
    click.echo(f"trained on {len(rows)} pairs; model saved to {out_path}")


# ---------------------------------------------------------------------------
# learn global | local | classifier
# ---------------------------------------------------------------------------

_ORACLE_FLAG_NAMES = (
    "oracle_kind", "oracle_path", "oracle_cmd", "theory_factor", "flip_prob", "noise_seed",
)


def _split_oracle_flags(flags: dict) -> dict:
    return {name: flags.pop(name) for name in _ORACLE_FLAG_NAMES}


def config_options(f):
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True)),
        click.option("--seed", type=int, default=None),
        click.option("--schema", "schema_path", type=click.Path(exists=True), default=None),
        click.option("--items", "items_path", type=click.Path(exists=True), default=None),
        click.option("--pairs", "pairs_path", type=click.Path(exists=True), default=None),
        click.option("--user", default=None),
        click.option("--maxp", type=int, default=None),
        click.option("--n-train", type=int, default=None),
        click.option("--n-test", type=int, default=None),
        click.option("--sample-mode", type=click.Choice(GLOBAL_MODES), default=None),
        click.option("--m", type=int, default=None),
        click.option("--sigma", type=float, default=None),
        click.option("--penalty-mode", type=click.Choice(PENALTY_MODES), default=None),
        click.option("--n-queries", type=int, default=None),
        click.option("--quantize-factor", type=int, default=None),
        click.option("--category-condition", is_flag=True, default=None),
        click.option("--max-constraints", type=int, default=None),
        click.option("--time-limit", type=float, default=None),
        click.option("--beam-width", type=int, default=None),
        click.option("--record-task", is_flag=True, default=None),
        click.option("--pca-mode", type=click.Choice(PCA_MODES), default=None),
        click.option("--pca-components", type=int, default=None),
        click.option("--pca-factor", type=int, default=None),
        click.option("--retro-n", type=int, default=None),
        click.option("--out-dir", "output_dir", type=click.Path(), default=None),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def _build_config(mode: str, config_path: Optional[str], oracle_flags: dict, **flags):
    base: dict = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            base = json.load(fh)
    pca_overrides = {}
    for flag, key in (
        ("pca_mode", "mode"),
        ("pca_components", "n_components"),
        ("pca_factor", "factor"),
        ("retro_n", "retro_n"),
    ):
        if flags.get(flag) is not None:
            pca_overrides[key] = flags.pop(flag)
        else:
            flags.pop(flag, None)
    if pca_overrides:
        merged_pca = dict(base.get("pca") or {})
        merged_pca.update(pca_overrides)
        base["pca"] = merged_pca
    oracle_overrides = _oracle_overrides(**oracle_flags)
    if oracle_overrides:
        merged_oracle = dict(base.get("oracle") or {})
        merged_oracle.update(oracle_overrides)
        base["oracle"] = merged_oracle
    base.update({k: v for k, v in flags.items() if v is not None})
    base["mode"] = mode
    if "seed" not in base or base["seed"] is None:
        raise PipelineError("pass --seed or a config file that sets one")
    return config_from_dict(base)


def _emit(manifests, labels, output_dir, extra_rows=None) -> None:
    bundle = build_report(manifests, out_dir=output_dir, labels=labels, extra_rows=extra_rows)
    click.echo(bundle.csv_text, nl=False)
    click.echo(bundle.theories_text, nl=False)
    if output_dir:
        click.echo(f"artifacts written to {output_dir}")


@cli.group("learn")
def learn_group() -> None:
    """Run a pipeline end to end and report the learned theory."""


@learn_group.command("global")
@oracle_options
@config_options
def learn_global(config_path, **flags):
    """Sample the whole region, label via the oracle, learn, evaluate."""
    oracle_flags = _split_oracle_flags(flags)
    try:
        config = _build_config("global", config_path, oracle_flags, **flags)
        manifest = run_global(config)
        _emit([manifest], ["global"], config.output_dir)
    except Exception as exc:
        _fail(exc)


@learn_group.command("local")
@oracle_options
@config_options
def learn_local(config_path, **flags):
    """Perturb each query's neighbourhood, learn there, test on the query."""
    oracle_flags = _split_oracle_flags(flags)
    try:
        config = _build_config("local", config_path, oracle_flags, **flags)
        manifests = run_local(config)
        labels = [f"query{m.query_index}" for m in manifests]
        _emit(
            manifests,
            labels,
            config.output_dir,
            extra_rows={"aggregate": aggregate_local(manifests)},
        )
    except Exception as exc:
        _fail(exc)


@learn_group.command("classifier")
@oracle_options
@config_options
def learn_classifier(config_path, **flags):
    """Learn directly from user-labeled pairs; score accuracy on a held-out split."""
    oracle_flags = _split_oracle_flags(flags)
    try:
        config = _build_config("classifier", config_path, oracle_flags, **flags)
        manifest = run_classifier(config)
        _emit([manifest], ["classifier"], config.output_dir)
    except Exception as exc:
        _fail(exc)


# ---------------------------------------------------------------------------
# eval / gt-score / mmd / export-ilasp / report
# ---------------------------------------------------------------------------

@cli.command("eval")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
def eval_cmd(manifest_path):
    """Recompute a manifest's agreement metrics from its own record."""
    try:
        manifest = load_manifest(manifest_path)
        recomputed = recompute_metrics(manifest)
        stored = manifest.metrics_row.get("Fidelity", manifest.metrics_row.get("Accuracy"))
        if stored is not None and abs(recomputed.fidelity - stored) > 1e-12:
            raise PipelineError(
                f"stored value {stored} does not match recomputed {recomputed.fidelity}"
            )
    except Exception as exc:
        _fail(exc)
    click.echo(
        f"fidelity={recomputed.fidelity:.4f} "
        f"macro_precision={recomputed.macro_precision:.4f} "
        f"macro_recall={recomputed.macro_recall:.4f} "
        f"pairs={recomputed.count} (matches stored row)"
    )


@cli.command("gt-score")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--schema", "schema_path", type=click.Path(exists=True), help="Schema carrying gt_rating annotations.")
@click.option("--ratings", "ratings_path", type=click.Path(exists=True), help="JSON object feature -> rating.")
def gt_score(manifest_path, schema_path, ratings_path):
    """Score a manifest's theory against the rating-derived reference theory."""
    from .metrics import gt_report, gt_theory, ratings_from_schema
    from .dataset import PairSample

    try:
        manifest = load_manifest(manifest_path)
        if ratings_path:
            with open(ratings_path, "r", encoding="utf-8") as fh:
                ratings = {k: int(v) for k, v in json.load(fh).items()}
        elif schema_path:
            ratings = ratings_from_schema(load_schema(schema_path))
        else:
            raise PipelineError("pass --ratings or --schema")
        theory = manifest.theory()
        gt = gt_theory(theory, ratings)
        if gt.theory.is_empty:
            raise PipelineError("no rated feature occurs in the theory")
        pairs = [PairSample(f, s) for f, s, _ in manifest.test_pairs]
        result = gt_report(theory, gt, pairs, manifest.parsed_contexts())
    except Exception as exc:
        _fail(exc)
    click.echo(
        f"accuracy_GT={result.fidelity:.4f} "
        f"precision_GT={result.macro_precision:.4f} "
        f"recall_GT={result.macro_recall:.4f}"
    )
    click.echo("reference theory:")
    click.echo(gt.theory.render())
    if gt.skipped_features:
        click.echo(f"unrated features skipped: {', '.join(gt.skipped_features)}")


@cli.command("mmd")
@click.option("--first", "first_path", required=True, type=click.Path(exists=True))
@click.option("--second", "second_path", required=True, type=click.Path(exists=True))
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--bandwidth", type=float, default=None)
def mmd_cmd(first_path, second_path, schema_path, bandwidth):
    """Squared maximum mean discrepancy between two item CSVs."""
    try:
        schema = load_schema(schema_path)
        a, _ = _matrix(load_items(first_path, schema), schema)
        b, _ = _matrix(load_items(second_path, schema), schema)
        used = bandwidth if bandwidth is not None else median_bandwidth(a, b)
        value = mmd_value(a, b, used)
    except Exception as exc:
        _fail(exc)
    click.echo(f"mmd_squared={value:.6f} bandwidth={used:.6f}")


@cli.command("export-ilasp")
@click.option("--task", "task_path", type=click.Path(exists=True), help="Internal JSON task file.")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), help="Manifest recorded with record_task.")
@click.option("--out", "out_path", type=click.Path(), default=None)
def export_ilasp(task_path, manifest_path, out_path):
    """Render a learning task in the external solver's syntax."""
    try:
        if task_path:
            with open(task_path, "r", encoding="utf-8") as fh:
                payload = fh.read()
        elif manifest_path:
            manifest = load_manifest(manifest_path)
            payload = manifest.extras.get("task")
            if not payload:
                raise PipelineError(
                    "manifest has no recorded task; rerun with record_task enabled"
                )
        else:
            raise PipelineError("pass --task or --manifest")
        text = export_ilasp_task(*load_task(payload))
    except Exception as exc:
        _fail(exc)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
        click.echo(f"wrote {out_path}")
    else:
        click.echo(text, nl=False)


@cli.command("report")
@click.option("--manifest", "manifest_paths", multiple=True, required=True, type=click.Path(exists=True))
@click.option("--labels", default=None, help="Comma-separated row labels.")
@click.option("--out-dir", "output_dir", type=click.Path(), default=None)
@click.option("--local-aggregate", is_flag=True, help="Append the mean row over local manifests.")
def report_cmd(manifest_paths, labels, output_dir, local_aggregate):
    """Combine manifests into a result table with delta-vs-baseline rows."""
    try:
        manifests = [load_manifest(path) for path in manifest_paths]
        row_labels = labels.split(",") if labels else None
        extra_rows = None
        if local_aggregate:
            locals_ = [m for m in manifests if m.mode == "local"]
            if not locals_:
                raise PipelineError("--local-aggregate needs local manifests")
            extra_rows = {"aggregate": aggregate_local(locals_)}
        bundle = build_report(manifests, out_dir=output_dir, labels=row_labels, extra_rows=extra_rows)
    except Exception as exc:
        _fail(exc)
    click.echo(bundle.csv_text, nl=False)
    if output_dir:
        click.echo(f"artifacts written to {output_dir}")


if __name__ == "__main__":
    main()
