"""Feature schemas, item/pair ingestion, ingredient aggregation, quantization.

The toolkit's items are flat feature vectors (recipes in the bundled
schema): a few scalar features plus ingredient and preparation importance
vectors.  Ingredient features exist at two granularities — 36 classes or
12 meta-classes — related by a class map; :func:`aggregate_ingredients`
sums class values into their meta-class.  :func:`quantize` converts
real-valued items to the non-negative integers the learner requires and
records the reverse mapping.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from importlib import resources
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, Sequence

from .asp import Atom

FEATURE_KINDS = ("continuous", "ordinal", "categorical")

LABELS = (-1, 0, 1)

#: Canonical preparation-method features bundled with the recipe schema.
PREPARATION_FEATURES = (
    "boiling",
    "frying",
    "baking",
    "browning",
    "stewing",
    "steaming",
    "grilling",
    "kneading",
    "marinating",
)

_SCHEMA_VERSION = "wcpref-items-v1"


class DatasetError(ValueError):
    """Raised for malformed files, schema violations, or bad rows."""


def _is_identifier(name: str) -> bool:
    return (
        bool(name)
        and name[0].isalpha()
        and name[0].islower()
        and all(ch.islower() or ch.isdigit() or ch == "_" for ch in name)
    )


@dataclass(frozen=True)
class FeatureSpec:
    """One feature: its kind and value domain.

    ``domain`` is ``(lo, hi)`` for continuous/ordinal features (``hi`` may
    be ``math.inf``) and a tuple of admissible values for categorical
    features.  ``gt_rating``, when present, is a 1-10 survey score used by
    ground-truth theory construction; features without one are skipped
    there.
    """

    name: str
    kind: str
    domain: tuple
    gt_rating: Optional[int] = None

    def __post_init__(self) -> None:
        if not _is_identifier(self.name):
            raise DatasetError(f"feature name {self.name!r} is not a lowercase identifier")
        if self.kind not in FEATURE_KINDS:
            raise DatasetError(f"unknown feature kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.domain:
                raise DatasetError(f"{self.name}: categorical domain must be non-empty")
            object.__setattr__(self, "domain", tuple(self.domain))
        else:
            lo, hi = self.domain
            if not lo <= hi:
                raise DatasetError(f"{self.name}: domain requires lo <= hi, got {self.domain}")
            object.__setattr__(self, "domain", (lo, hi))
        if self.gt_rating is not None and not 1 <= self.gt_rating <= 10:
            raise DatasetError(f"{self.name}: gt_rating must lie in [1,10], got {self.gt_rating}")

    def contains(self, value) -> bool:
        if self.kind == "categorical":
            return value in self.domain
        lo, hi = self.domain
        return lo <= value <= hi


@dataclass(frozen=True)
class Schema:
    """An ordered collection of uniquely named features."""

    features: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise DatasetError("duplicate feature names in schema")

    def __iter__(self):
        return iter(self.features)

    def __len__(self) -> int:
        return len(self.features)

    @property
    def names(self) -> tuple:
        return tuple(f.name for f in self.features)

    def __getitem__(self, name: str) -> FeatureSpec:
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(f.name == name for f in self.features)


@dataclass(frozen=True)
class Item:
    """One scored item: an id, a display name, and a feature-value map."""

    id: int
    name: str
    values: Mapping[str, float]
    link: Optional[str] = None

    def __post_init__(self) -> None:
        if self.id < 0:
            raise DatasetError(f"item id must be non-negative, got {self.id}")
        object.__setattr__(self, "values", MappingProxyType(dict(self.values)))

    def replace_values(self, values: Mapping[str, float]) -> "Item":
        return Item(self.id, self.name, values, self.link)


@dataclass(frozen=True)
class PairSample:
    """An ordered pair of item ids with an optional ternary label.

    Label 1 means the first item is preferred, -1 the second, 0 uncertain.
    """

    first: int
    second: int
    label: Optional[int] = None

    def __post_init__(self) -> None:
        if self.first == self.second:
            raise DatasetError(f"self-pair ({self.first}, {self.second}) is not allowed")
        if self.label is not None and self.label not in LABELS:
            raise DatasetError(f"label must be in {LABELS}, got {self.label}")


def validate_item(item: Item, schema: Schema) -> None:
    """Check that ``item`` carries a valid value for every schema feature."""
    for spec in schema:
        if spec.name not in item.values:
            raise DatasetError(f"item {item.id}: missing feature {spec.name!r}")
        value = item.values[spec.name]
        if not spec.contains(value):
            raise DatasetError(
                f"item {item.id}: value {value!r} outside domain of {spec.name!r}"
            )


# ---------------------------------------------------------------------------
# Ingredient class -> meta-class aggregation
# ---------------------------------------------------------------------------

def load_class_map(path=None) -> Mapping[str, str]:
    """Load a class -> meta-class map (the bundled recipe map by default)."""
    if path is None:
        text = (
            resources.files("wcpref").joinpath("data/ingredient_meta_classes.json").read_text()
        )
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    raw = json.loads(text)
    if not isinstance(raw, dict) or not raw:
        raise DatasetError("class map must be a non-empty JSON object")
    for cls, meta in raw.items():
        if not _is_identifier(cls) or not _is_identifier(meta):
            raise DatasetError(f"class map entry {cls!r} -> {meta!r} is not identifier-shaped")
    return MappingProxyType(dict(raw))


def meta_classes(class_map: Mapping[str, str]) -> tuple:
    """The distinct meta-classes of a map, in first-appearance order."""
    seen = []
    for meta in class_map.values():
        if meta not in seen:
            seen.append(meta)
    return tuple(seen)


def aggregate_ingredients(
    item: Item,
    class_map: Mapping[str, str],
    ingredient_features: Optional[Iterable[str]] = None,
) -> Item:
    """Sum class-level ingredient values into their meta-classes.

    ``ingredient_features`` names the class-level features to fold
    (defaulting to every item feature present in the map); all other
    features pass through unchanged.  The total ingredient mass is
    preserved: the meta values sum to exactly the class values' sum.
    """
    if ingredient_features is None:
        ingredient_features = [f for f in item.values if f in class_map]
    else:
        ingredient_features = list(ingredient_features)
    sums: dict = {}
    for cls in ingredient_features:
        if cls not in class_map:
            raise DatasetError(f"ingredient class {cls!r} is absent from the class map")
        if cls not in item.values:
            raise DatasetError(f"item {item.id}: missing ingredient class {cls!r}")
        sums[class_map[cls]] = sums.get(class_map[cls], 0) + item.values[cls]
    folded = set(ingredient_features)
    values = {f: v for f, v in item.values.items() if f not in folded}
    overlap = folded.intersection(sums) | set(values).intersection(sums)
    # a class sharing its meta-class's name (e.g. eggs -> eggs) is fine: the
    # class value was removed above and re-enters as the meta value
    overlap -= folded
    if overlap:
        raise DatasetError(f"meta-class names collide with existing features: {sorted(overlap)}")
    values.update(sums)
    return item.replace_values(values)


def aggregate_schema(schema: Schema, class_map: Mapping[str, str]) -> Schema:
    """The schema produced by meta-class aggregation of ``schema``'s classes."""
    specs = []
    emitted = set()
    for spec in schema:
        if spec.name in class_map:
            meta = class_map[spec.name]
            if meta not in emitted:
                emitted.add(meta)
                specs.append(FeatureSpec(meta, spec.kind, spec.domain))
        else:
            specs.append(spec)
    return Schema(tuple(specs))


# ---------------------------------------------------------------------------
# Quantization
# ---------------------------------------------------------------------------

def round_half_away(x: float) -> int:
    """Round to the nearest integer, halves away from zero."""
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


@dataclass(frozen=True)
class Quantization:
    """The reverse mapping of a :func:`quantize` run.

    Quantized value = round((v - shift) * factor); ``invert`` maps an
    integer back to the representative real value shift + q / factor.
    """

    factor: int
    shifts: Mapping[str, float]

    def __post_init__(self) -> None:
        if self.factor < 1:
            raise DatasetError(f"factor must be >= 1, got {self.factor}")
        object.__setattr__(self, "shifts", MappingProxyType(dict(self.shifts)))

    def apply(self, feature: str, value: float) -> int:
        shift = self.shifts.get(feature)
        if shift is None:  # categorical: passed through untouched
            return value
        return round_half_away((value - shift) * self.factor)

    def invert(self, feature: str, q: int) -> float:
        shift = self.shifts.get(feature)
        if shift is None:
            return q
        return shift + q / self.factor


def fit_quantization(
    items: Sequence[Item], factor: int, schema: Schema
) -> Quantization:
    """Compute per-feature shifts so every quantized value is >= 0.

    Features whose minimum is already non-negative keep a zero shift, so
    integer-valued non-negative data with factor 1 quantizes to itself.
    """
    shifts = {}
    for spec in schema:
        if spec.kind == "categorical":
            continue
        lo = min((item.values[spec.name] for item in items), default=0)
        shifts[spec.name] = min(lo, 0)
    return Quantization(factor, shifts)


def quantize(
    items: Sequence[Item],
    factor: int,
    schema: Schema,
    quantization: Optional[Quantization] = None,
) -> tuple:
    """Convert items to integer values; returns (items, reverse mapping).

    Pass a previously fitted ``quantization`` to reuse its shifts (e.g. to
    place test items on the training items' grid).
    """
    if quantization is None:
        quantization = fit_quantization(items, factor, schema)
    out = []
    for item in items:
        values = dict(item.values)
        for spec in schema:
            values[spec.name] = quantization.apply(spec.name, values[spec.name])
        out.append(item.replace_values(values))
    return out, quantization


# ---------------------------------------------------------------------------
# Items <-> ASP atoms
# ---------------------------------------------------------------------------

def item_atoms(
    item: Item,
    value_features: Sequence[str],
    category_feature: Optional[str] = "category",
) -> tuple:
    """Render an integer-valued item as the learner's context atoms.

    Produces ``category(c)`` for the category feature (when present) and
    ``value(f, v)`` for each requested feature.  Values must already be
    integers (see :func:`quantize`).
    """
    atoms = []
    if category_feature is not None and category_feature in item.values:
        atoms.append(Atom("category", (_as_int(item, category_feature),)))
    for feature in value_features:
        if feature == category_feature:
            continue
        atoms.append(Atom("value", (feature, _as_int(item, feature))))
    return tuple(atoms)


def _as_int(item: Item, feature: str) -> int:
    value = item.values[feature]
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    raise DatasetError(
        f"item {item.id}: feature {feature!r} has non-integer value {value!r}; quantize first"
    )


# ---------------------------------------------------------------------------
# CSV / JSON I/O
# ---------------------------------------------------------------------------

def _parse_number(text: str, row: int, column: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise DatasetError(f"row {row}: malformed number {text!r} in column {column!r}") from None


def load_items(path, schema: Schema) -> list:
    """Read items from CSV (columns: id, name, features..., link)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            fh.seek(0)
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError("empty items file (no header)") from None
        expected = ["id", "name", *schema.names, "link"]
        if header != expected:
            missing = [c for c in expected if c not in header]
            if missing:
                raise DatasetError(f"missing feature column(s): {missing}")
            raise DatasetError(f"header order mismatch: expected {expected}, got {header}")
        items = []
        for row_index, row in enumerate(reader, start=1):
            if len(row) != len(expected):
                raise DatasetError(f"row {row_index}: expected {len(expected)} cells, got {len(row)}")
            values = {
                spec.name: _parse_number(cell, row_index, spec.name)
                for spec, cell in zip(schema.features, row[2:-1])
            }
            item = Item(
                id=int(_parse_number(row[0], row_index, "id")),
                name=row[1],
                values=values,
                link=row[-1] or None,
            )
            try:
                validate_item(item, schema)
            except DatasetError as exc:
                raise DatasetError(f"row {row_index}: {exc}") from None
            items.append(item)
    return items


def save_items(path, items: Sequence[Item], schema: Schema) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# {_SCHEMA_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(["id", "name", *schema.names, "link"])
        for item in items:
            writer.writerow(
                [item.id, item.name]
                + [item.values[name] for name in schema.names]
                + [item.link or ""]
            )


def load_pairs(path, known_ids: Optional[Iterable[int]] = None) -> dict:
    """Read per-user pair collections from CSV (user, first, second, label)."""
    known = None if known_ids is None else set(known_ids)
    users: dict = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            fh.seek(0)
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError("empty pairs file (no header)") from None
        if header != ["user", "first", "second", "label"]:
            raise DatasetError(f"bad pairs header: {header}")
        for row_index, row in enumerate(reader, start=1):
            if len(row) != 4:
                raise DatasetError(f"row {row_index}: expected 4 cells, got {len(row)}")
            user, first_id, second_id, label_text = row
            first_id = int(_parse_number(first_id, row_index, "first"))
            second_id = int(_parse_number(second_id, row_index, "second"))
            label = None if label_text == "" else int(_parse_number(label_text, row_index, "label"))
            if known is not None and (first_id not in known or second_id not in known):
                raise DatasetError(f"row {row_index}: unknown item id in pair ({first_id}, {second_id})")
            try:
                pair = PairSample(first_id, second_id, label)
            except DatasetError as exc:
                raise DatasetError(f"row {row_index}: {exc}") from None
            users.setdefault(user, []).append(pair)
    return users


def save_pairs(path, users: Mapping[str, Sequence[PairSample]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# {_SCHEMA_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(["user", "first", "second", "label"])
        for user, pairs in users.items():
            for pair in pairs:
                writer.writerow(
                    [user, pair.first, pair.second, "" if pair.label is None else pair.label]
                )


def schema_to_dict(schema: Schema) -> dict:
    features = []
    for spec in schema:
        if spec.kind == "categorical":
            domain = {"categories": list(spec.domain)}
        else:
            lo, hi = spec.domain
            domain = {"lo": lo, "hi": None if math.isinf(hi) else hi}
        features.append(
            {"name": spec.name, "kind": spec.kind, "domain": domain, "gt_rating": spec.gt_rating}
        )
    return {"version": 1, "features": features}


def schema_from_dict(data: Mapping) -> Schema:
    specs = []
    for raw in data["features"]:
        domain = raw["domain"]
        if raw["kind"] == "categorical":
            parsed = tuple(domain["categories"])
        else:
            hi = domain["hi"]
            parsed = (domain["lo"], math.inf if hi is None else hi)
        specs.append(FeatureSpec(raw["name"], raw["kind"], parsed, raw.get("gt_rating")))
    return Schema(tuple(specs))


def save_schema(path, schema: Schema) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema_to_dict(schema), fh, indent=2)
        fh.write("\n")


def load_schema(path) -> Schema:
    with open(path, "r", encoding="utf-8") as fh:
        return schema_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Bundled recipe schema
# ---------------------------------------------------------------------------

def default_recipe_schema(granularity: str = "meta") -> Schema:
    """The bundled recipe schema at class or meta-class granularity.

    Columns: category (1-5), cost (1-5), difficulty (1-4), prep_time
    (minutes), one importance feature per ingredient class or meta-class,
    and one per preparation method.
    """
    if granularity not in ("class", "meta"):
        raise DatasetError(f"granularity must be 'class' or 'meta', got {granularity!r}")
    class_map = load_class_map()
    if granularity == "class":
        ingredients = tuple(class_map.keys())
    else:
        ingredients = meta_classes(class_map)
    inf = math.inf
    specs = [
        FeatureSpec("category", "categorical", (1, 2, 3, 4, 5)),
        FeatureSpec("cost", "ordinal", (1, 5)),
        FeatureSpec("difficulty", "ordinal", (1, 4)),
        FeatureSpec("prep_time", "continuous", (0, inf)),
    ]
    specs += [FeatureSpec(name, "continuous", (0, inf)) for name in ingredients]
    specs += [FeatureSpec(name, "continuous", (0, inf)) for name in PREPARATION_FEATURES]
    return Schema(tuple(specs))
