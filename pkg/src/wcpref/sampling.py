"""Pair sampling for surrogate training.

Global mode samples ordered item pairs across the whole task region (from
an item pool, or synthesized feature-by-feature).  Local mode perturbs a
single query pair with Gaussian noise to populate its neighbourhood, then
weights each perturbed pair by its distance to the query so the learner
prioritizes the neighbourhood's shape.  All sampling is a pure function
of (inputs, seed).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

from .dataset import (
    DatasetError,
    Item,
    PairSample,
    Quantization,
    Schema,
    fit_quantization,
    round_half_away,
)

GLOBAL_MODES = ("item-pool", "synthetic-features")
PENALTY_MODES = ("distance", "inverse-distance")

#: Cap on the derived quantization factor for vanishing noise scales.
MAX_DERIVED_FACTOR = 10**6

#: Distance contributed by a categorical mismatch (an arbitrary constant
#: comparable to a few integer steps of the ordinal features).
CATEGORICAL_MISMATCH_DISTANCE = 3.0


class SamplingError(ValueError):
    """Raised for unsatisfiable sample requests or bad configurations."""


@dataclass(frozen=True)
class GlobalSampleConfig:
    n_train: int
    n_test: int
    mode: str = "item-pool"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_train < 1:
            raise SamplingError(f"n_train must be >= 1, got {self.n_train}")
        if self.n_test < 0:
            raise SamplingError(f"n_test must be >= 0, got {self.n_test}")
        if self.mode not in GLOBAL_MODES:
            raise SamplingError(f"mode must be one of {GLOBAL_MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class LocalSampleConfig:
    m: int
    sigma: float
    factor: Optional[int] = None
    categorical_resample_prob: float = 0.0
    penalty_mode: str = "distance"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.m < 1:
            raise SamplingError(f"m must be >= 1, got {self.m}")
        if not self.sigma > 0:
            raise SamplingError(f"sigma must be > 0, got {self.sigma}")
        if not 0.0 <= self.categorical_resample_prob <= 1.0:
            raise SamplingError("categorical_resample_prob must lie in [0, 1]")
        if self.penalty_mode not in PENALTY_MODES:
            raise SamplingError(
                f"penalty_mode must be one of {PENALTY_MODES}, got {self.penalty_mode!r}"
            )
        if self.factor is not None and self.factor < 1:
            raise SamplingError(f"factor must be >= 1, got {self.factor}")

    @property
    def effective_factor(self) -> int:
        """The quantization factor: given, or the nearest integer to 1/sigma."""
        if self.factor is not None:
            return self.factor
        return max(1, min(MAX_DERIVED_FACTOR, round_half_away(1.0 / self.sigma)))


@dataclass(frozen=True)
class GlobalSample:
    """Sampled items plus unlabeled train/test pair splits over them."""

    items: tuple
    train: tuple
    test: tuple


@dataclass(frozen=True)
class LocalPerturbation:
    """A query's perturbed neighbourhood, raw and integerized.

    ``pairs`` reference the quantized ``items``; ``raw_items`` are their
    pre-quantization counterparts (in the same order) for distance
    computation.  The query pair itself is not among the training pairs --
    it is reserved as the test instance, quantized on the same grid.
    """

    raw_items: tuple
    items: tuple
    query_items: Tuple[Item, Item]
    pairs: tuple
    quantization: Quantization

    @property
    def query_pair(self) -> PairSample:
        return PairSample(self.query_items[0].id, self.query_items[1].id)


def _decode_ordered_pair(index: int, n: int) -> Tuple[int, int]:
    # ordered pairs of distinct indices, enumerated i-major with j skipping i
    i, r = divmod(index, n - 1)
    return i, r if r < i else r + 1


def sample_global(
    pool: Sequence[Item],
    config: GlobalSampleConfig,
    schema: Optional[Schema] = None,
) -> GlobalSample:
    """Draw ``n_train`` + ``n_test`` unlabeled ordered pairs.

    Item-pool mode samples distinct ordered pairs of pool items uniformly
    without replacement.  Synthetic mode materializes fresh items with
    each feature drawn uniformly from its (bounded) schema domain.
    """
    rng = random.Random(config.seed)
    total = config.n_train + config.n_test
    if config.mode == "item-pool":
        n = len(pool)
        if n < 2:
            raise SamplingError("item-pool mode needs at least 2 items")
        universe = n * (n - 1)
        if total > universe:
            raise SamplingError(
                f"{total} pairs requested but only {universe} distinct ordered pairs exist"
            )
        indices = rng.sample(range(universe), total)
        ids = [item.id for item in pool]
        pairs = [
            PairSample(ids[i], ids[j])
            for i, j in (_decode_ordered_pair(p, n) for p in indices)
        ]
        items = tuple(pool)
    else:
        if schema is None:
            raise SamplingError("synthetic-features mode requires a schema")
        items_list = []
        pairs = []
        for p in range(total):
            first = _synthetic_item(rng, schema, 2 * p)
            second = _synthetic_item(rng, schema, 2 * p + 1)
            items_list += [first, second]
            pairs.append(PairSample(first.id, second.id))
        items = tuple(items_list)
    return GlobalSample(
        items=items,
        train=tuple(pairs[: config.n_train]),
        test=tuple(pairs[config.n_train :]),
    )


def _synthetic_item(rng: random.Random, schema: Schema, item_id: int) -> Item:
    values = {}
    for spec in schema:
        if spec.kind == "categorical":
            values[spec.name] = rng.choice(spec.domain)
            continue
        lo, hi = spec.domain
        if math.isinf(lo) or math.isinf(hi):
            raise SamplingError(
                f"synthetic mode requires a bounded domain for {spec.name!r}"
            )
        if spec.kind == "ordinal":
            values[spec.name] = rng.randint(int(lo), int(hi))
        else:
            values[spec.name] = rng.uniform(lo, hi)
    return Item(id=item_id, name=f"synthetic-{item_id}", values=values)


def _child_seed(seed: int, query_index: int) -> int:
    # distinct deterministic stream per query so parallel and serial
    # query processing agree
    return seed * 1_000_003 + query_index


def perturb_local(
    query: Tuple[Item, Item],
    config: LocalSampleConfig,
    schema: Schema,
    query_index: int = 0,
) -> LocalPerturbation:
    """Populate a query pair's neighbourhood with ``m`` perturbed pairs.

    Every continuous/ordinal feature of both query items receives
    independent Gaussian noise with the configured scale; categorical
    features are resampled uniformly with the configured probability
    (never perturbed by default).  The whole batch -- perturbations and
    the query -- is then integerized on one shared grid.
    """
    rng = random.Random(_child_seed(config.seed, query_index))
    first, second = query
    base_id = max(first.id, second.id) + 1
    raw_items = []
    pairs = []
    for p in range(config.m):
        a = _perturb_item(rng, first, config, schema, base_id + 2 * p)
        b = _perturb_item(rng, second, config, schema, base_id + 2 * p + 1)
        raw_items += [a, b]
        pairs.append(PairSample(a.id, b.id))
    factor = config.effective_factor
    quantization = fit_quantization([*raw_items, first, second], factor, schema)
    quantized = [
        item.replace_values(
            {spec.name: quantization.apply(spec.name, item.values[spec.name]) for spec in schema}
        )
        for item in raw_items
    ]
    query_items = tuple(
        item.replace_values(
            {spec.name: quantization.apply(spec.name, item.values[spec.name]) for spec in schema}
        )
        for item in (first, second)
    )
    return LocalPerturbation(
        raw_items=tuple(raw_items),
        items=tuple(quantized),
        query_items=query_items,
        pairs=tuple(pairs),
        quantization=quantization,
    )


def _perturb_item(
    rng: random.Random,
    item: Item,
    config: LocalSampleConfig,
    schema: Schema,
    item_id: int,
) -> Item:
    values = dict(item.values)
    for spec in schema:
        if spec.kind == "categorical":
            if config.categorical_resample_prob > 0 and rng.random() < config.categorical_resample_prob:
                values[spec.name] = rng.choice(spec.domain)
        else:
            values[spec.name] = item.values[spec.name] + rng.gauss(0.0, config.sigma)
    return Item(id=item_id, name=f"{item.name}~{item_id}", values=values)


def pi_distance(
    query: Tuple[Item, Item], sample: Tuple[Item, Item], schema: Schema
) -> float:
    """Query-anchored pair distance: per-item Euclidean distances, summed.

    Categorical mismatches count a fixed distance of 3; matching
    categories count 0.
    """
    total = 0.0
    for q_item, s_item in zip(query, sample):
        squares = 0.0
        for spec in schema:
            if spec.name not in q_item.values or spec.name not in s_item.values:
                raise SamplingError(f"feature {spec.name!r} missing from a compared item")
            if spec.kind == "categorical":
                d = (
                    0.0
                    if q_item.values[spec.name] == s_item.values[spec.name]
                    else CATEGORICAL_MISMATCH_DISTANCE
                )
            else:
                d = float(s_item.values[spec.name]) - float(q_item.values[spec.name])
            squares += d * d
        total += math.sqrt(squares)
    return total


def penalty_from_distance(distance: float, mode: str, inverse_scale: float = 10.0) -> int:
    """Map a pair's query distance to a positive integer ordering penalty."""
    if mode == "distance":
        return max(1, round_half_away(distance))
    if mode == "inverse-distance":
        return max(1, round_half_away(inverse_scale / (1.0 + distance)))
    raise SamplingError(f"penalty_mode must be one of {PENALTY_MODES}, got {mode!r}")


def local_penalties(
    query: Tuple[Item, Item],
    samples: Sequence[Tuple[Item, Item]],
    schema: Schema,
    mode: str = "distance",
    inverse_scale: float = 10.0,
) -> list:
    """One penalty per sample pair, from its distance to the query."""
    return [
        penalty_from_distance(pi_distance(query, sample, schema), mode, inverse_scale)
        for sample in samples
    ]
