"""Hypothesis-space expansion and the ordering-example learner.

The learner searches subsets of a candidate-constraint space for a
theory minimizing ``total body length + penalties of uncovered ordering
examples``, via exact branch and bound (with an optional beam fallback
under a time limit).  ``brute_force_learn`` is the independent reference
implementation used as a test oracle; it shares no search or cost
bookkeeping with the kernel path.

The subset search runs on a compiled kernel when available and falls
back to the pure-Python twin otherwise; set ``WCPREF_PURE_PYTHON=1`` to
force the fallback.
"""

from __future__ import annotations

import itertools
import json
import os
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from wcpref.asp import (
    VAR,
    WEIGHT_FORMS,
    Atom,
    GroundAtomSet,
    Theory,
    WeakConstraint,
    classify_pair,
    iter_contributions,
    parse_atom,
)

if os.environ.get("WCPREF_PURE_PYTHON"):
    from wcpref import _search_py as _kernel

    SEARCH_BACKEND = "python"
else:
    try:
        from wcpref import _search as _kernel  # type: ignore[no-redef]

        SEARCH_BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        from wcpref import _search_py as _kernel  # type: ignore[no-redef]

        SEARCH_BACKEND = "python"

SYMBOLS = ("<", ">", "=", "<=", ">=")

_REL_CODE = {"=": 0, "<": 1, ">": 2, "<=": 3, ">=": 4}

#: outcome values of classify_pair accepted by each ordering symbol
_ACCEPTS = {"<": (1,), ">": (-1,), "=": (0,), "<=": (1, 0), ">=": (-1, 0)}

#: label -> ordering symbol (label 1 = first preferred = ILASP's '<')
LABEL_SYMBOLS = {1: "<", 0: "=", -1: ">"}


def search_backend() -> str:
    """Name of the kernel the learner dispatches to."""
    return SEARCH_BACKEND


@dataclass(frozen=True)
class ModeBias:
    """Grammar of learnable constraints.

    ``category_constants`` also drives the ``#modeo``/``#constant``
    declarations of exported task files; the two ``allow_*`` flags only
    control whether category atoms enter the expanded space.
    """

    value_features: tuple[str, ...]
    category_constants: tuple[int, ...] = ()
    weight_forms: tuple[str, ...] = WEIGHT_FORMS
    maxp: int = 5
    maxv: int = 1
    allow_category_condition: bool = False
    allow_category_only: bool = False

    def __post_init__(self) -> None:
        if self.maxp < 1:
            raise ValueError(f"maxp must be >= 1, got {self.maxp}")
        if self.maxv != 1:
            raise ValueError("only maxv=1 is supported")
        if not self.weight_forms:
            raise ValueError("weight_forms must be non-empty")
        for w in self.weight_forms:
            if w not in WEIGHT_FORMS:
                raise ValueError(f"unknown weight form {w!r}")
        if len(set(self.value_features)) != len(self.value_features):
            raise ValueError("duplicate value features")
        if len(set(self.category_constants)) != len(self.category_constants):
            raise ValueError("duplicate category constants")


@dataclass(frozen=True)
class HypothesisSpace:
    """Candidate constraints in canonical (tie-break) order."""

    candidates: tuple[WeakConstraint, ...]
    maxp: int

    def __post_init__(self) -> None:
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError("duplicate candidates")
        for wc in self.candidates:
            if wc.level > self.maxp:
                raise ValueError(f"candidate level {wc.level} exceeds maxp {self.maxp}")

    def __len__(self) -> int:
        return len(self.candidates)


@dataclass(frozen=True)
class OrderingExample:
    """A brave ordering over two contexts with a violation penalty."""

    id: str
    first: GroundAtomSet
    second: GroundAtomSet
    symbol: str
    penalty: int = 1
    first_name: str | None = None
    second_name: str | None = None

    def __post_init__(self) -> None:
        if self.symbol not in SYMBOLS:
            raise ValueError(f"symbol must be one of {SYMBOLS}, got {self.symbol!r}")
        if self.penalty < 1:
            raise ValueError(f"penalty must be >= 1, got {self.penalty}")


@dataclass(frozen=True)
class LearnBudget:
    max_constraints: int | None = None  # defaults to the space's maxp
    time_limit: float | None = None
    beam_width: int | None = None
    node_limit: int = 0

    def __post_init__(self) -> None:
        if self.max_constraints is not None and self.max_constraints < 0:
            raise ValueError("max_constraints must be >= 0")


@dataclass(frozen=True)
class LearnResult:
    theory: Theory
    objective: int
    optimal: bool
    mode: str  # "exact", "beam", or "exhaustive"
    nodes: int
    elapsed: float
    backend: str


def expand_mode_bias(bias: ModeBias) -> HypothesisSpace:
    """Enumerate the hypothesis space in canonical order.

    Order: value features alphabetically (plain form first, then each
    category-conditioned variant), weight forms as in ``WEIGHT_FORMS``,
    levels ascending; category-only candidates come last.  This order is
    the learner's tie-break.
    """
    forms = [w for w in WEIGHT_FORMS if w in bias.weight_forms]
    candidates: list[WeakConstraint] = []
    for f in sorted(bias.value_features):
        value_atom = Atom("value", (f, VAR))
        bodies: list[tuple[Atom, ...]] = [(value_atom,)]
        if bias.allow_category_condition:
            bodies += [
                (value_atom, Atom("category", (c,)))
                for c in sorted(bias.category_constants)
            ]
        for body in bodies:
            for w in forms:
                for level in range(1, bias.maxp + 1):
                    candidates.append(WeakConstraint(body, w, level, (VAR,)))
    if bias.allow_category_only:
        for c in sorted(bias.category_constants):
            for w in [w for w in ("1", "-1") if w in bias.weight_forms]:
                for level in range(1, bias.maxp + 1):
                    candidates.append(
                        WeakConstraint((Atom("category", (c,)),), w, level, (c,))
                    )
    return HypothesisSpace(tuple(candidates), bias.maxp)


def orderings_from_labels(
    pairs: Iterable,
    contexts: Mapping[int, GroundAtomSet],
    penalties: Sequence[int] | None = None,
) -> list[OrderingExample]:
    """Turn labeled pairs into ordering examples (label 1 -> '<')."""
    pairs = list(pairs)
    if penalties is None:
        penalties = [1] * len(pairs)
    elif len(penalties) != len(pairs):
        raise ValueError("penalties must align with pairs")
    out = []
    for n, (pair, penalty) in enumerate(zip(pairs, penalties)):
        if pair.label is None:
            raise ValueError(f"pair ({pair.first}, {pair.second}) is unlabeled")
        for item_id in (pair.first, pair.second):
            if item_id not in contexts:
                raise ValueError(f"no context for item {item_id}")
        out.append(
            OrderingExample(
                id=f"o{n}",
                first=contexts[pair.first],
                second=contexts[pair.second],
                symbol=LABEL_SYMBOLS[pair.label],
                penalty=penalty,
                first_name=f"item-{pair.first}",
                second_name=f"item-{pair.second}",
            )
        )
    return out


def covers(theory: Theory, example: OrderingExample) -> bool:
    outcome = classify_pair(theory, example.first, example.second)
    return outcome in _ACCEPTS[example.symbol]


def objective(theory: Theory, examples: Iterable[OrderingExample]) -> int:
    return theory.total_body_length() + sum(
        ex.penalty for ex in examples if not covers(theory, ex)
    )


@dataclass
class _Problem:
    n: int
    n_contexts: int
    kept: list[int]
    cand_level: list[int]
    cand_length: list[int]
    entry_ptr: list[int]
    entry_ctx: list[int]
    entry_tuple: list[int]
    entry_weight: list[int]
    first_ctx: list[int]
    second_ctx: list[int]
    relation: list[int]
    penalty: list[int]


def _setup_problem(space: HypothesisSpace, examples: Sequence[OrderingExample]) -> _Problem:
    ctx_index: dict[GroundAtomSet, int] = {}
    ctx_list: list[GroundAtomSet] = []

    def ctx_id(atoms: GroundAtomSet) -> int:
        i = ctx_index.get(atoms)
        if i is None:
            i = len(ctx_list)
            ctx_index[atoms] = i
            ctx_list.append(atoms)
        return i

    first_ctx, second_ctx, relation, penalty = [], [], [], []
    for ex in examples:
        first_ctx.append(ctx_id(ex.first))
        second_ctx.append(ctx_id(ex.second))
        relation.append(_REL_CODE[ex.symbol])
        penalty.append(ex.penalty)

    # tuple ids are namespaced per context so equal contribution tuples
    # from different candidates dedup inside the kernel exactly as they
    # do in evaluate_cost
    tuple_ids: list[dict[tuple, int]] = [{} for _ in ctx_list]
    kept: list[int] = []
    cand_level, cand_length = [], []
    entry_ptr, entry_ctx, entry_tuple, entry_weight = [0], [], [], []
    for idx, wc in enumerate(space.candidates):
        entries = []
        for c, atoms in enumerate(ctx_list):
            for w, level, terms in iter_contributions(wc, atoms):
                ids = tuple_ids[c]
                key = (w, level, terms)
                tid = ids.setdefault(key, len(ids))
                entries.append((c, tid, w))
        if not entries:
            # candidate never fires on any context: length with no effect,
            # so it cannot appear in an optimum
            continue
        kept.append(idx)
        cand_level.append(wc.level)
        cand_length.append(wc.body_length)
        for c, tid, w in entries:
            entry_ctx.append(c)
            entry_tuple.append(tid)
            entry_weight.append(w)
        entry_ptr.append(len(entry_ctx))
    return _Problem(
        len(kept), len(ctx_list), kept, cand_level, cand_length,
        entry_ptr, entry_ctx, entry_tuple, entry_weight,
        first_ctx, second_ctx, relation, penalty,
    )


def _kernel_args(problem: _Problem, maxp: int, max_constraints: int) -> tuple:
    args = (
        problem.n, problem.n_contexts, maxp, max_constraints,
        problem.cand_level, problem.cand_length,
        problem.entry_ptr, problem.entry_ctx, problem.entry_tuple,
        problem.entry_weight, problem.first_ctx, problem.second_ctx,
        problem.relation, problem.penalty,
    )
    if SEARCH_BACKEND == "compiled":
        import numpy as np

        args = args[:4] + tuple(np.asarray(a, dtype=np.int64) for a in args[4:])
    return args


def learn(
    space: HypothesisSpace,
    examples: Iterable[OrderingExample],
    budget: LearnBudget | None = None,
) -> LearnResult:
    """Minimize the objective over subsets of the space.

    Ties are broken by fewer constraints, then by the space's canonical
    candidate order.  Under a ``time_limit``, an unfinished exact search
    returns its best theory flagged non-optimal; if ``beam_width`` is
    set, a beam pass (given one more ``time_limit`` slice) may improve
    it, and the result is flagged ``mode="beam"``.
    """
    budget = budget or LearnBudget()
    examples = list(examples)
    t0 = time.monotonic()
    mc = budget.max_constraints if budget.max_constraints is not None else space.maxp
    problem = _setup_problem(space, examples)
    if problem.n == 0 or mc == 0:
        theory = Theory((), space.maxp)
        return LearnResult(
            theory, objective(theory, examples), True, "exact", 1,
            time.monotonic() - t0, SEARCH_BACKEND,
        )
    args = _kernel_args(problem, space.maxp, mc)
    deadline = t0 + budget.time_limit if budget.time_limit else _kernel.INF
    indices, obj, optimal, nodes = _kernel.exact_search(
        *args, deadline=deadline, node_limit=budget.node_limit
    )
    mode = "exact"
    if not optimal and budget.beam_width:
        beam_deadline = time.monotonic() + (budget.time_limit or 0.0)
        b_indices, b_obj, _b_opt, b_nodes = _kernel.beam_search(
            *args, beam_width=budget.beam_width, deadline=beam_deadline
        )
        nodes += b_nodes
        if (b_obj, len(b_indices), tuple(b_indices)) < (obj, len(indices), tuple(indices)):
            indices, obj = b_indices, b_obj
        mode = "beam"
    constraints = tuple(space.candidates[problem.kept[i]] for i in indices)
    return LearnResult(
        Theory(constraints, space.maxp), int(obj), bool(optimal), mode,
        int(nodes), time.monotonic() - t0, SEARCH_BACKEND,
    )


def brute_force_learn(
    space: HypothesisSpace,
    examples: Iterable[OrderingExample],
    max_constraints: int | None = None,
) -> LearnResult:
    """Exhaustive reference learner; guarded to tiny instances.

    Evaluates every subset with the plain ``objective`` (no kernel code),
    scanning sizes ascending and index tuples lexicographically so the
    first optimum found is the canonical tie-break winner.
    """
    examples = list(examples)
    n = len(space.candidates)
    if n > 20:
        raise ValueError(f"guarded to <= 20 candidates, got {n}")
    mc = space.maxp if max_constraints is None else max_constraints
    if mc > 3:
        raise ValueError(f"guarded to max_constraints <= 3, got {mc}")
    t0 = time.monotonic()
    best_obj: int | None = None
    best_theory: Theory | None = None
    count = 0
    for size in range(mc + 1):
        for combo in itertools.combinations(range(n), size):
            theory = Theory(tuple(space.candidates[i] for i in combo), space.maxp)
            count += 1
            o = objective(theory, examples)
            if best_obj is None or o < best_obj:
                best_obj = o
                best_theory = theory
    assert best_theory is not None and best_obj is not None
    return LearnResult(
        best_theory, best_obj, True, "exhaustive", count,
        time.monotonic() - t0, "reference",
    )


# --- task files ------------------------------------------------------------

def _context_sort_key(atom: Atom):
    group = 1 if atom.predicate == "value" else 0
    return (group, atom.predicate, tuple(str(a) for a in atom.args))


def _context_block(atoms: GroundAtomSet) -> str:
    rendered = [a.render(arg_sep=", ") + "." for a in sorted(atoms, key=_context_sort_key)]
    return " ".join(rendered)


def export_ilasp_task(
    bias: ModeBias,
    contexts: Mapping[str, GroundAtomSet],
    examples: Sequence[OrderingExample],
) -> str:
    """Render a task file for the external ILASP system."""
    lines = [f"#pos({name},{{}},{{}},{{{_context_block(atoms)}}})." for name, atoms in contexts.items()]
    lines += ["", "#maxv(1).", f"#maxp({bias.maxp}).", ""]
    if bias.value_features:
        lines.append("#modeo(1, value(const(val), var(val))).")
    if bias.category_constants:
        lines.append("#modeo(1, category(const(mg)), (positive)).")
    if VAR in bias.weight_forms or "-" + VAR in bias.weight_forms:
        lines.append("#weight(val).")
    if "1" in bias.weight_forms:
        lines.append("#weight(1).")
    if "-1" in bias.weight_forms:
        lines.append("#weight(-1).")
    lines += [f"#constant(val, {f})." for f in sorted(bias.value_features)]
    lines += [f"#constant(mg, {c})." for c in sorted(bias.category_constants)]
    if examples:
        lines.append("")
    for ex in examples:
        first = ex.first_name or _name_of(contexts, ex.first)
        second = ex.second_name or _name_of(contexts, ex.second)
        lines.append(f"#brave_ordering({ex.id}@{ex.penalty},{first},{second},{ex.symbol}).")
    return "\n".join(lines) + "\n"


def _name_of(contexts: Mapping[str, GroundAtomSet], atoms: GroundAtomSet) -> str:
    for name, ctx in contexts.items():
        if ctx == atoms:
            return name
    raise ValueError("ordering example references a context not in the mapping")


def save_task(
    bias: ModeBias,
    contexts: Mapping[str, GroundAtomSet],
    examples: Sequence[OrderingExample],
) -> str:
    """Serialize a learning task to the internal JSON layout."""
    payload = {
        "bias": {
            "value_features": list(bias.value_features),
            "category_constants": list(bias.category_constants),
            "weight_forms": list(bias.weight_forms),
            "maxp": bias.maxp,
            "maxv": bias.maxv,
            "allow_category_condition": bias.allow_category_condition,
            "allow_category_only": bias.allow_category_only,
        },
        "contexts": {
            name: [a.render() for a in sorted(atoms, key=_context_sort_key)]
            for name, atoms in contexts.items()
        },
        "examples": [
            {
                "id": ex.id,
                "first": ex.first_name or _name_of(contexts, ex.first),
                "second": ex.second_name or _name_of(contexts, ex.second),
                "symbol": ex.symbol,
                "penalty": ex.penalty,
            }
            for ex in examples
        ],
    }
    return json.dumps(payload, indent=2)


def load_task(text: str) -> tuple[ModeBias, dict[str, GroundAtomSet], list[OrderingExample]]:
    payload = json.loads(text)
    b = payload["bias"]
    bias = ModeBias(
        value_features=tuple(b["value_features"]),
        category_constants=tuple(b["category_constants"]),
        weight_forms=tuple(b["weight_forms"]),
        maxp=b["maxp"],
        maxv=b.get("maxv", 1),
        allow_category_condition=b.get("allow_category_condition", False),
        allow_category_only=b.get("allow_category_only", False),
    )
    contexts = {
        name: frozenset(parse_atom(a) for a in atoms)
        for name, atoms in payload["contexts"].items()
    }
    examples = []
    for e in payload["examples"]:
        examples.append(
            OrderingExample(
                id=e["id"],
                first=contexts[e["first"]],
                second=contexts[e["second"]],
                symbol=e["symbol"],
                penalty=e["penalty"],
                first_name=e["first"],
                second_name=e["second"],
            )
        )
    return bias, contexts, examples
