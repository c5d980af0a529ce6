"""Ground atoms, weak constraints, and lexicographic cost semantics.

A weak constraint ``:~ b1, ..., bn.[w@l, t1, ..., tm]`` contributes the
weight ``w`` at priority level ``l`` whenever its body holds.  Costs are
compared per level, from the highest level down, and lower cost is
preferred.  Contributions with an identical ``(weight, level, terms)``
tuple are counted once per evaluation, so two constraints (or two
bindings of one constraint) that instantiate to the same tuple do not
double-count.

The only variable supported is ``V1``; bodies are conjunctions of
positive atoms evaluated against a set of ground facts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, Union

Term = Union[int, str]

VAR = "V1"

#: Weight forms a constraint may carry, in canonical order.
WEIGHT_FORMS = ("1", "-1", "V1", "-V1")

#: Pairwise labels: 1 means the first item is preferred (Eq. convention).
LABEL_FIRST = 1
LABEL_TIE = 0
LABEL_SECOND = -1


class AspError(Exception):
    """Base class for constraint-handling failures."""


class AspSyntaxError(AspError):
    def __init__(self, message: str, line: int, column: int) -> None:
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class CostError(AspError):
    """Raised when a cost cannot be computed (e.g. symbolic V1 weight)."""


def _is_variable(name: object) -> bool:
    return isinstance(name, str) and name[:1].isupper()


@dataclass(frozen=True)
class Atom:
    """A (possibly non-ground) atom such as ``value(cost, V1)``."""

    predicate: str
    args: tuple[Term, ...] = ()

    def __post_init__(self) -> None:
        if not self.predicate or _is_variable(self.predicate):
            raise ValueError(f"bad predicate name: {self.predicate!r}")
        for a in self.args:
            if _is_variable(a) and a != VAR:
                raise ValueError(f"unsupported variable {a!r}; only {VAR} is allowed")

    @property
    def is_ground(self) -> bool:
        return VAR not in self.args

    def substitute(self, value: Term) -> "Atom":
        return Atom(self.predicate, tuple(value if a == VAR else a for a in self.args))

    def render(self, arg_sep: str = ",") -> str:
        if not self.args:
            return self.predicate
        return f"{self.predicate}({arg_sep.join(str(a) for a in self.args)})"

    def __str__(self) -> str:
        return self.render()


GroundAtomSet = frozenset[Atom]


def _weight_sign(form: str) -> int:
    return -1 if form.startswith("-") else 1


def _weight_uses_var(form: str) -> bool:
    return form.endswith(VAR)


@dataclass(frozen=True)
class WeakConstraint:
    """``:~ body.[weight@level, terms]`` with weight one of ``WEIGHT_FORMS``."""

    body: tuple[Atom, ...]
    weight: str
    level: int
    terms: tuple[Term, ...] = ()

    def __post_init__(self) -> None:
        if not self.body:
            raise ValueError("weak constraint needs a non-empty body")
        if self.weight not in WEIGHT_FORMS:
            raise ValueError(
                f"weight must be one of {', '.join(WEIGHT_FORMS)}, got {self.weight!r}"
            )
        if self.level < 1:
            raise ValueError(f"priority level must be >= 1, got {self.level}")
        body_has_var = any(not a.is_ground for a in self.body)
        if _weight_uses_var(self.weight) and not body_has_var:
            raise ValueError(f"weight {self.weight} requires {VAR} in the body")
        if body_has_var and VAR not in self.terms:
            raise ValueError("terms must include every variable occurring in the body")
        for t in self.terms:
            if _is_variable(t) and t != VAR:
                raise ValueError(f"unsupported variable {t!r} in terms")

    @property
    def body_length(self) -> int:
        return len(self.body)

    def render(self) -> str:
        body = ", ".join(a.render() for a in self.body)
        head = f"{self.weight}@{self.level}"
        if self.terms:
            tail = ", " + ", ".join(str(t) for t in self.terms)
        else:
            tail = ""
        return f":~ {body}.[{head}{tail}]"

    def __str__(self) -> str:
        return self.render()


@dataclass(frozen=True)
class Theory:
    """An ordered, duplicate-free collection of weak constraints."""

    constraints: tuple[WeakConstraint, ...]
    maxp: int

    def __post_init__(self) -> None:
        if self.maxp < 1:
            raise ValueError(f"maxp must be >= 1, got {self.maxp}")
        seen = set()
        for wc in self.constraints:
            if wc in seen:
                raise ValueError(f"duplicate constraint: {wc}")
            seen.add(wc)
            if wc.level > self.maxp:
                raise ValueError(f"constraint level {wc.level} exceeds maxp {self.maxp}")

    @classmethod
    def of(cls, constraints: Iterable[WeakConstraint], maxp: int | None = None) -> "Theory":
        cs = tuple(constraints)
        if maxp is None:
            maxp = max((wc.level for wc in cs), default=1)
        return cls(cs, maxp)

    @property
    def is_empty(self) -> bool:
        return not self.constraints

    def total_body_length(self) -> int:
        return sum(wc.body_length for wc in self.constraints)

    def render(self) -> str:
        return "\n".join(wc.render() for wc in self.constraints)


@dataclass(frozen=True)
class CostVector:
    """Per-level cost; ``levels[0]`` is level 1.  Lower is preferred."""

    levels: tuple[int, ...]

    def cost_at(self, level: int) -> int:
        return self.levels[level - 1]

    @property
    def maxp(self) -> int:
        return len(self.levels)

    def display(self) -> str:
        parts = [f"{c}@{l}" for l, c in reversed(list(enumerate(self.levels, start=1)))]
        return "[" + ", ".join(parts) + "]"


def _candidate_values(pattern: Atom, atoms: GroundAtomSet) -> list[Term]:
    values = set()
    for ga in atoms:
        if ga.predicate != pattern.predicate or len(ga.args) != len(pattern.args):
            continue
        bound: Term | None = None
        ok = True
        for pa, aa in zip(pattern.args, ga.args):
            if pa == VAR:
                bound = aa
            elif pa != aa:
                ok = False
                break
        if ok and bound is not None:
            values.add(bound)
    return sorted(values, key=lambda v: (isinstance(v, str), v))


def _bindings(body: tuple[Atom, ...], atoms: GroundAtomSet) -> Iterator[Term | None]:
    """Yield each value of V1 that makes the whole body hold.

    Yields ``None`` once for a ground body that holds.
    """
    ground = [a for a in body if a.is_ground]
    if any(a not in atoms for a in ground):
        return
    var_atoms = [a for a in body if not a.is_ground]
    if not var_atoms:
        yield None
        return
    for value in _candidate_values(var_atoms[0], atoms):
        if all(a.substitute(value) in atoms for a in var_atoms[1:]):
            yield value


def iter_contributions(
    wc: WeakConstraint, atoms: GroundAtomSet
) -> Iterator[tuple[int, int, tuple[Term, ...]]]:
    """Yield one ``(weight value, level, instantiated terms)`` per binding."""
    sign = _weight_sign(wc.weight)
    uses_var = _weight_uses_var(wc.weight)
    for binding in _bindings(wc.body, atoms):
        if uses_var:
            if not isinstance(binding, int):
                raise CostError(
                    f"weight {wc.weight} bound to non-integer {binding!r} in {wc}"
                )
            w = sign * binding
        else:
            w = sign
        terms = tuple(binding if t == VAR else t for t in wc.terms)
        yield (w, wc.level, terms)


def evaluate_cost(atoms: GroundAtomSet, theory: Theory) -> CostVector:
    """Cost of one answer set: per-level sums over distinct contributions."""
    contributions: set[tuple[int, int, tuple[Term, ...]]] = set()
    for wc in theory.constraints:
        contributions.update(iter_contributions(wc, atoms))
    levels = [0] * theory.maxp
    for w, level, _terms in contributions:
        levels[level - 1] += w
    return CostVector(tuple(levels))


def compare(a: CostVector, b: CostVector) -> int:
    """Lexicographic comparison from the highest level down.

    Returns ``LABEL_FIRST`` (1) if ``a`` is preferred, ``LABEL_SECOND``
    (-1) if ``b`` is preferred, ``LABEL_TIE`` (0) on equal costs.
    """
    if a.maxp != b.maxp:
        raise ValueError(f"cost vectors disagree on maxp: {a.maxp} vs {b.maxp}")
    for level in range(a.maxp, 0, -1):
        ca, cb = a.cost_at(level), b.cost_at(level)
        if ca != cb:
            return LABEL_FIRST if ca < cb else LABEL_SECOND
    return LABEL_TIE


def classify_pair(theory: Theory, first: GroundAtomSet, second: GroundAtomSet) -> int:
    """Ternary label for an ordered pair under a theory (1 = first wins)."""
    return compare(evaluate_cost(first, theory), evaluate_cost(second, theory))


def rank_items(theory: Theory, contexts: Sequence[GroundAtomSet]) -> list[list[int]]:
    """Indices grouped by equal cost, most preferred group first."""
    keyed = []
    for i, ctx in enumerate(contexts):
        cost = evaluate_cost(ctx, theory)
        keyed.append((tuple(reversed(cost.levels)), i))
    keyed.sort(key=lambda kv: kv[0])
    groups: list[list[int]] = []
    last_key = None
    for key, i in keyed:
        if key != last_key:
            groups.append([])
            last_key = key
        groups[-1].append(i)
    return groups


# --- text format -----------------------------------------------------------

def _tokenize(line: str, lineno: int) -> list[tuple[str, str, int]]:
    """Split a constraint line into (kind, text, column) tokens."""
    tokens = []
    i = 0
    n = len(line)
    while i < n:
        ch = line[i]
        if ch.isspace():
            i += 1
            continue
        if line.startswith(":~", i):
            tokens.append(("HEAD", ":~", i))
            i += 2
        elif ch in "().,[]@":
            tokens.append((ch, ch, i))
            i += 1
        elif ch == "-" or ch.isdigit():
            j = i + 1 if ch == "-" else i
            while j < n and line[j].isdigit():
                j += 1
            if j == i + 1 and ch == "-":
                # negated name, e.g. the -V1 weight form
                while j < n and (line[j].isalnum() or line[j] == "_"):
                    j += 1
                if j == i + 1:
                    raise AspSyntaxError("dangling '-'", lineno, i)
                tokens.append(("NEGNAME", line[i:j], i))
            else:
                tokens.append(("INT", line[i:j], i))
            i = j
        elif ch.isalpha() or ch == "_":
            j = i
            while j < n and (line[j].isalnum() or line[j] == "_"):
                j += 1
            tokens.append(("NAME", line[i:j], i))
            i = j
        else:
            raise AspSyntaxError(f"unexpected character {ch!r}", lineno, i)
    return tokens


class _LineParser:
    def __init__(self, line: str, lineno: int) -> None:
        self.tokens = _tokenize(line, lineno)
        self.lineno = lineno
        self.pos = 0

    def peek(self) -> tuple[str, str, int] | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self, expected: str | None = None) -> tuple[str, str, int]:
        tok = self.peek()
        if tok is None:
            col = self.tokens[-1][2] + len(self.tokens[-1][1]) if self.tokens else 0
            raise AspSyntaxError("unexpected end of line", self.lineno, col)
        if expected is not None and tok[0] != expected:
            raise AspSyntaxError(
                f"expected {expected!r}, found {tok[1]!r}", self.lineno, tok[2]
            )
        self.pos += 1
        return tok

    def error(self, message: str) -> AspSyntaxError:
        tok = self.peek()
        col = tok[2] if tok else 0
        return AspSyntaxError(message, self.lineno, col)

    def parse_term(self) -> Term:
        kind, text, _col = self.next()
        if kind == "INT":
            return int(text)
        if kind == "NAME":
            if _is_variable(text) and text != VAR:
                raise self.error(f"only variable {VAR} is supported")
            return text
        raise AspSyntaxError(f"expected a term, found {text!r}", self.lineno, _col)

    def parse_atom(self) -> Atom:
        kind, name, col = self.next()
        if kind != "NAME" or _is_variable(name):
            raise AspSyntaxError(f"expected a predicate, found {name!r}", self.lineno, col)
        args: list[Term] = []
        if self.peek() and self.peek()[0] == "(":
            self.next("(")
            args.append(self.parse_term())
            while self.peek() and self.peek()[0] == ",":
                self.next(",")
                args.append(self.parse_term())
            self.next(")")
        return Atom(name, tuple(args))

    def parse_constraint(self) -> WeakConstraint:
        self.next("HEAD")
        body = [self.parse_atom()]
        while self.peek() and self.peek()[0] == ",":
            self.next(",")
            body.append(self.parse_atom())
        self.next(".")
        self.next("[")
        kind, text, col = self.next()
        if kind in ("INT", "NEGNAME") or (kind == "NAME" and text == VAR):
            weight = text
        else:
            raise AspSyntaxError(f"bad weight {text!r}", self.lineno, col)
        if weight not in WEIGHT_FORMS:
            raise AspSyntaxError(
                f"weight must be one of {', '.join(WEIGHT_FORMS)}", self.lineno, col
            )
        self.next("@")
        kind, text, col = self.next()
        if kind != "INT" or int(text) < 1:
            raise AspSyntaxError("priority level must be a positive integer", self.lineno, col)
        level = int(text)
        terms: list[Term] = []
        while self.peek() and self.peek()[0] == ",":
            self.next(",")
            terms.append(self.parse_term())
        self.next("]")
        if self.peek() is not None:
            raise self.error("trailing input after constraint")
        try:
            return WeakConstraint(tuple(body), weight, level, tuple(terms))
        except ValueError as exc:
            raise AspSyntaxError(str(exc), self.lineno, 0) from exc


def parse_constraint(text: str, lineno: int = 1) -> WeakConstraint:
    # "-1" weights tokenize as a single INT, so no special casing here
    return _LineParser(text, lineno).parse_constraint()


def parse_atom(text: str, lineno: int = 1) -> Atom:
    parser = _LineParser(text, lineno)
    atom = parser.parse_atom()
    if parser.peek() is not None:
        raise parser.error("trailing input after atom")
    return atom


def parse_theory(text: str, maxp: int | None = None) -> Theory:
    """Parse one constraint per line; blank lines and ``#`` comments allowed."""
    constraints = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith("%"):
            continue
        constraints.append(parse_constraint(line, lineno))
    return Theory.of(constraints, maxp)


def render_theory(theory: Theory) -> str:
    return theory.render()


# --- natural-language gloss ------------------------------------------------

def _describe_condition(atoms: Sequence[Atom]) -> str:
    parts = []
    for a in atoms:
        if a.predicate == "value" and len(a.args) == 2 and a.args[1] == VAR:
            parts.append(f"any amount of {a.args[0]}")
        elif len(a.args) == 1:
            parts.append(f"{a.predicate} {a.args[0]}")
        else:
            parts.append(str(a))
    return " and ".join(parts)


def describe_constraint(wc: WeakConstraint) -> str:
    """One-sentence reading of a constraint; template fixed per weight form."""
    var_features = [
        a.args[0]
        for a in wc.body
        if a.predicate == "value" and len(a.args) == 2 and a.args[1] == VAR
    ]
    rest = [a for a in wc.body if not (a.predicate == "value" and VAR in a.args)]
    cond = _describe_condition(rest)
    suffix = f" when {cond}" if cond else ""
    if wc.weight == VAR and var_features:
        return f"Lower {var_features[0]} is better{suffix} (priority {wc.level})."
    if wc.weight == "-" + VAR and var_features:
        return f"Higher {var_features[0]} is better{suffix} (priority {wc.level})."
    subject = _describe_condition(wc.body)
    if wc.weight == "1":
        return f"Having {subject} is penalized (priority {wc.level})."
    return f"Having {subject} is rewarded (priority {wc.level})."


def describe_theory(theory: Theory) -> str:
    return "\n".join(describe_constraint(wc) for wc in theory.constraints)
