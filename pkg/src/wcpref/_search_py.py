"""Pure-Python twin of the compiled subset-search kernel.

``wcpref.learner`` selects this module when the compiled extension is
unavailable (or when ``WCPREF_PURE_PYTHON`` is set).  Both kernels must
return identical results on identical inputs; the kernel tests and
``benchmarks/bench_search.py`` hold them to that.

Problem encoding
----------------
A candidate constraint ``i`` contributes, per context ``c``, a set of
``(tuple id, weight)`` entries at level ``cand_level[i]``; entries are
stored in a candidate-major CSR layout (``entry_ptr``, ``entry_ctx``,
``entry_tuple``, ``entry_weight``).  Tuple ids are namespaced per
context: two entries with the same id in the same context denote the
same contribution tuple and must be counted once, mirroring the
evaluation semantics of weak constraints.

Each ordering example ``e`` references two contexts and a relation code
(``0 '=', 1 '<', 2 '>', 3 '<=', 4 '>='``) plus a penalty.  The objective
of a subset is its total body length plus the penalties of examples
whose relation does not hold under the induced per-level cost
comparison (highest level first, lower cost preferred).
"""

from __future__ import annotations

import time

INF = float("inf")

REL_EQ = 0
REL_LT = 1
REL_GT = 2
REL_LE = 3
REL_GE = 4


def _matches(rel: int, outcome: int) -> bool:
    if rel == REL_EQ:
        return outcome == 0
    if rel == REL_LT:
        return outcome == 1
    if rel == REL_GT:
        return outcome == -1
    if rel == REL_LE:
        return outcome != -1
    return outcome != 1


class _Engine:
    """Incremental cost bookkeeping for one search problem."""

    def __init__(
        self,
        n: int,
        n_contexts: int,
        maxp: int,
        cand_level,
        cand_length,
        entry_ptr,
        entry_ctx,
        entry_tuple,
        entry_weight,
        first_ctx,
        second_ctx,
        relation,
        penalty,
    ) -> None:
        self.n = n
        self.maxp = maxp
        self.cand_level = cand_level
        self.cand_length = cand_length
        self.entry_ptr = entry_ptr
        self.entry_ctx = entry_ctx
        self.entry_tuple = entry_tuple
        self.entry_weight = entry_weight
        self.first_ctx = first_ctx
        self.second_ctx = second_ctx
        self.relation = relation
        self.penalty = penalty
        self.n_examples = len(relation)
        # cost[c][l] indexed 1..maxp; slot 0 unused
        self.cost = [[0] * (maxp + 1) for _ in range(n_contexts)]
        # per-context multiset of active contribution tuples
        self.active: list[dict[int, int]] = [{} for _ in range(n_contexts)]
        # suffix[i][c]: bitmask of levels candidates >= i can still touch in c
        suffix = [[0] * n_contexts]
        for i in range(n - 1, -1, -1):
            row = list(suffix[-1])
            bit = 1 << (cand_level[i] - 1)
            for k in range(entry_ptr[i], entry_ptr[i + 1]):
                row[entry_ctx[k]] |= bit
            suffix.append(row)
        suffix.reverse()
        self.suffix = suffix

    def add(self, i: int) -> None:
        lvl = self.cand_level[i]
        for k in range(self.entry_ptr[i], self.entry_ptr[i + 1]):
            c = self.entry_ctx[k]
            t = self.entry_tuple[k]
            act = self.active[c]
            cnt = act.get(t, 0)
            if cnt == 0:
                self.cost[c][lvl] += self.entry_weight[k]
            act[t] = cnt + 1

    def remove(self, i: int) -> None:
        lvl = self.cand_level[i]
        for k in range(self.entry_ptr[i], self.entry_ptr[i + 1]):
            c = self.entry_ctx[k]
            t = self.entry_tuple[k]
            act = self.active[c]
            cnt = act[t] - 1
            if cnt == 0:
                del act[t]
                self.cost[c][lvl] -= self.entry_weight[k]
            else:
                act[t] = cnt

    def outcome(self, e: int) -> int:
        cf = self.cost[self.first_ctx[e]]
        cs = self.cost[self.second_ctx[e]]
        for l in range(self.maxp, 0, -1):
            d = cf[l] - cs[l]
            if d:
                return 1 if d < 0 else -1
        return 0

    def objective(self, cur_len: int) -> int:
        obj = cur_len
        for e in range(self.n_examples):
            if not _matches(self.relation[e], self.outcome(e)):
                obj += self.penalty[e]
        return obj

    def committed_penalties(self, j: int) -> int:
        """Penalties no extension by candidates >= j can avoid."""
        total = 0
        suffix = self.suffix[j]
        for e in range(self.n_examples):
            fc = self.first_ctx[e]
            sc = self.second_ctx[e]
            mask = suffix[fc] | suffix[sc]
            rel = self.relation[e]
            cf = self.cost[fc]
            cs = self.cost[sc]
            if rel == REL_EQ:
                # a frozen unequal level rules the tie out for good
                for l in range(self.maxp, 0, -1):
                    if cf[l] != cs[l] and not (mask >> (l - 1)) & 1:
                        total += self.penalty[e]
                        break
                continue
            for l in range(self.maxp, 0, -1):
                if (mask >> (l - 1)) & 1:
                    break  # level still changeable: outcome unknown
                d = cf[l] - cs[l]
                if d:
                    if not _matches(rel, 1 if d < 0 else -1):
                        total += self.penalty[e]
                    break
            else:
                if not _matches(rel, 0):
                    total += self.penalty[e]
        return total


def exact_search(
    n: int,
    n_contexts: int,
    maxp: int,
    max_constraints: int,
    cand_level,
    cand_length,
    entry_ptr,
    entry_ctx,
    entry_tuple,
    entry_weight,
    first_ctx,
    second_ctx,
    relation,
    penalty,
    deadline: float = INF,
    node_limit: int = 0,
):
    """Depth-first branch and bound over index-increasing subsets.

    Returns ``(indices, objective, optimal, nodes)``.  Ties are broken
    by fewer constraints, then lexicographically smaller index tuple;
    the search enumerates subsets in exactly that order, so the first
    optimum found is the canonical one.
    """
    eng = _Engine(
        n, n_contexts, maxp, cand_level, cand_length,
        entry_ptr, entry_ctx, entry_tuple, entry_weight,
        first_ctx, second_ctx, relation, penalty,
    )
    best_obj = eng.objective(0)
    best_set: tuple[int, ...] = ()
    nodes = 1
    aborted = False
    cur: list[int] = []
    cur_len = 0

    def dfs(start: int) -> None:
        nonlocal best_obj, best_set, nodes, aborted, cur_len
        for j in range(start, n):
            step = cand_length[j]
            if cur_len + step > best_obj:
                continue
            nodes += 1
            if node_limit and nodes > node_limit:
                aborted = True
                return
            if (nodes & 1023) == 0 and time.monotonic() > deadline:
                aborted = True
                return
            eng.add(j)
            cur.append(j)
            cur_len += step
            o = eng.objective(cur_len)
            size = len(cur)
            if o < best_obj or (
                o == best_obj
                and (
                    size < len(best_set)
                    or (size == len(best_set) and tuple(cur) < best_set)
                )
            ):
                best_obj = o
                best_set = tuple(cur)
            if size < max_constraints:
                bound = cur_len + eng.committed_penalties(j + 1)
                # deeper subsets have size >= size+1; on an equal bound they
                # can only win the tie-break by being strictly smaller
                if bound < best_obj or (bound == best_obj and size + 1 < len(best_set)):
                    dfs(j + 1)
            eng.remove(j)
            cur.pop()
            cur_len -= step
            if aborted:
                return

    dfs(0)
    return list(best_set), best_obj, not aborted, nodes


def beam_search(
    n: int,
    n_contexts: int,
    maxp: int,
    max_constraints: int,
    cand_level,
    cand_length,
    entry_ptr,
    entry_ctx,
    entry_tuple,
    entry_weight,
    first_ctx,
    second_ctx,
    relation,
    penalty,
    beam_width: int,
    deadline: float = INF,
):
    """Greedy beam over the same subset lattice; no optimality certificate.

    Returns ``(indices, objective, False, nodes)``.
    """
    eng = _Engine(
        n, n_contexts, maxp, cand_level, cand_length,
        entry_ptr, entry_ctx, entry_tuple, entry_weight,
        first_ctx, second_ctx, relation, penalty,
    )
    best_obj = eng.objective(0)
    best_set: tuple[int, ...] = ()
    nodes = 1
    aborted = False
    beam: list[tuple[tuple[int, ...], int]] = [((), 0)]
    for _depth in range(max_constraints):
        scored: list[tuple[int, tuple[int, ...], int]] = []
        for tup, tlen in beam:
            for i in tup:
                eng.add(i)
            start = tup[-1] + 1 if tup else 0
            for j in range(start, n):
                nodes += 1
                if (nodes & 255) == 0 and time.monotonic() > deadline:
                    aborted = True
                    break
                eng.add(j)
                new_len = tlen + cand_length[j]
                scored.append((eng.objective(new_len), tup + (j,), new_len))
                eng.remove(j)
            for i in tup:
                eng.remove(i)
            if aborted:
                break
        for o, tup, _len in scored:
            if o < best_obj or (
                o == best_obj
                and (
                    len(tup) < len(best_set)
                    or (len(tup) == len(best_set) and tup < best_set)
                )
            ):
                best_obj = o
                best_set = tup
        if aborted or not scored:
            break
        scored.sort(key=lambda s: (s[0], s[1]))
        beam = [(tup, tlen) for _o, tup, tlen in scored[:beam_width]]
    return list(best_set), best_obj, False, nodes
