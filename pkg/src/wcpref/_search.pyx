# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled subset-search kernel.

Same algorithm and result contract as ``wcpref._search_py`` (the
readable reference twin); inputs are int64 arrays in the candidate-major
CSR layout documented there.  The per-context active-tuple multiset is a
linear-scan table here instead of a dict, which changes nothing
observable: theories, objectives, optimality flags, and node counts
match the twin exactly.
"""

from time import monotonic

import numpy as np

INF = float("inf")


cdef inline bint _matches(long long rel, long long outcome):
    if rel == 0:  # '='
        return outcome == 0
    if rel == 1:  # '<'
        return outcome == 1
    if rel == 2:  # '>'
        return outcome == -1
    if rel == 3:  # '<='
        return outcome != -1
    return outcome != 1  # '>='


cdef class _Engine:
    cdef Py_ssize_t n, n_contexts, n_examples, maxp, maxp1, max_constraints
    cdef Py_ssize_t act_cap, cur_size, best_size
    cdef long long cur_len, best_obj, nodes, node_limit
    cdef bint aborted
    cdef double deadline
    cdef long long[::1] cand_level, cand_length
    cdef long long[::1] entry_ptr, entry_ctx, entry_tuple, entry_weight
    cdef long long[::1] first_ctx, second_ctx, relation, penalty
    cdef long long[::1] cost, suffix
    cdef long long[::1] act_tuple, act_cnt, act_len
    cdef long long[::1] cur, best_arr

    def __init__(
        self, n, n_contexts, maxp, max_constraints,
        cand_level, cand_length, entry_ptr, entry_ctx, entry_tuple,
        entry_weight, first_ctx, second_ctx, relation, penalty,
        double deadline, long long node_limit,
    ):
        if maxp > 60:
            raise ValueError("compiled kernel supports maxp <= 60")
        self.n = n
        self.n_contexts = n_contexts
        self.maxp = maxp
        self.maxp1 = maxp + 1
        self.max_constraints = max_constraints
        self.deadline = deadline
        self.node_limit = node_limit
        self.cand_level = np.ascontiguousarray(cand_level, dtype=np.int64)
        self.cand_length = np.ascontiguousarray(cand_length, dtype=np.int64)
        self.entry_ptr = np.ascontiguousarray(entry_ptr, dtype=np.int64)
        self.entry_ctx = np.ascontiguousarray(entry_ctx, dtype=np.int64)
        self.entry_tuple = np.ascontiguousarray(entry_tuple, dtype=np.int64)
        self.entry_weight = np.ascontiguousarray(entry_weight, dtype=np.int64)
        self.first_ctx = np.ascontiguousarray(first_ctx, dtype=np.int64)
        self.second_ctx = np.ascontiguousarray(second_ctx, dtype=np.int64)
        self.relation = np.ascontiguousarray(relation, dtype=np.int64)
        self.penalty = np.ascontiguousarray(penalty, dtype=np.int64)
        self.n_examples = self.relation.shape[0]
        self.cost = np.zeros(n_contexts * self.maxp1, dtype=np.int64)

        cdef Py_ssize_t i, k, c, run, max_run = 1
        cdef long long prev
        for i in range(n):
            run = 0
            prev = -1
            for k in range(self.entry_ptr[i], self.entry_ptr[i + 1]):
                if self.entry_ctx[k] == prev:
                    run += 1
                else:
                    run = 1
                    prev = self.entry_ctx[k]
                if run > max_run:
                    max_run = run
        self.act_cap = max_run * max(max_constraints, 1)
        self.act_tuple = np.zeros(n_contexts * self.act_cap, dtype=np.int64)
        self.act_cnt = np.zeros(n_contexts * self.act_cap, dtype=np.int64)
        self.act_len = np.zeros(max(n_contexts, 1), dtype=np.int64)

        suffix = np.zeros((n + 1) * max(n_contexts, 1), dtype=np.int64)
        self.suffix = suffix
        cdef long long bit
        for i in range(n - 1, -1, -1):
            for c in range(n_contexts):
                self.suffix[i * n_contexts + c] = self.suffix[(i + 1) * n_contexts + c]
            bit = 1 << (self.cand_level[i] - 1)
            for k in range(self.entry_ptr[i], self.entry_ptr[i + 1]):
                self.suffix[i * n_contexts + self.entry_ctx[k]] |= bit

        self.cur = np.zeros(max(max_constraints, 1), dtype=np.int64)
        self.best_arr = np.zeros(max(max_constraints, 1), dtype=np.int64)
        self.cur_size = 0
        self.best_size = 0
        self.cur_len = 0
        self.nodes = 1
        self.aborted = False
        self.best_obj = self._objective()

    cdef void _add(self, Py_ssize_t i):
        cdef Py_ssize_t k, s, ln, base, found
        cdef long long c, t, lvl = self.cand_level[i]
        for k in range(self.entry_ptr[i], self.entry_ptr[i + 1]):
            c = self.entry_ctx[k]
            t = self.entry_tuple[k]
            base = c * self.act_cap
            ln = self.act_len[c]
            found = -1
            for s in range(ln):
                if self.act_tuple[base + s] == t:
                    found = s
                    break
            if found >= 0:
                self.act_cnt[base + found] += 1
            else:
                self.act_tuple[base + ln] = t
                self.act_cnt[base + ln] = 1
                self.act_len[c] = ln + 1
                self.cost[c * self.maxp1 + lvl] += self.entry_weight[k]

    cdef void _remove(self, Py_ssize_t i):
        # Assumes candidate ``i`` is currently added (adds and removes are
        # balanced by both callers), so every tuple lookup below succeeds.
        cdef Py_ssize_t k, s, ln, base, found
        cdef long long c, t, lvl = self.cand_level[i]
        for k in range(self.entry_ptr[i], self.entry_ptr[i + 1]):
            c = self.entry_ctx[k]
            t = self.entry_tuple[k]
            base = c * self.act_cap
            ln = self.act_len[c]
            found = 0
            for s in range(ln):
                if self.act_tuple[base + s] == t:
                    found = s
                    break
            self.act_cnt[base + found] -= 1
            if self.act_cnt[base + found] == 0:
                self.cost[c * self.maxp1 + lvl] -= self.entry_weight[k]
                self.act_tuple[base + found] = self.act_tuple[base + ln - 1]
                self.act_cnt[base + found] = self.act_cnt[base + ln - 1]
                self.act_len[c] = ln - 1

    cdef long long _objective(self):
        cdef long long obj = self.cur_len
        cdef Py_ssize_t e, l
        cdef long long fc, sc, d, outcome
        for e in range(self.n_examples):
            fc = self.first_ctx[e]
            sc = self.second_ctx[e]
            outcome = 0
            for l in range(self.maxp, 0, -1):
                d = self.cost[fc * self.maxp1 + l] - self.cost[sc * self.maxp1 + l]
                if d != 0:
                    outcome = 1 if d < 0 else -1
                    break
            if not _matches(self.relation[e], outcome):
                obj += self.penalty[e]
        return obj

    cdef long long _committed(self, Py_ssize_t j):
        cdef long long total = 0
        cdef Py_ssize_t e, l, base = j * self.n_contexts
        cdef long long fc, sc, mask, rel, d
        cdef bint settled
        for e in range(self.n_examples):
            fc = self.first_ctx[e]
            sc = self.second_ctx[e]
            mask = self.suffix[base + fc] | self.suffix[base + sc]
            rel = self.relation[e]
            if rel == 0:
                for l in range(self.maxp, 0, -1):
                    if (
                        self.cost[fc * self.maxp1 + l] != self.cost[sc * self.maxp1 + l]
                        and not (mask >> (l - 1)) & 1
                    ):
                        total += self.penalty[e]
                        break
                continue
            settled = False
            for l in range(self.maxp, 0, -1):
                if (mask >> (l - 1)) & 1:
                    settled = True  # changeable level: outcome unknown
                    break
                d = self.cost[fc * self.maxp1 + l] - self.cost[sc * self.maxp1 + l]
                if d != 0:
                    if not _matches(rel, 1 if d < 0 else -1):
                        total += self.penalty[e]
                    settled = True
                    break
            if not settled and not _matches(rel, 0):
                total += self.penalty[e]
        return total

    cdef bint _cur_lex_smaller(self):
        cdef Py_ssize_t k
        for k in range(self.cur_size):
            if self.cur[k] != self.best_arr[k]:
                return self.cur[k] < self.best_arr[k]
        return False

    cdef void _store_best(self, long long obj):
        cdef Py_ssize_t k
        self.best_obj = obj
        self.best_size = self.cur_size
        for k in range(self.cur_size):
            self.best_arr[k] = self.cur[k]

    cdef int _dfs(self, Py_ssize_t start) except -1:
        cdef Py_ssize_t j
        cdef long long step, o, bound
        for j in range(start, self.n):
            step = self.cand_length[j]
            if self.cur_len + step > self.best_obj:
                continue
            self.nodes += 1
            if self.node_limit and self.nodes > self.node_limit:
                self.aborted = True
                return 0
            if (self.nodes & 1023) == 0 and monotonic() > self.deadline:
                self.aborted = True
                return 0
            self._add(j)
            self.cur[self.cur_size] = j
            self.cur_size += 1
            self.cur_len += step
            o = self._objective()
            if o < self.best_obj or (
                o == self.best_obj
                and (
                    self.cur_size < self.best_size
                    or (self.cur_size == self.best_size and self._cur_lex_smaller())
                )
            ):
                self._store_best(o)
            if self.cur_size < self.max_constraints:
                bound = self.cur_len + self._committed(j + 1)
                # deeper subsets can only win an equal bound by being smaller
                if bound < self.best_obj or (
                    bound == self.best_obj and self.cur_size + 1 < self.best_size
                ):
                    self._dfs(j + 1)
            self._remove(j)
            self.cur_size -= 1
            self.cur_len -= step
            if self.aborted:
                return 0
        return 0

    def run_exact(self):
        self._dfs(0)
        return (
            [self.best_arr[k] for k in range(self.best_size)],
            self.best_obj,
            not self.aborted,
            self.nodes,
        )

    # helpers reused by the beam driver
    def add(self, Py_ssize_t i):
        self._add(i)

    def remove(self, Py_ssize_t i):
        self._remove(i)

    def objective_at(self, long long cur_len):
        cdef long long saved = self.cur_len
        self.cur_len = cur_len
        cdef long long o = self._objective()
        self.cur_len = saved
        return o


def exact_search(
    n, n_contexts, maxp, max_constraints,
    cand_level, cand_length, entry_ptr, entry_ctx, entry_tuple, entry_weight,
    first_ctx, second_ctx, relation, penalty,
    double deadline=INF, long long node_limit=0,
):
    """See ``wcpref._search_py.exact_search``."""
    eng = _Engine(
        n, n_contexts, maxp, max_constraints,
        cand_level, cand_length, entry_ptr, entry_ctx, entry_tuple,
        entry_weight, first_ctx, second_ctx, relation, penalty,
        deadline, node_limit,
    )
    return eng.run_exact()


def beam_search(
    n, n_contexts, maxp, max_constraints,
    cand_level, cand_length, entry_ptr, entry_ctx, entry_tuple, entry_weight,
    first_ctx, second_ctx, relation, penalty,
    beam_width, double deadline=INF,
):
    """See ``wcpref._search_py.beam_search``."""
    eng = _Engine(
        n, n_contexts, maxp, max_constraints,
        cand_level, cand_length, entry_ptr, entry_ctx, entry_tuple,
        entry_weight, first_ctx, second_ctx, relation, penalty,
        deadline, 0,
    )
    best_obj = eng.objective_at(0)
    best_set = ()
    nodes = 1
    aborted = False
    beam = [((), 0)]
    lengths = np.ascontiguousarray(cand_length, dtype=np.int64)
    for _depth in range(max_constraints):
        scored = []
        for tup, tlen in beam:
            for i in tup:
                eng.add(i)
            # no negative indexing here: wraparound is disabled file-wide
            start = tup[len(tup) - 1] + 1 if tup else 0
            for j in range(start, n):
                nodes += 1
                if (nodes & 255) == 0 and monotonic() > deadline:
                    aborted = True
                    break
                eng.add(j)
                new_len = tlen + int(lengths[j])
                scored.append((eng.objective_at(new_len), tup + (j,), new_len))
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
