"""Benchmark the compiled search kernel against its pure-Python twin.

Both kernels implement the same branch-and-bound over canonical index
order and must return identical (objective, indices, nodes); this script
times them on seeded instances of growing size and reports the speedup.

Run from the repository root:

    python3 benchmarks/bench_search.py [--repeat N] [--quick]
"""

from __future__ import annotations

import argparse
import random
import time

from wcpref import _search_py
from wcpref.asp import Atom
from wcpref.learner import (
    ModeBias,
    OrderingExample,
    _kernel_args,
    _setup_problem,
    expand_mode_bias,
)

try:
    from wcpref import _search

    HAVE_COMPILED = True
except ImportError:  # pragma: no cover - depends on the build
    _search = None
    HAVE_COMPILED = False


def build_instance(n_features: int, maxp: int, n_items: int, n_examples: int, seed: int):
    rng = random.Random(seed)
    features = tuple(f"f{i:02d}" for i in range(n_features))
    bias = ModeBias(value_features=features, maxp=maxp)
    space = expand_mode_bias(bias)
    contexts = [
        frozenset(Atom("value", (f, rng.randint(0, 9))) for f in features)
        for _ in range(n_items)
    ]
    examples = []
    for n in range(n_examples):
        i = rng.randrange(n_items)
        j = (i + rng.randrange(1, n_items)) % n_items
        examples.append(
            OrderingExample(
                id=f"o{n}",
                first=contexts[i],
                second=contexts[j],
                symbol=rng.choice(["<", ">", "="]),
                penalty=rng.randint(1, 3),
            )
        )
    return space, examples


def args_for(backend: str, problem, maxp: int, max_constraints: int):
    args = (
        problem.n, problem.n_contexts, maxp, max_constraints,
        problem.cand_level, problem.cand_length,
        problem.entry_ptr, problem.entry_ctx, problem.entry_tuple,
        problem.entry_weight, problem.first_ctx, problem.second_ctx,
        problem.relation, problem.penalty,
    )
    if backend == "compiled":
        import numpy as np

        args = args[:4] + tuple(np.asarray(a, dtype=np.int64) for a in args[4:])
    return args


def time_kernel(kernel, args, repeat: int):
    best = float("inf")
    result = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = kernel.exact_search(*args)
        best = min(best, time.perf_counter() - t0)
    return result, best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=3, help="timing repetitions (best of)")
    parser.add_argument("--quick", action="store_true", help="skip the largest instance")
    opts = parser.parse_args()

    cases = [
        ("small", dict(n_features=3, maxp=2, n_items=6, n_examples=15), 2),
        ("medium", dict(n_features=6, maxp=3, n_items=10, n_examples=30), 2),
        ("large", dict(n_features=10, maxp=4, n_items=12, n_examples=45), 2),
    ]
    if not opts.quick:
        cases.append(
            ("wide", dict(n_features=14, maxp=5, n_items=12, n_examples=45), 2)
        )

    if not HAVE_COMPILED:
        print("compiled kernel unavailable; timing the pure-Python kernel only\n")

    header = f"{'case':<8} {'cands':>5} {'nodes':>9} {'python':>10} {'compiled':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, shape, max_constraints in cases:
        space, examples = build_instance(seed=1, **shape)
        problem = _setup_problem(space, examples)
        py_args = args_for("python", problem, space.maxp, max_constraints)
        py_result, py_time = time_kernel(_search_py, py_args, opts.repeat)
        if HAVE_COMPILED:
            c_args = args_for("compiled", problem, space.maxp, max_constraints)
            c_result, c_time = time_kernel(_search, c_args, opts.repeat)
            assert tuple(c_result[0]) == tuple(py_result[0]), "kernels disagree on indices"
            assert c_result[1] == py_result[1], "kernels disagree on objective"
            assert c_result[3] == py_result[3], "kernels disagree on node count"
            speed = f"{py_time / c_time:7.1f}x"
            compiled_cell = f"{c_time * 1e3:9.1f}ms"
        else:
            speed = "-"
            compiled_cell = "-"
        print(
            f"{name:<8} {len(space.candidates):>5} {py_result[3]:>9} "
            f"{py_time * 1e3:9.1f}ms {compiled_cell:>10} {speed:>8}"
        )


if __name__ == "__main__":
    main()
