"""Compiled vs pure-Python kernels.

Times each kernel on synthetic inputs with both implementations, then measures
end-to-end subgraph extraction plus path enumeration throughput in a child
process per backend (the backend is fixed at import time).

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from rpcir import _kernels_py

try:
    from rpcir import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def _csr(n, m, num_rel, rng):
    src = rng.integers(n, size=m)
    order = np.argsort(src, kind="stable")
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=ptr[1:])
    return ptr, rng.integers(n, size=m)[order].astype(np.int64), rng.integers(num_rel, size=m)[order].astype(np.int64)


def kernel_cases(rng):
    idx = rng.integers(500, size=20000).astype(np.int64)
    vals = rng.normal(size=(20000, 32))
    ptr, dst, rel = _csr(3000, 12000, 18, rng)
    sptr, sdst, srel = _csr(40, 160, 18, rng)
    return {
        "scatter_add_rows 20000x32": lambda k: k.scatter_add_rows(idx, vals, 500),
        "bfs_distances n=3000 m=12000": lambda k: k.bfs_distances(ptr, dst, 0, 3),
        "relation_walks n=40 m=160 L=3": lambda k: k.relation_walks(sptr, srel, sdst, 0, 1, 3),
    }


def best_of(fn, repeat):
    t = timeit.Timer(fn)
    number, _ = t.autorange()
    return min(t.repeat(repeat, number)) / number


def extraction_throughput(limit: int) -> dict:
    """Runs in the child process: subgraphs per second on the synthetic train graph."""
    import time

    from rpcir.kernels import BACKEND
    from rpcir.kg import with_inverse
    from rpcir.paths import enumerate_paths
    from rpcir.subgraph import extract_enclosing_subgraph
    from rpcir.synthetic import planted_rule_split

    split, _ = planted_rule_split(0)
    g = with_inverse(split.train_graph)
    targets = split.train_targets[:limit]
    start = time.perf_counter()
    for t in targets:
        enumerate_paths(extract_enclosing_subgraph(g, t, 3), 3)
    elapsed = time.perf_counter() - start
    return {"backend": BACKEND, "subgraphs": len(targets), "per_second": len(targets) / elapsed}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--limit", type=int, default=300, help="targets for the extraction benchmark")
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(extraction_throughput(args.limit)))
        return

    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'python':>12s} {'cython':>12s} {'speedup':>8s}")
    for name, fn in kernel_cases(rng).items():
        tp = best_of(lambda: fn(_kernels_py), args.repeat)
        tc = best_of(lambda: fn(_kernels_c), args.repeat) if _kernels_c else float("nan")
        print(f"{name:34s} {tp * 1e3:10.3f}ms {tc * 1e3:10.3f}ms {tp / tc:7.1f}x")

    rates = {}
    for flag in ("1", "0"):
        env = dict(os.environ, RPCIR_PURE_PYTHON=flag)
        out = subprocess.run([sys.executable, __file__, "--child", "--limit", str(args.limit)],
                             env=env, capture_output=True, text=True, check=True)
        res = json.loads(out.stdout)
        rates[res["backend"]] = res["per_second"]
    for backend, rate in rates.items():
        print(f"extraction + paths ({backend}): {rate:8.1f} subgraphs/s")


if __name__ == "__main__":
    main()
