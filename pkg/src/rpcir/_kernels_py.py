"""Pure-Python reference versions of the compiled kernels in ``_kernels.pyx``.

Both modules expose the same three functions with identical semantics; the
selection happens in :mod:`rpcir.kernels`.
"""
from collections import deque

import numpy as np


def scatter_add_rows(index, values, num_rows):
    """Sum rows of ``values`` into ``num_rows`` buckets given by ``index``."""
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros((num_rows,) + values.shape[1:], dtype=np.float64)
    np.add.at(out, np.asarray(index, dtype=np.int64), values)
    return out


def bfs_distances(indptr, indices, source, max_depth):
    """Hop distances from ``source`` over a CSR adjacency, -1 beyond ``max_depth``."""
    n = len(indptr) - 1
    dist = np.full(n, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        d = dist[u]
        if d >= max_depth:
            continue
        for k in range(indptr[u], indptr[u + 1]):
            v = indices[k]
            if dist[v] < 0:
                dist[v] = d + 1
                queue.append(v)
    return dist


def relation_walks(indptr, rel, dst, head, tail, max_len):
    """Distinct relation sequences of directed walks head -> tail of length <= max_len.

    Walks are expanded level by level; states that agree on (node, sequence)
    are merged since they extend identically.
    """
    found = set()
    frontier = {(head, ())}
    for _ in range(max_len):
        nxt = set()
        for node, seq in frontier:
            for k in range(indptr[node], indptr[node + 1]):
                v = int(dst[k])
                s = seq + (int(rel[k]),)
                nxt.add((v, s))
                if v == tail:
                    found.add(s)
        frontier = nxt
    return sorted(found, key=lambda s: (len(s), s))
