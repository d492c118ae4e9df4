"""Relational path enumeration, negative path construction and path statistics."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .kernels import relation_walks
from .subgraph import EnclosingSubgraph, extract_enclosing_subgraph

Path = tuple[int, ...]


class CorruptionExhausted(RuntimeError):
    pass


@dataclass
class PathSet:
    positives: list[Path]
    negatives: list[Path]


def enumerate_paths(sub: EnclosingSubgraph, max_len: int = 3) -> list[Path]:
    """Distinct relation sequences of directed walks head -> tail, length <= max_len.

    Sorted by length, then lexicographically by relation id.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if sub.num_edges == 0:
        return []
    ptr, rel, dst = sub.out_csr()
    hl, _, tl = sub.target
    return relation_walks(ptr, rel, dst, hl, tl, max_len)


def generate_negative_paths(
    positives: list[Path], relation_count: int, rng: np.random.Generator, max_attempts: int = 100
) -> list[Path]:
    """One corruption per positive: a single relation swapped for a different one.

    Candidates that coincide with any positive are rejected and redrawn.
    """
    if relation_count < 2:
        raise ValueError("need at least two relations to corrupt a path")
    pos = set(positives)
    out = []
    for p in positives:
        for _ in range(max_attempts):
            i = int(rng.integers(len(p)))
            r = int(rng.integers(relation_count - 1))
            if r >= p[i]:
                r += 1
            cand = p[:i] + (r,) + p[i + 1 :]
            if cand not in pos:
                out.append(cand)
                break
        else:
            raise CorruptionExhausted(f"could not corrupt path {p} in {max_attempts} attempts")
    return out


def count_paths_stats(g, targets, k: int = 3, max_len: int = 3) -> dict:
    """Mean number of distinct relational paths per target subgraph and a length histogram."""
    counts = []
    hist: Counter = Counter()
    for trip in targets:
        sub = extract_enclosing_subgraph(g, trip, k, remove_target_edge=True)
        paths = enumerate_paths(sub, max_len)
        counts.append(len(paths))
        hist.update(len(p) for p in paths)
    return {
        "mean_paths": float(np.mean(counts)) if counts else None,
        "histogram": {str(length): hist[length] for length in sorted(hist)},
        "num_subgraphs": len(counts),
    }
