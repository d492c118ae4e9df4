"""Independent reference implementations used by the tests.

These deliberately avoid the package's kernels: neighbourhoods and distances
come from networkx, walks from plain recursive DFS.
"""
from __future__ import annotations

import networkx as nx
import numpy as np

from rpcir.kg import KnowledgeGraph, Vocab, with_inverse


def random_graph(seed: int, max_nodes: int = 12, max_relations: int = 4, max_edges: int = 30):
    """Small random KG with inverse relations plus a target triple drawn from it."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, max_nodes + 1))
    R = int(rng.integers(1, max_relations + 1))
    m = int(rng.integers(1, max_edges + 1))
    triples = set()
    for _ in range(m):
        h, t = rng.integers(n, size=2).tolist()
        triples.add((h, int(rng.integers(R)), t))
    triples = sorted(triples)
    g = KnowledgeGraph(triples, Vocab(f"n{i}" for i in range(n)), Vocab(f"r{i}" for i in range(R)))
    if rng.random() < 0.8:
        target = triples[int(rng.integers(len(triples)))]
    else:
        target = (int(rng.integers(n)), int(rng.integers(R)), int(rng.integers(n)))
    return with_inverse(g), tuple(int(x) for x in target)


def oracle_subgraph(g: KnowledgeGraph, target, k: int, remove_target_edge: bool = True):
    """Enclosing subgraph by the textbook recipe, using networkx BFS.

    Returns ``(labels, edges)`` keyed by global entity ids: labels maps node ->
    (d_h, d_t) and edges is a set of global (h, r, t) triples.
    """
    h, r, t = target
    nb = g.num_base_relations
    r_inv = r + nb if r < nb else r - nb
    full = nx.Graph()
    full.add_nodes_from(range(g.num_entities))
    full.add_edges_from((a, b) for a, _, b in g.triples)
    near_h = nx.single_source_shortest_path_length(full, h, cutoff=k)
    near_t = nx.single_source_shortest_path_length(full, t, cutoff=k)
    nodes = set(near_h) & set(near_t) | {h, t}

    def is_target(e):
        return e == (h, r, t) or e == (t, r_inv, h)

    while True:
        kept = [e for e in g.triples if e[0] in nodes and e[2] in nodes and not is_target(tuple(e))]
        sub = nx.Graph()
        sub.add_nodes_from(nodes)
        sub.add_edges_from((a, b) for a, _, b in kept)
        dh = nx.single_source_shortest_path_length(sub, h, cutoff=k)
        dt = nx.single_source_shortest_path_length(sub, t, cutoff=k)
        survivors = {v for v in nodes if v in dh and v in dt} | {h, t}
        if survivors == nodes:
            break
        nodes = survivors
    labels = {v: (dh.get(v, k), dt.get(v, k)) for v in nodes}
    edges = {tuple(e) for e in kept}
    if not remove_target_edge:
        edges |= {tuple(e) for e in g.triples if is_target(tuple(e)) and e[0] in nodes and e[2] in nodes}
    return labels, edges


def brute_force_walks(edges, head, tail, max_len: int) -> list[tuple[int, ...]]:
    """All relation sequences of directed walks head -> tail with 1..max_len steps."""
    out_edges: dict = {}
    for a, rel, b in edges:
        out_edges.setdefault(a, []).append((rel, b))
    found = set()

    def dfs(node, seq):
        if seq and node == tail:
            found.add(tuple(seq))
        if len(seq) == max_len:
            return
        for rel, nxt in out_edges.get(node, ()):
            seq.append(rel)
            dfs(nxt, seq)
            seq.pop()

    dfs(head, [])
    return sorted(found, key=lambda s: (len(s), s))


def sub_global_labels(sub) -> dict:
    return {int(n): tuple(int(x) for x in lab) for n, lab in zip(sub.nodes, sub.labels)}


def sub_global_edges(sub) -> set:
    nodes = sub.nodes
    return {(int(nodes[a]), int(r), int(nodes[b])) for a, r, b in sub.edges}


def check_paths_case(seed: int, max_len: int = 3, k: int = 3) -> bool:
    from rpcir.paths import enumerate_paths
    from rpcir.subgraph import extract_enclosing_subgraph

    g, target = random_graph(seed)
    _, edges = oracle_subgraph(g, target, k)
    expected = brute_force_walks(edges, target[0], target[2], max_len)
    got = enumerate_paths(extract_enclosing_subgraph(g, target, k), max_len)
    return got == expected


def check_labels_case(seed: int, k: int | None = None) -> bool:
    from rpcir.subgraph import extract_enclosing_subgraph

    g, target = random_graph(seed)
    k = int(np.random.default_rng([seed, 1]).integers(1, 4)) if k is None else k
    ok = True
    for remove in (True, False):
        labels, edges = oracle_subgraph(g, target, k, remove)
        sub = extract_enclosing_subgraph(g, target, k, remove_target_edge=remove)
        ok &= sub_global_labels(sub) == labels and sub_global_edges(sub) == edges
        ok &= int(sub.nodes[0]) == target[0] and int(sub.nodes[sub.target[2]]) == target[2]
    return bool(ok)
