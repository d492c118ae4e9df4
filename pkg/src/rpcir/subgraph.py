"""Enclosing-subgraph extraction and double-radius node labels."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .kernels import bfs_distances
from .kg import KnowledgeGraph


class EntityLookupError(KeyError):
    pass


@dataclass
class EnclosingSubgraph:
    """Local view of a target triple's neighbourhood.

    ``nodes[0]`` is the head and ``nodes[1]`` the tail (a single node when the
    target is a self-loop). ``edges`` holds (local head, relation, local tail)
    rows including inverse-relation edges when the source graph has them.
    """

    nodes: np.ndarray
    edges: np.ndarray
    target: tuple[int, int, int]
    labels: np.ndarray
    k: int

    @property
    def local_ids(self) -> dict[int, int]:
        return {int(g): i for i, g in enumerate(self.nodes)}

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def out_csr(self):
        """Directed out-edge CSR: (indptr, relation, tail)."""
        n = self.num_nodes
        e = self.edges
        order = np.argsort(e[:, 0], kind="stable")
        ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(e[:, 0], minlength=n), out=ptr[1:])
        return ptr, e[order, 1], e[order, 2]

    def to_json(self) -> str:
        return json.dumps(
            {
                "nodes": self.nodes.tolist(),
                "labels": self.labels.tolist(),
                "edges": self.edges.tolist(),
                "target": list(self.target),
                "k": self.k,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "EnclosingSubgraph":
        d = json.loads(text)
        return cls(
            nodes=np.asarray(d["nodes"], dtype=np.int64),
            edges=np.asarray(d["edges"], dtype=np.int64).reshape(-1, 3),
            target=tuple(d["target"]),
            labels=np.asarray(d["labels"], dtype=np.int64).reshape(-1, 2),
            k=d["k"],
        )


def _check_entity(g: KnowledgeGraph, e: int) -> None:
    if not 0 <= e < g.num_entities:
        raise EntityLookupError(f"entity {e} not in graph")


def k_hop_neighborhood(g: KnowledgeGraph, e: int, k: int) -> set[int]:
    _check_entity(g, e)
    ptr, nbr = g.undirected_csr
    dist = bfs_distances(ptr, nbr, e, k)
    return set(np.flatnonzero(dist >= 0).tolist())


def _undirected_local(n: int, edges: np.ndarray):
    src = np.concatenate([edges[:, 0], edges[:, 2]])
    dst = np.concatenate([edges[:, 2], edges[:, 0]])
    order = np.argsort(src, kind="stable")
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=ptr[1:])
    return ptr, dst[order]


def _target_edge_mask(g: KnowledgeGraph, edges: np.ndarray, hl: int, r: int, tl: int) -> np.ndarray:
    is_target = (edges[:, 0] == hl) & (edges[:, 1] == r) & (edges[:, 2] == tl)
    if g.has_inverse:
        r_inv = r + g.num_base_relations if r < g.num_base_relations else r - g.num_base_relations
        is_target |= (edges[:, 0] == tl) & (edges[:, 1] == r_inv) & (edges[:, 2] == hl)
    return is_target


def extract_enclosing_subgraph(
    g: KnowledgeGraph, target, k: int = 3, remove_target_edge: bool = True
) -> EnclosingSubgraph:
    """Intersect the k-hop neighbourhoods of head and tail, then label and prune.

    Distances are measured inside the candidate subgraph with the target edge
    (and its inverse) removed. Nodes farther than ``k`` from either endpoint are
    dropped and distances recomputed until no node is dropped, so the final
    labels are exact distances within the returned subgraph.
    """
    h, r, t = (int(x) for x in target)
    _check_entity(g, h)
    _check_entity(g, t)
    ptr, nbr = g.undirected_csr
    dh_full = bfs_distances(ptr, nbr, h, k)
    dt_full = bfs_distances(ptr, nbr, t, k)
    inner = np.flatnonzero((dh_full >= 0) & (dt_full >= 0))
    rest = inner[(inner != h) & (inner != t)]
    nodes = np.concatenate([[h] if h == t else [h, t], rest]).astype(np.int64)

    # induced edges
    local = np.full(g.num_entities, -1, dtype=np.int64)
    local[nodes] = np.arange(len(nodes))
    optr, orel, odst = g.out_index
    heads, rels, tails = [], [], []
    for li, gid in enumerate(nodes.tolist()):
        lo, hi = optr[gid], optr[gid + 1]
        lt = local[odst[lo:hi]]
        keep = lt >= 0
        heads.append(np.full(int(keep.sum()), li, dtype=np.int64))
        rels.append(orel[lo:hi][keep])
        tails.append(lt[keep])
    edges = np.stack([np.concatenate(heads), np.concatenate(rels), np.concatenate(tails)], axis=1).reshape(-1, 3)
    tl = 0 if h == t else 1
    target_mask = _target_edge_mask(g, edges, 0, r, tl)
    target_edges = edges[target_mask]
    edges = edges[~target_mask]

    n_fixed = 1 if h == t else 2
    while True:
        n = len(nodes)
        uptr, unbr = _undirected_local(n, edges)
        dh = bfs_distances(uptr, unbr, 0, k)
        dt = bfs_distances(uptr, unbr, tl, k)
        keep = (dh >= 0) & (dt >= 0)
        keep[:n_fixed] = True
        if keep.all():
            break
        remap = np.cumsum(keep) - 1
        nodes = nodes[keep]
        ok = keep[edges[:, 0]] & keep[edges[:, 2]]
        edges = edges[ok]
        edges = np.stack([remap[edges[:, 0]], edges[:, 1], remap[edges[:, 2]]], axis=1)

    dh = np.where(dh < 0, k, dh)
    dt = np.where(dt < 0, k, dt)
    labels = np.stack([dh, dt], axis=1).astype(np.int64)
    if not remove_target_edge and len(target_edges):
        edges = np.concatenate([edges, target_edges])
    return EnclosingSubgraph(nodes=nodes, edges=edges.astype(np.int64), target=(0, r, tl), labels=labels, k=k)


def double_radius_features(sub: EnclosingSubgraph) -> np.ndarray:
    """Rows ``[one-hot(d_h) ; one-hot(d_t)]`` of width ``2k + 2``."""
    k = sub.k
    n = sub.num_nodes
    feats = np.zeros((n, 2 * k + 2), dtype=np.float64)
    rows = np.arange(n)
    feats[rows, sub.labels[:, 0]] = 1.0
    feats[rows, k + 1 + sub.labels[:, 1]] = 1.0
    return feats
