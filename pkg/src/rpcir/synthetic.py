"""Synthetic fully-inductive splits with planted length-2 chain rules.

Each rule ``head(X, Y) <- b1(X, Z) ^ b2(Z, Y)`` is planted by drawing chains
X -b1-> Z -b2-> Y, then closing the graph: every pair joined by a body chain
(planted or accidental) receives the head edge. Train and ind-test graphs are
generated independently over disjoint entity names.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kg import InductiveSplit, Triple, Vocab, KnowledgeGraph

DEFAULT_RULES = (("r4", ("r0", "r1")), ("r5", ("r2", "r3")))
NOISE_RELATIONS = ("r6",)


@dataclass
class SyntheticConfig:
    train_entities: int = 200
    test_entities: int = 60
    train_chains: int = 60
    test_chains: int = 20
    noise_per_entity: float = 0.5
    valid_fraction: float = 0.1
    test_fraction: float = 0.5


def _relations(rules) -> list[str]:
    names = []
    for head, body in rules:
        for r in body:
            if r not in names:
                names.append(r)
    for head, _ in rules:
        if head not in names:
            names.append(head)
    for r in NOISE_RELATIONS:
        if r not in names:
            names.append(r)
    return sorted(names, key=lambda s: (len(s), s))


def _generate(rng, n: int, chains: int, noise: float, rules, rel_ids: dict) -> tuple[set, set]:
    edges: set = set()
    for _, (b1, b2) in rules:
        for _ in range(chains):
            x, z, y = rng.choice(n, size=3, replace=False).tolist()
            edges.add((x, rel_ids[b1], z))
            edges.add((z, rel_ids[b2], y))
    pool = [rel_ids[r] for _, body in rules for r in body] + [rel_ids[r] for r in NOISE_RELATIONS]
    for _ in range(int(round(noise * n))):
        x, y = rng.choice(n, size=2, replace=False).tolist()
        edges.add((x, pool[int(rng.integers(len(pool)))], y))
    heads: set = set()
    for head, (b1, b2) in rules:
        r1, r2, rh = rel_ids[b1], rel_ids[b2], rel_ids[head]
        out1: dict = {}
        for (a, r, b) in edges:
            if r == r1:
                out1.setdefault(a, []).append(b)
        out2: dict = {}
        for (a, r, b) in edges:
            if r == r2:
                out2.setdefault(a, []).append(b)
        for x, zs in out1.items():
            for z in zs:
                for y in out2.get(z, ()):
                    if x != y:
                        heads.add((x, rh, y))
    return edges, heads


def planted_rule_split(seed: int = 0, cfg: SyntheticConfig | None = None, rules=DEFAULT_RULES):
    """Return ``(split, rules)`` where rules map head relation id -> body relation ids."""
    cfg = cfg or SyntheticConfig()
    rng = np.random.default_rng(seed)
    rel_vocab = Vocab(_relations(rules))
    rel_ids = rel_vocab.ids

    def build(prefix, n, chains, holdout_fraction):
        edges, heads = _generate(rng, n, chains, cfg.noise_per_entity, rules, rel_ids)
        heads = sorted(heads)
        perm = rng.permutation(len(heads))
        n_hold = int(round(holdout_fraction * len(heads)))
        held = [heads[i] for i in sorted(perm[:n_hold])]
        kept = [heads[i] for i in sorted(perm[n_hold:])]
        ev = Vocab(f"{prefix}{i}" for i in range(n))
        graph = KnowledgeGraph(sorted(edges | set(kept)), ev, rel_vocab.copy())
        return graph, [Triple(*t) for t in kept], [Triple(*t) for t in held]

    train_graph, train_targets, valid = build("e", cfg.train_entities, cfg.train_chains, cfg.valid_fraction)
    test_graph, _, test = build("u", cfg.test_entities, cfg.test_chains, cfg.test_fraction)
    split = InductiveSplit(
        train_graph=train_graph,
        ind_test_graph=test_graph,
        train_targets=train_targets,
        valid_targets=valid,
        test_targets=test,
        name=f"synthetic_s{seed}",
    )
    planted = {rel_ids[h]: tuple(rel_ids[b] for b in body) for h, body in rules}
    return split, planted
