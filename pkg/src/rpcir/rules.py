"""First-order rules from attended relational paths."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .kg import KnowledgeGraph, with_inverse
from .model import PathBatch, RPCIRModel, encode_paths
from .paths import count_paths_stats, enumerate_paths
from .subgraph import extract_enclosing_subgraph


@dataclass(frozen=True)
class Rule:
    head: int
    body: tuple[tuple[int, bool], ...]  # (base relation id, is_inverse)
    confidence: float
    support: int = 1

    def key(self):
        return (self.head, self.body)


def body_from_path(path, num_base_relations: int) -> tuple[tuple[int, bool], ...]:
    return tuple((r - num_base_relations, True) if r >= num_base_relations else (r, False) for r in path)


def path_from_body(body, num_base_relations: int) -> tuple[int, ...]:
    return tuple(r + num_base_relations if inv else r for r, inv in body)


def path_confidences(model: RPCIRModel, paths, target_relation: int) -> np.ndarray:
    """Attention weights of ``paths`` for one target relation; sums to one."""
    if not paths:
        return np.zeros(0)
    vecs = encode_paths(model, PathBatch([list(paths)])).data
    r_t = model.params["relation_emb"].data[target_relation]
    s = vecs @ r_t
    e = np.exp(s - s.max())
    return e / e.sum()


def subgraph_rules(model: RPCIRModel, g: KnowledgeGraph, target) -> list[Rule]:
    """Rules read off one target subgraph, sorted by confidence (descending)."""
    cfg = model.cfg
    sub = extract_enclosing_subgraph(g, target, cfg.k, remove_target_edge=True)
    paths = enumerate_paths(sub, cfg.max_path_len)
    beta = path_confidences(model, paths, int(target[1]))
    nb = g.num_base_relations
    rules = [Rule(int(target[1]), body_from_path(p, nb), float(b)) for p, b in zip(paths, beta)]
    return sorted(rules, key=lambda r: -r.confidence)


def extract_rules(model: RPCIRModel, g: KnowledgeGraph, targets, min_confidence: float = 0.0) -> list[Rule]:
    """Aggregate per-subgraph rules by mean confidence; support counts subgraphs.

    Rules below ``min_confidence`` are dropped; the result is sorted by head
    relation, then by decreasing confidence.
    """
    g = with_inverse(g)
    acc: dict = defaultdict(list)
    for t in targets:
        for rule in subgraph_rules(model, g, t):
            acc[rule.key()].append(rule.confidence)
    out = [Rule(h, body, float(np.mean(v)), len(v)) for (h, body), v in acc.items()]
    out = [r for r in out if r.confidence >= min_confidence]
    out.sort(key=lambda r: (r.head, -r.confidence, -r.support, r.body))
    return out


def format_rule(rule: Rule, relation_names) -> str:
    """``0.99 head(X,Y) <- b1(X,Z1) ^ b2(Z1,Z2) ^ b3(Z2,Y)``; inverse atoms swap arguments."""
    name = relation_names.name if hasattr(relation_names, "name") else relation_names.__getitem__
    n = len(rule.body)
    vars_ = ["X"] + [f"Z{i}" for i in range(1, n)] + ["Y"]
    atoms = []
    for i, (r, inv) in enumerate(rule.body):
        a, b = vars_[i], vars_[i + 1]
        if inv:
            a, b = b, a
        atoms.append(f"{name(r)}({a},{b})")
    return f"{rule.confidence:.2f} {name(rule.head)}(X,Y) <- " + " ^ ".join(atoms)


def write_rules_tsv(rules: list[Rule], relation_names, path) -> None:
    """Columns: confidence, support, head, body atoms joined by ``^``."""
    name = relation_names.name if hasattr(relation_names, "name") else relation_names.__getitem__
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("confidence\tsupport\thead\tbody\n")
        for r in rules:
            body = "^".join(f"{name(b)}{'^-1' if inv else ''}" for b, inv in r.body)
            fh.write(f"{r.confidence:.6f}\t{r.support}\t{name(r.head)}\t{body}\n")


def rule_stats(graphs: dict, targets: dict, k: int = 3, max_len: int = 3) -> dict:
    """Mean paths per subgraph for each named version (``None`` when a version has no targets)."""
    summary = {}
    for version, g in graphs.items():
        tg = list(targets.get(version, []))
        if not tg:
            summary[version] = {"mean_paths": None, "histogram": {}, "num_subgraphs": 0}
            continue
        summary[version] = count_paths_stats(with_inverse(g), tg, k, max_len)
    return summary


def top_rule_fraction(model: RPCIRModel, g: KnowledgeGraph, targets, planted: dict) -> dict:
    """Per head relation: fraction of target subgraphs whose top-confidence path is the planted body."""
    g = with_inverse(g)
    hits: dict = defaultdict(int)
    totals: dict = defaultdict(int)
    for t in targets:
        head = int(t[1])
        if head not in planted:
            continue
        totals[head] += 1
        rules = subgraph_rules(model, g, t)
        if rules and path_from_body(rules[0].body, g.num_base_relations) == tuple(planted[head]):
            hits[head] += 1
    return {h: hits[h] / totals[h] for h in totals}
