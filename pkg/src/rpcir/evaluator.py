"""AUC-PR and Hits@k on the inductive test graph."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .kg import InductiveSplit, KnowledgeGraph, Triple, with_inverse
from .model import PathBatch, RPCIRModel, collate_graphs, forward
from .paths import enumerate_paths
from .subgraph import extract_enclosing_subgraph

log = logging.getLogger(__name__)


class CompatibilityError(ValueError):
    pass


def auc_pr(pos_scores, neg_scores) -> float:
    """Area under the precision-recall step curve.

    Scores are ranked descending with ties resolved pessimistically (negatives
    ahead of positives), and precision is averaged over the positives' ranks.
    """
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auc_pr needs at least one positive and one negative score")
    scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
    # primary key: score descending; secondary: label ascending (negatives first)
    order = np.lexsort((labels, -scores))
    hits = labels[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, hits.size + 1)
    return float(precision[hits == 1].sum() / pos.size)


def pessimistic_rank(pos_score: float, neg_scores) -> int:
    """1 + number of negatives scoring at least as high as the positive."""
    return 1 + int(np.sum(np.asarray(neg_scores) >= pos_score))


def _known_set(graph: KnowledgeGraph, extra=()) -> set:
    known = set(map(tuple, graph.array.tolist()))
    known.update(tuple(int(x) for x in t) for t in extra)
    return known


def corrupt_filtered(graph: KnowledgeGraph, triples, rng, known=None, max_attempts: int = 100) -> list[Triple]:
    """One head-or-tail corruption per triple, avoiding known triples."""
    known = _known_set(graph, triples) if known is None else known
    n = graph.num_entities
    out = []
    for h, r, t in triples:
        for _ in range(max_attempts):
            x = int(rng.integers(n))
            cand = (x, r, t) if rng.random() < 0.5 else (h, r, x)
            if cand not in known:
                out.append(Triple(*cand))
                break
        else:
            raise RuntimeError(f"could not corrupt {(h, r, t)}")
    return out


def ranking_negatives(graph: KnowledgeGraph, triple, num: int, rng, known: set) -> list[Triple]:
    """Up to ``num`` distinct filtered corruptions (head or tail, uniform entity)."""
    h, r, t = (int(x) for x in triple)
    n = graph.num_entities
    pool = {(x, r, t) for x in range(n)} | {(h, r, x) for x in range(n)}
    pool = sorted(c for c in pool if c not in known)
    if len(pool) <= num:
        if len(pool) < num:
            log.info("only %d valid corruptions for %s (wanted %d)", len(pool), triple, num)
        return [Triple(*c) for c in pool]
    out, seen = [], set()
    while len(out) < num:
        x = int(rng.integers(n))
        cand = (x, r, t) if rng.random() < 0.5 else (h, r, x)
        if cand in known or cand in seen:
            continue
        seen.add(cand)
        out.append(Triple(*cand))
    return out


def score_triples(model: RPCIRModel, graph: KnowledgeGraph, triples, use_paths: bool = True, batch_size: int = 64) -> np.ndarray:
    """Model scores f(e, P, r) for each triple, extracting subgraphs from ``graph``."""
    g = with_inverse(graph)
    cfg = model.cfg
    out = np.zeros(len(triples))
    for start in range(0, len(triples), batch_size):
        chunk = triples[start : start + batch_size]
        subs = [extract_enclosing_subgraph(g, t, cfg.k, remove_target_edge=True) for t in chunk]
        rels = [int(t[1]) for t in chunk]
        batch = collate_graphs(subs, rels)
        pb = PathBatch([enumerate_paths(s, cfg.max_path_len) for s in subs]) if use_paths else None
        out[start : start + len(chunk)] = forward(model, batch, pb)["scores"].data
    return out


def hits_at_k(
    model: RPCIRModel,
    graph: KnowledgeGraph,
    test_triples,
    k_rank: int = 10,
    num_negatives: int = 50,
    rng=None,
    use_paths: bool = True,
    known: set | None = None,
    return_ranks: bool = False,
):
    """Fraction of test triples ranked within ``k_rank`` among sampled negatives (pessimistic ties)."""
    rng = np.random.default_rng(0) if rng is None else rng
    known = _known_set(graph, test_triples) if known is None else known
    ranks = []
    for trip in test_triples:
        negs = ranking_negatives(graph, trip, num_negatives, rng, known)
        s = score_triples(model, graph, [Triple(*trip)] + negs, use_paths=use_paths)
        ranks.append(pessimistic_rank(s[0], s[1:]))
    ranks = np.asarray(ranks)
    frac = float(np.mean(ranks <= k_rank)) if len(ranks) else 0.0
    return (frac, ranks) if return_ranks else frac


@dataclass
class EvalReport:
    auc_pr: float
    hits_at_10: float
    num_test: int
    auc_pr_runs: list
    hits_at_10_runs: list

    def to_dict(self) -> dict:
        return asdict(self)


def check_compatible(model: RPCIRModel, graph: KnowledgeGraph) -> None:
    g = with_inverse(graph)
    if g.num_relations != model.num_relations or g.num_base_relations != model.num_base_relations:
        raise CompatibilityError(
            f"model has {model.num_base_relations} base relations, graph has {g.num_base_relations}"
        )


def evaluate(
    split: InductiveSplit,
    model: RPCIRModel,
    seeds=(0,),
    use_paths: bool = True,
    num_negatives: int = 50,
    score_dump: list | None = None,
) -> EvalReport:
    """AUC-PR (one filtered corruption per positive) and Hits@10, averaged over seeds."""
    g = with_inverse(split.ind_test_graph)
    check_compatible(model, g)
    tests = [Triple(*t) for t in split.test_targets]
    known = _known_set(g, tests)
    aucs, hits = [], []
    for seed in seeds:
        rng = np.random.default_rng([seed, 104729])
        negs = corrupt_filtered(g, tests, rng, known)
        scores = score_triples(model, g, tests + negs, use_paths=use_paths)
        pos, neg = scores[: len(tests)], scores[len(tests) :]
        aucs.append(auc_pr(pos, neg))
        h, ranks = hits_at_k(model, g, tests, 10, num_negatives, rng, use_paths, known, return_ranks=True)
        hits.append(h)
        if score_dump is not None and seed == seeds[0]:
            for t, s, rk in zip(tests, pos, ranks):
                score_dump.append((t, float(s), 1, int(rk)))
            for t, s in zip(negs, neg):
                score_dump.append((t, float(s), 0, None))
    return EvalReport(
        auc_pr=float(np.mean(aucs)),
        hits_at_10=float(np.mean(hits)),
        num_test=len(tests),
        auc_pr_runs=aucs,
        hits_at_10_runs=hits,
    )
