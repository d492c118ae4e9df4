"""Triple store, vocabularies and the fully-inductive train / ind-test split."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

log = logging.getLogger(__name__)

INVERSE_SUFFIX = "^-1"


class DataError(Exception):
    """Problem with input data (files, vocabularies, splits)."""


class ParseError(DataError):
    pass


class VocabularyError(DataError):
    pass


class StateError(DataError):
    pass


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class Vocab:
    """Bidirectional name <-> dense id map; ids follow first appearance."""

    def __init__(self, names: Iterable[str] = (), frozen: bool = False):
        self.names: list[str] = []
        self.ids: dict[str, int] = {}
        self.frozen = False
        for n in names:
            self.add(n)
        self.frozen = frozen

    def add(self, name: str) -> int:
        idx = self.ids.get(name)
        if idx is not None:
            return idx
        if self.frozen:
            raise VocabularyError(f"unknown name {name!r} in frozen vocabulary")
        idx = len(self.names)
        self.names.append(name)
        self.ids[name] = idx
        return idx

    def __getitem__(self, name: str) -> int:
        try:
            return self.ids[name]
        except KeyError:
            raise VocabularyError(f"unknown name {name!r}") from None

    def __contains__(self, name) -> bool:
        return name in self.ids

    def __len__(self) -> int:
        return len(self.names)

    def name(self, idx: int) -> str:
        return self.names[idx]

    def copy(self, frozen: bool | None = None) -> "Vocab":
        v = Vocab(self.names)
        v.frozen = self.frozen if frozen is None else frozen
        return v

    def freeze(self) -> "Vocab":
        return self.copy(frozen=True)

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, n in enumerate(self.names):
                fh.write(f"{n}\t{i}\n")


def _csr(keys: np.ndarray, n: int, *columns: np.ndarray):
    order = np.argsort(keys, kind="stable")
    counts = np.bincount(keys, minlength=n)
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return (ptr,) + tuple(np.ascontiguousarray(c[order]) for c in columns)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class KnowledgeGraph:
    """Immutable set of (head, relation, tail) id triples with adjacency indices.

    ``out_index`` lists (relation, tail) per head entity and ``in_index`` lists
    (relation, head) per tail entity, both as CSR arrays. When inverse
    relations are present, relation ``i + num_base_relations`` is the inverse
    of base relation ``i``.
    """

    def __init__(
        self,
        triples,
        entity_vocab: Vocab,
        relation_vocab: Vocab,
        num_base_relations: int | None = None,
        has_inverse: bool = False,
    ):
        arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        self.entity_vocab = entity_vocab
        self.relation_vocab = relation_vocab
        self.num_base_relations = len(relation_vocab) if num_base_relations is None else num_base_relations
        self.has_inverse = has_inverse
        self.num_entities = len(entity_vocab)
        self.num_relations = self.num_base_relations * (2 if has_inverse else 1)
        if len(arr):
            if arr[:, [0, 2]].min() < 0 or arr[:, [0, 2]].max() >= self.num_entities:
                raise VocabularyError("entity id out of range")
            if arr[:, 1].min() < 0 or arr[:, 1].max() >= self.num_relations:
                raise VocabularyError("relation id out of range")
        self.array = _readonly(arr)
        self._set = frozenset(map(tuple, arr.tolist()))
        if len(self._set) != len(arr):
            raise DataError("duplicate triples in KnowledgeGraph")
        n = self.num_entities
        h, r, t = arr[:, 0], arr[:, 1], arr[:, 2]
        ptr, rel, dst = _csr(h, n, r, t)
        self.out_index = (_readonly(ptr), _readonly(rel), _readonly(dst))
        ptr, rel, src = _csr(t, n, r, h)
        self.in_index = (_readonly(ptr), _readonly(rel), _readonly(src))
        self._undirected = None

    # -- basic views ------------------------------------------------------
    @property
    def triples(self) -> list[Triple]:
        return [Triple(*row) for row in self.array.tolist()]

    def __len__(self) -> int:
        return len(self.array)

    def __contains__(self, triple) -> bool:
        return tuple(int(x) for x in triple) in self._set

    def __repr__(self) -> str:
        return (
            f"KnowledgeGraph({len(self)} triples, {self.num_entities} entities, "
            f"{self.num_base_relations} base relations, inverse={self.has_inverse})"
        )

    def out_edges(self, e: int):
        ptr, rel, dst = self.out_index
        return rel[ptr[e] : ptr[e + 1]], dst[ptr[e] : ptr[e + 1]]

    def in_edges(self, e: int):
        ptr, rel, src = self.in_index
        return rel[ptr[e] : ptr[e + 1]], src[ptr[e] : ptr[e + 1]]

    def degree(self, e: int) -> int:
        return int(self.out_index[0][e + 1] - self.out_index[0][e] + self.in_index[0][e + 1] - self.in_index[0][e])

    @property
    def undirected_csr(self):
        """(indptr, neighbours) treating every edge as undirected."""
        if self._undirected is None:
            a = self.array
            src = np.concatenate([a[:, 0], a[:, 2]])
            dst = np.concatenate([a[:, 2], a[:, 0]])
            ptr, nbr = _csr(src, self.num_entities, dst)
            self._undirected = (_readonly(ptr), _readonly(nbr))
        return self._undirected

    def relation_name(self, r: int) -> str:
        nb = self.num_base_relations
        if r >= nb:
            return self.relation_vocab.name(r - nb) + INVERSE_SUFFIX
        return self.relation_vocab.name(r)

    def base_triples(self) -> "KnowledgeGraph":
        """Restriction to base relations (drops inverse triples)."""
        keep = self.array[self.array[:, 1] < self.num_base_relations]
        return KnowledgeGraph(keep, self.entity_vocab, self.relation_vocab, self.num_base_relations)

    def name_triples(self) -> list[tuple[str, str, str]]:
        ev, rv = self.entity_vocab, self.relation_vocab
        return [(ev.name(h), rv.name(r), ev.name(t)) for h, r, t in self.array.tolist() if r < self.num_base_relations]


def parse_triple_lines(path) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(parts):
                raise ParseError(f"{path}:{lineno}: expected head<TAB>relation<TAB>tail, got {line!r}")
            rows.append((parts[0], parts[1], parts[2]))
    return rows


def graph_from_names(
    rows: Iterable[tuple[str, str, str]],
    entities: Vocab | None = None,
    relations: Vocab | None = None,
) -> KnowledgeGraph:
    ev = Vocab() if entities is None else entities.copy(frozen=False)
    rv = Vocab() if relations is None else relations.copy()
    seen = set()
    out = []
    dupes = 0
    for h, r, t in rows:
        trip = (ev.add(h), rv.add(r), ev.add(t))
        if trip in seen:
            dupes += 1
            continue
        seen.add(trip)
        out.append(trip)
    if dupes:
        log.info("dropped %d duplicate triples", dupes)
    return KnowledgeGraph(out, ev, rv)


def load_triples(path, vocab: tuple[Vocab, Vocab] | None = None) -> KnowledgeGraph:
    """Read a TAB-separated triple file.

    ``vocab`` is an optional ``(entities, relations)`` pair: relation ids are
    reused (a frozen relation vocabulary rejects unseen names) and entity ids
    are extended.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such triple file: {path}")
    entities, relations = vocab if vocab is not None else (None, None)
    return graph_from_names(parse_triple_lines(path), entities, relations)


def save_triples(g: KnowledgeGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in g.name_triples():
            fh.write(f"{h}\t{r}\t{t}\n")


def add_inverse_relations(g: KnowledgeGraph) -> KnowledgeGraph:
    if g.has_inverse:
        raise StateError("graph already has inverse relations")
    a = g.array
    inv = np.stack([a[:, 2], a[:, 1] + g.num_base_relations, a[:, 0]], axis=1)
    return KnowledgeGraph(
        np.concatenate([a, inv]), g.entity_vocab, g.relation_vocab, g.num_base_relations, has_inverse=True
    )


def with_inverse(g: KnowledgeGraph) -> KnowledgeGraph:
    return g if g.has_inverse else add_inverse_relations(g)


@dataclass
class InductiveSplit:
    train_graph: KnowledgeGraph
    ind_test_graph: KnowledgeGraph
    train_targets: list[Triple]
    valid_targets: list[Triple]
    test_targets: list[Triple]
    name: str = ""
    meta: dict = field(default_factory=dict)


def validate_inductive_split(split: InductiveSplit) -> dict:
    """Check E' and E are disjoint and R' is contained in R, by name."""
    train, test = split.train_graph, split.ind_test_graph
    shared = sorted(set(train.entity_vocab.names) & set(test.entity_vocab.names))
    used_rel = {test.relation_vocab.name(r) for r in np.unique(test.array[:, 1] % max(test.num_base_relations, 1))}
    train_rel = set(train.relation_vocab.names)
    new_rel = sorted(used_rel - train_rel)
    checks = [
        {"name": "entities_disjoint", "passed": not shared, "offending": shared},
        {"name": "relations_subset", "passed": not new_rel, "offending": new_rel},
    ]
    return {"passed": all(c["passed"] for c in checks), "checks": checks}


def _targets_in(g: KnowledgeGraph, rows, what: str) -> list[Triple]:
    out, skipped = [], 0
    ev, rv = g.entity_vocab, g.relation_vocab
    seen = set()
    for h, r, t in rows:
        if h not in ev or t not in ev or r not in rv:
            skipped += 1
            continue
        trip = Triple(ev[h], rv[r], ev[t])
        if trip not in seen:
            seen.add(trip)
            out.append(trip)
    if skipped:
        log.warning("%s: skipped %d targets with names unknown to the graph", what, skipped)
    return out


def ind_dir_for(dataset_dir) -> Path:
    d = Path(dataset_dir)
    return d.with_name(d.name + "_ind")


def load_split(dataset_dir, ind_dir=None) -> InductiveSplit:
    """Load ``<dir>/{train,valid,test}.txt`` plus the sibling ``<dir>_ind`` graph.

    The train graph is ``train.txt``; training targets are its triples unless
    an optional ``targets.txt`` narrows them. Validation targets come from
    ``valid.txt``; the ind-test graph is ``<dir>_ind/train.txt`` and test
    targets are ``<dir>_ind/test.txt``.
    """
    d = Path(dataset_dir)
    ind = Path(ind_dir) if ind_dir is not None else ind_dir_for(d)
    for p in (d / "train.txt", ind / "train.txt", ind / "test.txt"):
        if not p.exists():
            raise DataError(f"missing dataset file {p}")
    train = load_triples(d / "train.txt")
    # non-frozen copy so that unseen relations surface in validation instead of aborting the load
    ind_graph = load_triples(ind / "train.txt", vocab=(None, train.relation_vocab))
    valid_rows = parse_triple_lines(d / "valid.txt") if (d / "valid.txt").exists() else []
    if (d / "targets.txt").exists():
        train_targets = _targets_in(train, parse_triple_lines(d / "targets.txt"), "targets")
    else:
        train_targets = train.triples
    return InductiveSplit(
        train_graph=train,
        ind_test_graph=ind_graph,
        train_targets=train_targets,
        valid_targets=_targets_in(train, valid_rows, "valid"),
        test_targets=_targets_in(ind_graph, parse_triple_lines(ind / "test.txt"), "test"),
        name=d.name,
    )


def save_split(split: InductiveSplit, dataset_dir) -> None:
    """Write a split in the layout read by :func:`load_split`."""
    d = Path(dataset_dir)
    ind = ind_dir_for(d)
    d.mkdir(parents=True, exist_ok=True)
    ind.mkdir(parents=True, exist_ok=True)

    def write(rows, g, path):
        ev, rv = g.entity_vocab, g.relation_vocab
        with open(path, "w", encoding="utf-8") as fh:
            for h, r, t in rows:
                fh.write(f"{ev.name(h)}\t{rv.name(r)}\t{ev.name(t)}\n")

    write(split.train_graph.base_triples().array.tolist(), split.train_graph, d / "train.txt")
    write(split.train_targets, split.train_graph, d / "targets.txt")
    write(split.valid_targets, split.train_graph, d / "valid.txt")
    write([], split.train_graph, d / "test.txt")
    write(split.ind_test_graph.base_triples().array.tolist(), split.ind_test_graph, ind / "train.txt")
    write([], split.ind_test_graph, ind / "valid.txt")
    write(split.test_targets, split.ind_test_graph, ind / "test.txt")
