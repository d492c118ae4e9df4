"""Relational GCN with edge attention, relational path encoders and the triple scorer.

Graphs are processed in batches: several enclosing subgraphs are stacked as a
disjoint union (:class:`GraphBatch`) and their relational paths as a flat list
(:class:`PathBatch`). Vectors are rows, so a weight ``W`` maps ``z`` to ``z @ W``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .subgraph import EnclosingSubgraph, double_radius_features

ENCODERS = ("cbow", "cnn")


@dataclass
class ModelConfig:
    num_layers: int = 3
    dim: int = 32
    k: int = 3
    max_path_len: int = 3
    path_encoder: str = "cbow"
    cnn_window: int = 2
    edge_dropout: float = 0.5

    def __post_init__(self):
        if self.dim < 1 or self.num_layers < 1:
            raise ValueError("dim and num_layers must be >= 1")
        if not 0.0 <= self.edge_dropout < 1.0:
            raise ValueError("edge_dropout must be in [0, 1)")
        if self.path_encoder not in ENCODERS:
            raise ValueError(f"path_encoder must be one of {ENCODERS}")
        if self.cnn_window < 1:
            raise ValueError("cnn_window must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def _xavier(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class RPCIRModel:
    """Parameter container; the forward pass lives in module-level functions."""

    def __init__(self, cfg: ModelConfig, num_relations: int, num_base_relations: int, seed: int = 0):
        self.cfg = cfg
        self.num_relations = num_relations
        self.num_base_relations = num_base_relations
        rng = np.random.default_rng(seed)
        d, L = cfg.dim, cfg.num_layers
        feat = 2 * cfg.k + 2
        p = {}

        def new(name, data):
            p[name] = Parameter(data, name)

        new("relation_emb", _xavier(rng, (num_relations, d), num_relations, d))
        new("input_proj", _xavier(rng, (feat, d), feat, d))
        for layer in range(L):
            new(f"layer{layer}.W_rel", _xavier(rng, (num_relations, d, d), d, d))
            new(f"layer{layer}.W_self", _xavier(rng, (d, d), d, d))
        new("att.W1", _xavier(rng, (4 * d, d), 4 * d, d))
        new("att.b1", np.zeros(d))
        new("att.W2", _xavier(rng, (d, 1), d, 1))
        new("att.b2", np.zeros(1))
        if cfg.path_encoder == "cnn":
            w = cfg.cnn_window
            for j in range(max(cfg.max_path_len - w + 1, 0)):
                new(f"cnn.W{j}", _xavier(rng, (w * d, d), w * d, d))
                new(f"cnn.b{j}", np.zeros(d))
        score_in = d + 2 * L * d + d + d
        new("score.W", _xavier(rng, (score_in, 1), score_in, 1))
        self.params: dict[str, Parameter] = p

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, v in arrays.items():
            if v.shape != self.params[k].shape:
                raise ValueError(f"checkpoint shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k].data[...] = v

    def num_parameters(self) -> int:
        return int(np.sum([p.data.size for p in self.params.values()]))


# ---------------------------------------------------------------------------
# batching


@dataclass
class GraphBatch:
    features: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    edge_graph: np.ndarray
    node_graph: np.ndarray
    heads: np.ndarray
    tails: np.ndarray
    target_rel: np.ndarray
    edge_mask: np.ndarray | None = None

    @property
    def num_graphs(self) -> int:
        return len(self.heads)

    @property
    def num_nodes(self) -> int:
        return len(self.features)


def collate_graphs(subs: list[EnclosingSubgraph], target_rels, edge_masks=None, features=None) -> GraphBatch:
    """Stack subgraphs into one disjoint-union batch."""
    feats, src, dst, rel, eg, ng, heads, tails = [], [], [], [], [], [], [], []
    off = 0
    for gi, sub in enumerate(subs):
        n = sub.num_nodes
        feats.append(double_radius_features(sub) if features is None else features[gi])
        e = sub.edges
        src.append(e[:, 0] + off)
        rel.append(e[:, 1])
        dst.append(e[:, 2] + off)
        eg.append(np.full(len(e), gi, dtype=np.int64))
        ng.append(np.full(n, gi, dtype=np.int64))
        heads.append(sub.target[0] + off)
        tails.append(sub.target[2] + off)
        off += n
    mask = None
    if edge_masks is not None:
        mask = np.concatenate([np.asarray(m, dtype=np.float64) for m in edge_masks]) if subs else np.zeros(0)
    cat = lambda xs: np.concatenate(xs).astype(np.int64) if xs else np.zeros(0, dtype=np.int64)  # noqa: E731
    return GraphBatch(
        features=np.concatenate(feats) if feats else np.zeros((0, 0)),
        src=cat(src),
        dst=cat(dst),
        rel=cat(rel),
        edge_graph=cat(eg),
        node_graph=cat(ng),
        heads=np.asarray(heads, dtype=np.int64),
        tails=np.asarray(tails, dtype=np.int64),
        target_rel=np.asarray(target_rels, dtype=np.int64),
        edge_mask=mask,
    )


@dataclass
class PathBatch:
    path_lists: list
    seqs: np.ndarray = field(init=False)
    lengths: np.ndarray = field(init=False)
    path_graph: np.ndarray = field(init=False)

    def __post_init__(self):
        flat = [p for paths in self.path_lists for p in paths]
        width = max((len(p) for p in flat), default=1)
        self.seqs = np.full((len(flat), width), -1, dtype=np.int64)
        for i, p in enumerate(flat):
            if len(p) == 0:
                raise ValueError("empty relational path")
            self.seqs[i, : len(p)] = p
        self.lengths = np.asarray([len(p) for p in flat], dtype=np.int64)
        self.path_graph = np.asarray(
            [gi for gi, paths in enumerate(self.path_lists) for _ in paths], dtype=np.int64
        )

    @property
    def num_paths(self) -> int:
        return len(self.lengths)

    @property
    def num_graphs(self) -> int:
        return len(self.path_lists)

    def has_paths(self) -> np.ndarray:
        return np.asarray([len(p) > 0 for p in self.path_lists])


# ---------------------------------------------------------------------------
# forward pieces


def edge_attention(model: RPCIRModel, z: Tensor, batch: GraphBatch, r_edges: Tensor, rt_edges: Tensor) -> Tensor:
    """alpha = sigmoid(W2 relu(W1 [z_i; z_j; r; r_T] + b1) + b2), one value per edge, shape (E, 1)."""
    p = model.params
    zi = ad.index_select(z, batch.dst)
    zj = ad.index_select(z, batch.src)
    x = ad.concat([zi, zj, r_edges, rt_edges], axis=1)
    y = ad.relu(ad.add(ad.matmul(x, p["att.W1"]), p["att.b1"]))
    return ad.sigmoid(ad.add(ad.matmul(y, p["att.W2"]), p["att.b2"]))


def gcn_forward(model: RPCIRModel, batch: GraphBatch, dropout_rate: float = 0.0, return_attention: bool = False):
    """Node embeddings after every layer (list of (N, dim) tensors).

    Each layer computes ``relu(sum_edges alpha * z_src @ W_rel[r] + z @ W_self)``
    where messages flow along directed edges (inverse edges included).
    ``batch.edge_mask`` (1 keep / 0 drop) removes messages when given.
    """
    p = model.params
    R = p["relation_emb"]
    if batch.rel.size and batch.rel.max() >= R.shape[0]:
        raise KeyError(f"relation id {int(batch.rel.max())} out of range for {R.shape[0]} relations")
    z = ad.matmul(Tensor(batch.features), p["input_proj"])
    r_edges = ad.index_select(R, batch.rel)
    rt_edges = ad.index_select(R, batch.target_rel[batch.edge_graph])
    layers, alphas = [], []
    n = batch.num_nodes
    for layer in range(model.cfg.num_layers):
        alpha = edge_attention(model, z, batch, r_edges, rt_edges)
        msg = ad.mul(alpha, ad.gather_matmul(z, p[f"layer{layer}.W_rel"], batch.src, batch.rel))
        if batch.edge_mask is not None:
            msg = ad.dropout(msg, batch.edge_mask, dropout_rate) if dropout_rate > 0 else ad.mul(msg, batch.edge_mask[:, None])
        agg = ad.segment_sum(msg, batch.dst, n)
        z = ad.relu(ad.add(agg, ad.matmul(z, p[f"layer{layer}.W_self"])))
        layers.append(z)
        alphas.append(alpha)
    return (layers, alphas) if return_attention else layers


def encode_paths(model: RPCIRModel, pb: PathBatch) -> Tensor:
    """One vector per path, shape (P, dim)."""
    R = model.params["relation_emb"]
    d = model.cfg.dim
    P = pb.num_paths
    if P == 0:
        return Tensor(np.zeros((0, d)))
    if model.cfg.path_encoder == "cbow":
        valid = pb.seqs >= 0
        rows = np.nonzero(valid)[0]
        return ad.segment_sum(ad.index_select(R, pb.seqs[valid]), rows, P)
    w = model.cfg.cnn_window
    parts = []
    short = np.flatnonzero(pb.lengths < w)
    if short.size:
        sub = pb.seqs[short]
        valid = sub >= 0
        emb = ad.segment_sum(ad.index_select(R, sub[valid]), short[np.nonzero(valid)[0]], P)
        parts.append(emb)
    for j in range(max(pb.seqs.shape[1] - w + 1, 0)):
        ix = np.flatnonzero(pb.lengths >= j + w)
        if not ix.size:
            continue
        window = ad.concat([ad.index_select(R, pb.seqs[ix, j + o]) for o in range(w)], axis=1)
        conv = ad.add(ad.matmul(window, model.params[f"cnn.W{j}"]), model.params[f"cnn.b{j}"])
        parts.append(ad.segment_sum(conv, ix, P))
    out = parts[0]
    for t in parts[1:]:
        out = ad.add(out, t)
    return out


def path_attention_batch(path_vecs: Tensor, rt_per_path: Tensor, pb: PathBatch) -> Tensor:
    """beta_i = softmax over a graph's paths of p_i . r_T, shape (P,)."""
    scores = ad.rowdot(path_vecs, rt_per_path)
    return ad.segment_softmax(scores, pb.path_graph, pb.num_graphs)


def aggregate_paths_batch(model: RPCIRModel, pb: PathBatch, target_rel) -> tuple[Tensor, Tensor]:
    """Attention-weighted path representation per graph (zero rows for pathless graphs) and beta."""
    d = model.cfg.dim
    if pb.num_paths == 0:
        return Tensor(np.zeros((pb.num_graphs, d))), Tensor(np.zeros(0))
    R = model.params["relation_emb"]
    vecs = encode_paths(model, pb)
    rt = ad.index_select(R, np.asarray(target_rel, dtype=np.int64)[pb.path_graph])
    beta = path_attention_batch(vecs, rt, pb)
    weighted = ad.mul(ad.reshape(beta, (-1, 1)), vecs)
    return ad.segment_sum(weighted, pb.path_graph, pb.num_graphs), beta


def readout_batch(z: Tensor, batch: GraphBatch) -> Tensor:
    counts = np.bincount(batch.node_graph, minlength=batch.num_graphs).astype(np.float64)
    if (counts == 0).any():
        raise ValueError("readout over a graph with no nodes")
    return ad.mul(ad.segment_sum(z, batch.node_graph, batch.num_graphs), (1.0 / counts)[:, None])


def score_batch(model: RPCIRModel, layers: list[Tensor], batch: GraphBatch, path_repr: Tensor) -> Tensor:
    """f = W_s . [readout ; (z_h ; z_t) for every layer ; r_T ; p_(h->t)], shape (B,)."""
    parts = [readout_batch(layers[-1], batch)]
    for z in layers:
        parts.append(ad.index_select(z, batch.heads))
        parts.append(ad.index_select(z, batch.tails))
    parts.append(ad.index_select(model.params["relation_emb"], batch.target_rel))
    parts.append(path_repr)
    s = ad.concat(parts, axis=1)
    W = model.params["score.W"]
    if s.shape[1] != W.shape[0]:
        raise ad.DimensionError(f"score: feature width {s.shape[1]} does not match scorer {W.shape[0]}")
    return ad.reshape(ad.matmul(s, W), (-1,))


def forward(model: RPCIRModel, batch: GraphBatch, pb: PathBatch | None, dropout_rate: float = 0.0) -> dict:
    """Scores for every graph in the batch; ``pb=None`` zeroes the path representation."""
    layers = gcn_forward(model, batch, dropout_rate)
    if pb is None:
        p_repr, beta = Tensor(np.zeros((batch.num_graphs, model.cfg.dim))), None
    else:
        p_repr, beta = aggregate_paths_batch(model, pb, batch.target_rel)
    return {"scores": score_batch(model, layers, batch, p_repr), "path_repr": p_repr, "beta": beta, "layers": layers}


# ---------------------------------------------------------------------------
# single-item conveniences


def encode_path(model: RPCIRModel, path) -> np.ndarray:
    if len(path) == 0:
        raise ValueError("empty relational path")
    return encode_paths(model, PathBatch([[tuple(path)]])).data[0]


def path_attention(path_vecs, r_t) -> np.ndarray:
    """Softmax over paths of the dot products with the target relation vector."""
    v = np.asarray(path_vecs, dtype=np.float64)
    s = v @ np.asarray(r_t, dtype=np.float64)
    e = np.exp(s - s.max())
    return e / e.sum()


def aggregate_paths(path_vecs, r_t) -> np.ndarray:
    v = np.asarray(path_vecs, dtype=np.float64)
    if v.size == 0:
        return np.zeros(np.asarray(r_t).shape[0])
    return path_attention(v, r_t) @ v


def readout(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if len(z) == 0:
        raise ValueError("readout over an empty node set")
    return z.mean(axis=0)


def score_triple(model: RPCIRModel, sub: EnclosingSubgraph, paths, target_relation: int | None = None) -> float:
    r = sub.target[1] if target_relation is None else target_relation
    batch = collate_graphs([sub], [r])
    out = forward(model, batch, PathBatch([list(paths)]))
    return float(out["scores"].data[0])
