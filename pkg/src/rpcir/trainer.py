"""Joint training: triple and path negatives, the three losses, Adam and the epoch loop."""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .kg import InductiveSplit, KnowledgeGraph, Triple, with_inverse
from .model import ModelConfig, PathBatch, RPCIRModel, aggregate_paths_batch, collate_graphs, forward
from .paths import CorruptionExhausted, enumerate_paths, generate_negative_paths
from .subgraph import EnclosingSubgraph, extract_enclosing_subgraph

log = logging.getLogger(__name__)

ABLATIONS = ("full", "no_paths", "no_contrasts")
NEGATIVE_PATH_MODES = ("corrupted_subgraph", "positive_corruptions")

# (lambda1, lambda2) by dataset family; anything else uses (1.0, 1.0)
DATASET_LAMBDAS = {"WN18RR": (1.0, 1.2), "FB15K-237": (0.8, 0.8)}


class SamplingError(RuntimeError):
    pass


class NumericError(FloatingPointError):
    pass


def default_lambdas(dataset_name: str) -> tuple[float, float]:
    for prefix, lam in DATASET_LAMBDAS.items():
        if dataset_name.upper().startswith(prefix):
            return lam
    return (1.0, 1.0)


@dataclass
class TrainConfig:
    margin: float = 10.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    learning_rate: float = 0.001
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    ablation: str = "full"
    negative_paths: str = "corrupted_subgraph"
    threads: int = 1

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be > 0")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.negative_paths not in NEGATIVE_PATH_MODES:
            raise ValueError(f"negative_paths must be one of {NEGATIVE_PATH_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


# ---------------------------------------------------------------------------
# sampling


def sample_negative_triple(g: KnowledgeGraph, e, rng: np.random.Generator, max_attempts: int = 100, known=None) -> Triple:
    """Replace head or tail (probability 1/2 each) with a uniform entity not yielding a known triple."""
    n = g.num_entities
    if n < 2:
        raise SamplingError("need at least two entities to corrupt a triple")
    h, r, t = (int(x) for x in e)
    for _ in range(max_attempts):
        x = int(rng.integers(n))
        cand = Triple(x, r, t) if rng.random() < 0.5 else Triple(h, r, x)
        if cand in g or (known is not None and cand in known):
            continue
        return cand
    raise SamplingError(f"no unseen corruption of {e} after {max_attempts} attempts")


def _corrupt_all(paths, relation_count, rng) -> list:
    """Corrupt each path; paths whose corruption space is saturated are skipped."""
    try:
        return generate_negative_paths(paths, relation_count, rng)
    except CorruptionExhausted:
        out = []
        for p in paths:
            try:
                out.extend(generate_negative_paths([p], relation_count, rng))
            except CorruptionExhausted:
                log.debug("skipping uncorruptible path %s", p)
        return out


def negative_triple_paths(mode: str, neg_sub_paths, contrast_negatives, relation_count, rng) -> list:
    """Paths scored together with the corrupted triple in the margin loss.

    ``corrupted_subgraph``: relation-corrupted versions of the paths found in the
    corrupted triple's own subgraph. ``positive_corruptions``: the corrupted
    paths of the positive subgraph (the ones used by the path-contrast loss).
    """
    if mode == "positive_corruptions":
        return list(contrast_negatives)
    return _corrupt_all(neg_sub_paths, relation_count, rng) if neg_sub_paths else []


# ---------------------------------------------------------------------------
# losses (per example, vectorised over a batch)


def loss_margin(f_pos, f_neg, margin: float) -> Tensor:
    """max(0, margin + f_neg - f_pos)."""
    return ad.relu(ad.add(ad.sub(f_neg, f_pos), margin))


def _rows(x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    return ad.reshape(x, (1, -1)) if x.data.ndim == 1 else x


def loss_path_contrast(p_plus, p_minus, r_t) -> Tensor:
    """-log(exp(p+.r) / (exp(p+.r) + exp(p-.r))) == softplus(p-.r - p+.r)."""
    p_plus, p_minus, r_t = _rows(p_plus), _rows(p_minus), _rows(r_t)
    return ad.softplus(ad.sub(ad.rowdot(p_minus, r_t), ad.rowdot(p_plus, r_t)))


def loss_supervised(p_plus, relation_table, target) -> Tensor:
    """Cross-entropy of p+ against every row of ``relation_table`` (the base relations)."""
    p_plus = _rows(p_plus)
    table = relation_table if isinstance(relation_table, Tensor) else Tensor(relation_table)
    logits = ad.matmul(p_plus, ad.transpose(table))
    target = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if target.max() >= table.shape[0]:
        raise ValueError("target relation outside the supervised relation set")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(target)), target] = 1.0
    return ad.mul(ad.sum(ad.mul(ad.log_softmax(logits), onehot), axis=1), -1.0)


def total_loss(l_g, l_n, l_c, lambda1: float, lambda2: float, ablation: str = "full"):
    if ablation not in ABLATIONS:
        raise ValueError(f"unknown ablation {ablation!r}")
    if ablation == "no_paths":
        return l_g
    if ablation == "no_contrasts":
        return l_g + lambda2 * l_c
    return l_g + lambda1 * l_n + lambda2 * l_c


# ---------------------------------------------------------------------------
# examples


@dataclass
class TrainExample:
    target: Triple
    pos_sub: EnclosingSubgraph
    pos_paths: list
    contrast_negatives: list
    neg_triple: Triple
    neg_sub: EnclosingSubgraph
    neg_paths: list
    pos_mask: np.ndarray
    neg_mask: np.ndarray

    def describe(self) -> dict:
        return {
            "target": list(self.target),
            "negative": list(self.neg_triple),
            "pos_nodes": self.pos_sub.num_nodes,
            "pos_edges": self.pos_sub.num_edges,
            "pos_paths": [list(p) for p in self.pos_paths],
            "contrast_negatives": [list(p) for p in self.contrast_negatives],
            "neg_paths": [list(p) for p in self.neg_paths],
        }


class ExampleBuilder:
    """Builds training examples with per-(seed, epoch, index) random streams."""

    def __init__(self, graph: KnowledgeGraph, model_cfg: ModelConfig, train_cfg: TrainConfig):
        self.g = with_inverse(graph)
        self.mcfg = model_cfg
        self.tcfg = train_cfg
        self._pos_cache: dict[int, tuple] = {}

    def positive(self, idx: int, target) -> tuple[EnclosingSubgraph, list]:
        hit = self._pos_cache.get(idx)
        if hit is None:
            sub = extract_enclosing_subgraph(self.g, target, self.mcfg.k, remove_target_edge=True)
            hit = (sub, enumerate_paths(sub, self.mcfg.max_path_len))
            self._pos_cache[idx] = hit
        return hit

    def build(self, idx: int, target, epoch: int) -> TrainExample:
        rng = np.random.default_rng([self.tcfg.seed, epoch, idx])
        target = Triple(*(int(x) for x in target))
        pos_sub, pos_paths = self.positive(idx, target)
        R = self.g.num_relations
        contrast = _corrupt_all(pos_paths, R, rng) if pos_paths else []
        neg = sample_negative_triple(self.g, target, rng)
        neg_sub = extract_enclosing_subgraph(self.g, neg, self.mcfg.k, remove_target_edge=True)
        neg_found = enumerate_paths(neg_sub, self.mcfg.max_path_len)
        neg_paths = negative_triple_paths(self.tcfg.negative_paths, neg_found, contrast, R, rng)
        keep = 1.0 - self.mcfg.edge_dropout
        pos_mask = (rng.random(pos_sub.num_edges) < keep).astype(np.float64)
        neg_mask = (rng.random(neg_sub.num_edges) < keep).astype(np.float64)
        return TrainExample(target, pos_sub, pos_paths, contrast, neg, neg_sub, neg_paths, pos_mask, neg_mask)


# ---------------------------------------------------------------------------
# objective


def batch_objective(model: RPCIRModel, examples: list[TrainExample], cfg: TrainConfig, dropout: bool = True) -> dict:
    """Mean joint loss over a batch plus its components (tensors).

    Path terms of examples whose positive subgraph has no path are zeroed.
    """
    B = len(examples)
    subs = [ex.pos_sub for ex in examples] + [ex.neg_sub for ex in examples]
    rels = np.asarray([ex.target.relation for ex in examples] * 2, dtype=np.int64)
    masks = [ex.pos_mask for ex in examples] + [ex.neg_mask for ex in examples] if dropout else None
    batch = collate_graphs(subs, rels, masks)
    use_paths = cfg.ablation != "no_paths"
    pb = PathBatch([ex.pos_paths for ex in examples] + [ex.neg_paths for ex in examples]) if use_paths else None
    rate = model.cfg.edge_dropout if dropout else 0.0
    out = forward(model, batch, pb, rate)
    f = out["scores"]
    pos_ix, neg_ix = np.arange(B), np.arange(B, 2 * B)
    l_g = loss_margin(ad.index_select(f, pos_ix), ad.index_select(f, neg_ix), cfg.margin)
    zero = Tensor(np.zeros(B))
    l_n, l_c = zero, zero
    if use_paths:
        R = model.params["relation_emb"]
        has = np.asarray([len(ex.pos_paths) > 0 for ex in examples], dtype=np.float64)
        p_plus = ad.index_select(out["path_repr"], pos_ix)
        if has.any():
            base = ad.index_select(R, np.arange(model.num_base_relations))
            l_c = ad.mul(loss_supervised(p_plus, base, rels[:B]), has)
        if cfg.ablation == "full":
            has_n = has * np.asarray([len(ex.contrast_negatives) > 0 for ex in examples], dtype=np.float64)
            if has_n.any():
                p_minus, _ = aggregate_paths_batch(model, PathBatch([ex.contrast_negatives for ex in examples]), rels[:B])
                r_t = ad.index_select(R, rels[:B])
                l_n = ad.mul(loss_path_contrast(p_plus, p_minus, r_t), has_n)
    parts = {"L_G": ad.mean(l_g), "L_N": ad.mean(l_n), "L_C": ad.mean(l_c)}
    total = total_loss(parts["L_G"], parts["L_N"], parts["L_C"], cfg.lambda1, cfg.lambda2, cfg.ablation)
    return {"loss": total, **parts}


def model_gradient_check(model: RPCIRModel, examples: list[TrainExample], cfg: TrainConfig, step: float = 1e-5, tolerance: float = 1e-4) -> dict:
    """Finite-difference check of the joint loss w.r.t. every parameter group.

    Edge-dropout masks stored in the examples are reused, so the loss is a
    deterministic function of the parameters.
    """
    return ad.gradient_check(lambda: batch_objective(model, examples, cfg)["loss"], model.params, step, tolerance)


class Adam:
    def __init__(self, params: dict, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            self.params[k].data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    model: RPCIRModel
    log: list = field(default_factory=list)
    best_epoch: int | None = None
    best_valid_auc_pr: float | None = None


def _dump_failure(out_dir, epoch, step, examples, values) -> str:
    info = {"epoch": epoch, "step": step, "losses": values, "examples": [ex.describe() for ex in examples]}
    text = json.dumps(info)
    if out_dir is not None:
        path = Path(out_dir) / "nonfinite_dump.json"
        path.write_text(text)
        return str(path)
    return text


def train(
    split: InductiveSplit,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    output_dir=None,
    valid_negatives_seed: int | None = None,
) -> TrainResult:
    """Mini-batch Adam over ``split.train_targets``; keeps the best validation AUC-PR parameters."""
    from .evaluator import auc_pr, corrupt_filtered, score_triples

    g = with_inverse(split.train_graph)
    model = RPCIRModel(model_cfg, g.num_relations, g.num_base_relations, seed=train_cfg.seed)
    opt = Adam(model.params, lr=train_cfg.learning_rate)
    builder = ExampleBuilder(g, model_cfg, train_cfg)
    targets = list(split.train_targets)
    result = TrainResult(model=model)
    out = Path(output_dir) if output_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "train_log.jsonl").write_text("")
        (out / "timing.jsonl").write_text("")

    valid = list(split.valid_targets)
    vseed = train_cfg.seed if valid_negatives_seed is None else valid_negatives_seed
    valid_neg = corrupt_filtered(g, valid, np.random.default_rng([vseed, 7919])) if valid else []
    use_paths = train_cfg.ablation != "no_paths"
    best_state = model.state()
    pool = ThreadPoolExecutor(train_cfg.threads) if train_cfg.threads > 1 else None

    try:
        for epoch in range(train_cfg.epochs):
            t0 = time.perf_counter()
            order = np.random.default_rng([train_cfg.seed, epoch, 2**31 - 1]).permutation(len(targets))
            sums = {"loss": 0.0, "L_G": 0.0, "L_N": 0.0, "L_C": 0.0}
            nb = 0
            for step, start in enumerate(range(0, len(order), train_cfg.batch_size)):
                idxs = order[start : start + train_cfg.batch_size].tolist()
                if pool is not None:
                    examples = list(pool.map(lambda i: builder.build(i, targets[i], epoch), idxs))
                else:
                    examples = [builder.build(i, targets[i], epoch) for i in idxs]
                with Tape() as tape:
                    obj = batch_objective(model, examples, train_cfg)
                values = {k: float(v.data) for k, v in obj.items()}
                if not all(np.isfinite(list(values.values()))):
                    where = _dump_failure(out, epoch, step, examples, values)
                    raise NumericError(f"non-finite loss at epoch {epoch} step {step}: {values}; dump: {where}")
                grads = tape.backward(obj["loss"], model.params)
                opt.step(grads)
                for k in sums:
                    sums[k] += values[k]
                nb += 1
            row = {"epoch": epoch}
            for k, name in (("loss", "train_loss"), ("L_G", "L_G"), ("L_N", "L_N"), ("L_C", "L_C")):
                row[name] = sums[k] / max(nb, 1)
            if valid:
                scores = score_triples(model, g, valid + valid_neg, use_paths=use_paths)
                vauc = auc_pr(scores[: len(valid)], scores[len(valid) :])
                row["valid_auc_pr"] = vauc
                if result.best_valid_auc_pr is None or vauc >= result.best_valid_auc_pr:
                    result.best_valid_auc_pr, result.best_epoch = vauc, epoch
                    best_state = model.state()
            else:
                row["valid_auc_pr"] = None
                result.best_epoch = epoch
                best_state = model.state()
            seconds = time.perf_counter() - t0
            result.log.append(row)
            log.info("epoch %d loss %.4f valid_auc_pr %s (%.1fs)", epoch, row["train_loss"], row["valid_auc_pr"], seconds)
            if out is not None:
                with open(out / "train_log.jsonl", "a") as fh:
                    fh.write(json.dumps(row) + "\n")
                with open(out / "timing.jsonl", "a") as fh:
                    fh.write(json.dumps({"epoch": epoch, "seconds": seconds}) + "\n")
    finally:
        if pool is not None:
            pool.shutdown()

    model.load_state(best_state)
    if out is not None:
        save_checkpoint(out / "checkpoint.json", model, train_cfg)
    return result


def save_checkpoint(path, model: RPCIRModel, train_cfg: TrainConfig | None = None) -> None:
    meta = {
        "model_config": model.cfg.to_dict(),
        "num_relations": model.num_relations,
        "num_base_relations": model.num_base_relations,
    }
    if train_cfg is not None:
        meta["train_config"] = train_cfg.to_dict()
    ad.save_params(path, model.params, meta)


def load_checkpoint(path) -> tuple[RPCIRModel, dict]:
    arrays, meta = ad.load_params(path)
    cfg = ModelConfig.from_dict(meta["model_config"])
    model = RPCIRModel(cfg, meta["num_relations"], meta["num_base_relations"])
    model.load_state(arrays)
    return model, meta
