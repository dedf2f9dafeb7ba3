"""Contrastive pre-training on premise selection.

A theorem and its candidate premises are encoded, mapped through a small
projection head, and scored by raw dot products.  Training minimizes the
softmax cross-entropy of the positive premise (InfoNCE, no temperature).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoder import make_encoder
from .numcore import (AdamState, ParamStore, SplitMix64, Tensor, adam_step, add, backward,
                      concat_rows, glorot, matmul, relu, softmax_nll, take_rows, transpose)
from .sexpr import NodeVocab, TermAst, vocab_from_corpus

MAX_NEGATIVES = 10


class NonFiniteInput(ValueError):
    pass


class EmptyCandidates(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


@dataclass(frozen=True)
class PremiseInstance:
    theorem: TermAst
    positive: TermAst
    negatives: tuple[TermAst, ...]

    def __post_init__(self):
        if not 1 <= len(self.negatives) <= MAX_NEGATIVES:
            raise ValueError(f"instance needs 1..{MAX_NEGATIVES} negatives, got {len(self.negatives)}")

    @property
    def candidates(self) -> tuple[TermAst, ...]:
        """Positive first, then negatives."""
        return (self.positive,) + tuple(self.negatives)


@dataclass
class PretrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    seed: int = 0
    layers: int = 5
    hidden: int = 256
    proj_dim: int = 256
    encoder: str = "gin"
    bn_scope: str = "batch"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


class ProjectionHead:
    """Two-layer MLP ``z = relu(h W1 + b1) W2 + b2``; no normalization."""

    def __init__(self, store: ParamStore, hidden: int, out_dim: int, rng: SplitMix64,
                 prefix: str = "projection"):
        self.w1 = store.add(prefix + ".w1", glorot(rng, hidden, hidden))
        self.b1 = store.add(prefix + ".b1", np.zeros((1, hidden)))
        self.w2 = store.add(prefix + ".w2", glorot(rng, hidden, out_dim))
        self.b2 = store.add(prefix + ".b2", np.zeros((1, out_dim)))

    def __call__(self, h: Tensor) -> Tensor:
        return add(matmul(relu(add(matmul(h, self.w1), self.b1)), self.w2), self.b2)


def project(h, head: ProjectionHead) -> np.ndarray:
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    return head(Tensor(h)).data


def contrastive_logits(z_t: Tensor, z_cands: Tensor) -> Tensor:
    """Dot products of the theorem row with each candidate row, as a (1, N) row."""
    return transpose(matmul(z_cands, transpose(z_t)))


def info_nce_from_logits(logits: Tensor) -> Tensor:
    if not np.all(np.isfinite(logits.data)):
        raise NonFiniteInput("non-finite similarity score")
    return softmax_nll(logits, 0)


def info_nce(z_t, z_pos, z_negs) -> Tensor:
    """InfoNCE with the positive in the denominator.

    Accepts tensors or arrays: ``z_t`` and ``z_pos`` of shape (Z,) or (1, Z) and
    ``z_negs`` of shape (n, Z) or a sequence of vectors.
    """
    def row(v):
        t = v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=np.float64))
        return t if t.data.ndim == 2 else Tensor(t.data.reshape(1, -1))

    negs = z_negs if isinstance(z_negs, Tensor) else [row(v) for v in z_negs]
    if isinstance(negs, list):
        if not negs:
            raise ValueError("info_nce needs at least one negative")
        negs = concat_rows(negs)
    parts = [row(z_t), row(z_pos), negs]
    for p in parts:
        if not np.all(np.isfinite(p.data)):
            raise NonFiniteInput("non-finite embedding")
    cands = concat_rows([parts[1], parts[2]])
    return info_nce_from_logits(contrastive_logits(parts[0], cands))


def argmax_first(scores: Sequence[float]) -> int:
    """Index of the largest score; ties go to the lowest index."""
    if len(scores) == 0:
        raise EmptyCandidates("no candidates to select from")
    return int(np.argmax(np.asarray(scores, dtype=np.float64)))


class PremiseSelector:
    """Encoder plus projection head, all parameters in one store."""

    def __init__(self, vocab: NodeVocab, config: PretrainConfig, store: ParamStore | None = None):
        self.vocab = vocab
        self.config = config
        self.store = store if store is not None else ParamStore()
        root = SplitMix64(config.seed)
        self.encoder = make_encoder(config.encoder, vocab, self.store, layers=config.layers,
                                    hidden=config.hidden, seed=root.fork(0).next_u64(),
                                    bn_scope=config.bn_scope)
        self.head = ProjectionHead(self.store, config.hidden, config.proj_dim, root.fork(1))

    def prepare(self, theorem: TermAst, candidates: Sequence[TermAst]):
        return self.encoder.prepare([theorem, *candidates])

    def logits_prepared(self, batch, train: bool) -> Tensor:
        z = self.head(self.encoder.encode_prepared(batch, train))
        n = z.shape[0]
        return contrastive_logits(take_rows(z, [0]), take_rows(z, list(range(1, n))))

    def scores(self, theorem: TermAst, candidates: Sequence[TermAst], train: bool = False) -> np.ndarray:
        if not candidates:
            raise EmptyCandidates("no candidates to select from")
        return self.logits_prepared(self.prepare(theorem, candidates), train).data.reshape(-1)


def select_premise(theorem: TermAst, premises: Sequence[TermAst], model: PremiseSelector) -> int:
    if not premises:
        raise EmptyCandidates("no premises to select from")
    return argmax_first(model.scores(theorem, premises, train=False))


def eval_premise(dataset: Sequence[PremiseInstance], model: PremiseSelector) -> float:
    """Fraction of instances whose top-scoring candidate is the positive."""
    if not dataset:
        raise EmptyDataset("cannot evaluate an empty dataset")
    hits = sum(select_premise(inst.theorem, inst.candidates, model) == 0 for inst in dataset)
    return hits / len(dataset)


@dataclass
class EpochMetrics:
    epoch: int
    mean_loss: float
    top1: float

    def csv(self) -> str:
        return f"{self.epoch},{self.mean_loss!r},{self.top1!r}"


@dataclass
class PretrainResult:
    model: PremiseSelector
    metrics: list[EpochMetrics] = field(default_factory=list)

    @property
    def store(self) -> ParamStore:
        return self.model.store


def pretrain(dataset: Sequence[PremiseInstance], config: PretrainConfig,
             vocab: NodeVocab | None = None, log=None) -> PretrainResult:
    """Per-instance Adam on InfoNCE over encoder and projection jointly."""
    if not dataset:
        raise EmptyDataset("cannot pre-train on an empty dataset")
    if vocab is None:
        vocab = vocab_from_corpus(a for inst in dataset for a in (inst.theorem, *inst.candidates))
    model = PremiseSelector(vocab, config)
    store = model.store
    batches = [model.prepare(inst.theorem, inst.candidates) for inst in dataset]
    adam = AdamState(lr=config.lr)
    rng = SplitMix64(config.seed).fork(2)
    result = PretrainResult(model)
    order = list(range(len(dataset)))
    for epoch in range(1, config.epochs + 1):
        rng.shuffle(order)
        losses, hits = [], 0
        for i in order:
            logits = model.logits_prepared(batches[i], train=True)
            loss = info_nce_from_logits(logits)
            losses.append(loss.item())
            hits += argmax_first(logits.data.reshape(-1)) == 0
            adam_step(store, backward(loss, store), adam)
        m = EpochMetrics(epoch, math.fsum(losses) / len(losses), hits / len(dataset))
        result.metrics.append(m)
        if log is not None:
            log(m)
    return result
