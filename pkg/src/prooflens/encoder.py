"""Term encoders: a GIN over the undirected AST graph and a Child-Sum TreeLSTM.

Both encoders map a list of terms to a ``(n_terms, hidden)`` tensor.  Terms are
batched into one block-diagonal computation.  GIN batch normalization pools
statistics over all nodes of the batch by default, or per term on request.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .numcore import (BatchNormState, ParamStore, ShapeMismatch, SplitMix64, Tensor, add,
                      batchnorm, concat_rows, glorot, matmul, mul, relu, scale, sigmoid,
                      slice_cols, spmm, take_rows, tanh)
from .sexpr import NodeVocab, TermAst, TermGraph, ast_to_graph


@dataclass
class GinLayer:
    w1: Tensor
    b1: Tensor
    bn1: BatchNormState
    w2: Tensor
    b2: Tensor
    bn2: BatchNormState


@dataclass
class GraphBatch:
    """Disjoint union of graphs: stacked features, (A + I), per-graph row ranges."""

    features: np.ndarray
    propagate: sp.csr_matrix
    segments: list[tuple[int, int]]
    pool: sp.csr_matrix

    @classmethod
    def from_graphs(cls, graphs: Sequence[TermGraph]) -> "GraphBatch":
        if not graphs:
            raise ValueError("empty graph batch")
        offsets = np.cumsum([0] + [g.num_nodes for g in graphs])
        total = int(offsets[-1])
        rows, cols = [np.arange(total)], [np.arange(total)]
        prow, pcol, pval = [], [], []
        for gi, (g, off) in enumerate(zip(graphs, offsets)):
            if len(g.edges):
                rows.append(g.edges[:, 0] + off)
                cols.append(g.edges[:, 1] + off)
            prow.extend([gi] * g.num_nodes)
            pcol.extend(range(off, off + g.num_nodes))
            pval.extend([1.0 / g.num_nodes] * g.num_nodes)
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        prop = sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(total, total))
        pool = sp.csr_matrix((pval, (prow, pcol)), shape=(len(graphs), total))
        segs = [(int(offsets[i]), int(offsets[i + 1])) for i in range(len(graphs))]
        return cls(np.concatenate([g.features for g in graphs]), prop, segs, pool)


def _set_mode(states: Sequence[BatchNormState], train: bool) -> None:
    for st in states:
        st.training = train


def gin_layer(h: Tensor, batch: GraphBatch, layer: GinLayer, train: bool = True,
              bn_scope: str = "batch") -> Tensor:
    """One GIN update: MLP(h_v + sum of neighbor states), MLP = (Linear, BN, ReLU) x 2.

    ``bn_scope="batch"`` normalizes over every node in the batch; ``"graph"``
    uses each graph's own nodes.
    """
    if h.shape[0] != batch.propagate.shape[0]:
        raise ShapeMismatch(f"{h.shape[0]} node states for {batch.propagate.shape[0]} nodes")
    if bn_scope not in ("batch", "graph"):
        raise ValueError(f"unknown bn_scope {bn_scope!r}")
    segs = batch.segments if bn_scope == "graph" else None
    _set_mode((layer.bn1, layer.bn2), train)
    agg = spmm(batch.propagate, h)
    x = relu(batchnorm(add(matmul(agg, layer.w1), layer.b1), layer.bn1, segs))
    return relu(batchnorm(add(matmul(x, layer.w2), layer.b2), layer.bn2, segs))


def gin_readout(batch: GraphBatch, layers: Sequence[GinLayer], train: bool = True,
                bn_scope: str = "batch") -> Tensor:
    """Average over iterations 1..K of the per-graph node mean."""
    h = Tensor(batch.features)
    pooled = None
    for layer in layers:
        h = gin_layer(h, batch, layer, train, bn_scope)
        p = spmm(batch.pool, h)
        pooled = p if pooled is None else add(pooled, p)
    return scale(pooled, 1.0 / len(layers))


class GinEncoder:
    kind = "gin"

    def __init__(self, vocab: NodeVocab, store: ParamStore, layers: int = 5, hidden: int = 256,
                 seed: int = 0, prefix: str = "encoder", bn_scope: str = "batch"):
        if layers < 1:
            raise ValueError("GIN needs at least one layer")
        self.vocab = vocab
        self.bn_scope = bn_scope
        self.hidden = hidden
        self.store = store
        rng = SplitMix64(seed)
        self.layers: list[GinLayer] = []
        d_in = vocab.dim
        for k in range(layers):
            p = f"{prefix}.layer{k}"
            w1 = store.add(p + ".w1", glorot(rng, d_in, hidden))
            b1 = store.add(p + ".b1", np.zeros((1, hidden)))
            bn1 = store.add_batchnorm(p + ".bn1", hidden)
            w2 = store.add(p + ".w2", glorot(rng, hidden, hidden))
            b2 = store.add(p + ".b2", np.zeros((1, hidden)))
            bn2 = store.add_batchnorm(p + ".bn2", hidden)
            self.layers.append(GinLayer(w1, b1, bn1, w2, b2, bn2))
            d_in = hidden

    def prepare(self, asts: Sequence[TermAst]) -> GraphBatch:
        return GraphBatch.from_graphs([ast_to_graph(a, self.vocab) for a in asts])

    def encode_prepared(self, batch: GraphBatch, train: bool = True) -> Tensor:
        return gin_readout(batch, self.layers, train, self.bn_scope)

    def encode(self, asts: Sequence[TermAst], train: bool = True) -> Tensor:
        return self.encode_prepared(self.prepare(asts), train)

    def encode_graphs(self, graphs: Sequence[TermGraph], train: bool = True) -> Tensor:
        return self.encode_prepared(GraphBatch.from_graphs(graphs), train)


def gin_encode(graph: TermGraph, encoder: GinEncoder, train: bool = True) -> np.ndarray:
    """Embedding of a single graph as a flat array."""
    return encoder.encode_graphs([graph], train).data[0].copy()


# ------------------------------------------------------------------ TreeLSTM

@dataclass
class TreeLevel:
    """Nodes of equal height across a batch of trees, with child wiring.

    ``gather`` picks child rows out of all lower levels; ``owner`` maps each
    child edge to its parent row within this level.
    """

    features: np.ndarray
    gather: sp.csr_matrix | None
    owner: sp.csr_matrix | None


@dataclass
class TreeBatch:
    levels: list[TreeLevel]
    roots: list[int]  # row of each tree's root in the level-ordered stack


def build_tree_batch(asts: Sequence[TermAst], vocab: NodeVocab) -> TreeBatch:
    heights: list[list[int]] = []
    for ast in asts:
        h = [0] * len(ast)
        for node in reversed(ast.nodes):  # pre-order ids: children follow parents
            if node.children:
                h[node.id] = 1 + max(h[c] for c in node.children)
        heights.append(h)
    top = max(max(h) for h in heights)
    members: list[list[tuple[int, int]]] = [[] for _ in range(top + 1)]
    for t, h in enumerate(heights):
        for nid, lvl in enumerate(h):
            members[lvl].append((t, nid))
    row_of: dict[tuple[int, int], int] = {}
    levels = []
    done = 0
    for lvl, nodes in enumerate(members):
        feats = np.zeros((len(nodes), vocab.dim))
        for r, (t, nid) in enumerate(nodes):
            feats[r, vocab.index(asts[t].nodes[nid].label)] = 1.0
        if lvl == 0:
            levels.append(TreeLevel(feats, None, None))
        else:
            g_rows, g_cols, o_rows, o_cols = [], [], [], []
            e = 0
            for r, (t, nid) in enumerate(nodes):
                for c in asts[t].nodes[nid].children:
                    g_rows.append(e)
                    g_cols.append(row_of[(t, c)])
                    o_rows.append(r)
                    o_cols.append(e)
                    e += 1
            gather = sp.csr_matrix((np.ones(e), (g_rows, g_cols)), shape=(e, done))
            owner = sp.csr_matrix((np.ones(e), (o_rows, o_cols)), shape=(len(nodes), e))
            levels.append(TreeLevel(feats, gather, owner))
        for r, key in enumerate(nodes):
            row_of[key] = done + r
        done += len(nodes)
    roots = [row_of[(t, ast.root)] for t, ast in enumerate(asts)]
    return TreeBatch(levels, roots)


class TreeLstmEncoder:
    """Child-Sum TreeLSTM; the term embedding is the root hidden state.

    Input, output and update gates share fused weights ``w_iou``/``u_iou``
    (column blocks i | o | u); forget gates are computed per child.
    """

    kind = "treelstm"

    def __init__(self, vocab: NodeVocab, store: ParamStore, hidden: int = 256, seed: int = 0,
                 prefix: str = "encoder"):
        self.vocab = vocab
        self.hidden = hidden
        self.store = store
        rng = SplitMix64(seed)
        H, D = hidden, vocab.dim
        fused = lambda rows: np.concatenate([glorot(rng, rows, H) for _ in range(3)], axis=1)
        self.w_iou = store.add(prefix + ".w_iou", fused(D))
        self.u_iou = store.add(prefix + ".u_iou", fused(H))
        self.b_iou = store.add(prefix + ".b_iou", np.zeros((1, 3 * H)))
        self.w_f = store.add(prefix + ".w_f", glorot(rng, D, H))
        self.u_f = store.add(prefix + ".u_f", glorot(rng, H, H))
        self.b_f = store.add(prefix + ".b_f", np.zeros((1, H)))

    def prepare(self, asts: Sequence[TermAst]) -> TreeBatch:
        return build_tree_batch(asts, self.vocab)

    def _gates(self, pre: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        H = self.hidden
        return (sigmoid(slice_cols(pre, 0, H)), sigmoid(slice_cols(pre, H, 2 * H)),
                tanh(slice_cols(pre, 2 * H, 3 * H)))

    def encode_prepared(self, batch: TreeBatch, train: bool = True) -> Tensor:
        hs: list[Tensor] = []
        cs: list[Tensor] = []
        for level in batch.levels:
            x = Tensor(level.features)
            pre = add(matmul(x, self.w_iou), self.b_iou)
            if level.gather is None:
                i, o, u = self._gates(pre)
                c = mul(i, u)
            else:
                h_prev = concat_rows(hs)
                c_prev = concat_rows(cs)
                h_child = spmm(level.gather, h_prev)
                c_child = spmm(level.gather, c_prev)
                h_sum = spmm(level.owner, h_child)
                pre = add(pre, matmul(h_sum, self.u_iou))
                i, o, u = self._gates(pre)
                xf = spmm(level.owner.T, matmul(x, self.w_f))
                f = sigmoid(add(add(xf, matmul(h_child, self.u_f)), self.b_f))
                c = add(mul(i, u), spmm(level.owner, mul(f, c_child)))
            hs.append(mul(o, tanh(c)))
            cs.append(c)
        return take_rows(concat_rows(hs), batch.roots)

    def encode(self, asts: Sequence[TermAst], train: bool = True) -> Tensor:
        return self.encode_prepared(self.prepare(asts), train)


def treelstm_encode(ast: TermAst, encoder: TreeLstmEncoder) -> np.ndarray:
    return encoder.encode([ast]).data[0].copy()


def make_encoder(kind: str, vocab: NodeVocab, store: ParamStore, layers: int = 5,
                 hidden: int = 256, seed: int = 0, bn_scope: str = "batch"):
    if kind == "gin":
        return GinEncoder(vocab, store, layers=layers, hidden=hidden, seed=seed, bn_scope=bn_scope)
    if kind == "treelstm":
        return TreeLstmEncoder(vocab, store, hidden=hidden, seed=seed)
    raise ValueError(f"unknown encoder {kind!r}")
