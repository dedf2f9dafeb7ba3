import random

import numpy as np
import pytest

import oracles
from conftest import random_term_text
from prooflens.encoder import (GinEncoder, GraphBatch, TreeLstmEncoder, gin_encode, gin_layer,
                               make_encoder, treelstm_encode)
from prooflens.numcore import ParamStore, ShapeMismatch, SplitMix64, Tensor, grad_check, sum_all, mul
from prooflens.sexpr import IDENT, UNK, NodeVocab, ast_to_graph, parse_term


def gin(vocab, layers=2, hidden=6, seed=0, **kw):
    return GinEncoder(vocab, ParamStore(), layers=layers, hidden=hidden, seed=seed, **kw)


def perturb_batchnorms(store, seed):
    """Move every BN scale, shift and running statistic away from its neutral value."""
    rng = SplitMix64(seed)
    for prefix, bn in store.batchnorms().items():
        f = bn.features
        bn.gamma.data = rng.uniform(0.5, 1.5, (1, f))
        bn.beta.data = rng.uniform(-0.3, 0.3, (1, f))
        bn.running_mean = rng.uniform(-0.5, 0.5, (f,))
        bn.running_var = rng.uniform(0.3, 2.0, (f,))


# ------------------------------------------------------------------ GIN

@pytest.mark.parametrize("train", [True, False])
def test_gin_matches_loop_oracle_on_six_node_tree(vocab, six_node_tree, train):
    enc = gin(vocab, layers=3, hidden=5, seed=11)
    perturb_batchnorms(enc.store, 4)
    params = oracles.gin_params(enc.store, 3)
    got = gin_encode(ast_to_graph(six_node_tree, vocab), enc, train=train)
    want = oracles.gin_embedding(six_node_tree, list(vocab.labels), params, train)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_gin_three_node_star_matches_hand_evaluation():
    # features: centre label A, leaves label B; one layer, H=2, all BN neutral (eval)
    v = NodeVocab(("A", "B", UNK))
    enc = gin(v, layers=1, hidden=2)
    layer = enc.layers[0]
    layer.w1.data = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    layer.w2.data = np.array([[1.0, 1.0], [0.0, 2.0]])
    enc.store.set_training(False)
    out = gin_encode(ast_to_graph(parse_term("(A (B) (B))"), v), enc, train=False)
    # centre agg = A + 2B = (1, 2) -> (1, 2) -> W2 -> (1, 5); leaf agg = A + B = (1, 1) -> (1, 3)
    s = 1.0 / np.sqrt(1.0 + 1e-5)
    centre = np.array([1.0 * s, 5.0 * s]) * s
    leaf = np.array([1.0 * s, 3.0 * s]) * s
    np.testing.assert_allclose(out, (centre + 2 * leaf) / 3, rtol=0, atol=1e-15)


def test_gin_single_node_is_mlp_of_its_feature(vocab):
    enc = gin(vocab, layers=1, hidden=4, seed=3)
    perturb_batchnorms(enc.store, 1)
    ast = parse_term("(Lam)")
    got = gin_encode(ast_to_graph(ast, vocab), enc, train=False)
    want = oracles.gin_embedding(ast, list(vocab.labels), oracles.gin_params(enc.store, 1), False)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_gin_identity_configured_single_node_returns_one_hot():
    v = NodeVocab(("A", "B", IDENT, UNK))
    enc = gin(v, layers=1, hidden=4)
    enc.layers[0].w1.data = np.eye(4)
    enc.layers[0].w2.data = np.eye(4)
    got = gin_encode(ast_to_graph(parse_term("(B)"), v), enc, train=False)
    np.testing.assert_allclose(got, [0.0, 1.0, 0.0, 0.0], atol=1e-5)


def test_gin_equal_neighbours_get_equal_states(vocab):
    enc = gin(vocab, layers=1, hidden=6, seed=2)
    perturb_batchnorms(enc.store, 2)
    ast = parse_term("(Var (Var))")
    batch = GraphBatch.from_graphs([ast_to_graph(ast, vocab)])
    out = gin_layer(Tensor(batch.features), batch, enc.layers[0], train=False).data
    np.testing.assert_array_equal(out[0], out[1])
    want = oracles.gin_node_states(ast, list(vocab.labels), oracles.gin_params(enc.store, 1), False)
    np.testing.assert_allclose(out, want[0], atol=1e-12)


def test_gin_disconnected_identical_subgraphs_agree(vocab):
    enc = gin(vocab, layers=2, hidden=6, seed=5)
    g = ast_to_graph(parse_term("(App f (Lam x (Var)))"), vocab)
    batch = GraphBatch.from_graphs([g, g])
    h = Tensor(batch.features)
    for layer in enc.layers:
        h = gin_layer(h, batch, layer, train=True)
        n = g.num_nodes
        np.testing.assert_array_equal(h.data[:n], h.data[n:])


def test_gin_layer_rejects_misaligned_states(vocab):
    enc = gin(vocab)
    batch = GraphBatch.from_graphs([ast_to_graph(parse_term("(App x y)"), vocab)])
    with pytest.raises(ShapeMismatch):
        gin_layer(Tensor(np.ones((2, vocab.dim))), batch, enc.layers[0])


def test_gin_permutation_invariance(vocab):
    rng = random.Random(0)
    enc = gin(vocab, layers=3, hidden=16, seed=7)
    perturb_batchnorms(enc.store, 7)
    for _ in range(25):
        g = ast_to_graph(parse_term(random_term_text(rng, 30)), vocab)
        perm = list(range(g.num_nodes))
        rng.shuffle(perm)
        for train in (True, False):
            a = gin_encode(g, enc, train)
            b = gin_encode(g.relabeled(perm), enc, train)
            assert np.max(np.abs(a - b)) <= 1e-9


def test_gin_batch_scope_per_graph_equals_separate_encoding(vocab):
    enc = gin(vocab, layers=2, hidden=5, seed=1, bn_scope="graph")
    asts = [parse_term("(App f (Var))"), parse_term("(Lam x (Eq a b))")]
    together = enc.encode(asts, train=True).data
    for i, a in enumerate(asts):
        np.testing.assert_allclose(together[i], enc.encode([a], train=True).data[0], atol=1e-14)


def test_gin_eval_batch_equals_separate_encoding(vocab):
    enc = gin(vocab, layers=2, hidden=5, seed=1)
    perturb_batchnorms(enc.store, 3)
    asts = [parse_term("(App f (Var))"), parse_term("(Lam x (Eq a b))"), parse_term("z")]
    together = enc.encode(asts, train=False).data
    for i, a in enumerate(asts):
        np.testing.assert_allclose(together[i], enc.encode([a], train=False).data[0], atol=1e-14)


def test_gin_parameter_names(vocab):
    enc = gin(vocab, layers=2, hidden=3)
    names = enc.store.names()
    assert "encoder.layer0.w1" in names and "encoder.layer1.bn2.gamma" in names
    assert enc.store["encoder.layer0.w1"].shape == (vocab.dim, 3)
    assert enc.store["encoder.layer1.w1"].shape == (3, 3)


def test_gin_needs_a_layer(vocab):
    with pytest.raises(ValueError):
        gin(vocab, layers=0)


def test_gin_gradients_match_finite_differences(vocab):
    enc = gin(vocab, layers=2, hidden=4, seed=8)
    asts = [parse_term("(App f (Var))"), parse_term("(Lam x (Eq a b))")]
    weights = Tensor(SplitMix64(1).uniform(-1, 1, (2, 4)))
    for _ in range(2):
        enc.encode(asts, train=True)
    forward = lambda: sum_all(mul(enc.encode(asts, train=False), weights))
    assert grad_check(forward, enc.store) <= 1e-4


# ------------------------------------------------------------- TreeLSTM

def lstm(vocab, hidden=4, seed=0):
    return TreeLstmEncoder(vocab, ParamStore(), hidden=hidden, seed=seed)


def test_treelstm_leaf_is_plain_lstm_cell(vocab):
    enc = lstm(vocab, seed=2)
    enc.b_iou.data = SplitMix64(1).uniform(-0.5, 0.5, enc.b_iou.shape)
    ast = parse_term("(Var)")
    H = enc.hidden
    x = np.zeros(vocab.dim)
    x[vocab.index("Var")] = 1.0
    pre = x @ enc.w_iou.data + enc.b_iou.data[0]
    sig = lambda t: 1 / (1 + np.exp(-t))
    c = sig(pre[:H]) * np.tanh(pre[2 * H:])
    h = sig(pre[H:2 * H]) * np.tanh(c)
    np.testing.assert_allclose(treelstm_encode(ast, enc), h, atol=1e-15)


@pytest.mark.parametrize("text", ["(Eq a (Var))", "(Eq (App f (Var)) (Lam x))",
                                  "(App (Lam x (Eq a b c)) (Var) y)"])
def test_treelstm_matches_recursive_oracle(vocab, text):
    enc = lstm(vocab, hidden=5, seed=6)
    rng = SplitMix64(3)
    enc.b_iou.data = rng.uniform(-0.5, 0.5, enc.b_iou.shape)
    enc.b_f.data = rng.uniform(-0.5, 0.5, enc.b_f.shape)
    ast = parse_term(text)
    h, _ = oracles.treelstm_state(ast, list(vocab.labels), oracles.treelstm_params(enc.store))
    np.testing.assert_allclose(treelstm_encode(ast, enc), h, rtol=0, atol=1e-12)


def test_treelstm_ignores_child_order(vocab):
    enc = lstm(vocab, hidden=6, seed=4)
    a = treelstm_encode(parse_term("(App (Lam x (Var)) (Eq a b) y)"), enc)
    b = treelstm_encode(parse_term("(App y (Eq b a) (Lam (Var) x))"), enc)
    np.testing.assert_allclose(a, b, atol=1e-15)


def test_treelstm_batch_equals_single(vocab):
    enc = lstm(vocab, hidden=5, seed=1)
    rng = random.Random(4)
    asts = [parse_term(random_term_text(rng, 20)) for _ in range(6)]
    together = enc.encode(asts).data
    for i, a in enumerate(asts):
        np.testing.assert_allclose(together[i], treelstm_encode(a, enc), atol=1e-14)


def test_treelstm_gradients_match_finite_differences(vocab):
    enc = lstm(vocab, hidden=3, seed=9)
    asts = [parse_term("(Eq (App f (Var)) (Lam x))"), parse_term("y")]
    weights = Tensor(SplitMix64(2).uniform(-1, 1, (2, 3)))
    forward = lambda: sum_all(mul(enc.encode(asts), weights))
    assert grad_check(forward, enc.store) <= 1e-4


def test_make_encoder_dispatch(vocab):
    assert make_encoder("gin", vocab, ParamStore(), layers=1, hidden=2).kind == "gin"
    assert make_encoder("treelstm", vocab, ParamStore(), hidden=2).kind == "treelstm"
    with pytest.raises(ValueError):
        make_encoder("cnn", vocab, ParamStore())
