# Turning theorem statements into vectors.
#
# Terms are s-expressions.  Each one becomes a tree, the tree becomes an
# undirected graph with one-hot node labels, and the graph goes through a
# small GIN.  A TreeLSTM reads the same tree bottom-up for comparison.
import numpy as np

from prooflens.encoder import GinEncoder, TreeLstmEncoder, gin_encode, treelstm_encode
from prooflens.numcore import ParamStore
from prooflens.sexpr import ast_to_graph, parse_term, vocab_from_corpus

terms = [
    "(Eq (App (Const add) (Var n)) (Var n))",
    "(Eq (Var n) (App (Const add) (Var n)))",
    "(Prod x (Eq (Var x) (Var x)))",
]
asts = [parse_term(t) for t in terms]
vocab = vocab_from_corpus(asts)
print("labels:", vocab.labels)

# identifiers become IDENT leaves, so `n` and `x` look the same to the encoder
g = ast_to_graph(asts[0], vocab)
print(g.num_nodes, "nodes,", g.num_undirected_edges, "edges")
print(g.features.astype(int))

# %% GIN embeddings.  Swapping the two sides of an equation changes nothing,
# since message passing never sees child order.
gin = GinEncoder(vocab, ParamStore(), layers=3, hidden=8, seed=0)
emb = np.array([gin_encode(ast_to_graph(a, vocab), gin, train=False) for a in asts])
np.set_printoptions(precision=3, suppress=True)
print(emb)
print("swapped sides, max difference:", np.abs(emb[0] - emb[1]).max())

# relabel the nodes at random; the readout should not move
perm = np.random.default_rng(1).permutation(g.num_nodes)
shuffled = gin_encode(g.relabeled(list(perm)), gin, train=False)
print("after relabeling, max difference:", np.abs(shuffled - emb[0]).max())

# %% The child-sum TreeLSTM also sums children, so it is order-blind as well
lstm = TreeLstmEncoder(vocab, ParamStore(), hidden=8, seed=0)
h = np.array([treelstm_encode(a, lstm) for a in asts])
print(h)
print("TreeLSTM, swapped sides:", np.abs(h[0] - h[1]).max())
