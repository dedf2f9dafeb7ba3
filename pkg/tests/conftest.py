import random

import pytest
from hypothesis import strategies as st

from prooflens.datagen import CorpusConfig, gen_synthetic_corpus
from prooflens.sexpr import UNK, NodeVocab, parse_term
from prooflens.tactic import load_grammar

LABELS = ("App", "Const", "Eq", "Lam", "Prod", "Var")
IDENTS = ("a", "b", "f", "x", "y")


def random_term_text(rng: random.Random, max_nodes: int = 30) -> str:
    """A random term with at most ``max_nodes`` nodes (labels and identifier leaves)."""
    budget = [rng.randint(1, max_nodes)]

    def build() -> str:
        budget[0] -= 1
        if budget[0] <= 0 or rng.random() < 0.3:
            return rng.choice(IDENTS) if rng.random() < 0.6 else f"({rng.choice(LABELS)})"
        kids = []
        for _ in range(rng.randint(1, 3)):
            if budget[0] <= 0:
                break
            kids.append(build())
        return f"({rng.choice(LABELS)} {' '.join(kids)})" if kids else f"({rng.choice(LABELS)})"

    return build()


@st.composite
def term_texts(draw, max_nodes: int = 30):
    seed = draw(st.integers(min_value=0, max_value=2**32 - 1))
    return random_term_text(random.Random(seed), max_nodes)


@pytest.fixture(scope="session")
def vocab():
    return NodeVocab(tuple(sorted(LABELS + ("IDENT",))) + (UNK,))


@pytest.fixture(scope="session")
def grammar():
    return load_grammar()


@pytest.fixture(scope="session")
def small_corpus():
    return gen_synthetic_corpus(CorpusConfig(num_files=4, statements_per_file=12, seed=3))


@pytest.fixture
def six_node_tree():
    return parse_term("(Eq (App f (Var)) (Lam x))")
