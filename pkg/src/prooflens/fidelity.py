"""Gradient checks of the two composite training objectives on tiny models.

Both checks run in eval mode after a few train-mode forwards have moved the
batch-norm running statistics away from their (0, 1) initial values.  In
train mode the biases feeding a batch norm have an exactly zero gradient,
which leaves nothing for a relative-error test to compare.
"""
from __future__ import annotations

from dataclasses import dataclass

from .contrastive import PremiseSelector, PretrainConfig, info_nce_from_logits
from .numcore import grad_check
from .sexpr import UNK, NodeVocab, parse_term
from .tactic import TacticConfig, TacticModel, load_grammar, parse_tactic, derivation_sequence
from .tactic.decoder import _teacher_forced

# six labels plus UNK gives a one-hot width of 7
TINY_LABELS = ("App", "Eq", "IDENT", "Lam", "Nat", "Var")
TINY_THEOREM = "(Eq (App f (Nat)) (Lam x (Var)))"
TINY_CANDIDATES = (
    "(App f (Nat))",
    "(Eq (Var) (Var))",
    "(Lam y (App g (Nat)))",
    "(Eq (Lam x (Var)) z)",
)
TINY_TACTIC = "seq ( apply P1 , intro )"


@dataclass(frozen=True)
class TinyDims:
    hidden: int = 8
    layers: int = 2
    state: int = 8
    proj: int = 8
    action: int = 4


def tiny_vocab() -> NodeVocab:
    return NodeVocab(TINY_LABELS + (UNK,))


def _warm(run, passes: int = 3) -> None:
    for _ in range(passes):
        run(True)


def premise_objective(seed: int = 0, dims: TinyDims = TinyDims(), encoder: str = "gin"):
    """Eval-mode InfoNCE closure over encoder and projection, plus its store."""
    model = PremiseSelector(tiny_vocab(), PretrainConfig(
        seed=seed, layers=dims.layers, hidden=dims.hidden, proj_dim=dims.proj, encoder=encoder))
    batch = model.prepare(parse_term(TINY_THEOREM), [parse_term(c) for c in TINY_CANDIDATES])
    _warm(lambda train: model.logits_prepared(batch, train))
    return (lambda: info_nce_from_logits(model.logits_prepared(batch, False))), model.store


def tactic_objective(seed: int = 0, dims: TinyDims = TinyDims(), encoder: str = "gin"):
    """Eval-mode teacher-forced loss closure over encoder and decoder, plus its store."""
    grammar = load_grammar()
    model = TacticModel(tiny_vocab(), grammar, TacticConfig(
        seed=seed, layers=dims.layers, hidden=dims.hidden, state_dim=dims.state,
        action_dim=dims.action, encoder=encoder))
    premises = [parse_term(c) for c in TINY_CANDIDATES]
    names = [f"P{i}" for i in range(len(premises))]
    gold = derivation_sequence(grammar, parse_tactic(grammar, TINY_TACTIC, names))
    batch = model.prepare(parse_term(TINY_THEOREM), premises)
    run = lambda train: _teacher_forced(model, batch, len(premises), gold, train)[0]
    _warm(run)
    return (lambda: run(False)), model.store


def gradient_fidelity(seed: int = 0, encoder: str = "gin", eps: float = 1e-6) -> dict[str, float]:
    """Worst relative gradient error of each objective."""
    out = {}
    for name, build in (("encoder+projection+info_nce", premise_objective),
                        ("encoder+decoder+teacher_forced", tactic_objective)):
        forward, store = build(seed, encoder=encoder)
        out[name] = grad_check(forward, store, eps=eps)
    return out
