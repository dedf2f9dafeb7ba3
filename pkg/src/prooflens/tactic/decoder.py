"""Grammar-constrained tactic decoder, teacher-forced training, greedy decoding.

The controller is a tanh recurrence over the actions taken so far::

    s_0     = tanh(h_goal W_init)
    s_{t+1} = tanh(s_t W_s + e(a_t) W_a + b)

where ``e(a)`` is the production embedding, or a shared premise-action
embedding when ``a`` picks a premise.  A nonterminal frontier is scored by
``s_t U`` restricted to that nonterminal's productions; a ``PREMISE_ARG``
frontier by ``(s_t W_p) . h_p`` over the candidate premises.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..encoder import make_encoder
from ..numcore import (AdamState, ParamStore, SplitMix64, Tensor, adam_step, add, backward,
                       glorot, load_store, masked_softmax, matmul, scale, softmax_nll,
                       take_rows, tanh, transpose)
from ..sexpr import NodeVocab, TermAst
from .grammar import (PREMISE_ARG, Action, Grammar, GoldInvalid, TacticNode, is_nonterminal,
                      premise, prod, replay, tree_from_sequence)


class NoValidProductions(ValueError):
    pass


class NoPremises(ValueError):
    pass


class MaxStepsExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class ProofStep:
    file: str
    position: int
    goal: TermAst
    premises: tuple[TermAst, ...]
    gold: tuple[Action, ...]


@dataclass
class TacticConfig:
    epochs: int = 5
    lr: float = 1e-3
    seed: int = 0
    layers: int = 5
    hidden: int = 256
    state_dim: int = 256
    action_dim: int = 64
    encoder: str = "gin"
    bn_scope: str = "batch"


class TacticDecoder:
    def __init__(self, store: ParamStore, grammar: Grammar, hidden: int, state_dim: int = 256,
                 action_dim: int = 64, rng: SplitMix64 | None = None, prefix: str = "decoder"):
        rng = rng or SplitMix64(0)
        P, S, A, H = grammar.size, state_dim, action_dim, hidden
        self.grammar = grammar
        self.state_dim = S
        self.emb = store.add(prefix + ".emb", glorot(rng, P, A))
        self.premise_emb = store.add(prefix + ".premise_emb", glorot(rng, 1, A))
        self.w_s = store.add(prefix + ".w_s", glorot(rng, S, S))
        self.w_a = store.add(prefix + ".w_a", glorot(rng, A, S))
        self.b = store.add(prefix + ".b", np.zeros((1, S)))
        self.w_init = store.add(prefix + ".w_init", glorot(rng, H, S))
        self.u = store.add(prefix + ".u", glorot(rng, S, P))
        self.w_p = store.add(prefix + ".w_p", glorot(rng, S, H))

    def initial_state(self, h_goal: Tensor) -> Tensor:
        return tanh(matmul(h_goal, self.w_init))

    def production_logits(self, s: Tensor) -> Tensor:
        return matmul(s, self.u)

    def premise_logits(self, s: Tensor, h_premises: Tensor) -> Tensor:
        return matmul(matmul(s, self.w_p), transpose(h_premises))

    def transition(self, s: Tensor, action: Action) -> Tensor:
        e = take_rows(self.emb, [action.value]) if action.kind == "prod" else self.premise_emb
        return tanh(add(add(matmul(s, self.w_s), matmul(e, self.w_a)), self.b))

    def logits(self, s: Tensor, frontier: str, h_premises: Tensor | None):
        """Scores and validity mask for one frontier symbol."""
        if frontier == PREMISE_ARG:
            if h_premises is None or h_premises.shape[0] == 0:
                raise NoPremises("PREMISE_ARG with an empty premise list")
            return self.premise_logits(s, h_premises), None
        mask = self.grammar.mask(frontier)
        if not mask.any():
            raise NoValidProductions(f"no productions for {frontier}")
        return self.production_logits(s), mask


def decode_step(state: Tensor, frontier: str, h_premises: Tensor | None, decoder: TacticDecoder,
                action: Action | None = None) -> tuple[np.ndarray, Tensor]:
    """Action distribution at ``frontier`` and the state after ``action``.

    Without ``action`` the most probable one (lowest index on ties) is taken.
    """
    logits, mask = decoder.logits(state, frontier, h_premises)
    probs = masked_softmax(logits.data, mask)
    if action is None:
        idx = int(np.argmax(probs))
        action = premise(idx) if frontier == PREMISE_ARG else prod(idx)
    return probs, decoder.transition(state, action)


class TacticModel:
    """Encoder and decoder sharing one parameter store."""

    def __init__(self, vocab: NodeVocab, grammar: Grammar, config: TacticConfig,
                 store: ParamStore | None = None):
        self.vocab = vocab
        self.grammar = grammar
        self.config = config
        self.store = store if store is not None else ParamStore()
        root = SplitMix64(config.seed)
        self.encoder = make_encoder(config.encoder, vocab, self.store, layers=config.layers,
                                    hidden=config.hidden, seed=root.fork(0).next_u64(),
                                    bn_scope=config.bn_scope)
        self.decoder = TacticDecoder(self.store, grammar, config.hidden, config.state_dim,
                                     config.action_dim, root.fork(3))

    def prepare(self, goal: TermAst, premises: Sequence[TermAst]):
        return self.encoder.prepare([goal, *premises])

    def embed(self, batch, n_premises: int, train: bool) -> tuple[Tensor, Tensor | None]:
        h = self.encoder.encode_prepared(batch, train)
        h_goal = take_rows(h, [0])
        h_prem = take_rows(h, list(range(1, n_premises + 1))) if n_premises else None
        return h_goal, h_prem


def _teacher_forced(model: TacticModel, batch, n_premises: int, gold: Sequence[Action],
                    train: bool) -> tuple[Tensor, int]:
    if not gold:
        raise GoldInvalid("empty gold sequence")
    frontiers = list(replay(model.grammar, gold))
    dec = model.decoder
    h_goal, h_prem = model.embed(batch, n_premises, train)
    s = dec.initial_state(h_goal)
    total = None
    correct = 0
    for frontier, action in zip(frontiers, gold):
        logits, mask = dec.logits(s, frontier, h_prem)
        if action.kind == "premise" and action.value >= logits.shape[1]:
            raise GoldInvalid(f"premise index {action.value} out of range")
        nll = softmax_nll(logits, action.value, mask)
        probs = masked_softmax(logits.data, mask)
        correct += int(np.argmax(probs)) == action.value
        total = nll if total is None else add(total, nll)
        s = dec.transition(s, action)
    return scale(total, 1.0 / len(gold)), correct


def teacher_forced_loss(step: ProofStep, model: TacticModel, train: bool = True) -> Tensor:
    """Mean cross-entropy of the gold actions, with gold actions driving the state."""
    batch = model.prepare(step.goal, step.premises)
    return _teacher_forced(model, batch, len(step.premises), step.gold, train)[0]


def greedy_decode(goal: TermAst, premises: Sequence[TermAst], model: TacticModel,
                  max_steps: int = 64) -> TacticNode:
    batch = model.prepare(goal, premises)
    return _greedy(model, batch, len(premises), max_steps)


def _greedy(model: TacticModel, batch, n_premises: int, max_steps: int) -> TacticNode:
    dec = model.decoder
    h_goal, h_prem = model.embed(batch, n_premises, train=False)
    s = dec.initial_state(h_goal)
    stack = [model.grammar.start]
    actions: list[Action] = []
    while stack:
        sym = stack.pop()
        if not is_nonterminal(sym) and sym != PREMISE_ARG:
            continue
        if len(actions) >= max_steps:
            raise MaxStepsExceeded(f"derivation not complete after {max_steps} steps")
        logits, mask = dec.logits(s, sym, h_prem)
        idx = int(np.argmax(masked_softmax(logits.data, mask)))
        if sym == PREMISE_ARG:
            a = premise(idx)
        else:
            a = prod(idx)
            stack.extend(reversed(model.grammar.productions[idx].rhs))
        actions.append(a)
        s = dec.transition(s, a)
    return tree_from_sequence(model.grammar, actions)


@dataclass
class FinetuneMetrics:
    epoch: int
    mean_loss: float
    accuracy: float  # teacher-forced, per position

    def csv(self) -> str:
        return f"{self.epoch},{self.mean_loss!r},{self.accuracy!r}"


@dataclass
class FinetuneResult:
    model: TacticModel
    metrics: list[FinetuneMetrics] = field(default_factory=list)
    loaded: list[str] = field(default_factory=list)


def finetune(dataset: Sequence[ProofStep], vocab: NodeVocab, grammar: Grammar,
             config: TacticConfig, init_checkpoint=None, log=None, stop=None) -> FinetuneResult:
    """Joint Adam training of encoder and decoder on teacher-forced cross-entropy.

    With ``init_checkpoint`` the ``encoder.*`` entries are loaded from that
    file before the first step; anything else in it is ignored.  ``stop``
    is called as ``stop(metrics, model)`` after every epoch and ends
    training early when it returns true.
    """
    model = TacticModel(vocab, grammar, config)
    result = FinetuneResult(model)
    if init_checkpoint is not None:
        result.loaded = load_store(init_checkpoint, model.store, prefix="encoder.")
    if not dataset:
        return result
    batches = [model.prepare(st.goal, st.premises) for st in dataset]
    adam = AdamState(lr=config.lr)
    rng = SplitMix64(config.seed).fork(4)
    order = list(range(len(dataset)))
    store = model.store
    for epoch in range(1, config.epochs + 1):
        rng.shuffle(order)
        losses, hits, positions = [], 0, 0
        for i in order:
            st = dataset[i]
            loss, correct = _teacher_forced(model, batches[i], len(st.premises), st.gold, True)
            losses.append(loss.item())
            hits += correct
            positions += len(st.gold)
            adam_step(store, backward(loss, store), adam)
        m = FinetuneMetrics(epoch, math.fsum(losses) / len(losses), hits / positions)
        result.metrics.append(m)
        if log is not None:
            log(m)
        if stop is not None and stop(m, model):
            break
    return result


def teacher_forced_accuracy(dataset: Sequence[ProofStep], model: TacticModel,
                            train: bool = False) -> float:
    """Fraction of gold positions where the model's argmax equals the gold action."""
    hits = positions = 0
    for st in dataset:
        batch = model.prepare(st.goal, st.premises)
        _, correct = _teacher_forced(model, batch, len(st.premises), st.gold, train)
        hits += correct
        positions += len(st.gold)
    return hits / positions if positions else 0.0


def eval_tactic(dataset: Sequence[ProofStep], model: TacticModel,
                max_steps: int = 64) -> "OrderedDict[str, tuple[int, int]]":
    """Exact-match counts per source file: ``{file: (correct, total)}``.

    A decode that runs past ``max_steps``, or that picks a premise-taking
    production when there are no premises, counts as wrong.
    """
    groups: OrderedDict[str, list[int]] = OrderedDict()
    for st in sorted(dataset, key=lambda s: (s.file, s.position)):
        counts = groups.setdefault(st.file, [0, 0])
        gold = tree_from_sequence(model.grammar, st.gold)
        try:
            pred = greedy_decode(st.goal, st.premises, model, max_steps)
        except (MaxStepsExceeded, NoPremises):
            pred = None
        counts[0] += pred == gold
        counts[1] += 1
    return OrderedDict((k, (v[0], v[1])) for k, v in groups.items())
