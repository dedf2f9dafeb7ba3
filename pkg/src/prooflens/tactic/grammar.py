"""Context-free tactic grammars, derivation trees, and leftmost derivations."""
from __future__ import annotations

import os
from dataclasses import dataclass
from importlib import resources
from typing import Iterator, NamedTuple, Sequence

import numpy as np

PREMISE_ARG = "PREMISE_ARG"


class GrammarError(ValueError):
    pass


class InvalidTree(ValueError):
    pass


class GoldInvalid(ValueError):
    pass


class TacticParseError(ValueError):
    pass


def is_nonterminal(sym: str) -> bool:
    return sym != PREMISE_ARG and sym[:1].isupper()


@dataclass(frozen=True)
class Production:
    id: int
    lhs: str
    rhs: tuple[str, ...]

    def __str__(self) -> str:
        return f"{self.lhs} -> {' '.join(self.rhs)}"


@dataclass(frozen=True)
class Grammar:
    productions: tuple[Production, ...]
    start: str

    def __post_init__(self):
        nts = {p.lhs for p in self.productions}
        if self.start not in nts:
            raise GrammarError(f"start symbol {self.start} has no productions")
        for p in self.productions:
            for sym in p.rhs:
                if is_nonterminal(sym) and sym not in nts:
                    raise GrammarError(f"undeclared nonterminal {sym} in '{p}'")
        by_lhs: dict[str, list[int]] = {}
        for p in self.productions:
            by_lhs.setdefault(p.lhs, []).append(p.id)
        object.__setattr__(self, "_by_lhs", {k: tuple(v) for k, v in by_lhs.items()})

    @property
    def nonterminals(self) -> tuple[str, ...]:
        return tuple(self._by_lhs)

    @property
    def terminals(self) -> tuple[str, ...]:
        seen = []
        for p in self.productions:
            for sym in p.rhs:
                if not is_nonterminal(sym) and sym not in seen:
                    seen.append(sym)
        return tuple(seen)

    @property
    def size(self) -> int:
        return len(self.productions)

    def alternatives(self, nonterminal: str) -> tuple[int, ...]:
        return self._by_lhs.get(nonterminal, ())

    def mask(self, nonterminal: str) -> np.ndarray:
        m = np.zeros(self.size, dtype=bool)
        m[list(self.alternatives(nonterminal))] = True
        return m


def parse_grammar(text: str) -> Grammar:
    """One production per line, ``LHS -> sym sym ...``; ``#`` starts a comment."""
    prods = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        lhs, arrow, rhs = line.partition("->")
        lhs = lhs.strip()
        if not arrow or not lhs or len(lhs.split()) != 1:
            raise GrammarError(f"line {lineno}: expected 'LHS -> symbols', got {raw!r}")
        if not is_nonterminal(lhs):
            raise GrammarError(f"line {lineno}: left-hand side {lhs!r} must be uppercase-initial")
        syms = tuple(rhs.split())
        if not syms:
            raise GrammarError(f"line {lineno}: empty right-hand side")
        prods.append(Production(len(prods), lhs, syms))
    if not prods:
        raise GrammarError("grammar has no productions")
    return Grammar(tuple(prods), prods[0].lhs)


def load_grammar(path: str | os.PathLike | None = None) -> Grammar:
    if path is None:
        text = resources.files("prooflens.grammars").joinpath("default.cfg").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_grammar(text)


# ------------------------------------------------------------ derivations

@dataclass(frozen=True)
class PremiseLeaf:
    index: int


@dataclass(frozen=True)
class TacticNode:
    symbol: str
    production: int
    children: tuple  # TacticNode | PremiseLeaf | str (terminal)


TacticAst = TacticNode


class Action(NamedTuple):
    kind: str  # "prod" or "premise"
    value: int


def prod(i: int) -> Action:
    return Action("prod", i)


def premise(i: int) -> Action:
    return Action("premise", i)


def derivation_sequence(grammar: Grammar, tree: TacticNode) -> list[Action]:
    """Leftmost (depth-first) action sequence of a derivation tree."""
    out: list[Action] = []

    def walk(node: TacticNode) -> None:
        if not isinstance(node, TacticNode):
            raise InvalidTree(f"expected a derivation node, got {node!r}")
        if not 0 <= node.production < grammar.size:
            raise InvalidTree(f"unknown production {node.production}")
        p = grammar.productions[node.production]
        if p.lhs != node.symbol or len(p.rhs) != len(node.children):
            raise InvalidTree(f"node {node.symbol} does not match production '{p}'")
        out.append(prod(node.production))
        for sym, child in zip(p.rhs, node.children):
            if sym == PREMISE_ARG:
                if not isinstance(child, PremiseLeaf):
                    raise InvalidTree("PREMISE_ARG slot must hold a premise leaf")
                out.append(premise(child.index))
            elif is_nonterminal(sym):
                if not isinstance(child, TacticNode) or child.symbol != sym:
                    raise InvalidTree(f"expected a {sym} subtree")
                walk(child)
            elif child != sym:
                raise InvalidTree(f"expected terminal {sym!r}, got {child!r}")

    walk(tree)
    return out


def replay(grammar: Grammar, actions: Sequence[Action]) -> Iterator[str]:
    """Yield the frontier symbol each action expands, validating as it goes."""
    stack = [grammar.start]
    i = 0
    while stack:
        sym = stack.pop()
        if not is_nonterminal(sym) and sym != PREMISE_ARG:
            continue
        if i >= len(actions):
            raise GoldInvalid(f"derivation incomplete: {sym} left unexpanded")
        a = actions[i]
        if sym == PREMISE_ARG:
            if a.kind != "premise" or a.value < 0:
                raise GoldInvalid(f"action {i}: expected a premise index, got {a}")
        else:
            if a.kind != "prod" or a.value not in grammar.alternatives(sym):
                raise GoldInvalid(f"action {i}: {a} cannot expand {sym}")
            stack.extend(reversed(grammar.productions[a.value].rhs))
        yield sym
        i += 1
    if i != len(actions):
        raise GoldInvalid(f"{len(actions) - i} trailing actions after a complete derivation")


def tree_from_sequence(grammar: Grammar, actions: Sequence[Action]) -> TacticNode:
    list(replay(grammar, actions))  # validation
    pos = 0

    def build(sym: str):
        nonlocal pos
        a = actions[pos]
        pos += 1
        if sym == PREMISE_ARG:
            return PremiseLeaf(a.value)
        p = grammar.productions[a.value]
        kids = []
        for s in p.rhs:
            kids.append(build(s) if (is_nonterminal(s) or s == PREMISE_ARG) else s)
        return TacticNode(sym, p.id, tuple(kids))

    return build(grammar.start)


def premise_indices(tree: TacticNode) -> list[int]:
    """Premise leaves in left-to-right order."""
    out = []

    def walk(node):
        if isinstance(node, PremiseLeaf):
            out.append(node.index)
        elif isinstance(node, TacticNode):
            for c in node.children:
                walk(c)

    walk(tree)
    return out


# --------------------------------------------------------- surface syntax

def render_tactic(tree: TacticNode, premise_names: Sequence[str] | None = None) -> str:
    toks: list[str] = []

    def walk(node):
        if isinstance(node, PremiseLeaf):
            toks.append(premise_names[node.index] if premise_names is not None else f"#{node.index}")
        elif isinstance(node, TacticNode):
            for c in node.children:
                walk(c)
        else:
            toks.append(node)

    walk(tree)
    return " ".join(toks)


def parse_tactic(grammar: Grammar, text: str, premise_names: Sequence[str]) -> TacticNode:
    """Parse whitespace-separated tactic text; premise tokens are context names.

    Backtracking search; the first complete parse in production order wins.
    """
    tokens = text.split()
    names = {n: i for i, n in enumerate(premise_names)}
    active: set[tuple[str, int]] = set()

    def parse_sym(sym: str, pos: int):
        if sym == PREMISE_ARG:
            if pos < len(tokens) and tokens[pos] in names:
                yield PremiseLeaf(names[tokens[pos]]), pos + 1
            return
        if not is_nonterminal(sym):
            if pos < len(tokens) and tokens[pos] == sym:
                yield sym, pos + 1
            return
        key = (sym, pos)
        if key in active:  # left recursion without progress
            return
        active.add(key)
        try:
            for pid in grammar.alternatives(sym):
                for kids, end in parse_seq(grammar.productions[pid].rhs, 0, pos):
                    yield TacticNode(sym, pid, tuple(kids)), end
        finally:
            active.discard(key)

    def parse_seq(rhs, k, pos):
        if k == len(rhs):
            yield [], pos
            return
        for first, mid in parse_sym(rhs[k], pos):
            for rest, end in parse_seq(rhs, k + 1, mid):
                yield [first] + rest, end

    for tree, end in parse_sym(grammar.start, 0):
        if end == len(tokens):
            return tree
    raise TacticParseError(f"cannot parse tactic {text!r}")
