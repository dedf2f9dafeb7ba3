"""Kernel-term s-expressions, labeled ASTs, and their graph view.

A term such as ``(App (Const add) (Var a))`` becomes a tree whose internal
nodes are labeled by constructor names and whose identifier atoms become
``IDENT`` leaves.  Graph features only encode node labels.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

IDENT = "IDENT"
UNK = "UNK"


class SexprError(ValueError):
    pass


class UnbalancedParens(SexprError):
    pass


class EmptyInput(SexprError):
    pass


class TrailingContent(SexprError):
    pass


class EmptyList(SexprError):
    pass


class NonAtomHead(SexprError):
    pass


@dataclass(frozen=True)
class Atom:
    text: str


@dataclass(frozen=True)
class SList:
    children: tuple


SExpr = Union[Atom, SList]

_WS = " \t\n\r"


def _tokenize(text: str) -> list[str]:
    tokens = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c in _WS:
            i += 1
        elif c in "()":
            tokens.append(c)
            i += 1
        else:
            j = i
            while j < n and text[j] not in _WS and text[j] not in "()":
                j += 1
            tokens.append(text[i:j])
            i = j
    return tokens


def parse_sexpr(text: str) -> SExpr:
    tokens = _tokenize(text)
    if not tokens:
        raise EmptyInput("no s-expression in input")
    stack: list[list] = []
    result = None
    for pos, tok in enumerate(tokens):
        if result is not None:
            raise TrailingContent(f"unexpected {tok!r} after a complete expression")
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if not stack:
                raise UnbalancedParens("')' without matching '('")
            done = SList(tuple(stack.pop()))
            if stack:
                stack[-1].append(done)
            else:
                result = done
        else:
            atom = Atom(tok)
            if stack:
                stack[-1].append(atom)
            else:
                result = atom
    if stack:
        raise UnbalancedParens(f"{len(stack)} unclosed '('")
    return result


def render_sexpr(s: SExpr) -> str:
    if isinstance(s, Atom):
        return s.text
    return "(" + " ".join(render_sexpr(c) for c in s.children) + ")"


@dataclass(frozen=True)
class AstNode:
    id: int
    label: str
    ident: str | None
    children: tuple[int, ...]


@dataclass(frozen=True)
class TermAst:
    """A labeled tree whose node ids are 0..n-1 in pre-order; the root is 0."""

    nodes: tuple[AstNode, ...]
    root: int = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def labels(self) -> list[str]:
        return [n.label for n in self.nodes]

    def parents(self) -> list[int]:
        par = [-1] * len(self.nodes)
        for node in self.nodes:
            for c in node.children:
                par[c] = node.id
        return par

    def to_sexpr(self) -> SExpr:
        def build(i: int) -> SExpr:
            node = self.nodes[i]
            if node.label == IDENT and not node.children:
                return Atom(node.ident)
            return SList((Atom(node.label),) + tuple(build(c) for c in node.children))
        return build(self.root)

    def render(self) -> str:
        return render_sexpr(self.to_sexpr())


def sexpr_to_ast(s: SExpr) -> TermAst:
    nodes: list[AstNode | None] = []

    # explicit stack keeps deep terms clear of the recursion limit
    def visit(root: SExpr) -> None:
        work = [(root, None)]
        child_lists: dict[int, list[int]] = {}
        while work:
            expr, parent = work.pop()
            nid = len(nodes)
            nodes.append(None)
            if parent is not None:
                child_lists[parent].append(nid)
            if isinstance(expr, Atom):
                nodes[nid] = AstNode(nid, IDENT, expr.text, ())
                continue
            if not expr.children:
                raise EmptyList("empty list cannot be converted to a node")
            head = expr.children[0]
            if not isinstance(head, Atom):
                raise NonAtomHead("list head must be an atom naming the constructor")
            nodes[nid] = AstNode(nid, head.text, None, ())
            child_lists[nid] = []
            for child in reversed(expr.children[1:]):
                work.append((child, nid))
        for nid, kids in child_lists.items():
            n = nodes[nid]
            nodes[nid] = AstNode(n.id, n.label, n.ident, tuple(kids))

    visit(s)
    return TermAst(tuple(nodes), 0)


def parse_term(text: str) -> TermAst:
    return sexpr_to_ast(parse_sexpr(text))


@dataclass(frozen=True)
class NodeVocab:
    labels: tuple[str, ...]

    def __post_init__(self):
        if not self.labels or self.labels[-1] != UNK or self.labels.count(UNK) != 1:
            raise ValueError("vocab must end with exactly one UNK entry")
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(self.labels)})

    @property
    def dim(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self._index.get(label, len(self.labels) - 1)


def vocab_from_corpus(asts: Iterable[TermAst]) -> NodeVocab:
    seen = set()
    for ast in asts:
        seen.update(ast.labels())
    seen.discard(UNK)
    return NodeVocab(tuple(sorted(seen)) + (UNK,))


@dataclass(frozen=True)
class TermGraph:
    num_nodes: int
    edges: np.ndarray  # (2 * (n - 1), 2) directed records
    features: np.ndarray  # (n, D) one-hot rows

    @property
    def num_undirected_edges(self) -> int:
        return len(self.edges) // 2

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        if len(self.edges):
            a[self.edges[:, 0], self.edges[:, 1]] = 1.0
        return a

    def neighbors(self, v: int) -> list[int]:
        return sorted(int(u) for s, u in self.edges if s == v)

    def relabeled(self, perm: Sequence[int]) -> "TermGraph":
        """Same graph with node ``i`` renamed to ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        feats = np.empty_like(self.features)
        feats[perm] = self.features
        return TermGraph(self.num_nodes, perm[self.edges], feats)


def ast_to_graph(ast: TermAst, vocab: NodeVocab) -> TermGraph:
    n = len(ast)
    feats = np.zeros((n, vocab.dim))
    edges = []
    for node in ast.nodes:
        feats[node.id, vocab.index(node.label)] = 1.0
        for c in node.children:
            edges.append((node.id, c))
            edges.append((c, node.id))
    arr = np.array(edges, dtype=np.int64).reshape(-1, 2)
    return TermGraph(n, arr, feats)
