"""Premise-selection datasets from proof records, and a seeded synthetic corpus.

Synthetic files are sequences of lemmas and theorems with identical tree
shapes.  Each lemma carries a random signature subtree; a theorem embeds the
body of exactly one earlier lemma and is proved by applying it, so the
positive premise is related to the theorem through one shared subtree while
every negative has the same shape and draws from the same labels.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar

from .contrastive import MAX_NEGATIVES, PremiseInstance
from .numcore import FileMissing, SplitMix64
from .sexpr import SexprError, TermAst, parse_term
from .tactic import (Action, GoldInvalid, Grammar, ProofStep, TacticNode, TacticParseError,
                     derivation_sequence, load_grammar, parse_tactic, premise_indices,
                     render_tactic, tree_from_sequence)


class MalformedLine(ValueError):
    def __init__(self, lineno: int, reason: str):
        super().__init__(f"line {lineno}: {reason}")
        self.lineno = lineno


class TooFewFiles(ValueError):
    pass


@dataclass(frozen=True)
class ProofRecord:
    file: str
    position: int
    theorem: TermAst
    tactic: TacticNode
    context: tuple[tuple[str, TermAst], ...]  # (name, term), earlier statements
    context_positions: tuple[int, ...]
    planted: TermAst | None = None
    name: str | None = None  # premise name; None for statements later ones cannot cite

    def used_premises(self) -> list[int]:
        seen = []
        for i in premise_indices(self.tactic):
            if i not in seen:
                seen.append(i)
        return seen


@dataclass
class CorpusConfig:
    num_files: int = 10
    statements_per_file: int = 20
    shared_depth: int = 3
    label_vocab: int = 24
    max_depth: int = 1
    seed: int = 0
    premise_rate: float = 0.6
    filler_labels: int = 4  # leading labels reserved for filler terms

    def __post_init__(self):
        for name in ("num_files", "statements_per_file", "shared_depth", "label_vocab", "max_depth",
                     "filler_labels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.filler_labels < len(LEMMA_TACTICS):
            raise ValueError(f"filler_labels must be >= {len(LEMMA_TACTICS)}")
        if self.filler_labels >= self.label_vocab:
            raise ValueError("label_vocab must leave room for signature labels")


# ------------------------------------------------------------- building

@dataclass
class DatasetBuild:
    instances: list[PremiseInstance]
    files: list[str]  # source file of each instance
    stats: dict = field(default_factory=dict)


def build_premise_dataset(records: Sequence[ProofRecord]) -> DatasetBuild:
    """One instance per premise used as a tactic argument.

    Negatives are the (up to ten) context premises closest before the theorem,
    the positive itself excluded.
    """
    instances, files = [], []
    no_premise = no_negatives = 0
    for rec in records:
        used = rec.used_premises()
        if not used:
            no_premise += 1
            continue
        earlier = [i for i, pos in enumerate(rec.context_positions) if pos < rec.position]
        emitted = False
        for pos_idx in used:
            others = [i for i in earlier if i != pos_idx]
            others.sort(key=lambda i: rec.context_positions[i], reverse=True)
            chosen = sorted(others[:MAX_NEGATIVES], key=lambda i: rec.context_positions[i])
            if not chosen:
                continue
            instances.append(PremiseInstance(
                rec.theorem, rec.context[pos_idx][1], tuple(rec.context[i][1] for i in chosen)))
            files.append(rec.file)
            emitted = True
        if not emitted:
            no_negatives += 1
    n_neg = [len(inst.negatives) for inst in instances]
    stats = {
        "records": len(records),
        "instances": len(instances),
        "skipped_no_premise": no_premise,
        "skipped_no_negatives": no_negatives,
        "mean_negatives": (math.fsum(n_neg) / len(n_neg)) if n_neg else 0.0,
    }
    return DatasetBuild(instances, files, stats)


def proof_steps(records: Sequence[ProofRecord], grammar: Grammar) -> list[ProofStep]:
    return [ProofStep(r.file, r.position, r.theorem, tuple(t for _, t in r.context),
                      tuple(derivation_sequence(grammar, r.tactic)))
            for r in records]


# ------------------------------------------------------------ synthesis

def structure_key(ast: TermAst, node: int | None = None) -> str:
    """Canonical text of a subtree with identifier names erased."""
    def key(i: int) -> str:
        n = ast.nodes[i]
        if not n.children:
            return n.label
        return "(" + n.label + " " + " ".join(key(c) for c in n.children) + ")"
    return key(ast.root if node is None else node)


def subtree_keys(ast: TermAst) -> set[str]:
    return {structure_key(ast, n.id) for n in ast.nodes}


def contains_subtree(ast: TermAst, sub: TermAst) -> bool:
    return structure_key(sub) in subtree_keys(ast)


# A lemma is ``(Stmt (Prop filler signature))``; the filler root label picks
# its premise-free tactic.  A goal is ``(Goal body)`` where ``body`` is the
# ``Prop`` subtree of one earlier lemma, proved by applying that lemma.  Each
# lemma serves at most one goal, so no other premise contains its body.
LEMMA_TACTICS = ("intro", "reflexivity", "split")
ANONYMOUS = "_"


class _Synth:
    NAMES = ("a", "b", "c", "n", "m", "x", "y", "z")

    def __init__(self, cfg: CorpusConfig, rng: SplitMix64):
        self.cfg = cfg
        self.rng = rng
        labels = [f"C{i}" for i in range(cfg.label_vocab)]
        self.filler_labels = labels[:cfg.filler_labels]
        self.sig_labels = labels[cfg.filler_labels:]

    def tree(self, depth: int, labels: Sequence[str], constants: bool, root: str | None = None) -> str:
        """Full binary term of the given depth.

        Every synthetic term has the same shape, so statements differ only in
        their labels.  Leaves are labelled constants or identifiers.
        """
        if depth == 0:
            return f"({self.rng.choice(labels)})" if constants else self.rng.choice(self.NAMES)
        kids = " ".join(self.tree(depth - 1, labels, constants) for _ in range(2))
        return f"({root or self.rng.choice(labels)} {kids})"

    def signature(self) -> str:
        return self.tree(self.cfg.shared_depth, self.sig_labels, True)

    def filler(self, root: int) -> str:
        return self.tree(self.cfg.max_depth, self.filler_labels, False, self.filler_labels[root])


def _synth_file(cfg: CorpusConfig, file_id: str, rng: SplitMix64, grammar: Grammar) -> list[ProofRecord]:
    syn = _Synth(cfg, rng)
    seen: set[str] = set()  # structure keys of every signature emitted so far
    bodies: list[str] = []  # Prop subtree per context entry
    context: list[tuple[str, TermAst]] = []
    positions: list[int] = []
    unapplied: list[int] = []  # context indices of lemmas no goal has used yet
    records = []
    for j in range(cfg.statements_per_file):
        if unapplied and syn.rng.random() < cfg.premise_rate:
            target = unapplied.pop(syn.rng.randrange(len(unapplied)))
            body = bodies[target]
            theorem = parse_term(f"(Goal {body})")
            tactic_text = f"apply {context[target][0]}"
        else:
            target = None
            for _ in range(1000):
                sig = syn.signature()
                key = structure_key(parse_term(sig))
                if key not in seen:
                    break
            else:
                raise RuntimeError("label vocabulary too small for unique signatures")
            seen.add(key)
            root = syn.rng.randrange(len(LEMMA_TACTICS))
            body = f"(Prop {syn.filler(root)} {sig})"
            theorem = parse_term(f"(Stmt {body})")
            tactic_text = LEMMA_TACTICS[root]
        names = [n for n, _ in context]
        tactic = parse_tactic(grammar, tactic_text, names)
        planted = parse_term(body) if target is not None else None
        name = f"L{j}"
        records.append(ProofRecord(file_id, j, theorem, tactic, tuple(context), tuple(positions),
                                   planted, name))
        if target is None:
            unapplied.append(len(context))
        bodies.append(body)
        context.append((name, theorem))
        positions.append(j)
    return records


def gen_synthetic_corpus(config: CorpusConfig, grammar: Grammar | None = None) -> list[ProofRecord]:
    grammar = grammar or load_grammar()
    root = SplitMix64(config.seed)
    out = []
    for f in range(config.num_files):
        out.extend(_synth_file(config, f"f{f:03d}", root.fork(f), grammar))
    return out


# ------------------------------------------------------------- splitting

T = TypeVar("T")


def _allocate(n: int, ratios: Sequence[float]) -> list[int]:
    raw = [r * n for r in ratios]
    counts = [int(math.floor(x)) for x in raw]
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    for i in range(len(counts)):
        if counts[i] == 0:
            donor = max(range(len(counts)), key=lambda k: (counts[k], -k))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def assign_files(files: Iterable[str], ratios: Sequence[float] = (0.6, 0.2, 0.2),
                 seed: int = 0) -> list[list[str]]:
    """Seeded file-level partition; each partition gets at least one file."""
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be positive and sum to 1")
    uniq = sorted(set(files))
    if len(uniq) < len(ratios):
        raise TooFewFiles(f"{len(uniq)} files cannot fill {len(ratios)} partitions")
    SplitMix64(seed).shuffle(uniq)
    parts, start = [], 0
    for c in _allocate(len(uniq), ratios):
        parts.append(sorted(uniq[start:start + c]))
        start += c
    return parts


def split_by_file(items: Sequence[T], file_of: Callable[[T], str], parts: list[list[str]]) -> list[list[T]]:
    where = {f: k for k, fs in enumerate(parts) for f in fs}
    out: list[list[T]] = [[] for _ in parts]
    for it in items:
        out[where[file_of(it)]].append(it)
    return out


def split_corpus(records: Sequence[ProofRecord], ratios: Sequence[float] = (0.6, 0.2, 0.2),
                 seed: int = 0) -> list[list[ProofRecord]]:
    parts = assign_files((r.file for r in records), ratios, seed)
    return split_by_file(records, lambda r: r.file, parts)


# --------------------------------------------------------- serialization

def _dump(obj) -> str:
    return json.dumps(obj, ensure_ascii=True, separators=(", ", ": "))


def premise_to_json(inst: PremiseInstance) -> str:
    return _dump({"theorem": inst.theorem.render(), "positive": inst.positive.render(),
                  "negatives": [n.render() for n in inst.negatives]})


def step_to_json(step: ProofStep) -> str:
    return _dump({"file": step.file, "position": step.position, "goal": step.goal.render(),
                  "premises": [p.render() for p in step.premises],
                  "gold": [[a.kind, a.value] for a in step.gold]})


def _read_lines(path) -> list[tuple[int, dict]]:
    if not os.path.exists(path):
        raise FileMissing(f"dataset not found: {path}")
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise MalformedLine(lineno, "expected a JSON object")
            out.append((lineno, obj))
    return out


def _term(lineno: int, text) -> TermAst:
    if not isinstance(text, str):
        raise MalformedLine(lineno, "term must be a string")
    try:
        return parse_term(text)
    except SexprError as exc:
        raise MalformedLine(lineno, f"bad term: {exc}") from None


def write_premise_dataset(path, instances: Iterable[PremiseInstance]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(premise_to_json(inst) + "\n")


def read_premise_dataset(path) -> list[PremiseInstance]:
    out = []
    for lineno, obj in _read_lines(path):
        try:
            negs = obj["negatives"]
            theorem, positive = obj["theorem"], obj["positive"]
        except KeyError as exc:
            raise MalformedLine(lineno, f"missing key {exc}") from None
        if not isinstance(negs, list) or not 1 <= len(negs) <= MAX_NEGATIVES:
            raise MalformedLine(lineno, f"negatives must be a list of 1..{MAX_NEGATIVES} terms")
        out.append(PremiseInstance(_term(lineno, theorem), _term(lineno, positive),
                                   tuple(_term(lineno, n) for n in negs)))
    return out


def write_steps(path, steps: Iterable[ProofStep]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for st in steps:
            fh.write(step_to_json(st) + "\n")


def read_steps(path, grammar: Grammar | None = None) -> list[ProofStep]:
    out = []
    for lineno, obj in _read_lines(path):
        try:
            file, position = obj["file"], obj["position"]
            goal, premises, gold = obj["goal"], obj["premises"], obj["gold"]
        except KeyError as exc:
            raise MalformedLine(lineno, f"missing key {exc}") from None
        if not isinstance(file, str) or not isinstance(position, int) or not isinstance(premises, list):
            raise MalformedLine(lineno, "bad file/position/premises field")
        try:
            actions = tuple(Action(str(k), int(v)) for k, v in gold)
        except (TypeError, ValueError):
            raise MalformedLine(lineno, "gold must be a list of [kind, index] pairs") from None
        if not actions or any(a.kind not in ("prod", "premise") for a in actions):
            raise MalformedLine(lineno, "gold must be a non-empty list of prod/premise actions")
        if grammar is not None:
            try:
                tree_from_sequence(grammar, actions)
            except GoldInvalid as exc:
                raise MalformedLine(lineno, f"gold does not replay: {exc}") from None
        if any(a.kind == "premise" and not 0 <= a.value < len(premises) for a in actions):
            raise MalformedLine(lineno, "premise index out of range")
        out.append(ProofStep(file, position, _term(lineno, goal),
                             tuple(_term(lineno, p) for p in premises), actions))
    return out


def write_lines(path, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


def read_lines(path) -> list[str]:
    if not os.path.exists(path):
        raise FileMissing(f"file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return [ln.rstrip("\n") for ln in fh if ln.strip()]


# ------------------------------------------------------------ corpus dirs

MANIFEST = "manifest.tsv"


def write_corpus(directory, records: Sequence[ProofRecord]) -> None:
    """``<dir>/<file>.sexps`` holds ``name<TAB>term<TAB>tactic`` per statement.

    Statements without a premise name are written as ``_``.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    by_file: dict[str, list[ProofRecord]] = {}
    for r in records:
        by_file.setdefault(r.file, []).append(r)
    manifest = []
    for file_id in sorted(by_file):
        recs = sorted(by_file[file_id], key=lambda r: r.position)
        lines = []
        for r in recs:
            names = [n for n, _ in r.context]
            name = r.name if r.name is not None else ANONYMOUS
            lines.append(f"{name}\t{r.theorem.render()}\t{render_tactic(r.tactic, names)}")
        write_lines(d / f"{file_id}.sexps", lines)
        manifest.append(f"{file_id}\t{len(recs)}")
    write_lines(d / MANIFEST, manifest)


def read_corpus(directory, grammar: Grammar | None = None) -> list[ProofRecord]:
    """Context of a statement = every earlier named statement of the same file."""
    grammar = grammar or load_grammar()
    d = Path(directory)
    manifest = read_lines(d / MANIFEST)
    records = []
    for entry in manifest:
        file_id, count = entry.split("\t")
        lines = read_lines(d / f"{file_id}.sexps")
        if len(lines) != int(count):
            raise MalformedLine(0, f"{file_id}: manifest says {count} statements, found {len(lines)}")
        names: list[str] = []
        terms: list[TermAst] = []
        positions: list[int] = []
        for pos, line in enumerate(lines):
            parts = line.split("\t")
            if len(parts) != 3:
                raise MalformedLine(pos + 1, f"{file_id}: expected name, term, tactic")
            name, term_text, tactic_text = parts
            theorem = _term(pos + 1, term_text)
            try:
                tactic = parse_tactic(grammar, tactic_text, names)
            except TacticParseError as exc:
                raise MalformedLine(pos + 1, f"{file_id}: {exc}") from None
            named = name != ANONYMOUS
            records.append(ProofRecord(file_id, pos, theorem, tactic, tuple(zip(names, terms)),
                                       tuple(positions), name=name if named else None))
            if named:
                names.append(name)
                terms.append(theorem)
                positions.append(pos)
    return records


__all__ = [
    "CorpusConfig", "DatasetBuild", "MalformedLine", "ProofRecord", "TooFewFiles",
    "assign_files", "build_premise_dataset", "contains_subtree", "gen_synthetic_corpus",
    "premise_to_json", "proof_steps", "read_corpus", "read_lines", "read_premise_dataset",
    "read_steps", "split_by_file", "split_corpus", "step_to_json", "structure_key",
    "write_corpus", "write_lines", "write_premise_dataset", "write_steps",
]
