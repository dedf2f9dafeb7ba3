"""``prooflens`` command line: one pipeline stage per subcommand.

Exit status is 0 on success, 1 on a usage error and 2 when the data or a
model cannot be processed.  Every output file is a pure function of the
arguments and input files.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .contrastive import PremiseSelector, PretrainConfig, pretrain, select_premise
from .datagen import (CorpusConfig, assign_files, build_premise_dataset, gen_synthetic_corpus,
                      proof_steps, read_corpus, read_lines, read_premise_dataset, read_steps,
                      write_corpus, write_lines, write_premise_dataset, write_steps)
from .fidelity import gradient_fidelity
from .numcore import CheckpointError, CheckpointMismatch, FileMissing, load_store, save_store
from .sexpr import NodeVocab, vocab_from_corpus
from .tactic import TacticConfig, TacticModel, eval_tactic, finetune, parse_grammar

SEED_ENV = "PROOFLENS_SEED"
PREMISES, PREMISE_FILES, STEPS, STATS = "premises.jsonl", "premises.files", "steps.jsonl", "stats.json"
SPLIT_NAMES = {2: ("train", "test"), 3: ("train", "valid", "test")}
DATA_ERRORS = (ValueError, LookupError, OSError, RuntimeError, ArithmeticError, CheckpointError)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class _Help(argparse.ArgumentDefaultsHelpFormatter):
    def _get_help_string(self, action):
        if action.default is None or action.default is False or action.default == argparse.SUPPRESS:
            return action.help
        return super()._get_help_string(action)


# ------------------------------------------------------------ file helpers

def _inside(path: str, name: str) -> Path:
    p = Path(path)
    return p / name if p.is_dir() else p


def _sidecar(dataset: Path) -> Path:
    return dataset.with_suffix(".files")


def _write_text(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path):
    if not os.path.exists(path):
        raise FileMissing(f"file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _grammar_text(path: str | None) -> str:
    if path is None:
        from importlib import resources
        return resources.files("prooflens.grammars").joinpath("default.cfg").read_text()
    if not os.path.exists(path):
        raise FileMissing(f"grammar not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _meta_path(ckpt) -> str:
    return f"{ckpt}.meta.json"


def _read_meta(ckpt: str, kind: str) -> dict:
    if not os.path.exists(ckpt):
        raise FileMissing(f"checkpoint not found: {ckpt}")
    meta = _read_json(_meta_path(ckpt))
    if meta.get("kind") != kind:
        raise DataError(f"{ckpt} holds a {meta.get('kind')!r} model, expected {kind!r}")
    return meta


def _write_eval(path, counts: dict[str, tuple[int, int]]) -> None:
    rows = ["group,correct,total"] + [f"{g},{c},{n}" for g, (c, n) in counts.items()]
    _write_text(path, "\n".join(rows) + "\n")


def _print_accuracy(counts: dict[str, tuple[int, int]]) -> None:
    correct = sum(c for c, _ in counts.values())
    total = sum(n for _, n in counts.values())
    acc = correct / total if total else 0.0
    print(f"correct {correct}/{total} accuracy {acc:.4f}")


# ---------------------------------------------------------- subcommands

def cmd_gen_corpus(args) -> None:
    cfg = CorpusConfig(num_files=args.files, statements_per_file=args.statements,
                       shared_depth=args.shared_depth, label_vocab=args.label_vocab,
                       max_depth=args.max_depth, seed=args.seed, premise_rate=args.premise_rate,
                       filler_labels=args.filler_labels)
    records = gen_synthetic_corpus(cfg, parse_grammar(_grammar_text(args.grammar)))
    write_corpus(args.out, records)
    print(f"wrote {len(records)} statements in {cfg.num_files} files to {args.out}")


def cmd_build_dataset(args) -> None:
    grammar = parse_grammar(_grammar_text(args.grammar))
    if not Path(args.inp).is_dir():
        raise FileMissing(f"corpus directory not found: {args.inp}")
    records = read_corpus(args.inp, grammar)
    built = build_premise_dataset(records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_premise_dataset(out / PREMISES, built.instances)
    write_lines(out / PREMISE_FILES, built.files)
    write_steps(out / STEPS, proof_steps(records, grammar))
    _write_json(out / STATS, built.stats)
    print(json.dumps(built.stats, sort_keys=True))


def cmd_split(args) -> None:
    src = Path(args.inp)
    if not src.is_dir():
        raise FileMissing(f"dataset directory not found: {src}")
    premises = read_lines(src / PREMISES)
    files = read_lines(src / PREMISE_FILES)
    if len(files) != len(premises):
        raise DataError(f"{PREMISE_FILES} has {len(files)} lines for {len(premises)} instances")
    steps = read_lines(src / STEPS)
    step_files = [json.loads(line)["file"] for line in steps]
    names = SPLIT_NAMES[len(args.ratios)]
    parts = assign_files(files + step_files, args.ratios, args.seed)
    where = {f: names[k] for k, fs in enumerate(parts) for f in fs}
    out = Path(args.out)
    for name in names:
        d = out / name
        d.mkdir(parents=True, exist_ok=True)
        keep = [i for i, f in enumerate(files) if where[f] == name]
        write_lines(d / PREMISES, (premises[i] for i in keep))
        write_lines(d / PREMISE_FILES, (files[i] for i in keep))
        write_lines(d / STEPS, (s for s, f in zip(steps, step_files) if where[f] == name))
    _write_json(out / "split.json", dict(zip(names, parts)))
    for name, fs in zip(names, parts):
        print(f"{name}: {len(fs)} files")


def cmd_pretrain(args) -> None:
    data = read_premise_dataset(_inside(args.inp, PREMISES))
    cfg = PretrainConfig(epochs=args.epochs, lr=args.lr, seed=args.seed, layers=args.layers,
                         hidden=args.hidden, proj_dim=args.proj_dim, encoder=args.encoder,
                         bn_scope=args.bn_scope)
    lines = ["epoch,mean_loss,top1"]

    def log(m):
        lines.append(m.csv())
        print(m.csv(), flush=True)

    result = pretrain(data, cfg, log=log)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_store(args.out, result.store)
    _write_text(f"{args.out}.metrics.csv", "\n".join(lines) + "\n")
    _write_json(_meta_path(args.out), {
        "kind": "premise", "encoder": cfg.encoder, "layers": cfg.layers, "hidden": cfg.hidden,
        "proj_dim": cfg.proj_dim, "bn_scope": cfg.bn_scope, "seed": cfg.seed,
        "vocab": list(result.model.vocab.labels)})


def _check_init(meta: dict, args) -> None:
    for key in ("encoder", "layers", "hidden", "bn_scope"):
        if meta[key] != getattr(args, key):
            flag = "--" + key.replace("_", "-")
            raise CheckpointMismatch(
                f"init checkpoint has {key}={meta[key]!r}; pass {flag} {meta[key]}")


def cmd_finetune(args) -> None:
    text = _grammar_text(args.grammar)
    grammar = parse_grammar(text)
    steps = read_steps(_inside(args.inp, STEPS), grammar)
    if args.init_checkpoint is not None:
        meta = _read_meta(args.init_checkpoint, "premise")
        _check_init(meta, args)
        vocab = NodeVocab(tuple(meta["vocab"]))
    else:
        vocab = vocab_from_corpus(t for st in steps for t in (st.goal, *st.premises))
    cfg = TacticConfig(epochs=args.epochs, lr=args.lr, seed=args.seed, layers=args.layers,
                       hidden=args.hidden, state_dim=args.state_dim, action_dim=args.action_dim,
                       encoder=args.encoder, bn_scope=args.bn_scope)
    lines = ["epoch,mean_loss,accuracy"]

    def log(m):
        lines.append(m.csv())
        print(m.csv(), flush=True)

    result = finetune(steps, vocab, grammar, cfg, init_checkpoint=args.init_checkpoint, log=log)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_store(args.out, result.model.store)
    _write_text(f"{args.out}.metrics.csv", "\n".join(lines) + "\n")
    _write_json(_meta_path(args.out), {
        "kind": "tactic", "encoder": cfg.encoder, "layers": cfg.layers, "hidden": cfg.hidden,
        "state_dim": cfg.state_dim, "action_dim": cfg.action_dim, "bn_scope": cfg.bn_scope,
        "seed": cfg.seed, "grammar": text, "vocab": list(vocab.labels),
        "init_checkpoint": bool(args.init_checkpoint)})


def cmd_eval_premise(args) -> None:
    path = _inside(args.inp, PREMISES)
    data = read_premise_dataset(path)
    side = _sidecar(path)
    groups = read_lines(side) if side.exists() else ["all"] * len(data)
    if len(groups) != len(data):
        raise DataError(f"{side} has {len(groups)} lines for {len(data)} instances")
    meta = _read_meta(args.checkpoint, "premise")
    cfg = PretrainConfig(layers=meta["layers"], hidden=meta["hidden"], proj_dim=meta["proj_dim"],
                         encoder=meta["encoder"], bn_scope=meta["bn_scope"])
    model = PremiseSelector(NodeVocab(tuple(meta["vocab"])), cfg)
    load_store(args.checkpoint, model.store)
    counts: dict[str, list[int]] = {}
    for g, inst in sorted(zip(groups, data), key=lambda p: p[0]):
        c = counts.setdefault(g, [0, 0])
        c[0] += select_premise(inst.theorem, inst.candidates, model) == 0
        c[1] += 1
    result = {g: (c, n) for g, (c, n) in counts.items()}
    _write_eval(args.out, result)
    _print_accuracy(result)


def cmd_eval_tactic(args) -> None:
    meta = _read_meta(args.checkpoint, "tactic")
    grammar = parse_grammar(meta["grammar"])
    steps = read_steps(_inside(args.inp, STEPS), grammar)
    cfg = TacticConfig(layers=meta["layers"], hidden=meta["hidden"], state_dim=meta["state_dim"],
                       action_dim=meta["action_dim"], encoder=meta["encoder"],
                       bn_scope=meta["bn_scope"])
    model = TacticModel(NodeVocab(tuple(meta["vocab"])), grammar, cfg)
    load_store(args.checkpoint, model.store)
    result = dict(eval_tactic(steps, model, max_steps=args.max_steps))
    _write_eval(args.out, result)
    _print_accuracy(result)


def cmd_gradcheck(args) -> None:
    errors = gradient_fidelity(args.seed, encoder=args.encoder)
    lines = [f"{name} max_rel_err={err:.3e} {'ok' if err <= args.tolerance else 'FAIL'}"
             for name, err in errors.items()]
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_text(args.out, text)
    sys.stdout.write(text)
    if any(err > args.tolerance for err in errors.values()):
        raise DataError(f"gradient error above {args.tolerance:g}")


def read_eval(path) -> dict[str, tuple[int, int]]:
    if not os.path.exists(path):
        raise FileMissing(f"eval output not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["group", "correct", "total"]:
        raise DataError(f"{path}: expected header group,correct,total")
    out = {}
    for row in rows[1:]:
        if len(row) != 3:
            raise DataError(f"{path}: bad row {row}")
        if row[0] != "Total":
            out[row[0]] = (int(row[1]), int(row[2]))
    return out


def build_report(results: Sequence[dict[str, tuple[int, int]]],
                 names: Sequence[str]) -> list[list[str]]:
    """Rows of the per-group table, header first and a column-sum Total last.

    One system gives ``group, correct, total``; several give ``group, total``
    followed by one correct-count column per system.
    """
    groups = sorted({g for r in results for g in r})
    totals = {}
    for g in groups:
        seen = {r[g][1] for r in results if g in r}
        if len(seen) > 1:
            raise DataError(f"group {g}: systems disagree on the number of examples")
        totals[g] = seen.pop()
    correct = [[r.get(g, (0, 0))[0] for g in groups] for r in results]
    if len(results) == 1:
        header = ["group", "correct", "total"]
        body = [[g, str(correct[0][i]), str(totals[g])] for i, g in enumerate(groups)]
        total = ["Total", str(sum(correct[0])), str(sum(totals.values()))]
    else:
        header = ["group", "total", *names]
        body = [[g, str(totals[g]), *(str(c[i]) for c in correct)] for i, g in enumerate(groups)]
        total = ["Total", str(sum(totals.values())), *(str(sum(c)) for c in correct)]
    return [header, *body, total]


def format_table(rows: list[list[str]]) -> str:
    widths = [max(len(r[k]) for r in rows) for k in range(len(rows[0]))]
    lines = []
    for r in rows:
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


def format_csv(rows: list[list[str]]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def cmd_report(args) -> None:
    names = args.names.split(",") if args.names else [Path(p).stem for p in args.inp]
    if len(names) != len(args.inp):
        raise UsageError(f"--names has {len(names)} entries for {len(args.inp)} inputs")
    rows = build_report([read_eval(p) for p in args.inp], names)
    text = format_table(rows)
    _write_text(f"{args.out}.txt", text)
    _write_text(f"{args.out}.csv", format_csv(rows))
    sys.stdout.write(text)


# --------------------------------------------------------------- parser

def _ratios(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if len(vals) not in SPLIT_NAMES:
        raise argparse.ArgumentTypeError("expected 2 (train,test) or 3 (train,valid,test) ratios")
    if any(v <= 0 for v in vals) or abs(sum(vals) - 1.0) > 1e-9:
        raise argparse.ArgumentTypeError("ratios must be positive and sum to 1")
    return vals


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _add_seed(p) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help=f"random seed (when omitted: ${SEED_ENV}, else 0)")


def _add_model(p, epochs: int) -> None:
    p.add_argument("--encoder", choices=("gin", "treelstm"), default="gin", help="term encoder")
    p.add_argument("--layers", type=_positive, default=5, help="GIN message-passing layers")
    p.add_argument("--hidden", type=_positive, default=256, help="encoder hidden size")
    p.add_argument("--bn-scope", choices=("batch", "graph"), default="batch",
                   help="batch-norm statistics over the whole instance or per graph")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    p.add_argument("--epochs", type=_positive, default=epochs, help="training epochs")
    _add_seed(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="prooflens", formatter_class=_Help,
                     description="Premise-selection pre-training and tactic prediction on theorem ASTs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, formatter_class=_Help)
        p.set_defaults(func=fn)
        return p

    p = add("gen-corpus", cmd_gen_corpus, "generate a synthetic corpus directory")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--files", type=_positive, default=10, help="number of source files")
    p.add_argument("--statements", type=_positive, default=20, help="statements per file")
    p.add_argument("--shared-depth", type=_positive, default=3, help="depth of signature subterms")
    p.add_argument("--label-vocab", type=_positive, default=24, help="number of node labels")
    p.add_argument("--filler-labels", type=_positive, default=4,
                   help="labels reserved for filler subterms")
    p.add_argument("--max-depth", type=_positive, default=1, help="depth of filler subterms")
    p.add_argument("--premise-rate", type=float, default=0.6,
                   help="chance that a statement applies an earlier lemma")
    p.add_argument("--grammar", default=None, help="tactic grammar file (built-in when omitted)")
    _add_seed(p)

    p = add("build-dataset", cmd_build_dataset, "build premise instances and proof steps from a corpus")
    p.add_argument("--in", dest="inp", metavar="PATH", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--grammar", default=None, help="tactic grammar file (built-in when omitted)")

    p = add("split", cmd_split, "partition a dataset directory by source file")
    p.add_argument("--in", dest="inp", metavar="PATH", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="directory receiving one subdirectory per part")
    p.add_argument("--ratios", type=_ratios, default="0.6,0.2,0.2",
                   help="train,valid,test (or train,test) fractions")
    _add_seed(p)

    p = add("pretrain", cmd_pretrain, "contrastive pre-training on premise selection")
    p.add_argument("--in", dest="inp", metavar="PATH", required=True,
                   help=f"{PREMISES} file or its directory")
    p.add_argument("--out", required=True,
                   help="checkpoint path; .meta.json and .metrics.csv are written beside it")
    p.add_argument("--proj-dim", type=_positive, default=256, help="projection head output size")
    _add_model(p, epochs=20)

    p = add("finetune", cmd_finetune, "train the tactic decoder with teacher forcing")
    p.add_argument("--in", dest="inp", metavar="PATH", required=True, help=f"{STEPS} file or its directory")
    p.add_argument("--out", required=True,
                   help="checkpoint path; .meta.json and .metrics.csv are written beside it")
    p.add_argument("--init-checkpoint", default=None,
                   help="pre-trained checkpoint whose encoder weights and vocabulary are reused")
    p.add_argument("--state-dim", type=_positive, default=256, help="decoder state size")
    p.add_argument("--action-dim", type=_positive, default=64, help="action embedding size")
    p.add_argument("--grammar", default=None, help="tactic grammar file (built-in when omitted)")
    _add_model(p, epochs=5)

    p = add("eval-premise", cmd_eval_premise, "top-1 premise selection per source file")
    p.add_argument("--in", dest="inp", metavar="PATH", required=True,
                   help=f"{PREMISES} file or its directory")
    p.add_argument("--checkpoint", required=True, help="checkpoint written by pretrain")
    p.add_argument("--out", required=True, help="output CSV (group,correct,total)")

    p = add("eval-tactic", cmd_eval_tactic, "exact-match greedy tactic prediction per source file")
    p.add_argument("--in", dest="inp", metavar="PATH", required=True, help=f"{STEPS} file or its directory")
    p.add_argument("--checkpoint", required=True, help="checkpoint written by finetune")
    p.add_argument("--out", required=True, help="output CSV (group,correct,total)")
    p.add_argument("--max-steps", type=_positive, default=64, help="decoding step limit")

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of both training objectives")
    p.add_argument("--encoder", choices=("gin", "treelstm"), default="gin", help="term encoder")
    p.add_argument("--tolerance", type=float, default=1e-4, help="largest accepted relative error")
    p.add_argument("--out", default=None, help="also write the report to this file")
    _add_seed(p)

    p = add("report", cmd_report, "per-group table of one or more eval outputs")
    p.add_argument("--in", dest="inp", metavar="PATH", nargs="+", required=True, help="eval CSV files")
    p.add_argument("--names", default=None,
                   help="comma-separated system names (file stems when omitted)")
    p.add_argument("--out", required=True, help="output prefix; writes PREFIX.txt and PREFIX.csv")
    return parser


def _resolve_seed(args) -> None:
    if not hasattr(args, "seed") or args.seed is not None:
        return
    env = os.environ.get(SEED_ENV)
    if env is None:
        args.seed = 0
        return
    try:
        args.seed = int(env)
    except ValueError:
        raise UsageError(f"prooflens: {SEED_ENV} is not an integer: {env!r}") from None


def run_cli(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _resolve_seed(args)
        args.func(args)
    except SystemExit as exc:  # --help and --version
        return exc.code or 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (DataError, *DATA_ERRORS) as exc:
        print(f"prooflens: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
