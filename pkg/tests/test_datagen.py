import pytest

from prooflens.contrastive import PremiseInstance
from prooflens.datagen import (CorpusConfig, MalformedLine, ProofRecord, TooFewFiles, assign_files,
                               build_premise_dataset, contains_subtree, gen_synthetic_corpus,
                               premise_to_json, proof_steps, read_corpus, read_premise_dataset,
                               read_steps, split_corpus, write_corpus, write_premise_dataset,
                               write_steps)
from prooflens.numcore import FileMissing
from prooflens.sexpr import parse_term
from prooflens.tactic import parse_tactic


def record(grammar, n_prior, tactic, position=None, file="f"):
    """A statement preceded by ``n_prior`` named premises P0..P{n-1}."""
    context = tuple((f"P{i}", parse_term(f"(Lemma{i} x)")) for i in range(n_prior))
    names = [n for n, _ in context]
    pos = n_prior if position is None else position
    return ProofRecord(file, pos, parse_term("(Goal y)"), parse_tactic(grammar, tactic, names),
                       context, tuple(range(n_prior)))


def labels(terms):
    return [t.nodes[0].label for t in terms]


# ----------------------------------------------------- negative sampling

def test_far_positive_gets_the_ten_nearest_negatives(grammar):
    build = build_premise_dataset([record(grammar, 15, "apply P0")])
    (inst,) = build.instances
    assert labels([inst.positive]) == ["Lemma0"]
    assert labels(inst.negatives) == [f"Lemma{i}" for i in range(5, 15)]


def test_near_positive_is_replaced_by_the_next_older_premise(grammar):
    build = build_premise_dataset([record(grammar, 15, "apply P12")])
    (inst,) = build.instances
    assert len(inst.negatives) == 10
    want = [f"Lemma{i}" for i in range(4, 15) if i != 12]
    assert labels(inst.negatives) == want


def test_short_context_uses_every_other_premise(grammar):
    (inst,) = build_premise_dataset([record(grammar, 4, "rewrite P2")]).instances
    assert labels(inst.negatives) == ["Lemma0", "Lemma1", "Lemma3"]


def test_premise_free_tactics_emit_nothing(grammar):
    build = build_premise_dataset([record(grammar, 5, "reflexivity"), record(grammar, 5, "intro")])
    assert build.instances == [] and build.stats["skipped_no_premise"] == 2


def test_single_premise_context_has_no_negatives(grammar):
    build = build_premise_dataset([record(grammar, 1, "apply P0")])
    assert build.instances == [] and build.stats["skipped_no_negatives"] == 1


def test_one_instance_per_distinct_premise(grammar):
    rec = record(grammar, 6, "seq ( apply P1 , seq ( rewrite P4 , apply P1 ) )")
    build = build_premise_dataset([rec])
    assert labels(i.positive for i in build.instances) == ["Lemma1", "Lemma4"]
    assert build.files == ["f", "f"]
    for inst in build.instances:
        assert inst.positive not in inst.negatives and len(inst.negatives) == 5


def test_later_statements_are_never_negatives(grammar):
    rec = record(grammar, 8, "apply P1", position=3)
    (inst,) = build_premise_dataset([rec]).instances
    assert labels(inst.negatives) == ["Lemma0", "Lemma2"]


# ------------------------------------------------------ synthetic corpus

@pytest.fixture(scope="module")
def corpus():
    return gen_synthetic_corpus(CorpusConfig(num_files=10, statements_per_file=20, seed=7))


def test_corpus_size_and_ordering(corpus):
    assert len(corpus) == 200
    assert sorted({r.file for r in corpus}) == [f"f{i:03d}" for i in range(10)]
    for r in corpus:
        assert all(p < r.position for p in r.context_positions)


def test_planted_subtree_is_in_positive_and_in_no_negative(corpus):
    planted = [r for r in corpus if r.planted is not None]
    assert planted
    inside = outside = emitted = 0
    for r in planted:
        # a theorem whose only prior premise is the positive yields no instance
        for inst in build_premise_dataset([r]).instances:
            emitted += 1
            inside += contains_subtree(inst.positive, r.planted) and contains_subtree(r.theorem, r.planted)
            outside += sum(contains_subtree(n, r.planted) for n in inst.negatives)
    assert emitted > 0.9 * len(planted)
    assert inside == emitted and outside == 0


def test_mean_negative_count(corpus):
    stats = build_premise_dataset(corpus).stats
    assert stats["instances"] > 0 and stats["mean_negatives"] >= 5.0


def test_corpus_is_reproducible(corpus, tmp_path):
    again = gen_synthetic_corpus(CorpusConfig(num_files=10, statements_per_file=20, seed=7))
    write_corpus(tmp_path / "a", corpus)
    write_corpus(tmp_path / "b", again)
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    other = gen_synthetic_corpus(CorpusConfig(num_files=10, statements_per_file=20, seed=8))
    assert [r.theorem for r in other] != [r.theorem for r in corpus]


@pytest.mark.parametrize("kw", [dict(num_files=0), dict(shared_depth=0), dict(filler_labels=2),
                                dict(label_vocab=4, filler_labels=4)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        CorpusConfig(**kw)


# -------------------------------------------------------------- splitting

def test_file_level_split_sizes_and_disjointness(corpus):
    parts = split_corpus(corpus, (0.6, 0.2, 0.2), seed=1)
    files = [{r.file for r in p} for p in parts]
    assert [len(f) for f in files] == [6, 2, 2]
    assert not (files[0] & files[1] or files[0] & files[2] or files[1] & files[2])
    assert sum(len(p) for p in parts) == len(corpus)


def test_split_is_seeded():
    files = [f"f{i}" for i in range(10)]
    assert assign_files(files, seed=3) == assign_files(reversed(files), seed=3)
    assert assign_files(files, seed=3) != assign_files(files, seed=4)


def test_every_partition_gets_a_file():
    assert [len(p) for p in assign_files(["a", "b", "c"], (0.9, 0.05, 0.05))] == [1, 1, 1]
    with pytest.raises(TooFewFiles):
        assign_files(["a", "b"], (0.6, 0.2, 0.2))
    with pytest.raises(ValueError):
        assign_files(["a", "b"], (0.7, 0.7))


# ---------------------------------------------------------- serialization

def test_premise_dataset_round_trips_byte_exactly(corpus, tmp_path):
    insts = build_premise_dataset(corpus).instances
    path = tmp_path / "p.jsonl"
    write_premise_dataset(path, insts)
    back = read_premise_dataset(path)
    assert back == insts
    again = tmp_path / "q.jsonl"
    write_premise_dataset(again, back)
    assert path.read_bytes() == again.read_bytes()


def test_steps_round_trip(corpus, grammar, tmp_path):
    steps = proof_steps(corpus, grammar)
    path = tmp_path / "s.jsonl"
    write_steps(path, steps)
    assert read_steps(path, grammar) == steps


def test_truncated_line_reports_its_number(corpus, tmp_path):
    path = tmp_path / "p.jsonl"
    write_premise_dataset(path, build_premise_dataset(corpus).instances[:20])
    lines = path.read_text().splitlines(keepends=True)
    lines[16] = lines[16][: len(lines[16]) // 2] + "\n"
    path.write_text("".join(lines))
    with pytest.raises(MalformedLine) as info:
        read_premise_dataset(path)
    assert info.value.lineno == 17


def test_empty_negatives_are_rejected(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text('{"theorem": "(A x)", "positive": "(B y)", "negatives": []}\n')
    with pytest.raises(MalformedLine):
        read_premise_dataset(path)


def test_bad_step_lines(grammar, tmp_path):
    path = tmp_path / "s.jsonl"
    bad = ['{"file": "f", "position": 0, "goal": "(G)", "premises": [], "gold": [["premise", 0]]}',
           '{"file": "f", "position": 0, "goal": "(G", "premises": [], "gold": [["prod", 0]]}',
           '{"file": "f", "position": 0, "goal": "(G)", "premises": [], "gold": []}',
           '{"file": "f", "goal": "(G)", "premises": [], "gold": [["prod", 0]]}']
    for line in bad:
        path.write_text(line + "\n")
        with pytest.raises(MalformedLine):
            read_steps(path, grammar)


def test_missing_files(tmp_path):
    with pytest.raises(FileMissing):
        read_premise_dataset(tmp_path / "absent.jsonl")
    with pytest.raises(FileMissing):
        read_corpus(tmp_path / "absent")


def test_corpus_directory_round_trip(corpus, tmp_path):
    write_corpus(tmp_path, corpus)
    back = read_corpus(tmp_path)
    assert [(r.file, r.position, r.theorem, r.tactic) for r in back] == \
        [(r.file, r.position, r.theorem, r.tactic) for r in corpus]
    assert [r.context for r in back] == [r.context for r in corpus]
    assert build_premise_dataset(back).instances == build_premise_dataset(corpus).instances


def test_json_line_format():
    inst = PremiseInstance(parse_term("(A x)"), parse_term("(B)"), (parse_term("y"),))
    assert premise_to_json(inst) == '{"theorem": "(A x)", "positive": "(B)", "negatives": ["y"]}'
