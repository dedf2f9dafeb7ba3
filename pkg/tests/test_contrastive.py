import math
import random

import numpy as np
import pytest

import oracles
from conftest import random_term_text
from prooflens.contrastive import (EmptyCandidates, EmptyDataset, NonFiniteInput, PremiseInstance,
                                   PremiseSelector, PretrainConfig, ProjectionHead, argmax_first,
                                   eval_premise, info_nce, info_nce_from_logits, pretrain, project,
                                   select_premise)
from prooflens.datagen import CorpusConfig, build_premise_dataset, gen_synthetic_corpus
from prooflens.numcore import ParamStore, SplitMix64, grad_check, save_store
from prooflens.sexpr import parse_term, vocab_from_corpus
from prooflens.tactic import TacticConfig, finetune, load_grammar


def head(hidden=4, out=3, seed=0):
    store = ParamStore()
    return ProjectionHead(store, hidden, out, SplitMix64(seed)), store


# ---------------------------------------------------------- projection

def test_zero_projection_maps_everything_to_zero():
    h, store = head()
    for _, t in store.items():
        t.data[...] = 0.0
    np.testing.assert_array_equal(project([1.0, -2.0, 3.0, 0.5], h), [[0.0, 0.0, 0.0]])


def test_identity_projection_on_nonnegative_input():
    h, _ = head(hidden=3, out=3)
    h.w1.data = np.eye(3)
    h.w2.data = np.eye(3)
    np.testing.assert_array_equal(project([0.5, 0.0, 2.0], h), [[0.5, 0.0, 2.0]])
    np.testing.assert_array_equal(project([-1.0, 1.0, 0.0], h), [[0.0, 1.0, 0.0]])


def test_projection_matches_loop_oracle():
    h, store = head(hidden=5, out=4, seed=3)
    h.b1.data = SplitMix64(1).uniform(-0.5, 0.5, (1, 5))
    h.b2.data = SplitMix64(2).uniform(-0.5, 0.5, (1, 4))
    p = {k: oracles._rows(store["projection." + k].data) for k in ("w1", "b1", "w2", "b2")}
    x = SplitMix64(9).uniform(-1, 1, (5,))
    np.testing.assert_allclose(project(x, h)[0], oracles.project(list(x), p), atol=1e-14)


# ------------------------------------------------------------- InfoNCE

def test_info_nce_with_equal_scores_is_log_of_candidate_count():
    z = np.ones(3)
    assert abs(info_nce(z, z, [z, z, z, z]).item() - math.log(5)) <= 1e-12


def test_info_nce_against_high_precision_reference():
    # dots: positive 2, two negatives 0
    t, pos = np.array([1.0, 1.0]), np.array([1.0, 1.0])
    negs = [np.array([1.0, -1.0]), np.array([0.0, 0.0])]
    got = info_nce(t, pos, negs).item()
    assert abs(got - oracles.info_nce([2.0, 0.0, 0.0])) <= 1e-12
    assert abs(got - 0.2395447) <= 1e-7


def test_info_nce_vanishes_for_a_dominant_positive():
    t = np.array([1.0])
    assert info_nce(t, [60.0], [[0.0], [1.0]]).item() <= 1e-25


def test_info_nce_is_nonnegative_and_shift_invariant():
    rng = SplitMix64(5)
    for _ in range(50):
        t = rng.uniform(-2, 2, (4,))
        pos = rng.uniform(-2, 2, (4,))
        negs = rng.uniform(-2, 2, (3, 4))
        loss = info_nce(t, pos, negs).item()
        assert loss >= 0.0
        # adding c*t/|t|^2 to every candidate shifts every dot product by c
        shift = 3.0 * t / np.dot(t, t)
        shifted = info_nce(t, pos + shift, negs + shift).item()
        assert abs(loss - shifted) <= 1e-10
        dots = [float(np.dot(t, c)) for c in (pos, *negs)]
        assert abs(loss - oracles.info_nce(dots)) <= 1e-12


def test_info_nce_rejects_non_finite_input():
    with pytest.raises(NonFiniteInput):
        info_nce([1.0, np.nan], [0.0, 1.0], [[1.0, 1.0]])
    with pytest.raises(NonFiniteInput):
        info_nce([1.0, 0.0], [np.inf, 1.0], [[1.0, 1.0]])


def test_info_nce_gradients_match_finite_differences():
    store = ParamStore()
    rng = SplitMix64(4)
    zt = store.add("t", rng.uniform(-1, 1, (1, 5)))
    zp = store.add("p", rng.uniform(-1, 1, (1, 5)))
    zn = store.add("n", rng.uniform(-1, 1, (4, 5)))
    assert grad_check(lambda: info_nce(zt, zp, zn), store) <= 1e-4


def test_model_loss_gradients_match_finite_differences():
    asts = [parse_term(t) for t in ("(Eq (App f (Var)) (Lam x))", "(App f (Var))", "(Lam x (Var))",
                                    "(Eq a b)")]
    inst = PremiseInstance(asts[0], asts[1], tuple(asts[2:]))
    cfg = PretrainConfig(layers=2, hidden=4, proj_dim=3, seed=2)
    model = PremiseSelector(vocab_from_corpus(asts), cfg)
    batch = model.prepare(inst.theorem, inst.candidates)
    for _ in range(2):
        model.logits_prepared(batch, train=True)
    assert grad_check(lambda: info_nce_from_logits(model.logits_prepared(batch, train=False)),
                      model.store) <= 1e-4


# ----------------------------------------------------------- selection

def test_argmax_first_examples():
    assert argmax_first([0.1, 0.9, 0.3]) == 1
    assert argmax_first([2.0, 2.0, 1.0]) == 0
    assert argmax_first([-1.0]) == 0
    with pytest.raises(EmptyCandidates):
        argmax_first([])


def test_select_premise_is_argmax_of_scores(small_corpus):
    build = build_premise_dataset(small_corpus)
    model = PremiseSelector(vocab_from_corpus([i.theorem for i in build.instances]),
                            PretrainConfig(layers=2, hidden=8, proj_dim=8, seed=1))
    for inst in build.instances[:10]:
        s = model.scores(inst.theorem, inst.candidates)
        assert select_premise(inst.theorem, inst.candidates, model) == int(np.argmax(s))
    with pytest.raises(EmptyCandidates):
        select_premise(build.instances[0].theorem, [], model)


def test_selection_invariant_under_monotone_rescoring():
    scores = SplitMix64(3).uniform(-5, 5, (20,))
    assert argmax_first(scores) == argmax_first(np.exp(scores)) == argmax_first(3 * scores + 7)


class _Oracle:
    """Stand-in model that scores the positive of a known instance highest."""

    def __init__(self, positives):
        self.positives = positives

    def scores(self, theorem, candidates, train=False):
        return np.array([1.0 if c in self.positives else 0.0 for c in candidates])


def test_eval_premise_with_perfect_scorer_is_one(small_corpus):
    build = build_premise_dataset(small_corpus)
    oracle = _Oracle({i.positive for i in build.instances})
    # a candidate equal to some positive never beats the true positive, which sits first
    assert eval_premise(build.instances, oracle) == 1.0
    with pytest.raises(EmptyDataset):
        eval_premise([], oracle)


def _shape_key(ast, i=None):
    n = ast.nodes[ast.root if i is None else i]
    return "(" + n.label + " " + " ".join(sorted(_shape_key(ast, c) for c in n.children)) + ")"


def test_untrained_model_is_at_chance():
    rng = random.Random(11)
    n_neg, per_model, models = 3, 100, 12
    hits = total = 0
    for m in range(models):
        insts = []
        while len(insts) < per_model:
            asts = [parse_term(random_term_text(rng, 20)) for _ in range(n_neg + 2)]
            if len({_shape_key(a) for a in asts[1:]}) == n_neg + 1:
                insts.append(PremiseInstance(asts[0], asts[1], tuple(asts[2:])))
        vocab = vocab_from_corpus([a for i in insts for a in (i.theorem, *i.candidates)])
        model = PremiseSelector(vocab, PretrainConfig(layers=2, hidden=16, proj_dim=16, seed=m))
        hits += round(eval_premise(insts, model) * per_model)
        total += per_model
    assert abs(hits / total - 1 / (n_neg + 1)) <= 0.05


# ----------------------------------------------------------- pretraining

@pytest.fixture(scope="module")
def tiny_dataset():
    records = gen_synthetic_corpus(CorpusConfig(num_files=3, statements_per_file=10, seed=5))
    return build_premise_dataset(records).instances[:8]


def tiny_config(**kw):
    base = dict(epochs=2, lr=1e-2, seed=4, layers=2, hidden=8, proj_dim=8)
    base.update(kw)
    return PretrainConfig(**base)


def test_zero_learning_rate_changes_nothing(tiny_dataset):
    cfg = tiny_config(lr=0.0, epochs=3)
    vocab = vocab_from_corpus([a for i in tiny_dataset for a in (i.theorem, *i.candidates)])
    fresh = PremiseSelector(vocab, cfg)
    res = pretrain(tiny_dataset, cfg)
    for name, value in fresh.store.items():
        np.testing.assert_array_equal(res.store[name].data, value.data)
    losses = [m.mean_loss for m in res.metrics]
    assert losses[0] == losses[1] == losses[2]


def test_pretraining_is_deterministic(tiny_dataset):
    a = pretrain(tiny_dataset, tiny_config())
    b = pretrain(tiny_dataset, tiny_config())
    assert [m.csv() for m in a.metrics] == [m.csv() for m in b.metrics]
    for name, value in a.store.snapshot().items():
        np.testing.assert_array_equal(b.store.snapshot()[name], value)


def test_pretraining_reduces_loss(tiny_dataset):
    res = pretrain(tiny_dataset, tiny_config(epochs=8))
    assert res.metrics[-1].mean_loss < res.metrics[0].mean_loss


def test_pretraining_metrics_and_log(tiny_dataset):
    seen = []
    res = pretrain(tiny_dataset, tiny_config(), log=seen.append)
    assert [m.epoch for m in res.metrics] == [1, 2] and seen == res.metrics
    fields = res.metrics[0].csv().split(",")
    assert fields[0] == "1" and float(fields[1]) > 0 and 0 <= float(fields[2]) <= 1


def test_pretraining_rejects_empty_dataset():
    with pytest.raises(EmptyDataset):
        pretrain([], tiny_config())


def test_config_validation():
    with pytest.raises(ValueError):
        PretrainConfig(epochs=-1)
    with pytest.raises(ValueError):
        PretrainConfig(lr=-1e-3)


def test_instance_needs_one_to_ten_negatives():
    t = parse_term("x")
    with pytest.raises(ValueError):
        PremiseInstance(t, t, ())
    with pytest.raises(ValueError):
        PremiseInstance(t, t, (t,) * 11)


def test_encoder_weights_carry_over_to_finetuning(tiny_dataset, tmp_path):
    cfg = tiny_config()
    res = pretrain(tiny_dataset, cfg)
    path = tmp_path / "premise.ckpt"
    save_store(path, res.store)
    tcfg = TacticConfig(epochs=0, seed=9, layers=cfg.layers, hidden=cfg.hidden, state_dim=6,
                        action_dim=3)
    ft = finetune([], res.model.vocab, load_grammar(), tcfg, init_checkpoint=path)
    src, dst = res.store.snapshot(), ft.model.store.snapshot()
    encoder_names = [n for n in src if n.startswith("encoder.")]
    assert sorted(ft.loaded) == encoder_names
    for n in encoder_names:
        np.testing.assert_array_equal(dst[n], src[n])
    assert not any(n.startswith("projection.") for n in dst)
