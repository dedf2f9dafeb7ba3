# Contrastive pre-training on a synthetic premise-selection corpus.
#
# Every theorem is proved by applying one earlier lemma whose body it
# contains.  The other earlier lemmas have exactly the same tree shape and
# serve as hard negatives.  Pre-training should push the true lemma to the
# top of the ranking.
import time

from prooflens.contrastive import PremiseSelector, PretrainConfig, eval_premise, pretrain
from prooflens.datagen import CorpusConfig, build_premise_dataset, gen_synthetic_corpus, split_corpus
from prooflens.sexpr import vocab_from_corpus

records = gen_synthetic_corpus(CorpusConfig(num_files=10, statements_per_file=20, seed=7))
train, valid, test = split_corpus(records, (0.6, 0.2, 0.2), seed=7)
built = build_premise_dataset(train)
test_set = build_premise_dataset(test).instances
print(built.stats)

example = built.instances[0]
print("theorem :", example.theorem.render())
print("positive:", example.positive.render())
print("negative:", example.negatives[0].render())

# %% Untrained scores are close to a coin toss among the candidates
cfg = PretrainConfig(epochs=20, hidden=64, proj_dim=64, seed=7)
vocab = vocab_from_corpus(a for i in built.instances for a in (i.theorem, *i.candidates))
print("untrained top-1:", eval_premise(test_set, PremiseSelector(vocab, cfg)))

# %% Train.  The per-epoch line is epoch, mean InfoNCE loss, training top-1.
t0 = time.perf_counter()
result = pretrain(built.instances, cfg, vocab=vocab, log=lambda m: print(m.csv()))
print(f"{time.perf_counter() - t0:.1f} s")
print("test top-1 after pre-training:", round(eval_premise(test_set, result.model), 3))
