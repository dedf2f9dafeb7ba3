# Predicting tactics with a grammar-constrained decoder.
#
# The decoder emits a leftmost derivation of the tactic grammar, one
# production or premise index per step, and can only pick productions that
# expand the current nonterminal.
from prooflens.datagen import CorpusConfig, gen_synthetic_corpus, proof_steps, split_corpus
from prooflens.sexpr import vocab_from_corpus
from prooflens.tactic import (TacticConfig, eval_tactic, finetune, greedy_decode, load_grammar,
                              render_tactic, tree_from_sequence)

grammar = load_grammar()
for p in grammar.productions:
    print(p.id, p)

records = gen_synthetic_corpus(CorpusConfig(num_files=6, statements_per_file=12, seed=3))
train, test = split_corpus(records, (0.67, 0.33), seed=3)
steps, held_out = proof_steps(train, grammar), proof_steps(test, grammar)
vocab = vocab_from_corpus(a for s in steps for a in (s.goal, *s.premises))

st = steps[5]
print(st.goal.render())
print("gold actions:", [tuple(a) for a in st.gold])

# %% Fine-tune from scratch; the last column is teacher-forced accuracy
cfg = TacticConfig(epochs=8, hidden=32, state_dim=32, action_dim=16, lr=3e-3, seed=0)
model = finetune(steps, vocab, grammar, cfg, log=lambda m: print(m.csv())).model

# %% Greedy decoding on held-out goals
for st in held_out[:6]:
    names = [f"L{i}" for i in range(len(st.premises))]
    try:
        pred = render_tactic(greedy_decode(st.goal, st.premises, model), names)
    except ValueError as exc:  # e.g. `apply` chosen with nothing to apply
        pred = f"<{type(exc).__name__}>"
    gold = render_tactic(tree_from_sequence(grammar, st.gold), names)
    print(f"{gold:>12}  predicted {pred}")

counts = eval_tactic(held_out, model)
print({f: f"{c}/{n}" for f, (c, n) in counts.items()})
