from .decoder import (FinetuneMetrics, FinetuneResult, MaxStepsExceeded, NoPremises,
                      NoValidProductions, ProofStep, TacticConfig, TacticDecoder, TacticModel,
                      decode_step, eval_tactic, finetune, greedy_decode, teacher_forced_accuracy,
                      teacher_forced_loss)
from .grammar import (PREMISE_ARG, Action, GoldInvalid, Grammar, GrammarError, InvalidTree,
                      PremiseLeaf, Production, TacticAst, TacticNode, TacticParseError,
                      derivation_sequence, load_grammar, parse_grammar, parse_tactic,
                      premise, premise_indices, prod, render_tactic, replay, tree_from_sequence)

__all__ = [
    "Action", "decode_step", "derivation_sequence", "eval_tactic", "finetune", "FinetuneMetrics",
    "FinetuneResult", "GoldInvalid", "Grammar", "GrammarError", "greedy_decode", "InvalidTree",
    "load_grammar", "MaxStepsExceeded", "NoPremises", "NoValidProductions", "parse_grammar",
    "parse_tactic", "premise", "PREMISE_ARG", "premise_indices", "PremiseLeaf", "prod",
    "Production", "ProofStep", "render_tactic", "replay", "TacticAst", "TacticConfig",
    "TacticDecoder", "TacticModel", "TacticNode", "TacticParseError", "teacher_forced_accuracy",
    "teacher_forced_loss", "tree_from_sequence",
]
