"""Graph-encoded theorem terms, contrastive premise selection, and a
grammar-constrained tactic decoder, built on a small numpy autodiff core."""

__version__ = "0.1.0"
