"""prune-lab - one-shot magnitude pruning laboratory for encoder-decoder transformers."""

__version__ = "0.1.0"
