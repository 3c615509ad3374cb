"""N-best rescoring with exact sentence priors from bidirectional LM
conditionals, CMA-ES weight tuning, and WER evaluation."""

__version__ = "0.1.0"
