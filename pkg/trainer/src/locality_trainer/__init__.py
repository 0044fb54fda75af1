"""Decoder-only transformer trained on locality-structured variable corpora.

The package fits a byte-pair tokenizer to the corpus text format, trains a
small GPT-style model on 1024-token chunks, and serves checkpoints over a
newline-delimited JSON protocol compatible with the locality-lab remote
backend.
"""

__version__ = "0.1.0"
