"""Stepwise monotonic attention and competing alignment mechanisms, with
exact oracles, hard decoders and a desk-scale trainable seq2seq harness."""

__version__ = "0.1.0"
