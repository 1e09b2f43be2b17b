"""Toolkit for chunked multi-animal tracking post-processing and play-behaviour classification.

Everything operates on files: tracked masks, scoring-window labels, precomputed
backbone embeddings, and the reports derived from them. No video decoding and
no model inference happens here.
"""

__version__ = "0.1.0"
