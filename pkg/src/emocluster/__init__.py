"""Toolkit for intra-speaker clustering of speaker embeddings and
cluster-based contrastive pretraining for speech emotion recognition."""

__version__ = "0.1.0"
