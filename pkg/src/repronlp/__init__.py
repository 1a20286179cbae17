"""Reproducible NLP experiment pipeline.

Vectorizes a labeled text corpus into an on-disk mini-batch store, trains a
small feed-forward classifier with fully captured random state, and
guarantees bit-exact reproduction of splits, batch order, and training
results across runs, interruptions, and worker counts.
"""

__version__ = "0.1.0"
