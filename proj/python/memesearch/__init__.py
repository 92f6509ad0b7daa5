"""Meme classification and text-to-meme retrieval.

Thin Python layer over the C++ core. Arrays are float64 NumPy arrays; ids,
tokens and labels are plain strings. Library errors raise ``memesearch.Error``
(a ``ValueError``) carrying a ``code`` attribute, and ``tokens`` when every
query token was out of vocabulary.
"""

import json

from ._memesearch import (
    EmbeddingModel,
    Error,
    average_precision,
    f1_score,
    hog_descriptor,
    random_ranking_map,
    tokenize,
)
from . import _memesearch

__all__ = [
    "EmbeddingModel",
    "Error",
    "average_precision",
    "cross_validate",
    "f1_score",
    "hog_descriptor",
    "icr",
    "random_ranking_map",
    "search",
    "tokenize",
    "train_embedding",
]


def cross_validate(ids, features, labels, method="linear_svm", resamples=10, folds=10,
                   seed=42, k=5, lam=1e-4):
    """Repeated undersampling + stratified k-fold; returns the report as a dict."""
    return json.loads(_memesearch._cross_validate(
        list(ids), features, list(labels), method=method, resamples=resamples,
        folds=folds, seed=seed, k=k, lam=lam))


def icr(records):
    """Pairwise percent agreement from (item_id, coder_id, label, timestamp_ms) tuples."""
    return json.loads(_memesearch._icr([tuple(r) for r in records]))


def train_embedding(ids, captions, visual, words, test_size, dim=256, margin=1.0, lr=1e-4,
                    batch=16, epochs=270, seed=42, distance="squared_euclidean"):
    """Trains the two-head embedding. ``words`` maps token -> vector.

    Returns ``(model, trace)`` where trace is a list of per-epoch dicts.
    """
    tokens, vectors = _split_words(words)
    model, trace = _memesearch._train_embedding(
        list(ids), list(captions), visual, tokens, vectors, test_size, dim=dim,
        margin=margin, lr=lr, batch=batch, epochs=epochs, seed=seed, distance=distance)
    return model, json.loads(trace)


def search(model, query, ids, visual, words, k=10):
    """Ranks items for a text query; returns [(rank, id, distance), ...]."""
    tokens, vectors = _split_words(words)
    return model._search(query, list(ids), visual, tokens, vectors, k)


def _split_words(words):
    import numpy as np

    tokens = list(words)
    vectors = np.asarray([words[t] for t in tokens], dtype=np.float64)
    return tokens, vectors
