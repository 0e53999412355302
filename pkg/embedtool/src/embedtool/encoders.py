"""Pre-trained encoders behind one interface.

``word_avg_300d`` averages word vectors loaded from a local word2vec-format
text file (stop words removed, tokens lower-cased) and yields 300-dim
vectors. The two 512-dim sentence encoders load published universal sentence
encoder models through tensorflow_hub when that stack is installed; without
it (or offline) they raise ModelUnavailable.
"""

from __future__ import annotations

import re

import numpy as np

from . import ModelUnavailable, OOVLabel
from .stopwords import STOPWORDS

WORD_ENCODER = "word_avg_300d"
SENTENCE_ENCODERS = {
    "sentence_512d_v4": "https://tfhub.dev/google/universal-sentence-encoder/4",
    "sentence_512d_v5": "https://tfhub.dev/google/universal-sentence-encoder-large/5",
}
ENCODERS = (WORD_ENCODER, *SENTENCE_ENCODERS)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(label: str) -> list[str]:
    return _TOKEN_RE.findall(label.lower())


def load_word_vectors(path) -> dict[str, np.ndarray]:
    """word2vec text format: optional "count dim" header, then one
    ``token v_1 ... v_E`` line per word."""
    vectors: dict[str, np.ndarray] = {}
    dimension = None
    with open(path, encoding="utf-8") as handle:
        first = handle.readline().split()
        if len(first) == 2 and all(p.isdigit() for p in first):
            dimension = int(first[1])
        elif first:
            vectors[first[0]] = np.array([float(v) for v in first[1:]])
            dimension = vectors[first[0]].size
        for line in handle:
            parts = line.split()
            if not parts:
                continue
            values = np.array([float(v) for v in parts[1:]])
            if values.size != dimension:
                raise ModelUnavailable(
                    f"word vector file {path!r} mixes dimensions "
                    f"({values.size} vs {dimension})")
            vectors[parts[0]] = values
    if not vectors:
        raise ModelUnavailable(f"word vector file {path!r} is empty")
    return vectors


class WordAveragingEncoder:
    """Stop-word-removed, element-wise mean of the label's word vectors."""

    name = WORD_ENCODER

    def __init__(self, vectors: dict[str, np.ndarray]):
        self.vectors = vectors
        self.dimension = next(iter(vectors.values())).size

    def encode(self, label: str) -> np.ndarray:
        kept = [t for t in tokenize(label) if t not in STOPWORDS]
        found = [self.vectors[t] for t in kept if t in self.vectors]
        if not found:
            raise OOVLabel(f"no known tokens in label {label!r}")
        return np.mean(found, axis=0)


class SentenceEncoder:
    """tensorflow_hub-based sentence encoder (512-dim)."""

    def __init__(self, name: str, handle):
        self.name = name
        self._model = handle
        self.dimension = 512

    def encode(self, label: str) -> np.ndarray:
        return np.asarray(self._model([label])).reshape(-1)


def load_encoder(name: str, model_path=None):
    """Build the named encoder; raises ModelUnavailable when it cannot load."""
    if name == WORD_ENCODER:
        if model_path is None:
            raise ModelUnavailable(
                "word_avg_300d needs --model-path pointing at a word2vec-format "
                "text file of word vectors")
        return WordAveragingEncoder(load_word_vectors(model_path))
    if name in SENTENCE_ENCODERS:
        try:
            import tensorflow_hub as hub
        except ImportError as exc:
            raise ModelUnavailable(
                f"{name} needs tensorflow_hub (pip install 'embedtool[sentence]')"
            ) from exc
        source = model_path or SENTENCE_ENCODERS[name]
        try:
            return SentenceEncoder(name, hub.load(source))
        except Exception as exc:  # hub raises various OS/IO errors offline
            raise ModelUnavailable(f"could not load {source!r}: {exc}") from exc
    raise ModelUnavailable(f"unknown encoder {name!r}; choose from {ENCODERS}")
