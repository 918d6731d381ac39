"""Gloss vocabulary: word vectors, cosine similarities, and soft labels.

A gloss is the word naming a sign. Each gloss carries an embedding vector;
pairwise cosine similarities between embeddings drive the language-aware
soft labels used during training. Vectors are read from the plain-text
word-vector format (header line ``N d``, then one token and ``d`` decimal
numbers per line).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError


@dataclass
class SoftLabel:
    """A target distribution over the vocabulary with a designated true class."""

    probs: np.ndarray
    target_index: int

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)


@dataclass
class GlossLexicon:
    """Ordered gloss vocabulary with embeddings and cosine similarities."""

    glosses: list[str]
    embeddings: np.ndarray
    sim: np.ndarray = field(init=False)

    def __post_init__(self):
        if len(self.glosses) != len(set(self.glosses)):
            raise ConfigError("gloss tokens must be unique")
        if len(self.glosses) < 2:
            raise ConfigError("vocabulary needs at least 2 glosses")
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != len(self.glosses):
            raise ConfigError(
                f"embedding matrix shape {self.embeddings.shape} does not match "
                f"{len(self.glosses)} glosses"
            )
        norms = np.linalg.norm(self.embeddings, axis=1)
        bad = np.flatnonzero(norms == 0.0)
        if bad.size:
            raise ConfigError(f"zero-norm embedding for gloss {self.glosses[bad[0]]!r}")
        unit = self.embeddings / norms[:, None]
        self.sim = np.clip(unit @ unit.T, -1.0, 1.0)

    @property
    def size(self) -> int:
        return len(self.glosses)

    @property
    def embed_dim(self) -> int:
        return self.embeddings.shape[1]

    def index(self, gloss: str) -> int:
        """Exact-token lookup; unknown glosses are an error."""
        try:
            return self.glosses.index(gloss)
        except ValueError:
            raise DataError(f"gloss {gloss!r} not in vocabulary") from None


def load_word_vectors(path) -> GlossLexicon:
    """Parse a word-vector text file into a lexicon.

    Format: first line ``N d``, then ``N`` lines of ``token v1 ... vd``
    (UTF-8, space-separated, '.' decimal point).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"word-vector file not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2:
            raise ParseError(f"{path}:1: malformed header {header.strip()!r}")
        try:
            n, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"{path}:1: malformed header {header.strip()!r}") from None
        if n < 2 or dim < 1:
            raise ParseError(f"{path}:1: header declares N={n}, d={dim}")
        glosses: list[str] = []
        seen: set[str] = set()
        rows = np.empty((n, dim), dtype=np.float64)
        for i in range(n):
            lineno = i + 2
            line = fh.readline()
            if not line:
                raise ParseError(f"{path}:{lineno}: expected {n} vectors, file ended")
            fields = line.split()
            if len(fields) != dim + 1:
                raise ParseError(
                    f"{path}:{lineno}: expected {dim} values, got {len(fields) - 1}"
                )
            token = fields[0]
            if token in seen:
                raise ParseError(f"{path}:{lineno}: duplicate token {token!r}")
            seen.add(token)
            try:
                rows[i] = [float(v) for v in fields[1:]]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric value") from None
            glosses.append(token)
        trailing = fh.readline()
        if trailing.strip():
            raise ParseError(f"{path}:{n + 2}: more vectors than header declares")
    return GlossLexicon(glosses, rows)


def save_word_vectors(lexicon: GlossLexicon, path) -> None:
    """Write a lexicon back out in the word-vector text format."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"{lexicon.size} {lexicon.embed_dim}\n")
        for token, row in zip(lexicon.glosses, lexicon.embeddings):
            fh.write(token + " " + " ".join(repr(float(v)) for v in row) + "\n")


def cosine_row(lexicon: GlossLexicon, b: int) -> np.ndarray:
    """Cosine similarity of gloss ``b`` against every gloss in the vocabulary."""
    if not 0 <= b < lexicon.size:
        raise ConfigError(f"gloss index {b} out of range [0, {lexicon.size})")
    return lexicon.sim[b].copy()


def vanilla_soft_label(n: int, b: int, epsilon: float) -> SoftLabel:
    """Uniform label smoothing: 1-eps at the target, eps spread evenly."""
    if n < 2:
        raise ConfigError(f"vocabulary size {n} < 2")
    if not 0 <= b < n:
        raise ConfigError(f"target index {b} out of range [0, {n})")
    if not 0.0 <= epsilon < 1.0:
        raise ConfigError(f"epsilon {epsilon} outside [0, 1)")
    probs = np.full(n, epsilon / (n - 1), dtype=np.float64)
    probs[b] = 1.0 - epsilon
    return SoftLabel(probs, b)


def language_aware_soft_label(
    lexicon: GlossLexicon, b: int, epsilon: float, tau: float
) -> SoftLabel:
    """Similarity-weighted smoothing: negative mass follows a softmax of
    cosine similarities at temperature ``tau``."""
    if tau <= 0.0:
        raise ConfigError(f"temperature {tau} must be positive")
    if not 0.0 <= epsilon < 1.0:
        raise ConfigError(f"epsilon {epsilon} outside [0, 1)")
    n = lexicon.size
    if not 0 <= b < n:
        raise ConfigError(f"target index {b} out of range [0, {n})")
    s = lexicon.sim[b] / tau
    mask = np.ones(n, dtype=bool)
    mask[b] = False
    # max-subtracted softmax over the negatives only
    z = s[mask]
    z = np.exp(z - z.max())
    probs = np.empty(n, dtype=np.float64)
    probs[mask] = epsilon * z / z.sum()
    probs[b] = 1.0 - epsilon
    return SoftLabel(probs, b)
