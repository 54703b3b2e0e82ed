"""Subject-description text processing.

Artwork subject descriptions arrive as free English text. This module
turns them into the model's text input: lowercase word tokens with stop
words removed, mapped to pretrained word vectors and padded into
fixed-length sequences.
"""

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DataError, EmptySequenceError

DEFAULT_EMBED_DIM = 100
DEFAULT_MAX_LEN = 25


def tokenize(text):
    """Split raw text into lowercase word tokens.

    Tokens are whitespace-separated pieces with any non-alphanumeric
    characters stripped from both ends; interior characters such as the
    hyphen in "man-made" are kept because they occur verbatim in museum
    vocabulary. Pieces that strip to nothing are dropped.
    """
    tokens = []
    for piece in text.lower().split():
        start, end = 0, len(piece)
        while start < end and not piece[start].isalnum():
            start += 1
        while end > start and not piece[end - 1].isalnum():
            end -= 1
        if end > start:
            tokens.append(piece[start:end])
    return tokens


def remove_stopwords(tokens, stoplist):
    """Order-preserving copy of ``tokens`` with stop-list members removed."""
    return [t for t in tokens if t not in stoplist]


def load_stopwords(path=None):
    """Stop-word set from a one-word-per-line UTF-8 file.

    With no path, returns the versioned ~170-word English list shipped
    with the package, so runs on different machines agree exactly.
    """
    if path is None:
        data = resources.files("artzsl").joinpath("data/stopwords.txt").read_text("utf-8")
    else:
        data = Path(path).read_text("utf-8")
    return frozenset(w.strip() for w in data.splitlines() if w.strip())


class EmbeddingTable:
    """Immutable word -> vector map loaded from a pretrained embedding file."""

    def __init__(self, dim, entries):
        self.dim = dim
        self._entries = dict(entries)
        for vec in self._entries.values():
            vec.flags.writeable = False

    def __len__(self):
        return len(self._entries)

    def __contains__(self, word):
        return word in self._entries

    def __getitem__(self, word):
        return self._entries[word]

    def get(self, word):
        return self._entries.get(word)

    def words(self):
        return self._entries.keys()


def load_embeddings(source, dim=DEFAULT_EMBED_DIM):
    """Parse a pretrained embedding text file into an :class:`EmbeddingTable`.

    Format: UTF-8, one entry per line, ``word v1 ... v<dim>`` with
    space-separated decimal floats, LF terminated. Raises
    :class:`DataError` naming the offending line for a wrong component
    count, an unparsable or non-finite float, or a duplicate word.
    """
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as handle:
            return load_embeddings(handle, dim)

    entries = {}
    for lineno, line in enumerate(source, start=1):
        parts = line.split()
        if not parts:
            raise DataError(f"embedding line {lineno}: empty line")
        word, raw_values = parts[0], parts[1:]
        if len(raw_values) != dim:
            raise DataError(
                f"embedding line {lineno}: expected {dim} components, got {len(raw_values)}"
            )
        try:
            vec = np.array([float(v) for v in raw_values], dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"embedding line {lineno}: bad float ({exc})") from None
        if not np.all(np.isfinite(vec)):
            raise DataError(f"embedding line {lineno}: non-finite component")
        if word in entries:
            raise DataError(f"embedding line {lineno}: duplicate word {word!r}")
        entries[word] = vec
    return EmbeddingTable(dim, entries)


@dataclass
class EmbeddedSequence:
    """A token sequence embedded into a fixed-length padded matrix.

    ``matrix`` is max_len x dim; row i embeds ``tokens[i]``. ``mask`` is
    True for real rows, False for zero padding.
    """

    tokens: list
    matrix: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.matrix.shape[0] != self.mask.shape[0]:
            raise ValueError("matrix rows and mask length differ")
        if int(self.mask.sum()) != len(self.tokens):
            raise ValueError("mask marks a different number of rows than tokens")

    @property
    def length(self):
        return len(self.tokens)


def embed_tokens(tokens, table, max_len=DEFAULT_MAX_LEN):
    """Embed tokens into an :class:`EmbeddedSequence` of length ``max_len``.

    Out-of-vocabulary tokens are dropped rather than zero-filled (zeros
    would feed meaningless steps to the sequence encoder). The survivors
    are truncated to ``max_len`` and zero-padded up to it. Raises
    :class:`EmptySequenceError` when nothing survives.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    kept = [(t, table[t]) for t in tokens if t in table]
    if not kept:
        raise EmptySequenceError(
            f"no in-vocabulary tokens among {len(tokens)} input tokens"
        )
    kept = kept[:max_len]
    matrix = np.zeros((max_len, table.dim), dtype=np.float64)
    mask = np.zeros(max_len, dtype=bool)
    for i, (_, vec) in enumerate(kept):
        matrix[i] = vec
        mask[i] = True
    return EmbeddedSequence([t for t, _ in kept], matrix, mask)
