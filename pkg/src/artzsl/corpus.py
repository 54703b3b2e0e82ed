"""Dataset ingestion, class balancing, class descriptions, zero-shot splits."""

import json
import math
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, EmptySequenceError
from .rng import DetRng
from .text import EmbeddedSequence, embed_tokens, remove_stopwords, tokenize

log = logging.getLogger(__name__)

DEFAULT_FEATURE_DIM = 100
DEFAULT_CLASS_CAP = 147
DEFAULT_TOP_WORDS = 25


@dataclass
class Artwork:
    """One collection object: image features, subject description, materials.

    ``tokens`` is optionally filled by the preprocess stage with the
    description's stop-word-free token list, so later stages can skip
    re-tokenizing.
    """

    id: str
    features: np.ndarray
    description: str
    materials: frozenset
    tokens: list = None


@dataclass
class Dataset:
    artworks: list
    classes: frozenset = field(init=False)

    def __post_init__(self):
        union = set()
        for art in self.artworks:
            union.update(art.materials)
        self.classes = frozenset(union)

    def __len__(self):
        return len(self.artworks)


@dataclass
class ClassDescription:
    """A material plus the words that most often describe artworks using it."""

    material: str
    words: list
    embedded: EmbeddedSequence


@dataclass
class ZslSplit:
    train: Dataset
    heldout_classes: frozenset
    val: Dataset
    seed: int


def _parse_row(obj, row, feature_dim, base_dir):
    for key in ("id", "description", "materials"):
        if key not in obj:
            raise DataError(f"manifest row {row}: missing field {key!r}")
    if "features" in obj:
        features = np.asarray(obj["features"], dtype=np.float64)
    elif "features_path" in obj:
        raw = Path(base_dir, obj["features_path"]).read_bytes()
        features = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    else:
        raise DataError(f"manifest row {row}: missing field 'features' or 'features_path'")
    if features.ndim != 1 or features.shape[0] != feature_dim:
        raise DataError(
            f"manifest row {row}: expected {feature_dim} features, got {features.size}"
        )
    if not np.all(np.isfinite(features)):
        raise DataError(f"manifest row {row}: non-finite feature value")
    materials = [m for m in obj["materials"]]
    if not materials or any(not m for m in materials):
        raise DataError(f"manifest row {row}: materials must be non-empty strings")
    return Artwork(
        id=str(obj["id"]),
        features=features,
        description=str(obj["description"]),
        materials=frozenset(materials),
        tokens=list(obj["tokens"]) if "tokens" in obj else None,
    )


def load_manifest(source, feature_dim=DEFAULT_FEATURE_DIM):
    """Load a JSON-lines manifest into a :class:`Dataset`.

    Each row is an object with ``id``, ``description``, ``materials`` and
    either ``features`` (array of ``feature_dim`` numbers) or
    ``features_path`` (little-endian float32 binary file, resolved
    relative to the manifest). Row-level problems raise
    :class:`DataError` naming the 1-based row.
    """
    if isinstance(source, (str, Path)):
        base_dir = Path(source).parent
        with open(source, encoding="utf-8") as handle:
            return _load_manifest_lines(handle, feature_dim, base_dir)
    return _load_manifest_lines(source, feature_dim, Path("."))


def _load_manifest_lines(lines, feature_dim, base_dir):
    artworks = []
    seen_ids = set()
    for row, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"manifest row {row}: invalid JSON ({exc})") from None
        art = _parse_row(obj, row, feature_dim, base_dir)
        if art.id in seen_ids:
            raise DataError(f"manifest row {row}: duplicate artwork id {art.id!r}")
        seen_ids.add(art.id)
        artworks.append(art)
    return Dataset(artworks)


def write_manifest(dataset, path):
    """Serialize a Dataset back to JSON-lines (inverse of load_manifest)."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for art in dataset.artworks:
            obj = {
                "id": art.id,
                "features": [float(v) for v in art.features],
                "description": art.description,
                "materials": sorted(art.materials),
            }
            if art.tokens is not None:
                obj["tokens"] = art.tokens
            handle.write(json.dumps(obj) + "\n")


def class_histogram(ds, mode="per-label"):
    """Count artworks per material.

    ``per-label`` increments every material an artwork carries (so
    multi-material artworks count several times). ``single`` counts each
    artwork exactly once, attributed to its lexicographically smallest
    material; the raw counts are ambiguous for multi-label data, so both
    views are exposed.
    """
    counts = Counter()
    for art in ds.artworks:
        if mode == "per-label":
            counts.update(art.materials)
        elif mode == "single":
            counts[min(art.materials)] += 1
        else:
            raise ValueError(f"unknown histogram mode {mode!r}")
    return dict(counts)


def balance(ds, cap=DEFAULT_CLASS_CAP, seed=0):
    """Undersample so each material keeps at most ``cap`` artworks.

    Classes are processed from rarest to most frequent (ties broken by
    name). An artwork already selected for a rarer class counts toward
    the quota of its other materials; the remainder of each quota is then
    topped up uniformly at random under ``seed``. The result is a
    deduplicated subset of the input in the input's order.

    With heavily overlapping label sets, forced selections for rare
    classes can push a frequent class past ``cap``; that trade-off
    (protect rare classes first) is deliberate and documented.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    carriers = {}
    for idx, art in enumerate(ds.artworks):
        for material in art.materials:
            carriers.setdefault(material, []).append(idx)
    order = sorted(ds.classes, key=lambda m: (len(carriers[m]), m))
    rng = DetRng(seed, "balance")
    selected = set()
    for material in order:
        pool = carriers[material]
        quota = min(cap, len(pool))
        remaining = [i for i in pool if i not in selected]
        need = quota - (len(pool) - len(remaining))
        if need > 0:
            for j in rng.sample(len(remaining), need):
                selected.add(remaining[j])
    return Dataset([art for i, art in enumerate(ds.artworks) if i in selected])


def build_class_descriptions(ds, table, stoplist, k=DEFAULT_TOP_WORDS):
    """Describe each material by the top-``k`` words of its artworks.

    For every material, tokens of all artworks carrying it (after
    stop-word removal) are pooled; words are ranked by frequency
    descending with lexicographic tie-break, and the first
    ``min(k, distinct)`` are embedded. Returns ``(descriptions,
    unusable)`` where ``unusable`` lists materials whose pooled
    vocabulary was empty or entirely out of vocabulary; those classes are
    excluded and reported because the model cannot score them.

    Artworks with precomputed ``tokens`` are used as-is; others are
    tokenized here.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pools = {}
    for art in ds.artworks:
        tokens = art.tokens
        if tokens is None:
            tokens = remove_stopwords(tokenize(art.description), stoplist)
        for material in art.materials:
            pools.setdefault(material, Counter()).update(tokens)

    descriptions, unusable = [], []
    for material in sorted(ds.classes):
        counts = pools.get(material, Counter())
        ranked = sorted(counts.items(), key=lambda wc: (-wc[1], wc[0]))
        words = [w for w, _ in ranked[:k]]
        try:
            embedded = embed_tokens(words, table, max_len=k)
        except EmptySequenceError:
            unusable.append(material)
            continue
        descriptions.append(ClassDescription(material, words, embedded))
    if unusable:
        log.warning(
            "%d material(s) had no embeddable vocabulary and were excluded: %s",
            len(unusable),
            ", ".join(unusable),
        )
    return descriptions, unusable


def zsl_split(ds, fraction=0.3, seed=0):
    """Hold out a random fraction of classes for zero-shot validation.

    ``floor(fraction * |classes|)`` classes are drawn uniformly without
    replacement under ``seed``. Any artwork carrying at least one
    held-out material goes to validation; the rest train. Keeping every
    toucher out of training guarantees zero label leakage for multi-label
    artworks.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    classes = sorted(ds.classes)
    # epsilon absorbs binary rounding like 0.3 * 10 = 2.9999...
    count = math.floor(fraction * len(classes) + 1e-9)
    rng = DetRng(seed, "split")
    heldout = frozenset(classes[i] for i in rng.sample(len(classes), count))
    train_arts, val_arts = [], []
    for art in ds.artworks:
        if art.materials & heldout:
            val_arts.append(art)
        else:
            train_arts.append(art)
    return ZslSplit(Dataset(train_arts), heldout, Dataset(val_arts), seed)
