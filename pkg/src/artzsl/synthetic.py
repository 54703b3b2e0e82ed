"""Synthetic corpora with known structure, for tests and demonstrations.

The real museum collections are not redistributable, so everything here
manufactures datasets whose ground truth is known by construction:

* :func:`make_zero_shot_task` builds classes whose image features are a
  fixed linear image of their description vocabulary's mean embedding,
  which guarantees a learnable cross-modal map and makes held-out-class
  accuracy meaningful.
* :func:`make_imbalanced_corpus` builds a Zipf-skewed multi-label corpus
  for exercising the balancer.
"""

from dataclasses import dataclass
from pathlib import Path

import json

import numpy as np

from .corpus import Artwork, Dataset
from .rng import DetRng


@dataclass
class SynthData:
    rows: list  # manifest row dicts
    vocabulary: dict  # word -> embedding vector
    class_words: dict  # material -> signature word list
    embed_dim: int
    feature_dim: int

    def dataset(self):
        return Dataset(
            [
                Artwork(
                    id=row["id"],
                    features=np.asarray(row["features"], dtype=np.float64),
                    description=row["description"],
                    materials=frozenset(row["materials"]),
                )
                for row in self.rows
            ]
        )

    def write(self, directory):
        """Write manifest.jsonl and embeddings.txt; returns their paths."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = directory / "manifest.jsonl"
        with open(manifest, "w", encoding="utf-8", newline="\n") as handle:
            for row in self.rows:
                handle.write(json.dumps(row) + "\n")
        embeddings = directory / "embeddings.txt"
        with open(embeddings, "w", encoding="utf-8", newline="\n") as handle:
            for word, vec in self.vocabulary.items():
                handle.write(word + " " + " ".join(repr(float(v)) for v in vec) + "\n")
        return manifest, embeddings


def make_zero_shot_task(
    n_classes=20,
    words_per_class=25,
    images_per_class=12,
    embed_dim=100,
    feature_dim=100,
    latent_dim=6,
    word_spread=0.1,
    embed_scale=0.1,
    description_words=15,
    feature_noise=0.05,
    seed=0,
):
    """Classes with signature vocabularies and linearly-linked image features.

    Each class gets a unit-norm center inside a random
    ``latent_dim``-dimensional subspace of embedding space; its signature
    words embed as the center plus ``word_spread`` jitter, all scaled by
    ``embed_scale``. Image features are a fixed orthogonal map of the
    class's mean word embedding, unit-normalized, plus isotropic noise.

    Because the class centers span a low-dimensional subspace and every
    signature word sits near its class center, the description encoding
    is insensitive to word order and the image/text relationship is
    linear, so a model that learns the cross-modal map on the training
    classes extends to held-out ones.
    """
    rng = DetRng(seed, "synth-zsl")
    basis, _ = np.linalg.qr(rng.normals((embed_dim, latent_dim)))
    image_map, _ = np.linalg.qr(rng.normals((feature_dim, feature_dim)))
    image_map = image_map[:, :embed_dim] if feature_dim >= embed_dim else image_map

    vocabulary = {}
    class_words = {}
    class_means = {}
    for c in range(n_classes):
        material = f"material{c:02d}"
        center = rng.normals((latent_dim,))
        center /= np.linalg.norm(center)
        words = []
        vectors = []
        for j in range(words_per_class):
            word = f"m{c:02d}w{j:02d}"
            vec = embed_scale * (basis @ (center + word_spread * rng.normals((latent_dim,))))
            vocabulary[word] = vec
            words.append(word)
            vectors.append(vec)
        class_words[material] = words
        class_means[material] = np.mean(vectors, axis=0)

    rows = []
    for c in range(n_classes):
        material = f"material{c:02d}"
        # the fixed linear map folds in 1/embed_scale so image means keep
        # unit-order norms however small the word vectors are
        mean_image = image_map @ (class_means[material] / embed_scale)
        words = class_words[material]
        for i in range(images_per_class):
            feats = mean_image + feature_noise * rng.normals((feature_dim,))
            picked = [words[rng.randbelow(len(words))] for _ in range(description_words)]
            rows.append(
                {
                    "id": f"art{c:02d}_{i:03d}",
                    "features": [float(v) for v in feats],
                    "description": " ".join(picked),
                    "materials": [material],
                }
            )
    return SynthData(rows, vocabulary, class_words, embed_dim, feature_dim)


def make_imbalanced_corpus(
    n_artworks=10_000,
    n_classes=147,
    feature_dim=4,
    max_overlap=20,
    overlap_size_limit=147,
    seed=0,
):
    """Zipf-skewed multi-label corpus for balancing experiments.

    Class sizes follow 1/rank. Some artworks of each class also carry the
    next more frequent class. Overlap is only placed between classes whose
    sizes are both at most ``overlap_size_limit``: a class at or below the
    undersampling cap is always kept whole, so restricting shared labels
    to such classes keeps every class quota exactly reachable. Oversized
    classes stay single-label.
    """
    rng = DetRng(seed, "synth-imbalance")
    weights = np.array([1.0 / (r + 1) for r in range(n_classes)])
    sizes = np.maximum(1, np.floor(n_artworks * weights / weights.sum()).astype(int))
    sizes[0] += n_artworks - sizes.sum()  # absorb rounding in the head class

    materials = [f"material{c:03d}" for c in range(n_classes)]
    rows = []
    serial = 0
    for c in range(n_classes):
        overlap = 0
        # both classes must stay within the limit even counting shared
        # artworks, otherwise one of them gets capped and its unselected
        # leftovers could be re-drawn later for the other label
        if (
            c > 0
            and sizes[c] + max_overlap <= overlap_size_limit
            and sizes[c - 1] + max_overlap <= overlap_size_limit
        ):
            overlap = min(max_overlap, int(sizes[c]) // 4)
        for i in range(int(sizes[c])):
            labels = [materials[c]]
            if i < overlap:
                labels.append(materials[c - 1])
            rows.append(
                {
                    "id": f"art{serial:05d}",
                    "features": [float(v) for v in rng.normals((feature_dim,))],
                    "description": f"piece using {materials[c]}",
                    "materials": labels,
                }
            )
            serial += 1
    return SynthData(rows, {}, {}, 0, feature_dim)
