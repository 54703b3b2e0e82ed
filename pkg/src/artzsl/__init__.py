"""Zero-shot material classification for artworks.

Learns the relationship between textual subject descriptions and the
materials artworks are made of, so materials never seen in training can
still be recognized from their own descriptions.
"""

__version__ = "0.1.0"

from .corpus import (
    Artwork,
    ClassDescription,
    Dataset,
    ZslSplit,
    balance,
    build_class_descriptions,
    class_histogram,
    load_manifest,
    write_manifest,
    zsl_split,
)
from .errors import DataError, EmptySequenceError
from .evaluation import (
    MetricSeries,
    Prediction,
    pair_accuracy,
    predict,
    predict_dataset,
    read_metrics_csv,
    smooth,
    write_metrics_csv,
    zsl_accuracy,
)
from .model import ModelConfig, ModelParams, TrainRun, build, forward, load_model, make_pairs, save_model, train
from .optim import OptimConfig, adagrad_step, adam_step, rmsprop_step
from .rng import DetRng
from .text import (
    EmbeddedSequence,
    EmbeddingTable,
    embed_tokens,
    load_embeddings,
    load_stopwords,
    remove_stopwords,
    tokenize,
)
