"""Joint image-text embedding model: assembly, training loop, checkpoints.

The image branch is dense + batch norm; the text branch is an LSTM over
embedded class-description words + batch norm. Deeper variants append
dense+SELU blocks to each branch. The branches are fused by a normalized
dot product squashed through a sigmoid, trained with binary cross-entropy
on matched vs mismatched (image, class-description) pairs.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .corpus import Dataset
from .errors import DataError
from .nncore import (
    BatchNormParams,
    DenseParams,
    LstmParams,
    Tape,
    Tensor,
    backward,
    batchnorm_forward,
    bce_loss,
    cosine,
    dense_forward,
    lstm_forward,
    selu,
    sigmoid,
    zero_grads,
)
from .optim import OptimConfig, Optimizer
from .rng import DetRng

log = logging.getLogger(__name__)

DEPTH_BLOCKS = {"baseline": 0, "medium": 2, "large": 4}  # dense+SELU blocks per branch
SWEEP_BATCH_SIZES = (32, 64, 128, 256)


@dataclass
class ModelConfig:
    depth: str = "baseline"
    embed_dim: int = 100
    feature_dim: int = 100
    hidden_dim: int = 64
    max_seq_len: int = 25
    batch_size: int = 128
    epochs: int = 1000
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    seed: int = 0
    negatives_per_positive: int = 1

    def __post_init__(self):
        if self.depth not in DEPTH_BLOCKS:
            raise ValueError(f"unknown depth {self.depth!r}")
        for name in ("embed_dim", "feature_dim", "hidden_dim", "max_seq_len",
                     "batch_size", "epochs", "negatives_per_positive"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.batch_size not in SWEEP_BATCH_SIZES:
            warnings.warn(
                f"batch_size {self.batch_size} is outside the usual sweep range "
                f"{SWEEP_BATCH_SIZES}",
                stacklevel=2,
            )


@dataclass
class BranchParams:
    stem: object  # DenseParams (image) or LstmParams (text)
    norm: BatchNormParams
    blocks: list


@dataclass
class ModelParams:
    image: BranchParams
    text: BranchParams

    def named_parameters(self):
        """Trainable tensors in a fixed, documented order."""
        out = {}
        for branch_name, branch in (("image", self.image), ("text", self.text)):
            stem = branch.stem
            if isinstance(stem, DenseParams):
                out[f"{branch_name}.dense.w"] = stem.w
                out[f"{branch_name}.dense.b"] = stem.b
            else:
                for gate in nncore.LSTM_GATES:
                    out[f"{branch_name}.lstm.wx_{gate}"] = getattr(stem, f"wx_{gate}")
                    out[f"{branch_name}.lstm.wh_{gate}"] = getattr(stem, f"wh_{gate}")
                    out[f"{branch_name}.lstm.b_{gate}"] = getattr(stem, f"b_{gate}")
            out[f"{branch_name}.norm.gamma"] = branch.norm.gamma
            out[f"{branch_name}.norm.beta"] = branch.norm.beta
            for i, block in enumerate(branch.blocks):
                out[f"{branch_name}.block{i}.w"] = block.w
                out[f"{branch_name}.block{i}.b"] = block.b
        return out

    def named_arrays(self):
        """All state for checkpointing: parameters plus running statistics."""
        out = {name: t.data for name, t in self.named_parameters().items()}
        for branch_name, branch in (("image", self.image), ("text", self.text)):
            out[f"{branch_name}.norm.running_mean"] = branch.norm.running_mean
            out[f"{branch_name}.norm.running_var"] = branch.norm.running_var
        return out

    def parameter_count(self):
        return sum(t.data.size for t in self.named_parameters().values())


def build(config):
    """Create seeded model parameters for the configured depth and sizes."""
    rng = DetRng(config.seed, "init")
    h = config.hidden_dim
    image = BranchParams(
        stem=DenseParams.init(rng, config.feature_dim, h),
        norm=BatchNormParams.init(h),
        blocks=[DenseParams.init(rng, h, h) for _ in range(DEPTH_BLOCKS[config.depth])],
    )
    text = BranchParams(
        stem=LstmParams.init(rng, config.embed_dim, h),
        norm=BatchNormParams.init(h),
        blocks=[DenseParams.init(rng, h, h) for _ in range(DEPTH_BLOCKS[config.depth])],
    )
    return ModelParams(image=image, text=text)


def _branch_tail(z, branch, mode):
    z = batchnorm_forward(z, branch.norm, mode=mode)
    for block in branch.blocks:
        z = selu(dense_forward(z, block))
    return z


def image_branch(params, features, mode="train"):
    z = dense_forward(Tensor(features), params.image.stem)
    return _branch_tail(z, params.image, mode)


def text_branch(params, matrix, mask, mode="train"):
    z = lstm_forward(matrix, mask, params.text.stem)
    return _branch_tail(z, params.text, mode)


def stack_sequences(sequences):
    """Stack EmbeddedSequences into (B x L x E, B x L) arrays."""
    matrix = np.stack([s.matrix for s in sequences])
    mask = np.stack([s.mask for s in sequences])
    return matrix, mask


def forward(params, features, sequences, mode="train"):
    """Score a batch of (image features, class description) pairs.

    Returns a tensor of B scores in (0, 1): the sigmoid of the cosine
    between the branch outputs. ``mode`` selects batch-norm behavior.
    """
    matrix, mask = stack_sequences(sequences)
    u = image_branch(params, features, mode)
    v = text_branch(params, matrix, mask, mode)
    return sigmoid(cosine(u, v))


# ---------------------------------------------------------------------------
# pairing


@dataclass
class Pair:
    artwork_id: str
    features: np.ndarray
    desc: object  # ClassDescription
    label: int


def make_pairs(ds, descs, negatives_per_positive=1, seed=0):
    """Labeled training pairs: every true (artwork, material) plus negatives.

    Each positive contributes ``negatives_per_positive`` label-0 pairs
    whose materials are drawn uniformly (without replacement) from the
    described classes not on the artwork. The final list is shuffled
    under ``seed``. Artworks with no described material are skipped with
    a warning; too few classes for negative sampling is an error.
    """
    by_material = {d.material: d for d in descs}
    all_materials = sorted(by_material)
    rng = DetRng(seed, "pairs")
    pairs = []
    skipped = 0
    for art in ds.artworks:
        usable = sorted(m for m in art.materials if m in by_material)
        if not usable:
            skipped += 1
            continue
        negatives_pool = [m for m in all_materials if m not in art.materials]
        if len(negatives_pool) < negatives_per_positive:
            raise DataError(
                f"artwork {art.id!r}: only {len(negatives_pool)} classes available "
                f"for {negatives_per_positive} negative(s)"
            )
        for material in usable:
            pairs.append(Pair(art.id, art.features, by_material[material], 1))
            for j in rng.sample(len(negatives_pool), negatives_per_positive):
                pairs.append(Pair(art.id, art.features, by_material[negatives_pool[j]], 0))
    if skipped:
        log.warning("skipped %d artwork(s) with no described material", skipped)
    rng.shuffle(pairs)
    return pairs


def batch_slices(n, batch_size):
    """Contiguous batch ranges keeping the last partial batch.

    A lone trailing element is folded into the previous batch because
    train-mode batch norm cannot normalize a single row.
    """
    slices = [(start, min(start + batch_size, n)) for start in range(0, n, batch_size)]
    if len(slices) > 1 and slices[-1][1] - slices[-1][0] == 1:
        last = slices.pop()
        slices[-1] = (slices[-1][0], last[1])
    return slices


def score_pairs(params, pairs):
    """Eval-mode scores for labeled pairs, encoding each class once.

    With running-statistics batch norm every operation is row-wise, so
    deduplicating class descriptions changes nothing beyond floating-point
    summation order inside the matrix products. Given the same pair list
    the result is bit-reproducible.
    """
    if not pairs:
        raise DataError("cannot score an empty pair stream")
    materials = []
    index_of = {}
    for pair in pairs:
        if pair.desc.material not in index_of:
            index_of[pair.desc.material] = len(materials)
            materials.append(pair.desc)
    matrix, mask = stack_sequences([d.embedded for d in materials])
    codes = text_branch(params, matrix, mask, mode="eval").data
    feats = np.stack([p.features for p in pairs])
    images = image_branch(params, feats, mode="eval").data
    rows = np.array([index_of[p.desc.material] for p in pairs])
    sim = cosine(Tensor(images), Tensor(codes[rows]))
    return sigmoid(sim).data


def threshold_accuracy(scores, labels, threshold=0.5):
    """Fraction of pairs where (score >= threshold) equals the label."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise DataError("cannot compute accuracy of an empty stream")
    predicted = scores >= threshold
    return float(np.mean(predicted == (labels == 1)))


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainRun:
    config: ModelConfig
    train_loss: object  # MetricSeries
    val_accuracy: object  # MetricSeries
    params: ModelParams


def train(config, train_ds, val_ds, descs, progress=None):
    """Train on matched/mismatched pairs; track per-epoch loss and accuracy.

    The pair stream is sampled once per run under ``config.seed`` and the
    same batches repeat every epoch, so runs reproduce bit-for-bit and a
    zero learning rate yields an exactly constant loss series. Validation
    accuracy is pairwise accuracy on the held-out classes (those in
    ``val_ds`` but absent from training), measured with eval-mode batch
    norm.
    """
    from .evaluation import MetricSeries  # local import to avoid a module cycle

    if not train_ds.artworks:
        raise DataError("training dataset is empty")
    params = build(config)
    train_descs = [d for d in descs if d.material in train_ds.classes]
    heldout = val_ds.classes - train_ds.classes
    val_descs = [d for d in descs if d.material in heldout]

    pairs = make_pairs(train_ds, train_descs, config.negatives_per_positive, config.seed)
    if not pairs:
        raise DataError("no trainable pairs (no described training classes)")
    val_pairs = []
    if val_ds.artworks and len(val_descs) > 1:
        val_pairs = make_pairs(val_ds, val_descs, config.negatives_per_positive, config.seed)

    features = np.stack([p.features for p in pairs])
    labels = np.array([p.label for p in pairs], dtype=np.float64)
    sequences = [p.desc.embedded for p in pairs]
    slices = batch_slices(len(pairs), config.batch_size)

    named = params.named_parameters()
    optimizer = Optimizer(config.optimizer, named)
    loss_points, acc_points = [], []
    for epoch in range(config.epochs):
        total = 0.0
        for start, stop in slices:
            with Tape() as tape:
                scores = forward(params, features[start:stop], sequences[start:stop], "train")
                loss = bce_loss(scores, labels[start:stop])
            zero_grads(named.values())
            backward(tape, loss)
            optimizer.update(named)
            total += loss.item() * (stop - start)
        loss_points.append((epoch, total / len(pairs)))
        if val_pairs:
            acc = threshold_accuracy(
                score_pairs(params, val_pairs), [p.label for p in val_pairs]
            )
        else:
            acc = float("nan")
        acc_points.append((epoch, acc))
        if progress is not None:
            progress(epoch, loss_points[-1][1], acc)
    return TrainRun(
        config=config,
        train_loss=MetricSeries("train_loss", loss_points),
        val_accuracy=MetricSeries("val_acc", acc_points),
        params=params,
    )


# ---------------------------------------------------------------------------
# persistence


def save_model(path, params):
    nncore.save_checkpoint(path, params.named_arrays())


def load_model(path):
    """Rebuild ModelParams from a checkpoint, inferring structure from names."""
    arrays = nncore.load_checkpoint(path)

    def tensor(name):
        if name not in arrays:
            raise DataError(f"{path}: checkpoint is missing {name!r}")
        return Tensor(arrays[name], requires_grad=True)

    branches = {}
    for branch_name in ("image", "text"):
        if branch_name == "image":
            stem = DenseParams(w=tensor("image.dense.w"), b=tensor("image.dense.b"))
        else:
            gates = {}
            for gate in nncore.LSTM_GATES:
                for kind in ("wx", "wh", "b"):
                    key = f"{kind}_{gate}"
                    gates[key] = tensor(f"text.lstm.{key}")
            stem = LstmParams(**gates)
        norm = BatchNormParams(
            gamma=tensor(f"{branch_name}.norm.gamma"),
            beta=tensor(f"{branch_name}.norm.beta"),
            running_mean=arrays[f"{branch_name}.norm.running_mean"].copy(),
            running_var=arrays[f"{branch_name}.norm.running_var"].copy(),
        )
        blocks = []
        while f"{branch_name}.block{len(blocks)}.w" in arrays:
            i = len(blocks)
            blocks.append(
                DenseParams(w=tensor(f"{branch_name}.block{i}.w"), b=tensor(f"{branch_name}.block{i}.b"))
            )
        branches[branch_name] = BranchParams(stem=stem, norm=norm, blocks=blocks)
    return ModelParams(image=branches["image"], text=branches["text"])
