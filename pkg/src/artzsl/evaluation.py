"""Zero-shot evaluation: class ranking, accuracies, metric smoothing, CSV."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import image_branch, stack_sequences, text_branch, threshold_accuracy, score_pairs
from .nncore import Tensor, cosine, sigmoid

CSV_HEADER = "Step,Value"


@dataclass
class Prediction:
    artwork_id: str
    ranked: list  # (material, score), score descending, ties by material


@dataclass
class MetricSeries:
    name: str
    points: list  # (step, value)

    def __post_init__(self):
        steps = [s for s, _ in self.points]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise DataError(f"metric series {self.name!r}: steps must strictly increase")

    def values(self):
        return [v for _, v in self.points]


def encode_classes(params, descs):
    """Eval-mode text codes for a description list, one row per class."""
    matrix, mask = stack_sequences([d.embedded for d in descs])
    return text_branch(params, matrix, mask, mode="eval").data


def _rank(image_code, class_codes, materials):
    sim = cosine(
        Tensor(np.repeat(image_code[None, :], len(materials), axis=0)),
        Tensor(class_codes),
    )
    scores = sigmoid(sim).data
    order = sorted(range(len(materials)), key=lambda i: (-scores[i], materials[i]))
    return [(materials[i], float(scores[i])) for i in order]


def predict(params, artwork, descs):
    """Rank every described class against one artwork's image features."""
    if not descs:
        raise DataError("cannot predict with an empty class-description list")
    codes = encode_classes(params, descs)
    image_code = image_branch(params, artwork.features[None, :], mode="eval").data[0]
    return Prediction(artwork.id, _rank(image_code, codes, [d.material for d in descs]))


def predict_dataset(params, ds, descs):
    """Predictions for every artwork, encoding the class list only once."""
    if not descs:
        raise DataError("cannot predict with an empty class-description list")
    codes = encode_classes(params, descs)
    materials = [d.material for d in descs]
    feats = np.stack([a.features for a in ds.artworks])
    image_codes = image_branch(params, feats, mode="eval").data
    return [
        Prediction(art.id, _rank(image_codes[i], codes, materials))
        for i, art in enumerate(ds.artworks)
    ]


def pair_accuracy(params, pairs, threshold=0.5):
    """Fraction of labeled (image, description) pairs scored on the right side.

    A score exactly at the threshold counts as a positive prediction.
    """
    if not pairs:
        raise DataError("cannot compute accuracy of an empty pair stream")
    scores = score_pairs(params, pairs)
    return threshold_accuracy(scores, [p.label for p in pairs], threshold)


def zsl_accuracy(predictions, truth, metric="top1-hit"):
    """Classification accuracy of ranked predictions against true material sets.

    ``top1-hit`` counts an artwork correct when its highest-ranked
    material appears anywhere in the true set. ``exact-set`` is stricter:
    the top ``len(truth)`` ranked materials must equal the true set.
    """
    if not predictions:
        raise DataError("cannot score zero predictions")
    hits = 0
    for pred in predictions:
        if pred.artwork_id not in truth:
            raise DataError(f"no truth entry for artwork {pred.artwork_id!r}")
        true_set = set(truth[pred.artwork_id])
        if metric == "top1-hit":
            hits += pred.ranked[0][0] in true_set
        elif metric == "exact-set":
            top = {m for m, _ in pred.ranked[: len(true_set)]}
            hits += top == true_set
        else:
            raise ValueError(f"unknown metric {metric!r}")
    return hits / len(predictions)


def smooth(series, com=5.0):
    """Exponential smoothing by center of mass; weights are renormalized.

    With alpha = 1/(1+com), the smoothed value at t is the weighted mean
    of x[0..t] under weights (1-alpha)^(t-i), so early points are unbiased
    instead of dragged toward the series start. com=0 is the identity.
    """
    if com < 0:
        raise ValueError("com must be >= 0")
    alpha = 1.0 / (1.0 + com)
    decay = 1.0 - alpha
    num = 0.0
    den = 0.0
    points = []
    for step, value in series.points:
        num = decay * num + value
        den = decay * den + 1.0
        points.append((step, num / den))
    return MetricSeries(series.name, points)


def write_metrics_csv(series, path):
    """Write ``Step,Value`` rows; floats at 17 significant digits."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(CSV_HEADER + "\n")
        for step, value in series.points:
            handle.write(f"{step},{format(value, '.17g')}\n")


def read_metrics_csv(path):
    """Strict inverse of :func:`write_metrics_csv`; the header must match exactly."""
    points = []
    with open(path, encoding="utf-8") as handle:
        header = handle.readline().rstrip("\n")
        if header != CSV_HEADER:
            raise DataError(f"{path}: expected header {CSV_HEADER!r}, got {header!r}")
        for lineno, line in enumerate(handle, start=2):
            line = line.rstrip("\n")
            parts = line.split(",")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'step,value', got {line!r}")
            try:
                points.append((int(parts[0]), float(parts[1])))
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed row {line!r}") from None
    return MetricSeries(Path(path).stem, points)
