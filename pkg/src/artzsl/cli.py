"""Command-line pipeline with deterministic, file-based stage handoffs.

Subcommands: preprocess, balance, describe, split, train, evaluate,
sweep, smooth. Every command that writes outputs first records a run
manifest (resolved config, SHA-256 digests of its input files, tool
version) next to them, so re-runs are auditable and sweeps can resume by
skipping cells whose manifests and outputs are already in place.

Exit codes: 0 success, 1 bad data, 2 usage or I/O problem. Errors go to
stderr only. The seed comes from ``--seed``, falling back to the
``ZSL_SEED`` environment variable, then 0.
"""

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, corpus, evaluation, model, text
from .errors import DataError
from .optim import OPTIMIZER_KINDS, OptimConfig
from .text import EmbeddedSequence


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _run_manifest(subcommand, config, inputs, outputs):
    return {
        "subcommand": subcommand,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "tool_version": __version__,
    }


def _write_run_manifest(path, manifest):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _resolve_seed(value):
    if value is not None:
        return value
    env = os.environ.get("ZSL_SEED")
    return int(env) if env else 0


def _load_inputs(args, need_embeddings=True):
    dataset = corpus.load_manifest(args.manifest, feature_dim=args.feature_dim)
    table = text.load_embeddings(args.embeddings, dim=args.embed_dim) if need_embeddings else None
    stoplist = text.load_stopwords(getattr(args, "stopwords", None))
    return dataset, table, stoplist


# ---------------------------------------------------------------------------
# subcommands


def cmd_preprocess(args):
    dataset, table, stoplist = _load_inputs(args)
    out = Path(args.out)
    _write_run_manifest(
        out.with_suffix(out.suffix + ".run.json"),
        _run_manifest("preprocess", _config_echo(args), _input_paths(args), [out]),
    )
    kept, skipped = [], []
    for art in dataset.artworks:
        tokens = text.remove_stopwords(text.tokenize(art.description), stoplist)
        if not any(t in table for t in tokens):
            skipped.append(art.id)
            continue
        art.tokens = tokens
        kept.append(art)
    corpus.write_manifest(corpus.Dataset(kept), out)
    print(
        f"preprocess: kept {len(kept)} of {len(dataset)} artworks"
        + (f", skipped {len(skipped)} with no in-vocabulary tokens" if skipped else ""),
        file=sys.stderr,
    )
    if skipped:
        print("skipped ids: " + ", ".join(skipped), file=sys.stderr)
    return 0


def cmd_balance(args):
    seed = _resolve_seed(args.seed)
    dataset = corpus.load_manifest(args.manifest, feature_dim=args.feature_dim)
    out = Path(args.out)
    _write_run_manifest(
        out.with_suffix(out.suffix + ".run.json"),
        _run_manifest("balance", _config_echo(args, seed=seed), [args.manifest], [out]),
    )
    balanced = corpus.balance(dataset, cap=args.cap, seed=seed)
    corpus.write_manifest(balanced, out)
    print(f"balance: kept {len(balanced)} of {len(dataset)} artworks", file=sys.stderr)
    return 0


def cmd_describe(args):
    dataset, table, stoplist = _load_inputs(args)
    out = Path(args.out)
    _write_run_manifest(
        out.with_suffix(out.suffix + ".run.json"),
        _run_manifest("describe", _config_echo(args), _input_paths(args), [out]),
    )
    descs, unusable = corpus.build_class_descriptions(dataset, table, stoplist, k=args.k)
    with open(out, "w", encoding="utf-8", newline="\n") as handle:
        for d in descs:
            handle.write(
                json.dumps(
                    {
                        "material": d.material,
                        "words": d.words,
                        "vectors": [[float(v) for v in row] for row in d.embedded.matrix[d.embedded.mask]],
                    }
                )
                + "\n"
            )
    print(f"describe: wrote {len(descs)} class descriptions", file=sys.stderr)
    if unusable:
        print(f"describe: {len(unusable)} unusable class(es): " + ", ".join(unusable), file=sys.stderr)
    return 0


def load_class_descriptions(path, max_len=25):
    """Read a describe-stage file back into ClassDescription objects."""
    descs = []
    with open(path, encoding="utf-8") as handle:
        for row, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                material, words = obj["material"], obj["words"]
                vectors = np.asarray(obj["vectors"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataError(f"descriptions row {row}: {exc}") from None
            if vectors.ndim != 2 or vectors.shape[0] == 0:
                raise DataError(f"descriptions row {row}: empty or malformed vectors")
            n = min(len(vectors), max_len)
            matrix = np.zeros((max_len, vectors.shape[1]))
            matrix[:n] = vectors[:n]
            mask = np.zeros(max_len, dtype=bool)
            mask[:n] = True
            descs.append(
                corpus.ClassDescription(material, words, EmbeddedSequence(words[: len(vectors)][:n], matrix, mask))
            )
    return descs


def cmd_split(args):
    seed = _resolve_seed(args.seed)
    dataset = corpus.load_manifest(args.manifest, feature_dim=args.feature_dim)
    out = Path(args.out)
    _write_run_manifest(
        out.with_suffix(out.suffix + ".run.json"),
        _run_manifest("split", _config_echo(args, seed=seed), [args.manifest], [out]),
    )
    split = corpus.zsl_split(dataset, fraction=args.fraction, seed=seed)
    with open(out, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(
            {
                "seed": seed,
                "fraction": args.fraction,
                "heldout_classes": sorted(split.heldout_classes),
                "train_ids": [a.id for a in split.train.artworks],
                "val_ids": [a.id for a in split.val.artworks],
            },
            handle,
            indent=2,
        )
        handle.write("\n")
    print(
        f"split: {len(split.heldout_classes)} held-out classes, "
        f"{len(split.train)} train / {len(split.val)} val artworks",
        file=sys.stderr,
    )
    return 0


def _model_config(args, seed):
    return model.ModelConfig(
        depth=args.depth,
        embed_dim=args.embed_dim,
        feature_dim=args.feature_dim,
        hidden_dim=args.hidden_dim,
        max_seq_len=args.max_seq_len,
        batch_size=args.batch_size,
        epochs=args.epochs,
        optimizer=OptimConfig(
            kind=args.optimizer,
            learning_rate=args.lr,
            epsilon=args.epsilon,
            beta1=args.beta1,
            beta2=args.beta2,
        ),
        seed=seed,
        negatives_per_positive=args.negatives_per_positive,
    )


def _cell_config(cfg, holdout_fraction):
    return {**_dataclass_dict(cfg), "holdout_fraction": holdout_fraction}


def _train_once(cfg, holdout_fraction, dataset, table, stoplist, out_dir, tag="", inputs=()):
    """Shared by train and sweep: split, train, write the cell's artifacts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if tag:
        val_csv = out_dir / f"run_{tag}_tag_val_acc.csv"
        loss_csv = out_dir / f"run_{tag}_train_loss.csv"
        checkpoint = out_dir / f"run_{tag}_checkpoint.zslm"
        manifest_path = out_dir / f"run_{tag}.run.json"
        config_path = out_dir / f"run_{tag}_config.json"
    else:
        val_csv = out_dir / "val_acc.csv"
        loss_csv = out_dir / "train_loss.csv"
        checkpoint = out_dir / "checkpoint.zslm"
        manifest_path = out_dir / "run.json"
        config_path = out_dir / "config.json"
    config_echo = _cell_config(cfg, holdout_fraction)
    _write_run_manifest(
        manifest_path,
        _run_manifest("train", config_echo, inputs, [checkpoint, loss_csv, val_csv]),
    )
    descs, _ = corpus.build_class_descriptions(dataset, table, stoplist, k=cfg.max_seq_len)
    split = corpus.zsl_split(dataset, fraction=holdout_fraction, seed=cfg.seed)
    run = model.train(cfg, split.train, split.val, descs)
    model.save_model(checkpoint, run.params)
    evaluation.write_metrics_csv(run.train_loss, loss_csv)
    evaluation.write_metrics_csv(run.val_accuracy, val_csv)
    with open(config_path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(config_echo, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return run, val_csv


def cmd_train(args):
    seed = _resolve_seed(args.seed)
    dataset, table, stoplist = _load_inputs(args)
    cfg = _model_config(args, seed)
    run, _ = _train_once(
        cfg, args.holdout_fraction, dataset, table, stoplist, args.out_dir, inputs=_input_paths(args)
    )
    final_acc = run.val_accuracy.points[-1][1]
    print(f"train: final validation accuracy {final_acc:.6f}")
    return 0


def _lr_tag(lr):
    tag = format(lr, "g")
    return tag[2:] if tag.startswith("0.") else tag.replace(".", "")


def _sweep_cells(args):
    cells = []
    for opt in args.optimizers.split(","):
        for lr in (float(v) for v in args.lrs.split(",")):
            for bs in (int(v) for v in args.batch_sizes.split(",")):
                for depth in args.depths.split(","):
                    tag = f"{opt}lr{_lr_tag(lr)}_bs{bs}_{depth}"
                    cells.append((tag, opt.strip(), lr, bs, depth.strip()))
    return cells


def _run_sweep_cell(payload):
    (tag, opt, lr, bs, depth), base_args, seed = payload
    namespace = argparse.Namespace(**base_args)
    namespace.optimizer, namespace.lr, namespace.batch_size, namespace.depth = opt, lr, bs, depth
    dataset, table, stoplist = _load_inputs(namespace)
    cfg = _model_config(namespace, seed)
    _train_once(
        cfg, namespace.holdout_fraction, dataset, table, stoplist,
        namespace.out_dir, tag=tag, inputs=_input_paths(namespace),
    )
    return tag


def cmd_sweep(args):
    seed = _resolve_seed(args.seed)
    cells = _sweep_cells(args)
    out_dir = Path(args.out_dir)
    base_args = {
        key: getattr(args, key)
        for key in (
            "manifest", "embeddings", "stopwords", "embed_dim", "feature_dim",
            "hidden_dim", "max_seq_len", "epochs", "holdout_fraction",
            "negatives_per_positive", "epsilon", "beta1", "beta2", "out_dir",
        )
    }
    pending = []
    for cell in cells:
        tag = cell[0]
        manifest_path = out_dir / f"run_{tag}.run.json"
        val_csv = out_dir / f"run_{tag}_tag_val_acc.csv"
        if manifest_path.exists() and val_csv.exists():
            namespace = argparse.Namespace(**base_args)
            namespace.optimizer, namespace.lr, namespace.batch_size, namespace.depth = cell[1:]
            cfg = _model_config(namespace, seed)
            recorded = json.loads(manifest_path.read_text("utf-8"))
            expected = _run_manifest(
                "train",
                _cell_config(cfg, namespace.holdout_fraction),
                _input_paths(namespace),
                [],
            )
            if (
                recorded.get("config") == expected["config"]
                and recorded.get("inputs") == expected["inputs"]
            ):
                print(f"sweep: skipping completed cell {tag}", file=sys.stderr)
                continue
        pending.append((cell, base_args, seed))
    if args.jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for tag in pool.map(_run_sweep_cell, pending):
                print(f"sweep: finished {tag}", file=sys.stderr)
    else:
        for payload in pending:
            tag = _run_sweep_cell(payload)
            print(f"sweep: finished {tag}", file=sys.stderr)
    print(f"sweep: {len(cells)} cell(s), {len(pending)} run, {len(cells) - len(pending)} skipped")
    return 0


def cmd_evaluate(args):
    params = model.load_model(args.checkpoint)
    dataset = corpus.load_manifest(args.manifest, feature_dim=args.feature_dim)
    descs = load_class_descriptions(args.descriptions, max_len=args.max_seq_len)
    out = Path(args.out)
    _write_run_manifest(
        out.with_suffix(out.suffix + ".run.json"),
        _run_manifest(
            "evaluate",
            _config_echo(args),
            [args.checkpoint, args.manifest, args.descriptions],
            [out],
        ),
    )
    predictions = evaluation.predict_dataset(params, dataset, descs)
    with open(out, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("id,rank,material,score\n")
        for pred in predictions:
            for rank, (material, score) in enumerate(pred.ranked, start=1):
                handle.write(f"{pred.artwork_id},{rank},{material},{format(score, '.17g')}\n")
    truth = {a.id: a.materials for a in dataset.artworks}
    accuracy = evaluation.zsl_accuracy(predictions, truth, metric=args.metric)
    print(f"evaluate: {args.metric} accuracy {accuracy:.6f} on {len(predictions)} artworks")
    return 0


def cmd_smooth(args):
    series = evaluation.read_metrics_csv(args.infile)
    out = Path(args.out)
    _write_run_manifest(
        out.with_suffix(out.suffix + ".run.json"),
        _run_manifest("smooth", _config_echo(args), [args.infile], [out]),
    )
    evaluation.write_metrics_csv(evaluation.smooth(series, com=args.com), out)
    return 0


# ---------------------------------------------------------------------------
# wiring


def _config_echo(args, **extra):
    skip = {"func"}
    echo = {k: v for k, v in vars(args).items() if k not in skip}
    echo.update(extra)
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(echo.items())}


def _dataclass_dict(cfg):
    out = {}
    for key, value in vars(cfg).items():
        out[key] = _dataclass_dict(value) if hasattr(value, "__dataclass_fields__") else value
    return out


def _input_paths(args):
    paths = [args.manifest, args.embeddings]
    if getattr(args, "stopwords", None):
        paths.append(args.stopwords)
    return paths


def _add_data_flags(parser, embeddings=True):
    parser.add_argument("--manifest", required=True, help="JSON-lines dataset manifest")
    if embeddings:
        parser.add_argument("--embeddings", required=True, help="pretrained embedding text file")
        parser.add_argument("--stopwords", default=None, help="one-word-per-line stop list (default: bundled)")
        parser.add_argument("--embed-dim", type=int, default=100, help="embedding vector size")
    parser.add_argument("--feature-dim", type=int, default=100, help="image feature vector size")


def _add_train_flags(parser):
    parser.add_argument("--depth", choices=sorted(model.DEPTH_BLOCKS), default="baseline")
    parser.add_argument("--optimizer", choices=OPTIMIZER_KINDS, default="rmsprop")
    parser.add_argument("--lr", type=float, default=0.001, help="learning rate")
    parser.add_argument("--beta1", type=float, default=0.9)
    parser.add_argument("--beta2", type=float, default=0.999)
    parser.add_argument("--epsilon", type=float, default=1e-8)
    parser.add_argument("--batch-size", type=int, default=128)
    parser.add_argument("--epochs", type=int, default=1000)
    parser.add_argument("--hidden-dim", type=int, default=64)
    parser.add_argument("--max-seq-len", type=int, default=25)
    parser.add_argument("--negatives-per-positive", type=int, default=1)
    parser.add_argument("--holdout-fraction", type=float, default=0.3)
    parser.add_argument("--seed", type=int, default=None, help="defaults to $ZSL_SEED, then 0")
    parser.add_argument("--out-dir", required=True)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="artzsl",
        description="Zero-shot material classification pipeline",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="tokenize descriptions and drop stop words")
    _add_data_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("balance", help="undersample so each class keeps at most --cap artworks")
    _add_data_flags(p, embeddings=False)
    p.add_argument("--cap", type=int, default=corpus.DEFAULT_CLASS_CAP)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("describe", help="build per-material class descriptions")
    _add_data_flags(p)
    p.add_argument("--k", type=int, default=corpus.DEFAULT_TOP_WORDS, help="words per class")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("split", help="hold out a class fraction for zero-shot validation")
    _add_data_flags(p, embeddings=False)
    p.add_argument("--fraction", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train the joint-embedding model")
    _add_data_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="rank classes for every artwork and score accuracy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--descriptions", required=True, help="describe-stage output")
    p.add_argument("--out", required=True, help="predictions CSV (id,rank,material,score)")
    p.add_argument("--metric", choices=("top1-hit", "exact-set"), default="top1-hit")
    p.add_argument("--feature-dim", type=int, default=100)
    p.add_argument("--max-seq-len", type=int, default=25)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="train the cross-product of optimizers/lrs/batch sizes/depths")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--optimizers", default="rmsprop", help="comma-separated list")
    p.add_argument("--lrs", default="0.001", help="comma-separated list")
    p.add_argument("--batch-sizes", default="128", help="comma-separated list")
    p.add_argument("--depths", default="baseline", help="comma-separated list")
    p.add_argument("--jobs", type=int, default=1, help="parallel cell processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("smooth", help="exponential smoothing of a metrics CSV")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--com", type=float, default=5.0, help="center of mass")
    p.set_defaults(func=cmd_smooth)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry():
    sys.exit(main())
