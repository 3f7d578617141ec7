"""Command-line entry point: ``deepcluster <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 input or format error, 4 numeric
failure.  Diagnostics go to standard error; machine-readable results go to
files or standard output.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import featpipe, kmeans, pic
from .dataio import (FormatError, load_assignments, load_csv_matrix, load_dataset, write_assignments,
                     write_idx_images, write_idx_labels, write_pnm)
from .tensor import NumericError, make_rng

log = logging.getLogger("deepcluster")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3, 4

# Provenance of each default: [PAPER] values come from the reference training
# setup, [DESIGN] values are choices made for desk-scale runs.
TRAIN_FLAGS = [
    # (field, type, tag, help)
    ("epochs", int, "DESIGN", "number of cluster/train rounds"),
    ("k", int, "DESIGN", "k-means cluster count (8x the class count at desk scale)"),
    ("clustering", str, "DESIGN", "kmeans or pic"),
    ("kmeans_iters", int, "DESIGN", "Lloyd iterations per clustering"),
    ("pca_dim", int, "PAPER", "PCA output dimension before whitening"),
    ("lr", float, "DESIGN", "SGD learning rate"),
    ("momentum", float, "PAPER", "SGD momentum"),
    ("weight_decay", float, "DESIGN", "L2 penalty on conv/linear weights"),
    ("batch_size", int, "PAPER", "mini-batch size"),
    ("sampler", str, "DESIGN", "uniform (over clusters), weights (inverse cluster size) or none"),
    ("reassign_empty", "bool", "PAPER", "repair empty clusters during k-means"),
    ("reset_head", "bool", "DESIGN", "re-initialize the classifier after every clustering"),
    ("sobel", "bool", "PAPER", "feed Sobel gradients instead of pixels"),
    ("crop", "int pair", "DESIGN", "network input size H,W (central crop for clustering)"),
    ("crop_scale", "float pair", "DESIGN", "area fraction range of random training crops"),
    ("crop_ratio", "float pair", "DESIGN", "aspect ratio range of random training crops"),
    ("flip_p", float, "DESIGN", "horizontal flip probability"),
    ("reassign_period_epochs", int, "PAPER", "recluster every this many epochs"),
    ("pic_nn", int, "PAPER", "PIC neighbors per node"),
    ("pic_sigma", float, "PAPER", "PIC kernel bandwidth"),
    ("pic_alpha", float, "PAPER", "PIC damping"),
    ("pic_iters", int, "DESIGN", "PIC iteration cap"),
    ("pic_tol", float, "DESIGN", "PIC convergence tolerance"),
    ("stop_patience", int, "DESIGN", "stop after this many epochs without probe improvement (off if unset)"),
]


class UsageError(Exception):
    pass


def _bool(text):
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _pair(kind):
    def parse(text):
        parts = str(text).split(",")
        if len(parts) != 2:
            raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}")
        try:
            return tuple(kind(v) for v in parts)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {kind.__name__} values, got {text!r}") from None

    return parse


CONVERTERS = {"bool": _bool, "int pair": _pair(int), "float pair": _pair(float)}


def _show(v):
    return ",".join(f"{x:g}" for x in v) if isinstance(v, tuple) else v


def _add_train(sub):
    from .trainer import TrainConfig

    defaults = TrainConfig()
    # Flags default to None so that only the ones given override the config
    # file; the help text shows the effective built-in default instead.
    p = sub.add_parser("train", help="run the alternating cluster/train loop")
    p.add_argument("--config", help="JSON file with training settings, flags override it (default: none)")
    p.add_argument("--data", required=True, help="IDX image file or directory of PGM/PPM images (required)")
    p.add_argument("--labels", help="IDX label file, used only for NMI logging (default: none)")
    p.add_argument("--out", required=True, help="run directory (required)")
    p.add_argument("--seed", type=int, help=f"master seed [DESIGN] (default: {defaults.seed})")
    p.add_argument("--resume", help="checkpoint directory to continue from (default: none)")
    for name, typ, tag, text in TRAIN_FLAGS:
        flag = "--" + name.replace("_", "-")
        p.add_argument(flag, type=CONVERTERS.get(typ, typ), default=None, dest=name,
                       help=f"{text} [{tag}] (default: {_show(getattr(defaults, name))})")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepcluster", description=__doc__.split("\n")[0])
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP worker threads (default: library default)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging (default: False)")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    _add_train(sub)

    p = sub.add_parser("cluster", help="PCA-whiten, L2-normalize and cluster raw feature vectors",
                       formatter_class=fmt)
    p.add_argument("--features", required=True, help="CSV matrix, one row per item")
    p.add_argument("--header", action="store_true", help="the CSV has a header line")
    p.add_argument("--algo", choices=["kmeans", "pic"], required=True, help="clustering algorithm")
    p.add_argument("--k", type=int, default=10, help="cluster count for kmeans [DESIGN]")
    p.add_argument("--iters", type=int, default=kmeans.DEFAULT_ITERS, help="Lloyd iterations [DESIGN]")
    p.add_argument("--pca-dim", type=int, default=featpipe.DEFAULT_PCA_DIM, help="PCA dimension [PAPER]")
    p.add_argument("--sigma", type=float, default=pic.DEFAULT_SIGMA, help="PIC bandwidth [PAPER]")
    p.add_argument("--alpha", type=float, default=pic.DEFAULT_ALPHA, help="PIC damping [PAPER]")
    p.add_argument("--nn", type=int, default=pic.DEFAULT_NN, help="PIC neighbors [PAPER]")
    p.add_argument("--pic-iters", type=int, default=pic.DEFAULT_MAX_ITERS, help="PIC iteration cap [DESIGN]")
    p.add_argument("--seed", type=int, default=0, help="seed for k-means [DESIGN]")
    p.add_argument("--out", required=True, help="output id,cluster CSV")

    p = sub.add_parser("probe", help="linear-probe accuracy of a layer's frozen features", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--labels", required=True, help="IDX label file")
    p.add_argument("--layer", type=int, default=None, help="body layer index; the feature layer when omitted")
    p.add_argument("--seeds", type=int, default=1, help="number of probe splits, seeds 0..n-1 [DESIGN]")
    p.add_argument("--epochs", type=int, default=100, help="probe training epochs [DESIGN]")
    p.add_argument("--out", required=True, help="output CSV (layer,seed,accuracy)")

    p = sub.add_parser("nmi", help="NMI between two assignment CSVs", formatter_class=fmt)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)

    p = sub.add_parser("retrieve", help="nearest neighbors of one image in feature space", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--query-id", type=int, required=True)
    p.add_argument("--topk", type=int, default=5)

    p = sub.add_parser("visualize", help="synthesize an input maximizing one filter", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--filter", type=int, required=True)
    p.add_argument("--steps", type=int, default=100, help="gradient ascent steps [DESIGN]")
    p.add_argument("--step-size", type=float, default=0.1, help="initial ascent step [DESIGN]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output .pgm (channels tiled side by side)")

    p = sub.add_parser("export-metrics", help="print a run's per-epoch metrics", formatter_class=fmt)
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--format", choices=["csv", "json"], default="csv")

    p = sub.add_parser("synth", help="write a bundled synthetic dataset as IDX files", formatter_class=fmt)
    p.add_argument("--kind", choices=["digits", "blobs"], required=True)
    p.add_argument("--n", type=int, default=None, help="image count (default: 5000 digits, 1000 blobs)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="directory for images.idx and labels.idx")
    return parser


# ---------------------------------------------------------------- commands


def _load_config(args):
    from .trainer import TrainConfig

    values = {}
    if args.config:
        try:
            values = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as e:
            raise FormatError(f"config {args.config}: {e}") from None
        if not isinstance(values, dict):
            raise FormatError(f"config {args.config} must hold a JSON object")
    for name, *_ in TRAIN_FLAGS:
        v = getattr(args, name)
        if v is not None:
            values[name] = v
    if args.seed is not None:
        values["seed"] = args.seed
    return TrainConfig.from_dict(values)


def cmd_train(args):
    from .trainer import run_deepcluster

    cfg = _load_config(args)
    data = load_dataset(args.data, args.labels)
    run_deepcluster(cfg, data, args.out, resume=args.resume)
    return EXIT_OK


def cmd_cluster(args):
    x = load_csv_matrix(args.features, header=args.header)
    if args.algo == "kmeans" and args.k > len(x):
        raise ValueError(f"k exceeds n ({args.k} > {len(x)})")
    try:
        feats, _, _ = featpipe.pipeline(x, args.pca_dim)
    except featpipe.RankDeficientError:
        feats, _ = featpipe.l2_normalize(x)
    if args.algo == "kmeans":
        assignments = kmeans.kmeans_fit(feats, args.k, args.iters, make_rng(args.seed)).assignments
    else:
        assignments = pic.pic_cluster(feats, args.nn, args.sigma, args.alpha, args.pic_iters)
    write_assignments(args.out, assignments)
    return EXIT_OK


def _checkpoint_features(args, layer=None):
    from .trainer import load_checkpoint, prepare_eval_inputs

    net, cfg, _, _ = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data, getattr(args, "labels", None))
    inputs = prepare_eval_inputs(data, cfg.crop, cfg.sobel)
    layer = net.config.feature_layer if layer is None else layer
    if not 0 <= layer < len(net.layers):
        raise IndexError(f"layer {layer} out of range (body has {len(net.layers)} layers)")
    return net.activations(inputs, layer), data, layer


def cmd_probe(args):
    from .evaluate import linear_probe

    feats, data, layer = _checkpoint_features(args, args.layer)
    lines = ["layer,seed,accuracy"]
    for seed in range(args.seeds):
        acc = linear_probe(feats, data.labels, seed=seed, epochs=args.epochs)
        lines.append(f"{layer},{seed},{acc:.6f}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_nmi(args):
    from .metrics import nmi

    a = load_assignments(args.a)
    b = load_assignments(args.b)
    print(f"{nmi(a, b):.6f}")
    return EXIT_OK


def cmd_retrieve(args):
    from .evaluate import knn_retrieval

    feats, data, _ = _checkpoint_features(args)
    for i in knn_retrieval(feats, args.query_id, args.topk, data.ids):
        print(int(i))
    return EXIT_OK


def cmd_visualize(args):
    from .evaluate import synthesize_max_activation, to_display
    from .trainer import load_checkpoint

    net, _, _, _ = load_checkpoint(args.checkpoint)
    x = synthesize_max_activation(net, args.layer, args.filter, args.steps, args.step_size, args.seed)
    img = to_display(x)
    if img.shape[0] not in (1, 3):
        img = np.concatenate(list(img), axis=1)[None]
    write_pnm(args.out, img)
    return EXIT_OK


def cmd_export_metrics(args):
    from .trainer import read_metrics

    path = Path(args.run) / "metrics.csv"
    if not path.exists():
        raise FileNotFoundError(f"no metrics.csv in {args.run}")
    if args.format == "csv":
        sys.stdout.write(path.read_text())
    else:
        print(json.dumps(read_metrics(path), indent=1))
    return EXIT_OK


def cmd_synth(args):
    from .synthetic import make_blob_images, make_digits

    if args.kind == "digits":
        ds = make_digits(5000 if args.n is None else args.n, seed=args.seed)
    else:
        ds = make_blob_images(1000 if args.n is None else args.n, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx_images(out / "images.idx", ds.images)
    write_idx_labels(out / "labels.idx", ds.labels)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train, "cluster": cmd_cluster, "probe": cmd_probe, "nmi": cmd_nmi,
    "retrieve": cmd_retrieve, "visualize": cmd_visualize, "export-metrics": cmd_export_metrics,
    "synth": cmd_synth,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse: --help exits 0, usage errors exit 2
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s",
                        stream=sys.stderr)
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be at least 1")
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return COMMANDS[args.command](args)
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"deepcluster: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as e:
        print(f"deepcluster: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, KeyError, IndexError, ValueError) as e:
        # FormatError, CheckpointError and RankDeficientError are ValueErrors.
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"deepcluster: error: {msg}", file=sys.stderr)
        return EXIT_INPUT


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
