"""The alternating cluster-then-train loop, its checkpoints and metrics log.

Run directory layout::

    config.json                       resolved configuration
    metrics.csv                       one row per epoch (deterministic columns)
    timings.csv                       wall-clock seconds per epoch
    checkpoints/epoch_%04d/           manifest.json + weights.bin
    assignments/epoch_%04d.csv        id,cluster
"""
from __future__ import annotations

import dataclasses
import json
import logging
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import featpipe, kmeans, metrics, pic, sampling
from .dataio import Dataset, format_float, write_assignments
from .model import Net, NetConfig, softmax_nll_loss, sgd_step
from .preprocess import augment, central_crop, sobel_batch
from .tensor import DTYPE, NumericError, make_rng

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "deepcluster-checkpoint"
CHECKPOINT_VERSION = 1

# Stream tags for make_rng(seed, TAG, epoch, ...).
INIT, CLUSTER, HEAD, SAMPLE, AUGMENT, DROPOUT, PROBE = range(7)

METRIC_COLUMNS = [
    "epoch", "n_clusters", "inertia", "pic_cluster_count", "nmi_vs_labels", "nmi_vs_prev",
    "n_empty_repaired", "n_empty_clusters", "max_cluster_share", "mean_train_loss",
]


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    k: int = 80
    clustering: str = "kmeans"
    kmeans_iters: int = kmeans.DEFAULT_ITERS
    pca_dim: int = featpipe.DEFAULT_PCA_DIM
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-5
    batch_size: int = 256
    sampler: str = "uniform"
    reassign_empty: bool = True
    reset_head: bool = True
    sobel: bool = True
    crop: tuple = (24, 24)
    crop_scale: tuple = (0.5, 1.0)
    crop_ratio: tuple = (3 / 4, 4 / 3)
    flip_p: float = 0.5
    reassign_period_epochs: int = 1
    seed: int = 0
    pic_nn: int = pic.DEFAULT_NN
    pic_sigma: float = pic.DEFAULT_SIGMA
    pic_alpha: float = pic.DEFAULT_ALPHA
    pic_iters: int = pic.DEFAULT_MAX_ITERS
    pic_tol: float = pic.DEFAULT_TOL
    stop_patience: int | None = None
    net: dict = field(default_factory=dict)

    def __post_init__(self):
        self.crop = tuple(int(v) for v in self.crop)
        self.crop_scale = tuple(float(v) for v in self.crop_scale)
        self.crop_ratio = tuple(float(v) for v in self.crop_ratio)
        if self.clustering not in ("kmeans", "pic"):
            raise ValueError("clustering must be 'kmeans' or 'pic'")
        if self.sampler not in ("uniform", "weights", "none"):
            raise ValueError("sampler must be 'uniform', 'weights' or 'none'")
        if self.clustering == "kmeans" and self.k < 2:
            raise ValueError("k must be at least 2")
        if self.epochs < 0 or self.reassign_period_epochs < 1:
            raise ValueError("epochs must be >= 0 and reassign_period_epochs >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (batch normalization)")

    def net_config(self, channels: int) -> NetConfig:
        """Network config with its input shape filled in from the data and crop."""
        shape = (2 if self.sobel else channels, *self.crop)
        if self.net.get("layers"):
            return NetConfig(shape, self.net["layers"], self.net.get("feature_layer"))
        return NetConfig(shape, feature_layer=self.net.get("feature_layer"))

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    n_clusters: int
    inertia: float | None
    pic_cluster_count: int | None
    nmi_vs_labels: float | None
    nmi_vs_prev: float | None
    n_empty_repaired: int
    n_empty_clusters: int
    max_cluster_share: float
    mean_train_loss: float | None
    wall_seconds: float = 0.0

    def csv_row(self):
        out = []
        for col in METRIC_COLUMNS:
            v = getattr(self, col)
            if v is None:
                out.append("")
            elif isinstance(v, float):
                out.append(format_float(v))
            else:
                out.append(str(int(v)))
        return ",".join(out)


# ---------------------------------------------------------------- inputs


def prepare_eval_inputs(data: Dataset, crop, sobel: bool) -> np.ndarray:
    x = central_crop(data.images, crop)
    return sobel_batch(x) if sobel else x


def extract_features(net: Net, data: Dataset, crop, sobel: bool = True) -> np.ndarray:
    """Eval-mode feature-layer outputs for central crops of every image, in dataset order."""
    return net.features(prepare_eval_inputs(data, crop, sobel))


def training_batch(cfg: TrainConfig, data: Dataset, idx, epoch: int, start: int) -> np.ndarray:
    out = np.empty((len(idx), data.images.shape[1], *cfg.crop), dtype=DTYPE)
    for j, i in enumerate(idx):
        rng = make_rng(cfg.seed, AUGMENT, epoch, start + j)
        out[j] = augment(data.images[i], rng, cfg.crop, cfg.crop_scale, cfg.crop_ratio, cfg.flip_p)
    return sobel_batch(out) if cfg.sobel else out


def draw_epoch(cfg: TrainConfig, assignments, n: int, epoch: int):
    """Indices (and per-example weights) for one epoch of ``n`` draws."""
    rng = make_rng(cfg.seed, SAMPLE, epoch)
    if cfg.sampler == "uniform":
        return sampling.uniform_cluster_sampler(assignments, n, rng), None
    order = rng.permutation(n)
    if cfg.sampler == "weights":
        return order, sampling.inverse_size_weights(assignments)[order]
    return order, None


# ---------------------------------------------------------------- clustering


def cluster_features(cfg: TrainConfig, feats: np.ndarray, epoch: int):
    """featpipe + clustering.  Returns ``(assignments, info, pca_model)``."""
    try:
        x, pca_model, _ = featpipe.pipeline(feats, cfg.pca_dim)
    except featpipe.RankDeficientError:
        # Collapsed features: nothing to project, cluster them as they are.
        x, _ = featpipe.l2_normalize(feats)
        pca_model = None
    info = {"inertia": None, "pic_cluster_count": None, "n_empty_repaired": 0}
    if cfg.clustering == "kmeans":
        if cfg.k > len(x):
            raise ValueError(f"k exceeds n ({cfg.k} > {len(x)})")
        model = kmeans.kmeans_fit(x, cfg.k, cfg.kmeans_iters, make_rng(cfg.seed, CLUSTER, epoch),
                                  reassign=cfg.reassign_empty)
        info["inertia"] = model.inertia
        info["n_empty_repaired"] = model.n_reassigned
        assignments = model.assignments
        n_clusters = cfg.k
    else:
        assignments = pic.pic_cluster(x, cfg.pic_nn, cfg.pic_sigma, cfg.pic_alpha, cfg.pic_iters, cfg.pic_tol)
        n_clusters = int(assignments.max()) + 1
        info["pic_cluster_count"] = n_clusters
    info["n_clusters"] = n_clusters
    return assignments, info, pca_model


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, net: Net, cfg: TrainConfig, epoch: int, prev_assignments=None,
                    pca_model=None, extra=None) -> None:
    """Write ``manifest.json`` and a little-endian float32 ``weights.bin`` into ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors = dict(net.state_tensors())
    if pca_model is not None:
        tensors["pca:mean"] = pca_model.mean
        tensors["pca:components"] = pca_model.components
        tensors["pca:eigvals"] = pca_model.eigvals
    entries = []
    offset = 0
    chunks = []
    for name, t in tensors.items():
        arr = np.ascontiguousarray(t, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += arr.size
        chunks.append(arr.tobytes())
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "epoch": epoch,
        "k": net.k,
        "config": cfg.to_dict(),
        "net": net.config.to_dict(),
        "rng": {"algorithm": "Philox-4x64 via SeedSequence", "seed": cfg.seed, "next_epoch": epoch + 1},
        "pca_eps": None if pca_model is None else pca_model.eps,
        "prev_assignments": None if prev_assignments is None else [int(a) for a in prev_assignments],
        "total_floats": offset,
        "tensors": entries,
        "extra": extra or {},
    }
    tmp = path / "weights.bin.tmp"
    with open(tmp, "wb") as fh:
        for c in chunks:
            fh.write(c)
    tmp.replace(path / "weights.bin")
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path):
    """Read a checkpoint directory.  Returns ``(net, cfg, manifest, pca_model)``."""
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable manifest in {path}: {e}") from None
    if manifest.get("format") != CHECKPOINT_FORMAT or manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('version')!r}")
    raw = (path / "weights.bin").read_bytes()
    if len(raw) != 4 * manifest["total_floats"]:
        raise CheckpointError(
            f"weights.bin holds {len(raw) // 4} floats, manifest declares {manifest['total_floats']}")
    blob = np.frombuffer(raw, dtype="<f4")
    tensors = {}
    for e in manifest["tensors"]:
        tensors[e["name"]] = blob[e["offset"] : e["offset"] + e["count"]].reshape(e["shape"]).astype(DTYPE)
    cfg = TrainConfig.from_dict(_tupleize(manifest["config"]))
    net = Net(NetConfig.from_dict(manifest["net"]), manifest["k"], make_rng(cfg.seed, INIT))
    net.load_state_tensors(tensors)
    pca_model = None
    if "pca:mean" in tensors:
        pca_model = featpipe.PcaModel(tensors["pca:mean"], tensors["pca:components"], tensors["pca:eigvals"],
                                      manifest["pca_eps"])
    return net, cfg, manifest, pca_model


def _tupleize(d):
    d = dict(d)
    for key in ("crop", "crop_scale", "crop_ratio"):
        if key in d:
            d[key] = tuple(d[key])
    return d


# ---------------------------------------------------------------- loop


def train_epoch(cfg: TrainConfig, net: Net, data: Dataset, assignments, epoch: int) -> float:
    idx, weights = draw_epoch(cfg, assignments, len(data), epoch)
    bs = cfg.batch_size
    losses = []
    sizes = []
    for step, start in enumerate(range(0, len(idx), bs)):
        batch_idx = idx[start : start + bs]
        if len(batch_idx) < 2:
            break
        x = training_batch(cfg, data, batch_idx, epoch, start)
        caches, _, logits = net.forward(x, train=True, rng=make_rng(cfg.seed, DROPOUT, epoch, step))
        w = None if weights is None else weights[start : start + bs]
        loss, dlogits = softmax_nll_loss(logits, assignments[batch_idx], w)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite training loss at epoch {epoch}, step {step}")
        grads, _ = net.backward(caches, dlogits)
        sgd_step(net, grads, cfg.lr, cfg.momentum, cfg.weight_decay)
        losses.append(loss)
        sizes.append(len(batch_idx))
    return float(np.average(losses, weights=sizes)) if losses else float("nan")


def _write_metrics_header(out_dir: Path):
    (out_dir / "metrics.csv").write_text(",".join(METRIC_COLUMNS) + "\n")
    (out_dir / "timings.csv").write_text("epoch,wall_seconds\n")


def _truncate_logs(out_dir: Path, upto_epoch: int):
    """Drop log rows past ``upto_epoch`` (used when resuming)."""
    for name in ("metrics.csv", "timings.csv"):
        p = out_dir / name
        if not p.exists():
            continue
        lines = p.read_text().splitlines()
        keep = [lines[0]] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) <= upto_epoch]
        p.write_text("\n".join(keep) + "\n")


def checkpoint_dir(out_dir, epoch):
    return Path(out_dir) / "checkpoints" / f"epoch_{epoch:04d}"


def run_deepcluster(cfg: TrainConfig, data: Dataset, out_dir, resume=None, probe_data=None):
    """Alternate clustering and pseudo-label training for ``cfg.epochs`` epochs.

    ``resume`` is a checkpoint directory from an earlier run with the same
    configuration; training continues after its epoch and reproduces the
    uninterrupted run exactly.  Returns a summary dict holding the records
    and the final network.
    """
    out_dir = Path(out_dir)
    if cfg.clustering == "kmeans" and cfg.k > len(data):
        raise ValueError(f"k exceeds n ({cfg.k} > {len(data)})")
    if len(data) < 2:
        raise ValueError("need at least two images")
    H, W = data.image_shape[1:]
    if cfg.crop[0] > H or cfg.crop[1] > W:
        raise ValueError(f"crop {cfg.crop} larger than images {(H, W)}")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "checkpoints").mkdir(exist_ok=True)
    (out_dir / "assignments").mkdir(exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")

    prev = None
    stop_state = None
    if resume is None:
        net = Net(cfg.net_config(data.image_shape[0]), max(cfg.k, 2), make_rng(cfg.seed, INIT))
        start_epoch = 1
        _write_metrics_header(out_dir)
        save_checkpoint(checkpoint_dir(out_dir, 0), net, cfg, 0)
    else:
        net, saved_cfg, manifest, _ = load_checkpoint(resume)
        if saved_cfg.to_dict() != cfg.to_dict():
            log.warning("resuming with a configuration that differs from the checkpoint's")
        start_epoch = manifest["epoch"] + 1
        stop_state = manifest["extra"].get("stop_state")
        if manifest["prev_assignments"] is not None:
            prev = np.asarray(manifest["prev_assignments"], dtype=np.int64)
        if not (out_dir / "metrics.csv").exists():
            _write_metrics_header(out_dir)
        _truncate_logs(out_dir, manifest["epoch"])

    eval_inputs = prepare_eval_inputs(data, cfg.crop, cfg.sobel)
    records = []
    assignments = prev
    best_probe, since_best = stop_state if stop_state else (-1.0, 0)
    pca_model = None
    for epoch in range(start_epoch, cfg.epochs + 1):
        t0 = time.perf_counter()
        if assignments is None or (epoch - 1) % cfg.reassign_period_epochs == 0:
            feats = net.features(eval_inputs)
            new_assign, info, pca_model = cluster_features(cfg, feats, epoch)
        else:
            new_assign = assignments
            info = {"inertia": None, "pic_cluster_count": None, "n_empty_repaired": 0,
                    "n_clusters": max(int(assignments.max()) + 1, cfg.k if cfg.clustering == "kmeans" else 0)}
        n_clusters = info["n_clusters"]
        if n_clusters >= 2 and (cfg.reset_head or net.k != n_clusters):
            net.reset_head(n_clusters, make_rng(cfg.seed, HEAD, epoch))
        sizes = np.bincount(new_assign, minlength=n_clusters)
        loss = None
        if n_clusters >= 2:
            loss = train_epoch(cfg, net, data, new_assign, epoch)
            if not np.isfinite(loss):
                raise NumericError(f"training diverged at epoch {epoch}")
        rec = EpochRecord(
            epoch=epoch,
            n_clusters=n_clusters,
            inertia=info["inertia"],
            pic_cluster_count=info["pic_cluster_count"],
            nmi_vs_labels=None if data.labels is None else metrics.nmi(new_assign, data.labels),
            nmi_vs_prev=None if assignments is None else metrics.nmi(new_assign, assignments),
            n_empty_repaired=info["n_empty_repaired"],
            n_empty_clusters=int((sizes == 0).sum()),
            max_cluster_share=float(sizes.max() / len(new_assign)),
            mean_train_loss=loss,
            wall_seconds=time.perf_counter() - t0,
        )
        records.append(rec)
        assignments = new_assign
        write_assignments(out_dir / "assignments" / f"epoch_{epoch:04d}.csv", new_assign, data.ids)
        stop = False
        if cfg.stop_patience is not None:
            acc = _probe_score(cfg, net, probe_data if probe_data is not None else data)
            if acc > best_probe:
                best_probe, since_best = acc, 0
                best = Path(out_dir) / "checkpoints" / "best"
                if best.exists():
                    shutil.rmtree(best)
                save_checkpoint(best, net, cfg, epoch, new_assign, pca_model, {"probe_accuracy": acc})
            else:
                since_best += 1
                stop = since_best >= cfg.stop_patience
        extra = {"stop_state": [best_probe, since_best]} if cfg.stop_patience is not None else None
        save_checkpoint(checkpoint_dir(out_dir, epoch), net, cfg, epoch, new_assign, pca_model, extra)
        with open(out_dir / "metrics.csv", "a") as fh:
            fh.write(rec.csv_row() + "\n")
        with open(out_dir / "timings.csv", "a") as fh:
            fh.write(f"{epoch},{rec.wall_seconds:.3f}\n")
        log.info("epoch %d: clusters=%d nmi_labels=%s nmi_prev=%s loss=%s (%.1fs)", epoch, n_clusters,
                 _fmt(rec.nmi_vs_labels), _fmt(rec.nmi_vs_prev), _fmt(loss), rec.wall_seconds)
        if stop:
            log.info("probe accuracy stopped improving; stopping after epoch %d", epoch)
            break
    return {"records": records, "net": net, "out_dir": out_dir, "assignments": assignments}


def _probe_score(cfg, net, data):
    from .evaluate import linear_probe

    if data.labels is None:
        raise ValueError("probe-based stopping needs a labeled probe dataset")
    feats = extract_features(net, data, cfg.crop, cfg.sobel)
    return linear_probe(feats, data.labels, seed=cfg.seed)


def _fmt(v):
    return "-" if v is None else f"{v:.4f}"


def read_metrics(path):
    """Parse a metrics.csv back into a list of dicts (empty cells become None)."""
    lines = Path(path).read_text().splitlines()
    cols = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        vals = ln.split(",")
        row = {}
        for c, v in zip(cols, vals):
            row[c] = None if v == "" else (int(v) if c in ("epoch", "n_clusters", "pic_cluster_count",
                                                            "n_empty_repaired", "n_empty_clusters") else float(v))
        rows.append(row)
    return rows
