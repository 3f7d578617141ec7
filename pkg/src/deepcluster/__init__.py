"""Unsupervised feature learning by alternating k-means on convnet features with
training the convnet to predict the resulting cluster ids.

The usual entry points are :func:`run_deepcluster` with a :class:`TrainConfig`,
and the ``deepcluster`` command line tool.
"""
from .dataio import Dataset, load_dataset, load_idx
from .evaluate import knn_retrieval, linear_probe, synthesize_max_activation
from .featpipe import pipeline as whiten_features
from .kernels import BACKEND
from .kmeans import ClusterModel, kmeans_fit
from .metrics import cluster_histogram, nmi, pure_cluster_fraction
from .model import Net, NetConfig
from .pic import pic_cluster
from .trainer import TrainConfig, extract_features, load_checkpoint, run_deepcluster

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ClusterModel", "Dataset", "Net", "NetConfig", "TrainConfig", "cluster_histogram",
    "extract_features", "kmeans_fit", "knn_retrieval", "linear_probe", "load_checkpoint",
    "load_dataset", "load_idx", "nmi", "pic_cluster", "pure_cluster_fraction", "run_deepcluster",
    "synthesize_max_activation", "whiten_features",
]
