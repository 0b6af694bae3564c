"""Memory-bounded visual vocabularies for multi-component action descriptors.

Pipeline: sample a balanced or uniform feature pool from on-disk videos,
learn per-component or joint vocabularies (k-means, PCA + k-means, PCA +
GMM), encode each video as BoF / per-category BoF / VLAD / Fisher, then
train 1-vs-all SVMs and report Acc, mAP and mF1.
"""
from .classifier import SvmModel, chi2_distance, chi2_gram, svm_predict, svm_train
from .encoders import EncodedDataset, encode, encode_dataset, encoding_dims
from .evaluation import EvalReport, aggregate, evaluate, mean_average_precision, mean_f1
from .features import (ComponentLayout, DatasetManifest, DatasetStats, VideoEntry,
                       dataset_stats, read_manifest, stream_features, write_features)
from .harness import ExperimentConfig, emit_results, run_grid
from .sampler import FeaturePool, SamplingConfig, build_pool, compute_vmax, final_subsample
from .synth import SynthSpec, synth_generate
from .vocabulary import VocabularySet, fit_vocabularies, gmm_fit, kmeans_fit, pca_fit

__version__ = "0.1.0"

__all__ = [
    "ComponentLayout", "DatasetManifest", "DatasetStats", "EncodedDataset", "EvalReport",
    "ExperimentConfig", "FeaturePool", "SamplingConfig", "SvmModel", "SynthSpec",
    "VideoEntry", "VocabularySet", "aggregate", "build_pool", "chi2_distance", "chi2_gram",
    "compute_vmax", "dataset_stats", "emit_results", "encode", "encode_dataset",
    "encoding_dims", "evaluate", "final_subsample", "fit_vocabularies", "gmm_fit",
    "kmeans_fit", "mean_average_precision", "mean_f1", "pca_fit", "read_manifest",
    "run_grid", "stream_features", "svm_predict", "svm_train", "synth_generate",
    "write_features",
]
