"""Spectral-spatial hyperspectral classification toolkit.

Band-group averaging, structure-preserving smoothing features, Gaussian
kernel classification with calibrated probabilities, graph-Laplacian
probability refinement, and convex decision fusion, evaluated with
overall/average accuracy and the kappa coefficient.
"""

from .dimred import reduce_bands
from .fusion import (
    MetricsResult,
    SeparabilityResult,
    class_separability,
    confusion,
    format_report,
    fuse_labels,
    metrics,
)
from .kpca import KpcaModel, KpcaParams, fit_kpca, transform
from .pipeline import PipelineConfig, PipelineResult, run_pipeline, sweep
from .randwalk import ErwParams, GridLaplacian, build_laplacian, erw_optimize, guidance_image
from .raster import (
    HsiCube,
    LabelMap,
    ProbStack,
    load_cube,
    load_labels,
    normalize_bands,
    write_cube,
    write_labels,
)
from .smoothing import (
    SmoothParams,
    extract_sp,
    patch_weights,
    shrink,
    smooth_cube,
    smooth_pixel,
)
from .svm import TrainGrid, TrainedClassifier, platt_calibrate, predict_proba, smo_train_binary, train
from .synthetic import SyntheticSpec, generate_synthetic, sample_training

__version__ = "0.1.0"
