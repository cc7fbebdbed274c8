"""nwkit: a Nadaraya-Watson prediction head with editable support sets.

Predictions are kernel-weighted averages of support labels; the library adds
closed-form leave-one-out influence for attribution, support distillation via
per-class k-means, calibration measurement and temperature scaling, a small
trainable feature extractor, and CLI / HTTP inspection surfaces.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    LabeledExample,
    OneHotLabel,
    PredictionResult,
    SupportSet,
    WeightVector,
    batch_predict,
    cross_entropy,
    nw_predict,
    nw_weights,
    pairwise_distances,
    top_label_match_rate,
)
from .influence import InfluenceRecord, loo_predict, rank_influence, support_influence  # noqa: E402
from .support import CentroidEntry, InferenceMode, build_support, kmeans  # noqa: E402
from .calibration import (  # noqa: E402
    ReliabilityReport,
    SmoothedLabel,
    expected_calibration_error,
    smooth_labels,
    temperature_scale,
)
from .data import Dataset, generate_blobs, generate_rings, load_csv, save_csv, split  # noqa: E402
from .trainer import (  # noqa: E402
    Episode,
    ExtractorModel,
    TrainConfig,
    embed_examples,
    forward,
    load_checkpoint,
    nw_loss_and_grad,
    sample_episode,
    save_checkpoint,
    train,
)

__all__ = [
    "__version__",
    "LabeledExample",
    "OneHotLabel",
    "SupportSet",
    "WeightVector",
    "PredictionResult",
    "pairwise_distances",
    "nw_weights",
    "nw_predict",
    "batch_predict",
    "cross_entropy",
    "top_label_match_rate",
    "InfluenceRecord",
    "loo_predict",
    "support_influence",
    "rank_influence",
    "InferenceMode",
    "CentroidEntry",
    "kmeans",
    "build_support",
    "ReliabilityReport",
    "SmoothedLabel",
    "expected_calibration_error",
    "smooth_labels",
    "temperature_scale",
    "Dataset",
    "load_csv",
    "save_csv",
    "generate_blobs",
    "generate_rings",
    "split",
    "ExtractorModel",
    "TrainConfig",
    "Episode",
    "sample_episode",
    "forward",
    "nw_loss_and_grad",
    "train",
    "embed_examples",
    "save_checkpoint",
    "load_checkpoint",
]
