"""Self-supervised optical/SAR change detection toolkit."""

import os

# Pin BLAS to the MSCD_THREADS worker budget (default 1) before numpy loads
# its threading pool; explicit user settings win via setdefault.
_threads = os.environ.get("MSCD_THREADS", "1")
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)
del _var, _threads

from .raster import (  # noqa: E402
    Raster,
    RasterFormatError,
    SceneStats,
    load_raster,
    replicate_band,
    save_raster,
    standardize,
    to_decibels,
)
from .tensor import (  # noqa: E402
    ParamSet,
    Rng,
    Tensor,
    he_init,
    load_checkpoint,
    save_checkpoint,
    sgd_momentum_step,
)
from .network import Architecture, SiameseCDModel, build_model  # noqa: E402
from .losses import (  # noqa: E402
    TAG_CLUSTER_OPT,
    TAG_CLUSTER_SAR,
    TAG_CONTRASTIVE,
    TAG_TEMPORAL,
    contrastive_loss,
    deep_cluster_loss,
    shuffle_batch,
    temporal_consistency_loss,
)
from .trainer import TrainConfig, TrainingDiverged, extract_patches, train  # noqa: E402
from .detector import (  # noqa: E402
    apply_threshold,
    feature_magnitude,
    isodata_threshold,
    otsu_threshold,
)
from .baselines import cva, rcva  # noqa: E402
from .evaluate import EvalReport, evaluate, fcc_map  # noqa: E402
from .synth import SynthSpec, generate_scene  # noqa: E402

__version__ = "0.1.0"


def thread_count() -> int:
    """Worker budget from MSCD_THREADS (>= 1); 1 means fully sequential."""
    try:
        return max(1, int(os.environ.get("MSCD_THREADS", "1")))
    except ValueError:
        return 1
