"""Full-spectrum out-of-distribution detection in embedding space.

The pipeline: model each ID class as a Gaussian over its embeddings,
sample the highest- and lowest-density regions per class, optimize ID and
negative context vectors against those regions plus few-shot image
embeddings, then score test embeddings with energy-difference or
max-cosine detectors and evaluate with ranking metrics.
"""

from .contexts import (
    ContextBank,
    classify,
    classify_batch,
    init_context_bank,
    load_context_bank,
    ood_probs,
    predict_probs,
    save_context_bank,
    similarities,
    similarity_matrix,
)
from .data import (
    EmbeddingSet,
    Manifest,
    SynthConfig,
    SynthWorld,
    read_emb,
    read_manifest,
    synth_world,
    write_emb,
    write_manifest,
    write_world,
)
from .gaussians import (
    EmbeddingQueue,
    RegionSets,
    bootstrap_queue,
    build_region_sets,
    fit_class_gaussian,
    refresh_queue,
    sample_likelihood_extremes,
)
from .metrics import (
    DetectionMetrics,
    EvalReport,
    accuracy,
    aupr,
    auroc,
    detection_metrics,
    export_histograms,
    fpr_at_tpr,
)
from .numerics import (
    ClassGaussian,
    cholesky,
    cosine,
    logsumexp,
    make_rng,
    mvn_logpdf,
    mvn_logpdf_batch,
    sample_mvn,
    sample_mvn_batch,
    softmax,
)
from .scoring import (
    ScoreKind,
    ScoredSample,
    d_energy,
    energy_id,
    energy_ood,
    mcm,
    mcm_gl,
    score_dataset,
)
from .training import (
    TrainBatch,
    TrainConfig,
    TrainResult,
    binary_separation_loss,
    build_batch,
    combined_loss,
    cosine_lr,
    cross_entropy_loss,
    id_uniformity_loss,
    sgd_step,
    train,
    uniformity_loss,
)

__version__ = "0.1.0"
