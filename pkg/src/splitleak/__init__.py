"""splitleak: a split-learning simulator plus label-inference attack toolkit.

Train a dense network split between a non-label party (bottom) and a label
party (top), record everything the non-label party legitimately sees at the
cut, and reconstruct the private labels from those recordings by anchored
K-means clustering, with analytic sign-attack baselines and the two standard
gradient defenses (clipped Gaussian noise, magnitude pruning).
"""

from .attack import (
    AnchorSet,
    AttackInput,
    AttackReport,
    AttackSource,
    ClusterAssignment,
    cosine_similarity,
    farthest_point_centroids,
    kmeans,
    logit_sign_attack,
    normalize_l2,
    pca_reduce,
    run_clustering_attack,
    score,
    select_anchors,
    weight_sign_attack,
    write_report_csv,
)
from .data import (
    Dataset,
    ExperimentConfig,
    gen_blobs,
    gen_digit_images,
    gen_digits,
    load_idx,
    read_config,
    read_idx_images,
    read_idx_labels,
    write_config,
    write_idx_images,
    write_idx_labels,
    write_results_csv,
)
from .defenses import (
    CompressionDefense,
    DefenseConfig,
    NoiseDefense,
    clip_and_noise,
    compress,
)
from .nn import (
    Activation,
    DenseLayer,
    ForwardTrace,
    GradientSet,
    Network,
    NetworkSpec,
    accuracy,
    backward,
    backward_from_output,
    classify,
    finite_difference_grads,
    forward,
    init_network,
    sgd_step,
    softmax_cross_entropy,
)
from .split import (
    SplitModel,
    TrainingConfig,
    collect_smashed,
    epoch_permutation,
    load_model,
    resplit,
    save_model,
    split_at,
    train,
)
from .tape import Tape, TapeEntry

__version__ = "0.1.0"
