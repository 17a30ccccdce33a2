"""crossdistill: a desk-scale lab for cross-modal knowledge distillation.

The package decomposes teacher/student KL divergence into target and
non-target parts (TCKL/NCKL), tracks the matching Jensen-Shannon
diagnostics (TCJSD/NCJSD), and uses them to rank and mask features or
samples in synthetic two-modality experiments with a controllable domain
gap.
"""

__version__ = "0.1.0"

from .datagen import (
    GenConfig,
    LabeledDataset,
    ModalityPair,
    generate_base,
    make_pair,
    split_modalities,
    train_test_split,
)
from .divergence import (
    DivergenceReport,
    NonTargetDist,
    batch_report,
    decompose_kl,
    divergence_rows,
    kl_divergence,
    ncjsd,
    renormalize_nontarget,
    taylor_ratio_estimate,
    tcjsd,
    tcjsd_binary,
)
from .losses import KdLossConfig, ce_loss, decoupled_kd_loss, kd_loss, vanilla_kd_loss
from .masking import (
    MaskPlan,
    SaliencyVector,
    TrainingFailure,
    apply_feature_mask,
    apply_sample_mask,
    build_feature_mask,
    feature_saliency,
    joint_train_unimodal,
    sample_saliency,
)
from .nn import (
    MlpParams,
    MlpSpec,
    cross_entropy,
    forward,
    init_params,
    load_params,
    save_params,
    sgd_step,
    softmax,
)
from .trainer import (
    FeatureMaskSource,
    ParityReport,
    SampleMaskSource,
    TrainConfig,
    TrainReport,
    check_assumptions,
    distill_student,
    evaluate,
    train_teacher,
)
