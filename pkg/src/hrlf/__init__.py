"""Teacher-student representation learning for multimodal sentiment analysis
that stays usable when modalities go missing, plus the masking, metric, and
experiment tooling around it."""

from .data import (
    CLASSIFICATION,
    MODALITIES,
    REGRESSION,
    Dataset,
    DatasetError,
    ChecksumError,
    ModalityKind,
    MultimodalSample,
    Split,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .encoder import DivergenceError, EncoderConfig, ModalityEncoder, sinusoidal_positions
from .eval import (
    RATIO_GRID,
    ConditionReport,
    SweepReport,
    metric_f1_binary,
    metric_f1_per_class,
    metric_mae,
    run_condition_grid,
    run_ratio_sweep,
)
from .frf import FactorizationModule
from .fusion import FusionModule, ScaleStack, assemble_scales
from .hal import ScaleDiscriminators
from .hmi import StatisticsNets, derangement, loss_hmi, mi_lower_bound, softplus_stable
from .msm import (
    CONDITIONS,
    MISSING_CONDITIONS,
    MissingSpec,
    MsmPolicy,
    TestingCondition,
    apply_msm,
    apply_msm_batch,
    condition_mask,
    round_half_away,
)
from .trainer import (
    CheckpointError,
    LossBreakdown,
    SentimentNet,
    TrainConfig,
    TrainedStudent,
    load_bundle,
    loss_kl,
    loss_task,
    predict,
    save_bundle,
    train_student,
    train_teacher,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
