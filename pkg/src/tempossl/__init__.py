"""Temporal-transform contrastive self-supervised learning on videos.

Temporal transforms (rotation with jitter, reverse, shuffle, speed, clip
order) serve double duty: they generate the augmented views for a
noise-contrastive objective, and each one carries a self-supervised
prediction task trained jointly through a per-transform head.
"""

__version__ = "0.1.0"

from .videodata import (  # noqa: F401
    Clip,
    ClipSampleConfig,
    SyntheticDataConfig,
    SyntheticSpec,
    Video,
    VideoDataset,
    generate_synthetic_video,
    load_manifest,
    make_synthetic_specs,
    write_manifest,
)
from .transforms import (  # noqa: F401
    ALL_KINDS,
    DEFAULT_KINDS,
    TransformConfigs,
    TransformOutcome,
    apply_transform,
    apply_transform_set,
)
from .encoder import (  # noqa: F401
    EncoderConfig,
    ProjectionConfig,
    ProjectionHead,
    TacoModel,
    TaskHeadConfig,
    VideoEncoder,
    build_task_head,
)
from .contrastive import (  # noqa: F401
    ContrastiveConfig,
    MemoryBank,
    MomentumQueue,
    contrast_loss,
    nce_pair_loss,
)
from .objective import (  # noqa: F401
    ObjectiveConfig,
    ScheduleConfig,
    lr_at,
    overall_loss,
    sgd_momentum_step,
    task_loss,
)
from .training import (  # noqa: F401
    ExperimentConfig,
    SplitConfig,
    load_checkpoint,
    pretrain,
    resume,
)
from .evaluation import (  # noqa: F401
    ComparisonReport,
    EvalConfig,
    SuiteConfig,
    comparison_suite,
    eval_multiclip,
    finetune_full,
    lambda_sweep,
    linear_probe,
    task_transfer_matrix,
)
