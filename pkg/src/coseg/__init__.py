"""coseg: human-machine collaborative segmentation with a conditional GAN.

The generator segments, the discriminator's patch scores rank unlabeled
slices by confidence, the least-confident slices go to an expert (simulated
oracle or a human behind the annotation service), the rest are pseudo-labeled,
and the model retrains on the joint set.
"""

from .dataset import Dataset, load_dataset, load_pools, save_dataset, save_pools, split_pools
from .estimator import CganSegmenter
from .exceptions import (
    CosegError,
    CycleAbortedError,
    DegenerateInputError,
    FormatError,
    ShapeError,
    TrainingDivergedError,
    ValidationError,
)
from .loop import (
    CycleReport,
    ExpertKind,
    LoopConfig,
    OracleExpert,
    QueryStrategy,
    assemble_training_set,
    run_collaborative_learning,
    simulated_expert,
)
from .losses import adversarial_losses, segmentation_loss
from .metrics import (
    EvalResult,
    SweepRow,
    SweepTable,
    budget_sweep,
    dice_score,
    evaluate_segmentation,
    foreground_dice,
    pearson_correlation,
)
from .networks import (
    DiscriminatorConfig,
    GeneratorConfig,
    LossWeights,
    ModelState,
    discriminator_forward,
    generator_forward,
    init_model_state,
    load_checkpoint,
    save_checkpoint,
)
from .phantom import PhantomConfig, generate_phantom_dataset
from .training import TrainConfig, TrainMode, predict_labels, train_model
from .types import (
    ImageSlice,
    LabelMap,
    LabelSource,
    ProbMap,
    SamplePool,
    argmax_labels,
    onehot_encode,
)
from .uncertainty import (
    ConfidenceRecord,
    confidence_score,
    rank_and_select,
    uncertainty_map,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
