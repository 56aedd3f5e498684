from .estimator import (
    CropSpec,
    EstimatorConfig,
    PoseEstimator,
    extract_crop,
    matrix_to_rot6d,
    resize_bilinear,
    rot6d_to_matrix,
    rot6d_to_matrix_batch,
)
from .losses import loss_pose, mask_bce, nearest_symmetry_label, pose_loss_batch
from .refine import refine_render_compare, rend_energy, rodrigues_tape
from .synth import (
    SynthDataset,
    SynthSample,
    SynthesisError,
    synthesize_dataset,
    synthesize_pretrain_dataset,
    widen_range,
)
from .training import decode_batch_translation, make_training_example, train_estimator
