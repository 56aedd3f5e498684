from .losses import (
    LossWeights,
    PatchBatch,
    PretrainBatch,
    dilate,
    erode,
    feature_mse,
    loss_2d,
    loss_adv,
    loss_depth_si,
    loss_pretrain,
    loss_rec,
    loss_reg,
    loss_tex,
    pad_mask,
)
from .masking import boundary_pixels, corrupt_mask
from .models import Discriminator, FeatureExtractor
from .training import (
    FreezeViolation,
    TrainingDiverged,
    eval_geometry,
    train_geometry,
    train_texture,
)
from .viewdata import (
    NoiseSpec,
    RawView,
    build_raw_views,
    patch_rect,
    prepare_texture_views,
    random_background,
)
