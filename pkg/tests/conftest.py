import pytest

from texpose.pipeline import ExperimentConfig

TINY_OVERRIDES = dict(
    object__size=0.05, object__subdivisions=2,
    camera__resolution=32, camera__focal=95.0,
    views__count=6,
    field__geom_depth=2, field__geom_width=32, field__feat_dim=16,
    field__rgb_depth=1, field__rgb_width=16, field__levels_x=4,
    field__levels_dir=1, field__embed_dim=4, field__samples_per_ray=8,
    train__pretrain_steps=150, train__pretrain_views=8, train__pretrain_rays=128,
    train__texture_steps=12, train__patch_size=8, train__patch_batch=2,
    train__synth_count=8, train__estimator_pretrain_count=8,
    train__estimator_pretrain_steps=25, train__estimator_steps=25,
    train__batch_size=8, train__refine_steps=4,
    estimator__input_size=32, estimator__channels="8,16,32,32",
    estimator__fc_dim=64, estimator__mask_size=8,
    eval__test_views=5,
)


def tiny_config(**extra) -> ExperimentConfig:
    overrides = dict(TINY_OVERRIDES)
    overrides.update(extra)
    return ExperimentConfig.default(**overrides)


@pytest.fixture(scope="session")
def tiny_cfg():
    return tiny_config()
