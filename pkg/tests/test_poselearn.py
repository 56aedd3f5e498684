import numpy as np
import pytest

from texpose import geom
from texpose.diffcore import ParamSet, Tape, check_gradients
from texpose.diffcore import functional as F
from texpose.field import FieldConfig, NeuralField
from texpose.poselearn import (
    CropSpec,
    EstimatorConfig,
    PoseEstimator,
    SynthDataset,
    SynthSample,
    loss_pose,
    make_training_example,
    matrix_to_rot6d,
    pose_loss_batch,
    refine_render_compare,
    rodrigues_tape,
    rot6d_to_matrix,
    rot6d_to_matrix_batch,
    synthesize_dataset,
    synthesize_pretrain_dataset,
    train_estimator,
)
from texpose.texlearn import train_geometry, LossWeights


SMALL_EST = EstimatorConfig(input_size=32, channels=(8, 16, 32, 32), fc_dim=64,
                            mask_size=8)


def random_rotation(rng):
    return geom.exp_so3(rng.normal(size=3))


# --- rotation representation ------------------------------------------------------


def test_rot6d_decode_orthonormal_for_any_input():
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = rng.normal(size=6) * rng.uniform(0.01, 5.0)
        r = rot6d_to_matrix(v)
        assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-9
        assert abs(np.linalg.det(r) - 1.0) < 1e-9


def test_rot6d_roundtrip():
    rng = np.random.default_rng(1)
    for _ in range(20):
        r = random_rotation(rng)
        back = rot6d_to_matrix(matrix_to_rot6d(r))
        assert np.max(np.abs(back - r)) < 1e-9


def test_rot6d_batch_matches_single():
    rng = np.random.default_rng(2)
    v = rng.normal(size=(5, 6))
    batch = np.asarray(rot6d_to_matrix_batch(v))
    for i in range(5):
        assert np.max(np.abs(batch[i] - rot6d_to_matrix(v[i]))) < 1e-12


def test_rodrigues_tape_matches_exp_so3():
    rng = np.random.default_rng(3)
    for _ in range(10):
        w = rng.normal(size=3) * rng.uniform(0.01, 2.0)
        ps = ParamSet()
        ps.add("w", w)
        tape = Tape(lambda p: (rodrigues_tape(p["w"]) ** 2).sum())
        tape.forward(ps)
        got = rodrigues_tape(w)
        assert np.max(np.abs(np.asarray(got) - geom.exp_so3(w))) < 1e-10


# --- loss_pose ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def blob():
    return geom.make_blob(radius=0.05, subdivisions=2)


@pytest.fixture(scope="module")
def cylinder():
    return geom.make_cylinder()


def test_loss_pose_zero_at_equal(blob):
    rng = np.random.default_rng(4)
    pose = geom.Pose(random_rotation(rng), rng.normal(size=3) * 0.1)
    assert loss_pose(pose, pose, blob) == 0.0


def test_loss_pose_pure_translation(blob):
    rng = np.random.default_rng(5)
    r = random_rotation(rng)
    t = np.array([0.01, -0.02, 0.03])
    a = geom.Pose(r, np.zeros(3))
    b = geom.Pose(r, t)
    # vertex term is exactly |t|, translation term is its L1 norm
    expected = np.linalg.norm(t) + np.sum(np.abs(t))
    assert loss_pose(b, a, blob) == pytest.approx(expected, rel=1e-12)


def test_loss_pose_cylinder_symmetry(cylinder):
    half_turn = geom.Pose(geom.exp_so3([0, 0, np.pi]), np.zeros(3))
    base = geom.Pose(np.eye(3), np.array([0.0, 0.0, 0.4]))
    rotated = base.compose(half_turn)
    # brute-force nearest-vertex matching makes the symmetric loss vanish
    assert loss_pose(rotated, base, cylinder) < 1e-9
    asym = geom.make_blob(radius=0.05, subdivisions=2)
    assert loss_pose(rotated, base, asym) > 0.01


def test_pose_loss_batch_matches_loss_pose(blob):
    rng = np.random.default_rng(6)
    rots = np.stack([random_rotation(rng) for _ in range(3)])
    trans = rng.normal(size=(3, 3)) * 0.05 + np.array([0, 0, 0.4])
    lrots = np.stack([random_rotation(rng) for _ in range(3)])
    ltrans = rng.normal(size=(3, 3)) * 0.05 + np.array([0, 0, 0.4])
    batch_val = float(F.value(pose_loss_batch(rots, trans, lrots, ltrans,
                                              blob.vertices)))
    singles = [loss_pose(geom.Pose(rots[i], trans[i]),
                         geom.Pose(lrots[i], ltrans[i]), blob)
               for i in range(3)]
    assert batch_val == pytest.approx(np.mean(singles), rel=1e-9)


def test_pose_loss_gradient_wrt_estimator_outputs(blob):
    rng = np.random.default_rng(7)
    label_r = np.stack([random_rotation(rng)])
    label_t = np.array([[0.01, 0.0, 0.45]])
    ps = ParamSet()
    ps.add("raw", np.concatenate([matrix_to_rot6d(random_rotation(rng)),
                                  [0.005, -0.01, 0.44]])[None, :])

    def build(p):
        rot = rot6d_to_matrix_batch(p["raw"][:, :6])
        trans = p["raw"][:, 6:9]
        return pose_loss_batch(rot, trans, label_r, label_t, blob.vertices)

    report = check_gradients(Tape(build), ps, eps=1e-6, tol=1e-4)
    assert report.passed, report


# --- estimator ----------------------------------------------------------------------


def test_untrained_estimator_outputs_valid_pose(blob):
    est = PoseEstimator(SMALL_EST, rng=np.random.default_rng(8))
    cam = geom.default_camera(48, 140.0)
    rng = np.random.default_rng(9)
    image = rng.uniform(size=(48, 48, 3))
    crop = CropSpec(crop_px=40, z_nominal=0.45, jitter_px=0)
    pose, mask = est.estimate(image, cam, (24.0, 24.0), crop)
    r = pose.rotation
    assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-9
    assert mask.shape == (48, 48)
    assert mask.min() >= 0 and mask.max() <= 1


def test_estimator_deterministic_inference(blob):
    est = PoseEstimator(SMALL_EST, rng=np.random.default_rng(10))
    cam = geom.default_camera(48, 140.0)
    image = np.random.default_rng(11).uniform(size=(48, 48, 3))
    crop = CropSpec(crop_px=40, z_nominal=0.45, jitter_px=0)
    p1, m1 = est.estimate(image, cam, (24.0, 24.0), crop)
    p2, m2 = est.estimate(image, cam, (24.0, 24.0), crop)
    assert np.array_equal(p1.rotation, p2.rotation)
    assert np.array_equal(p1.translation, p2.translation)
    assert np.array_equal(m1, m2)


# --- synthesis ----------------------------------------------------------------------


def pretrained_tiny_field(blob, cam, steps=400):
    cfg = FieldConfig(geom_depth=2, geom_width=48, feat_dim=16, rgb_depth=1,
                      rgb_width=24, levels_x=4, levels_dir=1, embed_dim=4,
                      samples_per_ray=16)
    field = NeuralField(cfg, n_views=4, bound_radius=blob.bound_radius * 1.05,
                        rng=np.random.default_rng(12))
    train_geometry(field, blob, cam, steps=steps, n_views=10,
                   rays_per_step=192, lr=2e-3, weights=LossWeights(),
                   rng=np.random.default_rng(13), distance_range=(0.38, 0.5))
    return field


@pytest.fixture(scope="module")
def small_cam():
    return geom.default_camera(32, 95.0)


@pytest.fixture(scope="module")
def trained_field(blob, small_cam):
    return pretrained_tiny_field(blob, small_cam)


def test_synthesized_labels_exact_and_rerenderable(blob, small_cam, trained_field):
    rng = np.random.default_rng(14)
    ds = synthesize_dataset(trained_field, small_cam, 3, rng,
                            distance_range=(0.38, 0.5), seed=14)
    assert len(ds) == 3
    for s in ds.samples:
        out = trained_field.render_image(small_cam, s.pose, mode="synthesis")
        fg = s.mask > 0.5
        blend = out["C"] + (1 - np.clip(out["M"], 0, 1))[..., None] * 0.0
        # foreground pixels coincide bit-identically with a re-render
        assert np.array_equal(np.clip(out["C"], 0, 1)[fg],
                              np.clip(blend, 0, 1)[fg])
        recomputed = np.clip(out["M"], 0.0, 1.0)
        assert np.array_equal(recomputed, s.mask)


def test_synthesize_zero_is_valid_degenerate(blob, small_cam, trained_field):
    ds = synthesize_dataset(trained_field, small_cam, 0,
                            np.random.default_rng(15),
                            distance_range=(0.38, 0.5))
    assert len(ds) == 0


def test_synthesize_background_compositing(blob, small_cam, trained_field):
    rng = np.random.default_rng(16)
    ds = synthesize_dataset(trained_field, small_cam, 1, rng,
                            distance_range=(0.38, 0.5), seed=16)
    s = ds.samples[0]
    bg_region = s.mask < 0.02
    assert bg_region.sum() > 10
    # outside the rendered mask the image is essentially pure background,
    # which the generator keeps strictly inside [0, 1]
    assert s.image[bg_region].min() >= 0.0
    assert s.image[bg_region].max() <= 1.0
    fg = s.mask > 0.9
    if fg.any():
        assert np.mean(np.abs(s.image[fg] - np.clip(ds.samples[0].image[fg], 0, 1))) < 1e-12


def test_synthesize_aborts_on_lost_object(blob, small_cam):
    cfg = FieldConfig(geom_depth=2, geom_width=16, feat_dim=8, rgb_depth=1,
                      rgb_width=12, levels_x=2, levels_dir=1, embed_dim=4,
                      samples_per_ray=8)
    empty_field = NeuralField(cfg, n_views=2, bound_radius=0.06,
                              rng=np.random.default_rng(17))
    from texpose.poselearn import SynthesisError
    with pytest.raises(SynthesisError):
        synthesize_dataset(empty_field, small_cam, 1, np.random.default_rng(18),
                           distance_range=(0.38, 0.5))


def test_dataset_persistence_roundtrip(tmp_path, blob, small_cam):
    rng = np.random.default_rng(19)
    ds = synthesize_pretrain_dataset(blob, small_cam, 2, rng,
                                     distance_range=(0.38, 0.5), seed=19)
    ds.save(tmp_path / "ds")
    back = SynthDataset.load(tmp_path / "ds")
    assert len(back) == 2
    for a, b in zip(ds.samples, back.samples):
        assert np.max(np.abs(a.pose.rotation - b.pose.rotation)) < 1e-15
        assert np.max(np.abs(a.pose.translation - b.pose.translation)) < 1e-15
        assert np.max(np.abs(a.image - b.image)) < 1.0 / 255.0


# --- training -----------------------------------------------------------------------


def test_train_estimator_loss_decreases(blob, small_cam):
    rng = np.random.default_rng(20)
    ds = synthesize_pretrain_dataset(blob, small_cam, 24, rng,
                                     distance_range=(0.38, 0.5))
    est = PoseEstimator(SMALL_EST, rng=np.random.default_rng(21))
    crop = CropSpec(crop_px=28, z_nominal=0.44, jitter_px=2.0)
    out = train_estimator(est, ds, blob, crop, steps=60, batch_size=8,
                          lr=1e-3, rng=np.random.default_rng(22), log_every=5)
    assert out["final_loss"] < out["first_loss"]


def test_train_estimator_rejects_empty(blob, small_cam):
    est = PoseEstimator(SMALL_EST)
    ds = SynthDataset(samples=[], camera=small_cam, seed=0)
    with pytest.raises(ValueError):
        train_estimator(est, ds, blob, CropSpec(28, 0.44), steps=1,
                        batch_size=4, lr=1e-3, rng=np.random.default_rng(0))


def test_overfit_single_view(blob, small_cam, trained_field):
    rng = np.random.default_rng(23)
    ds = synthesize_dataset(trained_field, small_cam, 1, rng,
                            distance_range=(0.4, 0.48), seed=23)
    est = PoseEstimator(SMALL_EST, rng=np.random.default_rng(24))
    crop = CropSpec(crop_px=28, z_nominal=0.44, jitter_px=0.0)
    train_estimator(est, ds, blob, crop, steps=500, batch_size=1, lr=1e-3,
                    rng=np.random.default_rng(25))
    sample = ds.samples[0]
    centre = geom.project_centre(small_cam, sample.pose)
    pred, _ = est.estimate(sample.image, small_cam, centre, crop)
    assert geom.geodesic_deg(pred.rotation, sample.pose.rotation) <= 2.0


# --- render-and-compare -------------------------------------------------------------


def test_refine_stationary_at_consistent_observations(blob, small_cam, trained_field):
    # clean observations: the renderer's own output at the true pose
    pose = geom.Pose(np.eye(3), np.array([0.0, 0.0, 0.44]))
    out = trained_field.render_image(small_cam, pose, mode="pretrain")
    refined, trace, diverged = refine_render_compare(
        trained_field, small_cam, pose, out["C"], np.clip(out["M"], 0, 1),
        steps=50, lr=1e-3, gt_pose=pose, model=blob)
    assert not diverged
    assert len(trace) == 51
    from texpose.metrics import add as metric_add
    assert metric_add(refined, pose, blob) < 1e-3 * blob.diameter


def test_refine_trace_length(blob, small_cam, trained_field):
    rng = np.random.default_rng(26)
    gt = geom.Pose(np.eye(3), np.array([0.0, 0.0, 0.44]))
    init = geom.perturb(gt, 8.0, 0.004, rng)
    out = trained_field.render_image(small_cam, gt, mode="pretrain")
    _, trace, _ = refine_render_compare(
        trained_field, small_cam, init, out["C"], (out["M"] > 0.5).astype(float),
        steps=7, gt_pose=gt, model=blob)
    assert len(trace) == 8


def test_rend_energy_gradcheck(blob, small_cam, trained_field):
    rng = np.random.default_rng(27)
    gt = geom.Pose(np.eye(3), np.array([0.0, 0.0, 0.44]))
    out = trained_field.render_image(small_cam, gt, mode="pretrain")
    mask_obs = (out["M"] > 0.5).astype(float)
    gx, gy = np.nonzero(mask_obs)[1][::9], np.nonzero(mask_obs)[0][::9]
    px, py = gx + 0.5, gy + 0.5
    d_cam = small_cam.directions(px, py)
    obs_m = mask_obs[gy, gx]
    obs_c = out["C"][gy, gx] * obs_m[:, None]

    params = ParamSet()
    for name in trained_field.params.names():
        params.add(name, trained_field.params.value(name), trainable=False)
    params.add("w", rng.normal(0, 0.05, size=3))
    params.add("dt", rng.normal(0, 0.002, size=3))

    from texpose.geom.camera import object_rays
    from texpose.poselearn.refine import rend_energy
    pose_now = geom.Pose(gt.rotation @ geom.exp_so3(params.value("w")),
                         gt.translation + params.value("dt"))
    _, _, t0, t1, valid = object_rays(small_cam, pose_now, px, py,
                                      trained_field.bound_radius)
    samples = trained_field.sample_rays(t0, t1, valid, 8, False)

    def build(p):
        rot = gt.rotation @ rodrigues_tape(p["w"])
        trans = gt.translation + p["dt"]
        origins = F.broadcast_to(-(F.reshape(trans, (1, 3)) @ rot),
                                 (len(px), 3))
        dirs = d_cam @ rot
        o = trained_field.render_rays(p, origins, dirs, t0, t1, valid,
                                      mode="pretrain", samples=samples)
        return rend_energy(o["M"], o["C"], obs_m, obs_c)

    report = check_gradients(Tape(build), params, eps=1e-6, tol=1e-3)
    assert report.passed, report
