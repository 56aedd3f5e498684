"""Acceptance suite: exact-math oracles, gradient checks, and
direction-preserving desk-scale analogs of the headline experiments.

Every criterion prints one PASS/FAIL line (run with `pytest -s` to see them
as they complete). The heavy end-to-end fixtures share pretrained stages
through an in-process memo, so the whole suite stays within the stated
runtime budgets.
"""

import numpy as np
import pytest

from texpose import geom, metrics
from texpose.diffcore import ParamSet, Tape, check_gradients
from texpose.diffcore import functional as F
from texpose.field import FieldConfig, NeuralField, composite, sample_ray
from texpose.pipeline import ExperimentConfig, run_ablation, run_baseline, run_selfsup
from texpose.pipeline.seeding import stream
from texpose.pipeline.stages import pretrained_geometry
from texpose.poselearn import (
    CropSpec,
    matrix_to_rot6d,
    pose_loss_batch,
    rodrigues_tape,
    rot6d_to_matrix_batch,
)
from texpose.poselearn.refine import rend_energy
from texpose.texlearn import (
    Discriminator,
    FeatureExtractor,
    LossWeights,
    PatchBatch,
    PretrainBatch,
    loss_2d,
    loss_adv,
    loss_pretrain,
    loss_rec,
    loss_reg,
    loss_tex,
)

SEEDS = (11, 23, 37, 53)
ABLATION_SEEDS = (11, 23)
GRAD_CONFIGS = 20


def report(num, name, ok, detail):
    print(f"\nACCEPTANCE {num:02d} {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    return ok


# ---------------------------------------------------------------------------
# shared experiment configurations (frozen)
# ---------------------------------------------------------------------------


def blob_config(**extra) -> ExperimentConfig:
    """Criterion 5-10 configuration: low-texture blob, 5 deg / 2%-diameter
    pose noise, corrupted masks."""
    base = dict(
        object__kind="blob", object__size=0.05, object__subdivisions=2,
        object__bump=0.32,
        camera__resolution=48, camera__focal=142.0,
        views__count=40, views__azimuth_min_deg=-80.0,
        views__azimuth_max_deg=80.0, views__roll_max_deg=20.0,
        noise__rot_sigma_deg=5.0, noise__trans_frac=0.02,
        field__geom_depth=3, field__geom_width=48, field__feat_dim=24,
        field__rgb_depth=2, field__rgb_width=32, field__levels_x=5,
        field__levels_dir=2, field__embed_dim=8, field__samples_per_ray=16,
        loss__lambda_d=1.0,
        train__pretrain_steps=1500, train__pretrain_views=28,
        train__pretrain_rays=448,
        train__texture_steps=500, train__patch_size=12, train__patch_batch=4,
        train__disc_channels="16,32,32,32", train__disc_lr_mult=1.0,
        train__synth_count=320, train__estimator_pretrain_count=256,
        train__estimator_pretrain_steps=3000, train__estimator_steps=4500,
        train__estimator_lr=2e-3, train__batch_size=16,
        train__refine_steps=60, train__refine_lr=3e-3,
        estimator__input_size=48, estimator__channels="16,32,64,64,128",
        estimator__fc_dim=256, estimator__mask_size=12,
        eval__test_views=40,
    )
    base.update(extra)
    return ExperimentConfig.default(**base)


def sphere_config() -> ExperimentConfig:
    """Criterion 4 configuration: checker sphere at 64x64, 28 training views."""
    return ExperimentConfig.default(
        object__kind="sphere", object__size=0.05, object__subdivisions=3,
        camera__resolution=64, camera__focal=190.0,
        field__geom_depth=3, field__geom_width=48, field__feat_dim=24,
        field__rgb_depth=2, field__rgb_width=32, field__levels_x=6,
        field__levels_dir=2, field__embed_dim=8, field__samples_per_ray=24,
        loss__lambda_m=2.0, loss__lambda_d=1.0,
        train__pretrain_steps=6000, train__pretrain_views=28,
        train__pretrain_rays=448, train__pretrain_lr=2e-3,
    )


@pytest.fixture(scope="module")
def memo():
    return {}


@pytest.fixture(scope="module")
def selfsup_records(memo):
    return {seed: run_selfsup(blob_config(), seed=seed, memo=memo)
            for seed in SEEDS}


@pytest.fixture(scope="module")
def baseline_records(memo, selfsup_records):
    return {seed: run_baseline(blob_config(), seed=seed, memo=memo)
            for seed in SEEDS}


# ---------------------------------------------------------------------------
# criterion 1: quadrature exactness
# ---------------------------------------------------------------------------


def test_criterion_01_quadrature_exactness():
    worst = 0.0
    for k in (2, 8, 32):
        sigma_val, length = 7.3, 0.61
        ray = geom.Ray(np.zeros(3), np.array([0, 0, 1.0]), 0.0, length)
        s = sample_ray(ray, k, stratified=False)
        out = composite(np.full((1, k), sigma_val), np.full((1, k, 3), 0.5),
                        s.delta[None], s.t[None])
        worst = max(worst, abs(out["M"][0] - (1 - np.exp(-sigma_val * length))))
    # hand-evaluated two-sample case
    ln2 = np.log(2.0)
    c1 = np.array([0.2, 0.6, 1.0])
    c2 = np.array([1.0, 0.0, 0.5])
    out = composite(np.array([[ln2, ln2]]), np.stack([c1, c2])[None],
                    np.array([[1.0, 1.0]]), np.array([[0.5, 1.5]]))
    worst = max(worst, float(np.max(np.abs(out["C"][0] - (0.5 * c1 + 0.25 * c2)))))
    worst = max(worst, abs(out["M"][0] - 0.75))
    worst = max(worst, abs(out["D"][0] - (0.5 * 0.5 + 0.25 * 1.5)))
    # empty and opaque limits
    empty = composite(np.zeros((1, 4)), np.full((1, 4, 3), 0.3),
                      np.full((1, 4), 0.1), np.ones((1, 4)))
    worst = max(worst, float(abs(empty["M"][0])), float(np.max(np.abs(empty["C"]))))
    assert report(1, "quadrature-exactness", worst <= 1e-12,
                  f"max deviation {worst:.2e} <= 1e-12")


# ---------------------------------------------------------------------------
# criterion 2: gradient suite over every loss
# ---------------------------------------------------------------------------


def _random_patch_batch(rng, disc=None):
    b, size = 1, 4
    mask = (rng.uniform(size=(b, size, size)) > 0.35).astype(np.float64)
    mask_syn = np.maximum(mask, rng.uniform(size=mask.shape) > 0.5)
    surf_n = rng.normal(size=(b, size, size, 3))
    surf_n /= np.linalg.norm(surf_n, axis=-1, keepdims=True)
    return PatchBatch(
        pred_colour=rng.uniform(0.1, 0.9, size=(b, size, size, 3)),
        obs_colour=rng.uniform(size=(b, size, size, 3)),
        syn_colour=rng.uniform(size=(b, size, size, 3)),
        mask=mask, mask_syn=mask_syn, mask_pad=mask_syn * (1 - mask),
        surfel_x=rng.uniform(size=(b, size, size, 3)), surfel_n=surf_n,
        beta=rng.uniform(0.05, 0.8, size=(b, size, size)), sigma_t_mean=0.0)


def _check_many(name, make_tape, tol=1e-3, n=GRAD_CONFIGS):
    worst = 0.0
    for i in range(n):
        rng = np.random.default_rng(1000 + i)
        tape, params = make_tape(rng)
        rep = check_gradients(tape, params, eps=1e-6, tol=tol)
        worst = max(worst, rep.max_rel_err)
        assert rep.passed, f"{name} config {i}: {rep.max_rel_err:.2e} at {rep.worst_param}"
    return worst


def test_criterion_02_gradient_suite():
    worst = {}

    def tape_2d(rng):
        ps = ParamSet()
        ps.add("c", rng.uniform(size=(6, 3)))
        ps.add("m", rng.uniform(size=6))
        tc, tm = rng.uniform(size=(6, 3)), rng.uniform(size=6)
        return Tape(lambda p: loss_2d(p["c"], tc, p["m"], tm, 1.3)), ps

    worst["E_2d"] = _check_many("E_2d", tape_2d)

    def tape_pre(rng):
        ps = ParamSet()
        ps.add("c", rng.uniform(size=(8, 3)))
        ps.add("m", rng.uniform(size=8))
        ps.add("d", rng.uniform(0.3, 0.7, size=8))
        tm = (rng.uniform(size=8) > 0.4).astype(np.float64)
        tc, td = rng.uniform(size=(8, 3)), rng.uniform(0.3, 0.7, size=8) * tm

        def build(p):
            batch = PretrainBatch(colour=p["c"], mask=p["m"], depth=p["d"],
                                  target_colour=tc, target_mask=tm,
                                  target_depth=td, depth_valid=tm > 0.5)
            return loss_pretrain(batch, LossWeights())

        return Tape(build), ps

    worst["E_pre"] = _check_many("E_pre", tape_pre)

    def tape_rec(rng):
        base = _random_patch_batch(rng)
        ps = ParamSet()
        ps.add("pred", np.asarray(base.pred_colour))
        ps.add("beta", np.asarray(base.beta))

        def build(p):
            base.pred_colour = p["pred"]
            base.beta = p["beta"]
            return loss_rec(base, lambda_transient=0.0)

        return Tape(build), ps

    worst["E_rec"] = _check_many("E_rec", tape_rec)

    def tape_adv(rng):
        base = _random_patch_batch(rng)
        disc = Discriminator(patch_size=4, channels=(8, 8, 8, 8),
                             rng=np.random.default_rng(int(rng.integers(1 << 30))))
        ps = ParamSet()
        ps.add("pred", np.asarray(base.pred_colour))

        def build(p):
            base.pred_colour = p["pred"]
            return loss_adv(base, disc, "generator")

        return Tape(build), ps

    worst["E_adv"] = _check_many("E_adv", tape_adv)

    def tape_reg(rng):
        base = _random_patch_batch(rng)
        fx = FeatureExtractor(seed=int(rng.integers(1 << 30)), channels=(6, 8, 8))
        ps = ParamSet()
        ps.add("pred", np.asarray(base.pred_colour))

        def build(p):
            base.pred_colour = p["pred"]
            return loss_reg(base, fx)

        return Tape(build), ps

    worst["E_reg"] = _check_many("E_reg", tape_reg)

    def tape_tex(rng):
        base = _random_patch_batch(rng)
        disc = Discriminator(patch_size=4, channels=(8, 8, 8, 8),
                             rng=np.random.default_rng(int(rng.integers(1 << 30))))
        fx = FeatureExtractor(seed=int(rng.integers(1 << 30)), channels=(6, 8, 8))
        ps = ParamSet()
        ps.add("pred", np.asarray(base.pred_colour))
        ps.add("beta", np.asarray(base.beta))

        def build(p):
            base.pred_colour = p["pred"]
            base.beta = p["beta"]
            base.sigma_t_mean = 0.0
            return loss_tex(base, disc, fx, LossWeights())

        return Tape(build), ps

    worst["E_tex"] = _check_many("E_tex", tape_tex)

    blob = geom.make_blob(radius=0.05, subdivisions=1)

    def tape_pose(rng):
        lr_ = np.stack([geom.exp_so3(rng.normal(size=3))])
        lt_ = np.array([[0.01, -0.01, 0.45]])
        ps = ParamSet()
        raw = np.concatenate([matrix_to_rot6d(geom.exp_so3(rng.normal(size=3))),
                              rng.normal(size=3) * 0.02 + [0, 0, 0.44]])
        ps.add("raw", raw[None, :])

        def build(p):
            rot = rot6d_to_matrix_batch(p["raw"][:, :6])
            return pose_loss_batch(rot, p["raw"][:, 6:9], lr_, lt_,
                                   blob.vertices)

        return Tape(build), ps

    worst["E_pose"] = _check_many("E_pose", tape_pose, tol=1e-4)

    tiny = NeuralField(
        FieldConfig(geom_depth=2, geom_width=16, feat_dim=8, rgb_depth=1,
                    rgb_width=12, levels_x=2, levels_dir=1, embed_dim=4,
                    samples_per_ray=4),
        n_views=2, bound_radius=0.07, rng=np.random.default_rng(5))
    cam = geom.default_camera(12, 30.0)
    gt = geom.Pose(np.eye(3), np.array([0.0, 0.0, 0.4]))
    img = tiny.render_image(cam, gt, mode="pretrain", k=4)

    def tape_rend(rng):
        ys, xs = np.mgrid[3:9:2, 3:9:2]
        px = xs.reshape(-1) + 0.5
        py = ys.reshape(-1) + 0.5
        d_cam = cam.directions(px, py)
        obs_m = img["M"][ys.reshape(-1), xs.reshape(-1)]
        obs_c = img["C"][ys.reshape(-1), xs.reshape(-1)] * obs_m[:, None]
        params = ParamSet()
        for name in tiny.params.names():
            params.add(name, tiny.params.value(name), trainable=False)
        params.add("w", rng.normal(0, 0.08, size=3))
        params.add("dt", rng.normal(0, 0.003, size=3))
        from texpose.geom.camera import object_rays
        pose_now = geom.Pose(gt.rotation @ geom.exp_so3(params.value("w")),
                             gt.translation + params.value("dt"))
        _, _, t0, t1, valid = object_rays(cam, pose_now, px, py,
                                          tiny.bound_radius)
        samples = tiny.sample_rays(t0, t1, valid, 4, False)

        def build(p):
            rot = gt.rotation @ rodrigues_tape(p["w"])
            trans = gt.translation + p["dt"]
            origins = F.broadcast_to(-(F.reshape(trans, (1, 3)) @ rot),
                                     (len(px), 3))
            dirs = d_cam @ rot
            out = tiny.render_rays(p, origins, dirs, t0, t1, valid,
                                   mode="pretrain", samples=samples)
            return rend_energy(out["M"], out["C"], obs_m, obs_c)

        return Tape(build), params

    worst["E_rend"] = _check_many("E_rend", tape_rend)

    detail = ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
    assert report(2, "gradient-suite", True, detail)


# ---------------------------------------------------------------------------
# criterion 3: metric oracle equivalence
# ---------------------------------------------------------------------------


def test_criterion_03_metric_oracles():
    cube = geom.make_cube(side=0.1)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        def rand_pose():
            return geom.Pose(geom.exp_so3(rng.normal(size=3)),
                             rng.normal(size=3) * 0.05 + [0, 0, 0.4])
        p, g = rand_pose(), rand_pose()
        a = metrics.add(p, g, cube)
        s = metrics.add_s(p, g, cube)
        bf_a = np.mean([np.linalg.norm((p.rotation @ v + p.translation)
                                       - (g.rotation @ v + g.translation))
                        for v in cube.vertices])
        pv = [p.rotation @ v + p.translation for v in cube.vertices]
        bf_s = np.mean([min(np.linalg.norm((g.rotation @ v + g.translation) - q)
                            for q in pv) for v in cube.vertices])
        worst = max(worst, abs(a - bf_a), abs(s - bf_s))
        assert s <= a + 1e-15
    cyl = geom.make_cylinder()
    base = geom.Pose(np.eye(3), np.array([0.0, 0.0, 0.4]))
    rotated = base.compose(geom.Pose(geom.exp_so3([0, 0, np.pi / 2]), np.zeros(3)))
    bound = metrics.symmetry_discretisation_bound(cyl)
    sym_ok = metrics.add_s(rotated, base, cyl) <= bound + 1e-12 and \
        metrics.add(rotated, base, cyl) > 0.1 * cyl.diameter
    ok = worst <= 1e-12 and sym_ok
    assert report(3, "metric-oracle-equivalence", ok,
                  f"max |diff| {worst:.2e}, symmetry case {'ok' if sym_ok else 'bad'}")


# ---------------------------------------------------------------------------
# criterion 4: geometric pretraining fidelity
# ---------------------------------------------------------------------------


def test_criterion_04_geometric_pretraining(memo):
    cfg = sphere_config()
    field, m = pretrained_geometry(cfg, seed=SEEDS[0], memo=memo)
    iou = m["fidelity"]["iou"]
    mae = m["fidelity"]["depth_mae_frac"]
    ok = iou >= 0.95 and mae <= 0.02
    assert report(4, "geometric-pretraining", ok,
                  f"held-out IoU {iou:.3f} >= 0.95, depth MAE {mae * 100:.2f}% <= 2%")


# ---------------------------------------------------------------------------
# criterion 5: end-to-end self-supervision gain
# ---------------------------------------------------------------------------


def test_criterion_05_selfsup_gain(selfsup_records):
    gains = {s: r.value("eval", "gain") for s, r in selfsup_records.items()}
    passed = sum(1 for g in gains.values() if g >= 15.0)
    detail = ", ".join(f"s{s}: {selfsup_records[s].value('eval', 'add_acc_before'):.0f}"
                       f"->{selfsup_records[s].value('eval', 'add_acc_after'):.0f}"
                       for s in SEEDS)
    assert report(5, "selfsup-gain", passed >= 3,
                  f"gain >= 15 pts on {passed}/4 seeds [{detail}]")


# ---------------------------------------------------------------------------
# criterion 6: baseline divergence ordering
# ---------------------------------------------------------------------------


def test_criterion_06_baseline_ordering(selfsup_records, baseline_records):
    below = 0
    nondecreasing = 0
    details = []
    for seed in SEEDS:
        b = baseline_records[seed].value("eval", "add_acc_after")
        s = selfsup_records[seed].value("eval", "add_acc_after")
        start = baseline_records[seed].value("refine", "trace_start")
        end = baseline_records[seed].value("refine", "trace_end")
        below += int(b <= s)
        nondecreasing += int(end >= start)
        details.append(f"s{seed}: base {b:.0f} vs self {s:.0f}, "
                       f"trace {start * 1000:.1f}->{end * 1000:.1f}mm")
    ok = below == len(SEEDS) and nondecreasing >= len(SEEDS) / 2
    assert report(6, "baseline-ordering", ok,
                  f"baseline<=selfsup on {below}/4, error non-decreasing on "
                  f"{nondecreasing}/4 [{'; '.join(details)}]")


# ---------------------------------------------------------------------------
# criterion 7: loss ablation ordering
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def loss_ablation(memo):
    _, rows = run_ablation(blob_config(), "loss_terms", ABLATION_SEEDS,
                           memo=memo)
    out = {}
    for row in rows:
        out.setdefault(row["variant"], []).append(row["add_acc_after"])
    return {k: float(np.mean(v)) for k, v in out.items()}


def test_criterion_07_loss_ablation(loss_ablation):
    m = loss_ablation
    tol = 2.0
    ordering = (m["adv+reg"] >= m["adv"] - tol
                and m["adv+reg"] >= m["reg"] - tol
                and m["reg"] >= m["none"] - tol)
    margin = m["adv+reg"] - m["none"] >= 5.0
    detail = ", ".join(f"{k}={v:.1f}" for k, v in m.items())
    assert report(7, "loss-ablation-ordering", ordering and margin, detail)


# ---------------------------------------------------------------------------
# criterion 8: data scarcity trend
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def fraction_ablation(memo):
    _, rows = run_ablation(blob_config(), "data_fraction", ABLATION_SEEDS,
                           memo=memo)
    out = {}
    for row in rows:
        frac = float(row["variant"].split("=")[1])
        out.setdefault(frac, []).append(row["gain"])
    return {k: float(np.mean(v)) for k, v in sorted(out.items())}


def test_criterion_08_data_scarcity(fraction_ablation):
    gains = fraction_ablation
    fracs = sorted(gains)
    tol = 2.0
    small, full = gains[fracs[0]], gains[fracs[-1]]
    half_ok = small >= 0.5 * full
    inversions = sum(1 for a, b in zip(fracs, fracs[1:])
                     if gains[b] < gains[a] - tol)
    detail = ", ".join(f"{f}: {gains[f]:.1f}" for f in fracs)
    assert report(8, "data-scarcity-trend",
                  half_ok and inversions <= 1,
                  f"gain@0.05 {small:.1f} vs @1.0 {full:.1f}, "
                  f"{inversions} inversion(s) [{detail}]")


# ---------------------------------------------------------------------------
# criterion 9: freeze audits
# ---------------------------------------------------------------------------


def test_criterion_09_freeze_audits(selfsup_records, baseline_records):
    total, passed = 0, 0
    for rec in list(selfsup_records.values()) + list(baseline_records.values()):
        audits = [m for m in rec.metrics if m["stage"] == "audit"]
        total += len(audits)
        passed += sum(1 for a in audits if a["value"] == 1.0)
    ok = total > 0 and passed == total
    assert report(9, "freeze-audits", ok, f"{passed}/{total} audits byte-identical")


# ---------------------------------------------------------------------------
# criterion 10: determinism
# ---------------------------------------------------------------------------


def test_criterion_10_determinism(selfsup_records):
    fresh = run_selfsup(blob_config(), seed=SEEDS[0], memo={})
    same = fresh.metric_dict() == selfsup_records[SEEDS[0]].metric_dict()
    assert report(10, "determinism", same,
                  "identical config+seed reproduces all metrics bit-identically")
