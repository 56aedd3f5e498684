import numpy as np
import pytest

from texpose import geom, metrics
from texpose.metrics import (
    PoseErrorReport,
    add,
    add_accuracy,
    add_s,
    iou,
    psnr,
    symmetry_discretisation_bound,
)


def random_pose(rng, z=0.4):
    return geom.Pose(geom.exp_so3(rng.normal(size=3)),
                     rng.normal(size=3) * 0.05 + np.array([0, 0, z]))


@pytest.fixture(scope="module")
def cube():
    return geom.make_cube(side=0.1)


@pytest.fixture(scope="module")
def cylinder():
    return geom.make_cylinder()


def brute_force_add(pred, gt, verts):
    total = 0.0
    for v in verts:
        pv = pred.rotation @ v + pred.translation
        gv = gt.rotation @ v + gt.translation
        total += np.sqrt(np.sum((pv - gv) ** 2))
    return total / len(verts)


def brute_force_add_s(pred, gt, verts):
    pv = [pred.rotation @ v + pred.translation for v in verts]
    total = 0.0
    for v in verts:
        gv = gt.rotation @ v + gt.translation
        total += min(np.sqrt(np.sum((gv - p) ** 2)) for p in pv)
    return total / len(verts)


def test_add_zero_at_equal(cube):
    rng = np.random.default_rng(0)
    p = random_pose(rng)
    assert add(p, p, cube) == 0.0
    assert add_s(p, p, cube) == 0.0


def test_add_pure_translation_exact(cube):
    rng = np.random.default_rng(1)
    r = geom.exp_so3(rng.normal(size=3))
    t = np.array([0.01, 0.02, -0.005])
    a = geom.Pose(r, np.zeros(3))
    b = geom.Pose(r, t)
    assert add(a, b, cube) == pytest.approx(np.linalg.norm(t), rel=1e-12)


def test_add_matches_brute_force_oracle(cube):
    rng = np.random.default_rng(2)
    for _ in range(50):
        p, g = random_pose(rng), random_pose(rng)
        assert add(p, g, cube) == pytest.approx(
            brute_force_add(p, g, cube.vertices), abs=1e-12)
        assert add_s(p, g, cube) == pytest.approx(
            brute_force_add_s(p, g, cube.vertices), abs=1e-12)


def test_add_s_never_exceeds_add(cube):
    rng = np.random.default_rng(3)
    for _ in range(200):
        p, g = random_pose(rng), random_pose(rng)
        assert add_s(p, g, cube) <= add(p, g, cube) + 1e-15


def test_add_left_invariant_under_common_transform(cube):
    rng = np.random.default_rng(4)
    for _ in range(20):
        p, g = random_pose(rng), random_pose(rng)
        common = random_pose(rng, z=0.0)
        lhs = add(common.compose(p), common.compose(g), cube)
        assert lhs == pytest.approx(add(p, g, cube), abs=1e-12)


def test_cylinder_symmetry_add_s_small_add_large(cylinder):
    base = geom.Pose(np.eye(3), np.array([0.0, 0.0, 0.4]))
    quarter = geom.Pose(geom.exp_so3([0, 0, np.pi / 2]), np.zeros(3))
    rotated = base.compose(quarter)
    bound = symmetry_discretisation_bound(cylinder)
    assert add_s(rotated, base, cylinder) <= bound + 1e-12
    assert add(rotated, base, cylinder) > 0.1 * cylinder.diameter


def test_add_accuracy_basics(cube):
    rng = np.random.default_rng(5)
    report = PoseErrorReport()
    p = random_pose(rng)
    for _ in range(4):
        report.record(p, p, cube)
    assert add_accuracy(report, cube) == 100.0


def test_add_accuracy_strict_threshold(cube):
    # an error of exactly 10% of the diameter counts as incorrect (strict <)
    threshold = 0.10 * cube.diameter
    at = PoseErrorReport(add=[threshold], add_s=[threshold],
                         rot_deg=[0.0], trans=[threshold])
    assert add_accuracy(at, cube, threshold_frac=0.10) == 0.0
    under = PoseErrorReport(add=[np.nextafter(threshold, 0.0)],
                            add_s=[threshold], rot_deg=[0.0], trans=[threshold])
    assert add_accuracy(under, cube, threshold_frac=0.10) == 100.0


def test_add_accuracy_empty_rejected(cube):
    with pytest.raises(ValueError):
        add_accuracy(PoseErrorReport(), cube)


def test_psnr_formula_and_identity():
    rng = np.random.default_rng(6)
    img = rng.uniform(size=(8, 8, 3))
    assert psnr(img, img) == float("inf")
    noise = img + 0.1  # MSE = 0.01
    assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.1)) == pytest.approx(20.0)


def test_iou_cases():
    m = (np.random.default_rng(7).uniform(size=(10, 10)) > 0.5).astype(float)
    assert iou(m, m) == 1.0
    a = np.zeros((4, 4))
    b = np.zeros((4, 4))
    a[0, 0] = 1
    b[3, 3] = 1
    assert iou(a, b) == 0.0
    assert iou(np.zeros((4, 4)), np.zeros((4, 4))) == 1.0


def test_report_invariant_adds(cube):
    rng = np.random.default_rng(8)
    report = PoseErrorReport()
    for _ in range(30):
        report.record(random_pose(rng), random_pose(rng), cube)
    assert all(s <= a + 1e-15 for s, a in zip(report.add_s, report.add))
