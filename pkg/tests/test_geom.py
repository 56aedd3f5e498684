import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from texpose import geom
from texpose.geom import (
    Camera,
    Pose,
    default_camera,
    generate_ray,
    make_blob,
    make_cube,
    make_cylinder,
    make_sphere,
    nocs,
    nocs_inverse,
    render_oracle,
)


def random_pose(rng):
    w = rng.normal(size=3)
    return Pose(geom.exp_so3(w), rng.normal(size=3) * 0.1)


@pytest.fixture(scope="module")
def cube():
    return make_cube(side=0.1)


@pytest.fixture(scope="module")
def sphere():
    return make_sphere(radius=0.05, subdivisions=3)


# --- poses ---------------------------------------------------------------------


def test_compose_with_inverse_is_identity():
    rng = np.random.default_rng(0)
    t = random_pose(rng)
    ident = t.compose(t.invert())
    assert np.max(np.abs(ident.rotation - np.eye(3))) < 1e-12
    assert np.max(np.abs(ident.translation)) < 1e-12


def test_compose_identity_neutral():
    rng = np.random.default_rng(1)
    t = random_pose(rng)
    out = geom.identity().compose(t)
    assert np.allclose(out.rotation, t.rotation)
    assert np.allclose(out.translation, t.translation)


def test_two_quarter_turns_make_half_turn():
    quarter = Pose(geom.exp_so3([0, 0, np.pi / 2]), np.zeros(3))
    half = quarter.compose(quarter)
    expected = geom.exp_so3([0, 0, np.pi])
    assert np.max(np.abs(half.rotation - expected)) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_pose_group_properties(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_pose(rng) for _ in range(3))
    ab_c = a.compose(b).compose(c)
    a_bc = a.compose(b.compose(c))
    assert np.max(np.abs(ab_c.rotation - a_bc.rotation)) < 1e-10
    assert np.max(np.abs(ab_c.translation - a_bc.translation)) < 1e-10
    # closure keeps the invariants
    r = ab_c.rotation
    assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-9
    assert abs(np.linalg.det(r) - 1) < 1e-9


def test_pose_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        Pose(np.eye(3) * 1.01, np.zeros(3))


def test_perturb_zero_sigma_is_identity_map():
    rng = np.random.default_rng(2)
    t = random_pose(rng)
    out = geom.perturb(t, 0.0, 0.0, rng)
    assert np.array_equal(out.rotation, t.rotation)
    assert np.array_equal(out.translation, t.translation)


def test_perturb_mean_geodesic_error_half_normal():
    rng = np.random.default_rng(3)
    base = geom.identity()
    errs = [geom.geodesic_deg(geom.perturb(base, 5.0, 0.0, rng).rotation,
                              base.rotation)
            for _ in range(10_000)]
    mean = float(np.mean(errs))
    # half-normal mean is sigma * sqrt(2/pi) = 3.99 deg
    assert 3.5 <= mean <= 4.5


def test_perturb_preserves_invariants():
    rng = np.random.default_rng(4)
    t = random_pose(rng)
    out = geom.perturb(t, 20.0, 0.05, rng)
    r = out.rotation
    assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-9


# --- rays ------------------------------------------------------------------------


def test_principal_point_ray_is_forward():
    cam = default_camera(64, 150.0)
    ray = generate_ray(cam, geom.identity(), cam.cx, cam.cy, bound_radius=1.0)
    assert np.allclose(ray.direction, [0.0, 0.0, 1.0], atol=1e-12)


def test_ray_directions_unit_norm():
    cam = default_camera(64, 150.0)
    rng = np.random.default_rng(5)
    pose = random_pose(rng)
    for _ in range(20):
        px, py = rng.uniform(0, 64, size=2)
        ray = generate_ray(cam, pose, px, py, bound_radius=1.0)
        assert abs(np.linalg.norm(ray.direction) - 1.0) < 1e-9


def test_bounding_sphere_clip():
    cam = default_camera(64, 150.0)
    pose = Pose(np.eye(3), [0.0, 0.0, 1.0])  # object 1 m ahead
    ray = generate_ray(cam, pose, cam.cx, cam.cy, bound_radius=0.1)
    assert ray.hits_bound
    assert ray.t_near == pytest.approx(0.9, abs=1e-9)
    assert ray.t_far == pytest.approx(1.1, abs=1e-9)


def test_ray_missing_bounding_sphere_flagged():
    cam = default_camera(64, 150.0)
    pose = Pose(np.eye(3), [0.0, 0.0, 1.0])
    ray = generate_ray(cam, pose, 0.5, 0.5, bound_radius=0.01)
    assert not ray.hits_bound


def test_generate_ray_rejects_outside_pixels():
    cam = default_camera(64, 150.0)
    with pytest.raises(ValueError):
        generate_ray(cam, geom.identity(), -5.0, 3.0, bound_radius=1.0)


# --- raycasting --------------------------------------------------------------------


def test_cube_axis_ray_exact_face_distance(cube):
    ray = geom.Ray(origin=np.array([0.0, 0.0, -1.0]),
                   direction=np.array([0.0, 0.0, 1.0]),
                   t_near=0.0, t_far=2.0)
    hit = geom.raycast(cube, ray)
    assert hit is not None
    assert hit.t == pytest.approx(1.0 - 0.05, abs=1e-12)
    assert np.allclose(hit.normal, [0, 0, -1])


def test_parallel_outside_ray_misses(cube):
    ray = geom.Ray(origin=np.array([0.0, 0.3, -1.0]),
                   direction=np.array([0.0, 0.0, 1.0]),
                   t_near=0.0, t_far=5.0)
    assert geom.raycast(cube, ray) is None


def test_sphere_mesh_depth_close_to_analytic():
    model = make_sphere(radius=0.05, subdivisions=4)  # 2562 vertices
    assert len(model.vertices) == 2562
    rng = np.random.default_rng(6)
    for _ in range(25):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        origin = -d * 0.4
        jitter = rng.normal(size=3) * 0.01
        jitter -= d * np.dot(jitter, d)
        origin = origin + jitter
        b = -np.dot(origin, d)
        disc = b * b - (np.dot(origin, origin) - 0.05 ** 2)
        if disc <= 0:
            continue
        t_true = b - np.sqrt(disc)
        t, _, hit = geom.raycast_batch(model, origin[None], d[None])
        assert hit[0]
        assert abs(t[0] - t_true) <= 0.01 * 0.05  # within 1% of radius


# --- oracle renders -----------------------------------------------------------------


def test_object_behind_camera_all_empty(cube):
    cam = default_camera(32, 100.0)
    pose = Pose(np.eye(3), [0.0, 0.0, -1.0])
    out = render_oracle(cube, cam, pose)
    assert out.mask.sum() == 0
    assert out.colour.sum() == 0


def test_sphere_mask_area_matches_projection(sphere):
    cam = default_camera(64, 190.0)
    z = 0.45
    pose = Pose(np.eye(3), [0.0, 0.0, z])
    out = render_oracle(sphere, cam, pose)
    expected = np.pi * (190.0 * 0.05 / z) ** 2
    assert abs(out.mask.sum() - expected) / expected < 0.05


def test_cube_face_depth_exact(cube):
    cam = default_camera(64, 190.0)
    pose = Pose(np.eye(3), [0.0, 0.0, 0.5])
    out = render_oracle(cube, cam, pose)
    cy, cx = 32, 32
    assert out.mask[cy, cx] == 1
    # analytic: ray through the pixel centre meets the face plane z = 0.45
    d = cam.directions(cx + 0.5, cy + 0.5)
    expected = 0.45 / d[2]
    assert out.depth[cy, cx] == pytest.approx(expected, abs=1e-6)


def test_depth_mask_consistency(sphere):
    cam = default_camera(48, 140.0)
    rng = np.random.default_rng(7)
    for _ in range(3):
        pose = geom.sample_view_sphere(rng, (0.35, 0.55))
        out = render_oracle(sphere, cam, pose)
        assert np.array_equal(out.depth > 0, out.mask == 1)


def test_oracle_render_deterministic(sphere):
    cam = default_camera(32, 100.0)
    pose = Pose(np.eye(3), [0.0, 0.0, 0.45])
    a = render_oracle(sphere, cam, pose)
    b = render_oracle(sphere, cam, pose)
    assert a.colour.tobytes() == b.colour.tobytes()
    assert a.depth.tobytes() == b.depth.tobytes()


def test_surfels_unit_normals_on_foreground(sphere):
    cam = default_camera(32, 100.0)
    pose = Pose(np.eye(3), [0.0, 0.0, 0.45])
    out = render_oracle(sphere, cam, pose)
    fg = out.mask == 1
    norms = np.linalg.norm(out.surfel_n[fg], axis=-1)
    assert np.all(np.abs(norms - 1.0) < 1e-6)
    assert np.all(out.surfel_x[fg] >= 0) and np.all(out.surfel_x[fg] <= 1)
    assert np.all(out.surfel_n[~fg] == 0)


# --- nocs -------------------------------------------------------------------------


def test_nocs_centre_and_corner(cube):
    assert np.allclose(nocs(cube, np.zeros(3)), [0.5, 0.5, 0.5])
    assert np.allclose(nocs(cube, cube.bbox_min), [0.0, 0.0, 0.0])


def test_nocs_formula_by_hand():
    model = make_cube(side=0.1)
    out = nocs(model, np.array([0.05, 0.05, -0.05]))
    assert np.allclose(out, [1.0, 1.0, 0.0])


def test_nocs_outside_raises(cube):
    with pytest.raises(ValueError):
        nocs(cube, np.array([1.0, 0.0, 0.0]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_nocs_bijection(seed):
    model = make_blob(seed=5)
    rng = np.random.default_rng(seed)
    p = rng.uniform(model.bbox_min, model.bbox_max)
    assert np.max(np.abs(nocs_inverse(model, nocs(model, p)) - p)) < 1e-12


# --- models ------------------------------------------------------------------------


@pytest.mark.parametrize("maker", [make_cube, make_sphere, make_cylinder, make_blob])
def test_generators_watertight_and_diameter(maker):
    model = maker()
    assert model.is_watertight()
    # diameter is verified as the max pairwise vertex distance
    v = model.vertices
    step = 200
    best = 0.0
    for i in range(0, len(v), step):
        d2 = np.sum((v[i:i + step, None, :] - v[None, :, :]) ** 2, axis=-1)
        best = max(best, float(d2.max()))
    assert model.diameter == pytest.approx(np.sqrt(best), rel=1e-12)


def test_cylinder_symmetry_group_size():
    model = make_cylinder()
    assert len(model.symmetry_group) == 36


def test_obj_roundtrip(tmp_path, cube):
    path = tmp_path / "cube.obj"
    geom.io.save_obj(path, cube.vertices, cube.triangles)
    verts, tris = geom.io.load_obj(path)
    assert np.allclose(verts, cube.vertices)
    assert np.array_equal(tris, cube.triangles)


def test_png_pfm_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    img = rng.uniform(size=(16, 16, 3))
    geom.io.save_png(tmp_path / "img.png", img)
    back = geom.io.load_png(tmp_path / "img.png")
    assert np.max(np.abs(back - img)) < 1.0 / 255.0
    depth = rng.uniform(0.1, 2.0, size=(16, 16))
    geom.io.save_pfm(tmp_path / "d.pfm", depth)
    back_d = geom.io.load_pfm(tmp_path / "d.pfm")
    assert np.max(np.abs(back_d - depth)) < 1e-6
