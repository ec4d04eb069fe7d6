import numpy as np
import pytest

from eventscan.geometry import (
    DegenerateGeometryError,
    DegenerateProjectionError,
    PinholeModel,
    Ray,
    UnstableTriangulationError,
    epipolar_distances,
    fundamental_from_models,
    pixel_to_ray,
    project,
    project_points,
    pixel_directions,
    rigid_transform_model,
    triangulate_rays,
    unit,
)


def random_model(rng, k1=0.0):
    axis = unit(rng.normal(size=3))
    angle = rng.uniform(-0.4, 0.4)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    R = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)
    return PinholeModel(
        fx=rng.uniform(600, 2000),
        fy=rng.uniform(600, 2000),
        cx=rng.uniform(100, 500),
        cy=rng.uniform(100, 500),
        width=640,
        height=640,
        skew=rng.uniform(-1, 1),
        rotation=R,
        translation=rng.uniform(-50, 50, size=3),
        k1=k1,
    )


def test_principal_ray():
    m = PinholeModel(fx=1, fy=1, cx=0, cy=0, width=10, height=10)
    r = pixel_to_ray(m, (0.0, 0.0))
    assert np.allclose(r.origin, 0)
    assert np.allclose(r.direction, [0, 0, 1])


def test_45_degree_pixel():
    m = PinholeModel(fx=100, fy=100, cx=0, cy=0, width=200, height=200)
    r = pixel_to_ray(m, (100.0, 0.0))
    assert np.allclose(r.direction, unit(np.array([1.0, 0.0, 1.0])))


def test_project_on_axis():
    m = PinholeModel(fx=500, fy=500, cx=360, cy=640, width=720, height=1280)
    assert np.allclose(project(m, np.array([0.0, 0.0, 1000.0])), [360, 640])


def test_project_behind_center_raises():
    m = PinholeModel(fx=500, fy=500, cx=100, cy=100, width=200, height=200)
    with pytest.raises(DegenerateProjectionError):
        project(m, np.array([0.0, 0.0, -5.0]))


def test_pixel_to_ray_rejects_nonfinite_and_out_of_bounds():
    m = PinholeModel(fx=500, fy=500, cx=100, cy=100, width=200, height=200)
    with pytest.raises(ValueError):
        pixel_to_ray(m, (np.nan, 0.0))
    with pytest.raises(ValueError):
        pixel_to_ray(m, (250.0, 0.0))
    pixel_to_ray(m, (-1.0, 200.0))  # one pixel of margin is allowed


def test_back_projection_round_trip_contains_point():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m = random_model(rng)
        seed_px = np.array([rng.uniform(0, m.width), rng.uniform(0, m.height)])
        point = m.center + rng.uniform(200, 800) * pixel_directions(m, seed_px[None])[0]
        px = project(m, point)
        ray = pixel_to_ray(m, px)
        # distance from the point to the ray
        v = point - ray.origin
        d = np.linalg.norm(v - (v @ ray.direction) * ray.direction)
        assert d < 1e-6


def test_project_back_project_round_trip_bulk():
    rng = np.random.default_rng(1)
    for k1 in (0.0, 0.05, -0.08):
        m = random_model(rng, k1=k1)
        px = np.stack(
            [rng.uniform(0, m.width, size=4000), rng.uniform(0, m.height, size=4000)], axis=1
        )
        dirs = pixel_directions(m, px)
        points = m.center + dirs * rng.uniform(100, 1000, size=(4000, 1))
        back, ok = project_points(m, points)
        assert ok.all()
        assert np.max(np.linalg.norm(back - px, axis=1)) < 1e-6


def test_fundamental_rectified_pair_gives_horizontal_lines():
    cam = PinholeModel(fx=1, fy=1, cx=0, cy=0, width=10, height=10)
    proj = PinholeModel(fx=1, fy=1, cx=0, cy=0, width=10, height=10, translation=np.array([-1.0, 0, 0]))
    F = fundamental_from_models(cam, proj)
    lines = np.concatenate([np.array([[0.3, 0.7, 1.0]]) @ F.T])
    # horizontal line: zero coefficient on x
    assert abs(lines[0, 0]) < 1e-12
    assert abs(lines[0, 1]) > 0


def test_fundamental_epipolar_residual_random_rigs():
    rng = np.random.default_rng(2)
    for _ in range(100):
        cam = random_model(rng)
        proj = random_model(rng)
        F = fundamental_from_models(cam, proj)
        assert np.linalg.svd(F, compute_uv=False)[2] < 1e-8
        mid = 0.5 * (cam.center + proj.center)
        fwd = unit(cam.rotation.T @ np.array([0.0, 0.0, 1.0]) + proj.rotation.T @ np.array([0.0, 0.0, 1.0]))
        pts = mid + fwd * rng.uniform(300, 900, size=(100, 1)) + rng.normal(0, 40, size=(100, 3))
        pc, okc = project_points(cam, pts)
        pp, okp = project_points(proj, pts)
        ok = okc & okp
        if not ok.any():
            continue
        d = epipolar_distances(F, pp[ok], pc[ok])
        assert d.max() < 1e-6


def test_fundamental_zero_baseline_raises():
    cam = PinholeModel(fx=500, fy=500, cx=100, cy=100, width=200, height=200)
    with pytest.raises(DegenerateGeometryError):
        fundamental_from_models(cam, cam)


def test_triangulate_exact_intersection():
    a = Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]))
    b = Ray(np.array([100.0, 0.0, 0.0]), unit(np.array([-100.0, 0.0, 500.0])))
    point, gap = triangulate_rays(a, b)
    assert np.allclose(point, [0, 0, 500], atol=1e-9)
    assert gap < 1e-9


def test_triangulate_known_skew_gap():
    # construct a skew pair whose mutually closest segment is known: rays
    # along x and y, separated by `off` along z
    rng = np.random.default_rng(3)
    for _ in range(20):
        off = rng.uniform(0.01, 5.0)
        a = Ray(np.array([0.0, -7.0, 0.0]), np.array([0.0, 1.0, 0.0]))
        b = Ray(np.array([-4.0, 0.0, off]), np.array([1.0, 0.0, 0.0]))
        point, gap = triangulate_rays(a, b)
        assert abs(gap - off) < 1e-12
        assert np.allclose(point, [0, 0, off / 2], atol=1e-12)


def test_triangulate_parallel_raises_with_condition():
    a = Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]))
    b = Ray(np.array([5.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]))
    with pytest.raises(UnstableTriangulationError) as exc:
        triangulate_rays(a, b)
    assert exc.value.condition <= 1e-9


def test_triangulate_symmetric():
    rng = np.random.default_rng(4)
    for _ in range(200):
        a = Ray(rng.uniform(-10, 10, 3), unit(rng.normal(size=3)))
        b = Ray(rng.uniform(-10, 10, 3), unit(rng.normal(size=3)))
        if np.linalg.norm(np.cross(a.direction, b.direction)) < 1e-6:
            continue
        p1, g1 = triangulate_rays(a, b)
        p2, g2 = triangulate_rays(b, a)
        assert np.linalg.norm(p1 - p2) < 1e-9
        assert abs(g1 - g2) < 1e-9


def test_model_validation():
    with pytest.raises(ValueError):
        PinholeModel(fx=-1, fy=1, cx=0, cy=0, width=4, height=4)
    with pytest.raises(ValueError):
        PinholeModel(fx=1, fy=1, cx=9, cy=0, width=4, height=4)
    with pytest.raises(ValueError):
        PinholeModel(fx=1, fy=1, cx=0, cy=0, width=4, height=4, rotation=np.eye(3) * 2)
    with pytest.raises(ValueError):
        Ray(np.zeros(3), np.array([0.0, 0.0, 2.0]))


def test_rigid_transform_model_reprojects():
    rng = np.random.default_rng(5)
    m = random_model(rng)
    axis = unit(rng.normal(size=3))
    ang = 0.3
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    R = np.eye(3) + np.sin(ang) * K + (1 - np.cos(ang)) * (K @ K)
    t = rng.uniform(-20, 20, 3)
    moved = rigid_transform_model(m, R, t)
    pts = m.center + rng.uniform(100, 400, (50, 1)) * pixel_directions(m, np.stack([rng.uniform(0, m.width, 50), rng.uniform(0, m.height, 50)], axis=1))
    before, _ = project_points(m, pts)
    after, _ = project_points(moved, pts @ R.T + t)
    assert np.allclose(before, after, atol=1e-8)
