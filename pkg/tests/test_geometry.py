import numpy as np
import pytest
from scipy.spatial import ConvexHull

from reflectmap.errors import DegenerateInput, InsufficientPoints
from reflectmap.geometry import (BoundaryHull, Plane, PlaneKind, Pose,
                                 convex_hull_2d, fit_plane_least_squares,
                                 fit_plane_ransac, hull_overlap_ratio,
                                 merge_hulls, mirror_points, plane_basis,
                                 point_in_hull, polygon_area,
                                 project_to_hull_frame, ray_plane_intersection,
                                 transform_plane)


def random_plane(rng):
    n = rng.normal(size=3)
    return Plane(n / np.linalg.norm(n), rng.uniform(0.0, 5.0))


def square_hull(plane=None, size=1.0, offset=(0.0, 0.0)):
    plane = plane or Plane(np.array([0.0, 0.0, 1.0]), 0.0)
    u, v = plane_basis(plane)
    ox, oy = offset
    verts = np.array([[ox, oy], [ox + size, oy],
                      [ox + size, oy + size], [ox, oy + size]])
    return BoundaryHull(plane, u, v, verts)


class TestPlane:
    def test_sign_convention_flips_negative_d(self):
        p = Plane(np.array([0.0, 0.0, 1.0]), -1.0)
        assert p.d == pytest.approx(1.0)
        np.testing.assert_allclose(p.normal, [0.0, 0.0, -1.0])

    def test_normalizes_scale(self):
        p = Plane(np.array([0.0, 0.0, 2.0]), 4.0)
        assert p.d == pytest.approx(2.0)
        assert np.linalg.norm(p.normal) == pytest.approx(1.0, abs=1e-12)

    def test_d_nonnegative_on_random_inputs(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            p = Plane(rng.normal(size=3), rng.normal())
            assert p.d >= 0.0
            assert np.linalg.norm(p.normal) == pytest.approx(1.0, abs=1e-9)

    def test_zero_d_orientation_deterministic(self):
        p = Plane(np.array([0.0, -1.0, 0.0]), 0.0)
        assert p.normal[1] == 1.0


class TestMirror:
    def test_point_at_distance_two(self):
        m = mirror_points(np.zeros(3), Plane(np.array([1.0, 0.0, 0.0]), 2.0))
        np.testing.assert_allclose(m, [-4.0, 0.0, 0.0])

    def test_point_on_plane_fixed(self):
        m = mirror_points(np.array([0.0, -1.0, 0.0]),
                          Plane(np.array([0.0, 1.0, 0.0]), 1.0))
        np.testing.assert_allclose(m, [0.0, -1.0, 0.0])

    def test_involution(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            plane = random_plane(rng)
            pts = rng.normal(scale=5.0, size=(10, 3))
            back = mirror_points(mirror_points(pts, plane), plane)
            assert np.max(np.abs(back - pts)) <= 1e-12

    def test_isometry(self):
        rng = np.random.default_rng(2)
        plane = random_plane(rng)
        pts = rng.normal(scale=3.0, size=(20, 3))
        mirrored = mirror_points(pts, plane)
        d0 = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
        d1 = np.linalg.norm(mirrored[:, None] - mirrored[None, :], axis=-1)
        assert np.max(np.abs(d0 - d1)) <= 1e-9


class TestRayPlane:
    def test_forward_hit(self):
        hit = ray_plane_intersection(np.zeros(3), np.array([1.0, 0.0, 0.0]),
                                     Plane(np.array([-1.0, 0.0, 0.0]), 5.0))
        assert hit is not None
        t, point = hit
        assert t == pytest.approx(5.0)
        np.testing.assert_allclose(point, [5.0, 0.0, 0.0])

    def test_parallel_ray(self):
        assert ray_plane_intersection(np.zeros(3), np.array([0.0, 1.0, 0.0]),
                                      Plane(np.array([-1.0, 0.0, 0.0]), 5.0)) is None

    def test_backward_intersection(self):
        assert ray_plane_intersection(np.zeros(3), np.array([-1.0, 0.0, 0.0]),
                                      Plane(np.array([-1.0, 0.0, 0.0]), 5.0)) is None


class TestHullFrame:
    def test_foot_point_maps_to_origin(self):
        hull = square_hull(Plane(np.array([0.0, 1.0, 0.0]), 2.0))
        np.testing.assert_allclose(
            project_to_hull_frame(hull, hull.plane.foot_point()), [0.0, 0.0],
            atol=1e-12)

    def test_basis_u_maps_to_unit(self):
        hull = square_hull(Plane(np.array([0.0, 1.0, 0.0]), 2.0))
        p = hull.plane.foot_point() + hull.basis_u
        np.testing.assert_allclose(project_to_hull_frame(hull, p), [1.0, 0.0],
                                   atol=1e-12)

    def test_lift_project_round_trip(self):
        rng = np.random.default_rng(3)
        plane = random_plane(rng)
        hull = BoundaryHull.from_points(plane, rng.normal(size=(12, 3)) * 2.0)
        uv = rng.normal(size=(30, 2))
        lifted = hull.lift(uv)
        back = np.array([project_to_hull_frame(hull, p) for p in lifted])
        assert np.max(np.abs(back - uv)) <= 1e-9

    def test_point_in_hull(self):
        hull = square_hull()
        assert point_in_hull(hull, np.array([0.5, 0.5]))
        assert not point_in_hull(hull, np.array([1.5, 0.5]))
        assert point_in_hull(hull, np.array([0.0, 0.0]))  # vertex, inclusive


class TestConvexHull:
    def test_square_with_interior_points(self):
        corners = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        rng = np.random.default_rng(4)
        pts = np.vstack([corners, rng.uniform(0.1, 0.9, size=(40, 2))])
        hull = convex_hull_2d(pts)
        assert hull.shape == (4, 2)
        assert {tuple(v) for v in hull} == {tuple(c) for c in corners}

    def test_three_points_ccw(self):
        hull = convex_hull_2d([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]])
        assert hull.shape == (3, 2)
        assert polygon_area(hull) == pytest.approx(2.0)

    def test_random_points_contained(self):
        # oracle: every input inside the hull, hull vertices are inputs, and
        # the area matches an independent qhull computation
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(200, 2)) * 3.0
        hull = convex_hull_2d(pts)
        bh = BoundaryHull(Plane(np.array([0.0, 0.0, 1.0]), 0.0),
                          np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]),
                          hull)
        assert all(point_in_hull(bh, p, tol=1e-9) for p in pts)
        input_set = {tuple(p) for p in pts}
        assert all(tuple(v) in input_set for v in hull)
        assert polygon_area(hull) == pytest.approx(ConvexHull(pts).volume)

    def test_collinear_raises(self):
        pts = [[float(i), 2.0 * i] for i in range(10)]
        with pytest.raises(DegenerateInput):
            convex_hull_2d(pts)


class TestPolygonArea:
    def test_unit_square(self):
        assert polygon_area([[0, 0], [1, 0], [1, 1], [0, 1]]) == pytest.approx(1.0)

    def test_triangle(self):
        assert polygon_area([[0, 0], [2, 0], [0, 2]]) == pytest.approx(2.0)

    def test_rotation_of_vertex_list(self):
        verts = np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [0.0, 1.0]])
        for k in range(4):
            assert polygon_area(np.roll(verts, k, axis=0)) == pytest.approx(2.0)


class TestHullOverlap:
    def test_identical(self):
        h = square_hull()
        assert hull_overlap_ratio(h, h) == pytest.approx(1.0)

    def test_offset_squares_analytic_and_monte_carlo(self):
        a = square_hull()
        b = square_hull(offset=(0.5, 0.5))
        ratio = hull_overlap_ratio(a, b)
        assert ratio == pytest.approx(0.25, abs=1e-12)
        # Monte-Carlo cross-check over the bounding box of both hulls
        rng = np.random.default_rng(6)
        samples = rng.uniform(0.0, 1.5, size=(1_000_000, 2))
        inside = np.all((samples >= [0.5, 0.5]) & (samples <= [1.0, 1.0]), axis=1)
        mc_area = 1.5 * 1.5 * inside.mean()
        assert ratio == pytest.approx(mc_area / 1.0, abs=1e-2)

    def test_disjoint(self):
        assert hull_overlap_ratio(square_hull(), square_hull(offset=(3.0, 0.0))) == 0.0

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(7)
        plane = Plane(np.array([0.0, 0.0, 1.0]), 1.0)
        for _ in range(20):
            a = BoundaryHull.from_points(
                plane, np.column_stack([rng.normal(size=(10, 2)) * 2.0,
                                        np.full(10, -1.0)]))
            b = BoundaryHull.from_points(
                plane, np.column_stack([rng.normal(size=(10, 2)) * 2.0,
                                        np.full(10, -1.0)]))
            r_ab = hull_overlap_ratio(a, b)
            r_ba = hull_overlap_ratio(b, a)
            assert 0.0 <= r_ab <= 1.0
            assert abs(r_ab - r_ba) <= 1e-9


class TestMergeHulls:
    def test_self_merge_identity(self):
        h = square_hull()
        merged = merge_hulls(h, h, h.plane)
        assert {tuple(np.round(v, 9)) for v in merged.vertices} \
            == {tuple(np.round(v, 9)) for v in h.vertices}

    def test_adjacent_squares(self):
        a = square_hull()
        b = square_hull(offset=(1.0, 0.0))
        merged = merge_hulls(a, b, a.plane)
        assert merged.area() == pytest.approx(2.0)

    def test_inputs_contained(self):
        rng = np.random.default_rng(8)
        plane = Plane(np.array([0.0, 0.0, 1.0]), 2.0)
        for _ in range(20):
            mk = lambda: BoundaryHull.from_points(
                plane, np.column_stack([rng.normal(size=(8, 2)) * 2.0,
                                        np.full(8, -2.0)]))
            a, b = mk(), mk()
            merged = merge_hulls(a, b, plane)
            assert merged.area() >= max(a.area(), b.area()) - 1e-9
            for hull in (a, b):
                for v in hull.lift():
                    uv = project_to_hull_frame(merged, v)
                    assert point_in_hull(merged, uv, tol=1e-7)


class TestTransformPlane:
    def test_identity(self):
        p = Plane(np.array([0.0, 1.0, 0.0]), 3.0, PlaneKind.REFLECTIVE)
        q = transform_plane(p, Pose.identity())
        np.testing.assert_allclose(q.normal, p.normal)
        assert q.d == pytest.approx(p.d)
        assert q.kind == p.kind

    def test_translation_moves_offset(self):
        # plane x = 5 translated by +1 along x becomes x = 6; oracle: move
        # three sample points and refit
        p = Plane(np.array([-1.0, 0.0, 0.0]), 5.0)
        pose = Pose(np.eye(3), np.array([1.0, 0.0, 0.0]))
        q = transform_plane(p, pose)
        assert q.d == pytest.approx(6.0)
        samples = np.array([[5.0, 0.0, 0.0], [5.0, 1.0, 0.0], [5.0, 0.0, 1.0]])
        refit = fit_plane_least_squares(pose.apply(samples))
        assert abs(float(refit.normal @ q.normal)) == pytest.approx(1.0, abs=1e-9)
        assert refit.d == pytest.approx(q.d, abs=1e-9)

    def test_composition(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            p = random_plane(rng)
            t1 = Pose.from_vec6(np.concatenate([rng.normal(size=3) * 0.5,
                                                rng.normal(size=3) * 0.3]))
            t2 = Pose.from_vec6(np.concatenate([rng.normal(size=3) * 0.5,
                                                rng.normal(size=3) * 0.3]))
            a = transform_plane(transform_plane(p, t1), t2)
            b = transform_plane(p, t2.compose(t1))
            np.testing.assert_allclose(a.normal, b.normal, atol=1e-9)
            assert a.d == pytest.approx(b.d, abs=1e-9)

    def test_points_stay_on_transformed_plane(self):
        rng = np.random.default_rng(10)
        for _ in range(30):
            p = random_plane(rng)
            u, v = plane_basis(p)
            pts = p.foot_point() + np.outer(rng.normal(size=8), u) \
                + np.outer(rng.normal(size=8), v)
            pose = Pose.from_vec6(np.concatenate([rng.normal(size=3),
                                                  rng.normal(size=3) * 0.4]))
            q = transform_plane(p, pose)
            assert np.max(np.abs(q.signed_distance(pose.apply(pts)))) <= 1e-9


class TestRansac:
    def test_exact_horizontal_plane(self):
        rng = np.random.default_rng(11)
        pts = np.column_stack([rng.uniform(-3, 3, size=(100, 2)),
                               np.ones(100)])
        plane, inliers = fit_plane_ransac(pts, 0.01, 50, 200, rng_seed=0)
        np.testing.assert_allclose(plane.normal, [0.0, 0.0, -1.0], atol=1e-9)
        assert plane.d == pytest.approx(1.0, abs=1e-9)
        assert inliers.size == 100

    def test_outlier_rejection(self):
        rng = np.random.default_rng(12)
        n = rng.normal(size=3)
        truth = Plane(n, 2.0)
        u, v = plane_basis(truth)
        good = truth.foot_point() + np.outer(rng.uniform(-2, 2, 80), u) \
            + np.outer(rng.uniform(-2, 2, 80), v)
        bad = rng.uniform(-5, 5, size=(20, 3))
        pts = np.vstack([good, bad])
        plane, inliers = fit_plane_ransac(pts, 0.05, 50, 500, rng_seed=1)
        assert inliers.size >= 80
        cos = abs(float(plane.normal @ truth.normal))
        assert np.degrees(np.arccos(min(cos, 1.0))) <= 1.0

    def test_collinear_returns_none(self):
        pts = np.array([[float(i), 2.0 * i, -i] for i in range(10)])
        assert fit_plane_ransac(pts, 0.05, 3, 100, rng_seed=2) is None

    def test_too_few_points(self):
        with pytest.raises(InsufficientPoints):
            fit_plane_ransac(np.zeros((2, 3)), 0.05, 3, 10, rng_seed=0)

    def test_deterministic(self):
        rng = np.random.default_rng(13)
        pts = np.column_stack([rng.uniform(-3, 3, size=(300, 2)),
                               rng.normal(scale=0.01, size=300)])
        a = fit_plane_ransac(pts, 0.05, 100, 300, rng_seed=42)
        b = fit_plane_ransac(pts, 0.05, 100, 300, rng_seed=42)
        np.testing.assert_array_equal(a[1], b[1])
        np.testing.assert_allclose(a[0].normal, b[0].normal, atol=0)
        assert a[0].d == b[0].d


class TestPoseVec6:
    def test_round_trip(self):
        rng = np.random.default_rng(14)
        for _ in range(100):
            vec = np.concatenate([rng.normal(size=3) * 2.0,
                                  rng.uniform(-1.5, 1.5, size=3)])
            back = Pose.from_vec6(vec).to_vec6()
            assert np.max(np.abs(back - vec)) <= 1e-9

    def test_rotation_order(self):
        # rz applied last: a pure rz rotation maps +x to +y
        pose = Pose.from_vec6(np.array([0, 0, 0, 0, 0, np.pi / 2]))
        np.testing.assert_allclose(pose.apply(np.array([1.0, 0.0, 0.0])),
                                   [0.0, 1.0, 0.0], atol=1e-12)

    def test_orthonormality(self):
        rng = np.random.default_rng(15)
        for _ in range(50):
            pose = Pose.from_vec6(np.concatenate([rng.normal(size=3),
                                                  rng.uniform(-1.5, 1.5, 3)]))
            err = np.max(np.abs(pose.rotation.T @ pose.rotation - np.eye(3)))
            assert err <= 1e-9
            assert np.linalg.det(pose.rotation) == pytest.approx(1.0, abs=1e-9)
