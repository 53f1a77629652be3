import numpy as np
import pytest

from thor import mesh as M
from thor.qecd import qecd_simplify
from thor.rng import Rng


TRI = M.Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])


class TestMeshType:
    def test_face_index_out_of_range(self):
        with pytest.raises(M.MeshError):
            M.Mesh([[0, 0, 0]], [[0, 0, 1]])

    def test_degenerate_face_rejected(self):
        with pytest.raises(M.MeshError):
            M.Mesh(np.zeros((3, 3)), [[0, 1, 1]])

    def test_colors_length_checked(self):
        with pytest.raises(M.MeshError):
            M.Mesh(np.zeros((3, 3)), [[0, 1, 2]], colors=np.zeros((2, 3)))

    def test_colors_range_checked(self):
        with pytest.raises(M.MeshError):
            M.Mesh(np.zeros((3, 3)), [[0, 1, 2]], colors=np.full((3, 3), 1.5))


class TestObjIO:
    def test_round_trip_single_triangle(self, tmp_path):
        path = tmp_path / "tri.obj"
        M.write_obj(path, TRI)
        back = M.read_obj(path)
        assert np.array_equal(back.vertices, TRI.vertices)
        assert np.array_equal(back.faces, TRI.faces)

    def test_round_trip_9_significant_digits(self, tmp_path):
        rng = Rng(12)
        verts = np.asarray(rng.normal((30, 3), std=7.3))
        m = M.Mesh(verts, [[0, 1, 2]])
        path = tmp_path / "m.obj"
        M.write_obj(path, m)
        back = M.read_obj(path)
        expected = np.array([[float(f"{x:.9g}") for x in row] for row in verts])
        assert np.array_equal(back.vertices, expected)

    def test_quad_face_rejected_with_line_number(self, tmp_path):
        path = tmp_path / "quad.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        with pytest.raises(M.MeshError) as e:
            M.read_obj(path)
        assert ":5:" in str(e.value)

    def test_colored_round_trip(self, tmp_path):
        rng = Rng(3)
        colors = np.asarray(rng.uniform((3, 3)))
        m = M.Mesh(TRI.vertices, TRI.faces, colors)
        path = tmp_path / "c.obj"
        M.write_obj(path, m)
        back = M.read_obj(path)
        assert np.max(np.abs(back.colors - colors)) < 1e-6


class TestPlyIO:
    def test_round_trip(self, tmp_path):
        rng = Rng(8)
        m = M.Mesh(np.asarray(rng.normal((4, 3))), [[0, 1, 2], [0, 2, 3]],
                   colors=np.asarray(rng.uniform((4, 3))))
        path = tmp_path / "m.ply"
        M.write_ply(path, m)
        back = M.read_ply(path)
        assert np.max(np.abs(back.vertices - m.vertices)) < 1e-8
        assert np.max(np.abs(back.colors - m.colors)) < 1e-6
        assert np.array_equal(back.faces, m.faces)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.ply"
        path.write_text("not a ply\n")
        with pytest.raises(M.MeshError):
            M.read_ply(path)

    def test_mesh_io_dispatch(self, tmp_path):
        path = tmp_path / "t.obj"
        M.mesh_io(path, "write", TRI)
        back = M.mesh_io(path, "read")
        assert back.num_vertices == 3


class TestIcosphere:
    @pytest.mark.parametrize("level,nv,nf", [(0, 12, 20), (1, 42, 80), (2, 162, 320),
                                             (3, 642, 1280), (4, 2562, 5120)])
    def test_counts(self, level, nv, nf):
        m = M.icosphere(level)
        assert m.num_vertices == nv
        assert m.num_faces == nf

    def test_unit_norms(self):
        m = M.icosphere(2)
        assert np.max(np.abs(np.linalg.norm(m.vertices, axis=1) - 1.0)) < 1e-12

    def test_euler_characteristic(self):
        assert M.icosphere(2).euler_characteristic() == 2

    def test_closed_manifold_and_outward(self):
        m = M.icosphere(1)
        assert m.is_closed_manifold()
        assert m.volume() > 0  # consistent CCW outward orientation


class TestSampling:
    def test_points_inside_triangle_plane(self):
        pts, _, _ = M.sample_surface(TRI, 50, Rng(0))
        assert np.max(np.abs(pts[:, 2])) < 1e-12
        assert np.all(pts[:, 0] >= -1e-12) and np.all(pts[:, 1] >= -1e-12)
        assert np.all(pts[:, 0] + pts[:, 1] <= 1 + 1e-12)

    def test_unit_square_monte_carlo_mean(self):
        square = M.Mesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]],
                        [[0, 1, 2], [0, 2, 3]])
        pts = M.sample_points_from_faces(square, 10000, seed=5)
        assert np.max(np.abs(pts.mean(axis=0) - [0.5, 0.5, 0.0])) < 0.02

    def test_same_seed_identical(self):
        a = M.sample_points_from_faces(TRI, 100, seed=9)
        b = M.sample_points_from_faces(TRI, 100, seed=9)
        assert np.array_equal(a, b)

    def test_zero_area_rejected(self):
        flat = M.Mesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
        with pytest.raises(M.MeshError):
            M.sample_surface(flat, 10, Rng(0))


class TestPointTriangleDistance:
    def test_against_brute_force_samples(self):
        rng = Rng(77)
        m = M.icosphere(1)
        pts = np.asarray(rng.normal((40, 3), std=1.5))
        dist = M.points_to_triangles_distance(pts, m.vertices, m.faces)
        dense, _, _ = M.sample_surface(m, 60000, Rng(1))
        for i, p in enumerate(pts):
            approx = np.linalg.norm(dense - p, axis=1).min()
            assert dist[i] <= approx + 1e-9
            assert dist[i] >= approx - 0.02  # sample spacing slack

    def test_exact_cases(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]])
        faces = np.array([[0, 1, 2]])
        d = M.points_to_triangles_distance(np.array([[0.2, 0.2, 1.0],
                                                     [2.0, 0.0, 0.0],
                                                     [0.5, 0.5, 0.0]]), verts, faces)
        assert abs(d[0] - 1.0) < 1e-12
        assert abs(d[1] - 1.0) < 1e-12
        assert abs(d[2] - 0.0) < 1e-12


class TestQecd:
    def test_noop_at_current_count(self):
        m = M.icosphere(1)
        out = qecd_simplify(m, m.num_vertices)
        assert np.array_equal(out.vertices, m.vertices)
        assert np.array_equal(out.faces, m.faces)

    def test_sphere_642_to_194(self):
        out = qecd_simplify(M.icosphere(3), 194)
        assert out.num_vertices == 194
        assert out.is_closed_manifold()
        assert out.euler_characteristic() == 2

    def test_sphere_2562_to_1000(self):
        out = qecd_simplify(M.icosphere(4), 1000)
        assert out.num_vertices == 1000
        assert out.is_closed_manifold()
        assert out.euler_characteristic() == 2
        assert M.hausdorff_to_unit_sphere(out) <= 0.05

    def test_open_mesh_rejected(self):
        with pytest.raises(M.MeshError):
            qecd_simplify(TRI, 3)

    def test_target_above_current_rejected(self):
        with pytest.raises(M.MeshError):
            qecd_simplify(M.icosphere(0), 20)

    def test_collapse_cost_never_negative(self):
        # decimation of a noisy sphere keeps positions finite and mesh valid
        rng = Rng(5)
        m = M.icosphere(2)
        verts = m.vertices * (1.0 + 0.05 * np.asarray(rng.normal((m.num_vertices, 1))))
        out = qecd_simplify(M.Mesh(verts, m.faces), 40)
        assert out.num_vertices == 40
        assert np.all(np.isfinite(out.vertices))
        assert out.is_closed_manifold()


class TestToyHand:
    def test_vertex_count_and_manifold(self):
        hand = M.toy_hand_mesh(seed=0)
        assert hand.num_vertices == 778
        assert hand.is_closed_manifold()
        assert hand.euler_characteristic() == 2

    def test_decimates_to_levels(self):
        hand = M.toy_hand_mesh(seed=0)
        lvl2 = qecd_simplify(hand, 194)
        lvl1 = qecd_simplify(lvl2, 49)
        assert lvl2.num_vertices == 194
        assert lvl1.num_vertices == 49
        assert lvl1.is_closed_manifold() and lvl2.is_closed_manifold()

    def test_joints_inside_plausible_extent(self):
        joints = M.hand_joint_positions()
        assert joints.shape == (21, 3)
        hand = M.toy_hand_mesh(seed=0)
        lo = hand.vertices.min(axis=0) - 0.15
        hi = hand.vertices.max(axis=0) + 0.15
        assert np.all(joints >= lo) and np.all(joints <= hi)
