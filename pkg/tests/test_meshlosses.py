import numpy as np
import pytest

from thor import meshlosses as ML
from thor.gradcheck import grad_check
from thor.mesh import Mesh, cube_mesh, icosphere, sample_points_from_faces
from thor.rng import Rng
from thor.tensor import Tensor


def small_sphere():
    return icosphere(1)  # 42 vertices


class TestChamfer:
    def test_identical_point_sets_zero(self):
        pts = np.asarray(Rng(0).normal((50, 3)))
        loss = ML.chamfer_loss(Tensor(pts), pts)
        assert float(loss.data) == 0.0

    def test_two_point_analytic(self):
        loss = ML.chamfer_loss(Tensor([[0.0, 0.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]))
        assert abs(float(loss.data) - 2.0) < 1e-15

    def test_empty_target_rejected(self):
        with pytest.raises(ML.MeshError):
            ML.chamfer_loss(Tensor(np.zeros((3, 3))), np.zeros((0, 3)))

    def test_vertex_sampling_mode_self_zero(self):
        m = small_sphere()
        terms = ML.mesh_losses(Tensor(m.vertices), m.faces, m.vertices,
                               sample_mode="vertices")
        assert float(terms["chamfer"].data) == 0.0


class TestRegularizers:
    def test_coplanar_normal_consistency_zero(self):
        # two triangles in one plane
        verts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0.0]])
        faces = np.array([[0, 1, 2], [0, 2, 3]])
        ctx = ML.MeshLossContext(faces, 4)
        loss = ML.normal_consistency_loss(Tensor(verts), ctx)
        assert float(loss.data) < 1e-12

    def test_edge_loss_analytic(self):
        verts = np.array([[0, 0, 0], [2.0, 0, 0], [0, 1.0, 0]])
        faces = np.array([[0, 1, 2]])
        ctx = ML.MeshLossContext(faces, 3)
        loss = ML.edge_length_loss(Tensor(verts), ctx)
        # edges: 4 + 1 + 5 over three edges
        assert abs(float(loss.data) - (4 + 1 + 5) / 3.0) < 1e-12

    def test_laplacian_zero_for_centroidal_config(self):
        # a regular tetrahedron centered at the origin: each vertex's
        # neighbor centroid is the opposite face centroid, nonzero; use a
        # degenerate-free analytic case instead: single edgeless check via
        # uniform translation invariance
        rng = Rng(2)
        m = small_sphere()
        ctx = ML.MeshLossContext(m.faces, m.num_vertices)
        base = float(ML.laplacian_smoothing_loss(Tensor(m.vertices), ctx).data)
        shifted = float(ML.laplacian_smoothing_loss(
            Tensor(m.vertices + np.array([3.0, -2.0, 1.0])), ctx).data)
        assert abs(base - shifted) < 1e-12

    def test_gradients_match_finite_differences_20_vertex_mesh(self):
        from thor.qecd import qecd_simplify
        m = qecd_simplify(icosphere(1), 20)
        target = sample_points_from_faces(m, 60, seed=3) + 0.05
        ctx = ML.MeshLossContext(m.faces, 20)
        verts = Tensor(m.vertices.copy(), requires_grad=True)

        def f(v):
            terms = ML.mesh_losses(v, m.faces, target, n_samples=80, seed=5, ctx=ctx)
            return ML.combined_deformation_loss(terms, 0.01, 0.1)

        assert grad_check(f, [verts]) < 1e-4


class TestDeform:
    def test_self_target_near_fixed_point(self):
        # with the target equal to the template the chamfer gradient is
        # near zero, so the mesh settles at the small equilibrium where the
        # edge term's shrink pressure meets the chamfer counter-gradient
        from thor.templates import load_templates
        sphere = load_templates().object_sphere
        res = ML.deform_sphere(sphere, sphere, iters=300, lr=1.0, n_samples=2000, seed=1)
        disp = np.linalg.norm(res.mesh.vertices - sphere.vertices, axis=1)
        assert disp.max() < 0.06
        assert res.final_loss <= res.initial_loss
        assert res.history[-1]["chamfer"] < 5e-3

    def test_faces_bit_exact_and_loss_decreases(self):
        from thor.qecd import qecd_simplify
        sphere = qecd_simplify(icosphere(2), 100)
        cube = cube_mesh(1.0)
        tpl = ML.fit_template_to_target(sphere, cube)
        res = ML.deform_sphere(tpl, cube, iters=200, lr=1.0, n_samples=800, seed=0)
        assert np.array_equal(res.mesh.faces, tpl.faces)
        assert res.final_loss < res.initial_loss
        assert res.history[-1]["chamfer"] < res.history[0]["chamfer"]

    def test_divergence_aborts_with_history(self):
        from thor.qecd import qecd_simplify
        sphere = qecd_simplify(icosphere(1), 30)
        cube = cube_mesh(1.0)
        tpl = ML.fit_template_to_target(sphere, cube)
        with pytest.raises(ML.DeformDivergence) as e:
            ML.deform_sphere(tpl, cube, iters=400, lr=500.0, n_samples=200, seed=0)
        assert len(e.value.history) > 1

    def test_strong_smoothing_lowers_laplacian_term(self):
        from thor.qecd import qecd_simplify
        sphere = qecd_simplify(icosphere(2), 100)
        cube = cube_mesh(1.0)
        tpl = ML.fit_template_to_target(sphere, cube)
        weak = ML.deform_sphere(tpl, cube, iters=1000, lr=1.0, lam2=0.1,
                                n_samples=500, seed=4)
        # the huge smoothing weight needs a stability-scaled step size
        strong = ML.deform_sphere(tpl, cube, iters=2000, lr=0.02, lam2=1000.0,
                                  n_samples=500, seed=4)
        assert strong.history[-1]["laplacian"] < weak.history[-1]["laplacian"]

    def test_template_fitting_scale_and_center(self):
        sphere = icosphere(1)
        target = cube_mesh(2.0, center=(5.0, 0.0, 0.0))
        fitted = ML.fit_template_to_target(sphere, target)
        centroid = fitted.vertices.mean(axis=0)
        assert np.max(np.abs(centroid - [5.0, 0.0, 0.0])) < 1e-9
        radius = np.linalg.norm(fitted.vertices - centroid, axis=1).max()
        assert abs(radius - np.sqrt(3.0)) < 1e-9
