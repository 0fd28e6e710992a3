import numpy as np
import pytest
from scipy.spatial.distance import pdist

from pycat4 import body as B
from pycat4.tensor import (ContractError, Tensor, backward, finite_diff_grad,
                           grad_of, new_tape)


def rel_err(a, b):
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return np.abs(np.asarray(a) - np.asarray(b)).max(initial=0.0) / denom


@pytest.fixture(scope="module")
def mesh():
    return B.build_default_mesh()


@pytest.fixture(scope="module")
def model(mesh):
    return B.BodyModel(mesh)


class TestMeshConstruction:
    def test_dimensions(self, mesh):
        assert mesh.num_vertices == 216
        assert mesh.num_joints == 16
        assert mesh.num_shapes == 4
        assert mesh.vertex_part.max() == 8
        assert len(np.unique(mesh.vertex_part)) == 9

    def test_convex_weight_rows(self, mesh):
        assert (mesh.skin_weights >= 0).all()
        assert (mesh.joint_reg >= 0).all()
        np.testing.assert_allclose(mesh.skin_weights.sum(1), 1.0, atol=1e-9)
        np.testing.assert_allclose(mesh.joint_reg.sum(1), 1.0, atol=1e-9)

    def test_parent_tree_valid(self, mesh):
        assert mesh.parents[0] == -1
        assert (mesh.parents[1:] >= 0).all()
        assert (mesh.parents[1:] < np.arange(1, 16)).all()

    def test_faces_index_valid_vertices(self, mesh):
        assert mesh.faces.min() >= 0
        assert mesh.faces.max() < mesh.num_vertices
        assert mesh.faces.shape[1] == 3

    def test_uv_in_unit_square(self, mesh):
        assert (mesh.vertex_uv >= 0).all()
        assert (mesh.vertex_uv <= 1).all()

    def test_deterministic(self):
        a = B.build_default_mesh()
        b = B.build_default_mesh()
        assert (a.template == b.template).all()
        assert (a.skin_weights == b.skin_weights).all()

    def test_validate_rejects_bad_weights(self, mesh):
        import dataclasses
        bad = dataclasses.replace(mesh, skin_weights=mesh.skin_weights * 2.0)
        with pytest.raises(ContractError):
            bad.validate()


class TestRodrigues:
    def test_zero_gives_identity(self):
        R = B.rodrigues(Tensor(np.zeros((1, 3)))).data[0]
        assert (R == np.eye(3)).all()

    def test_quarter_turn_about_z(self):
        R = B.rodrigues(Tensor([[0.0, 0.0, np.pi / 2]])).data[0]
        np.testing.assert_allclose(R @ np.array([1.0, 0.0, 0.0]),
                                   [0.0, 1.0, 0.0], atol=1e-12)

    def test_orthonormal_det_one(self):
        rng = np.random.default_rng(0)
        w = rng.normal(0, 2.0, size=(50, 3))
        w[0] = [1e-12, 0, 0]
        w[1] = [0, 0, 1e-9]
        R = B.rodrigues(Tensor(w)).data
        eye = np.einsum("kij,kil->kjl", R, R)
        assert np.abs(eye - np.eye(3)).max() < 1e-9
        np.testing.assert_allclose(np.linalg.det(R), 1.0, atol=1e-9)

    def test_grad_matches_fd_normal_branch(self):
        rng = np.random.default_rng(1)
        M = rng.normal(size=(2, 3, 3))

        def f(wt):
            return (B.rodrigues(wt) * Tensor(M)).sum()

        wt = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        with new_tape():
            g = grad_of(backward(f(wt)), wt).data
        assert rel_err(g, finite_diff_grad(f, wt)) < 1e-5

    def test_grad_matches_fd_taylor_branch(self):
        rng = np.random.default_rng(2)
        M = rng.normal(size=(1, 3, 3))

        def f(wt):
            return (B.rodrigues(wt) * Tensor(M)).sum()

        w0 = np.array([[3e-9, -2e-9, 4e-9]])
        wt = Tensor(w0, requires_grad=True)
        with new_tape():
            g = grad_of(backward(f(wt)), wt).data
        fd = finite_diff_grad(f, wt, h=1e-9)
        assert rel_err(g, fd) < 1e-5

    def test_branches_agree_at_seam(self):
        d = np.array([0.6, -0.8, 0.0])
        below = B.rodrigues(Tensor((0.99e-8 * d)[None])).data
        above = B.rodrigues(Tensor((1.01e-8 * d)[None])).data
        assert np.abs(below - above).max() < 1e-9


class TestPoseShapeToMesh:
    def test_zero_state_is_template_bitwise(self, model, mesh):
        verts, joints = model.forward(Tensor(np.zeros((1, 16, 3))),
                                      Tensor(np.zeros((1, 4))))
        assert (verts.data[0] == mesh.template).all()

    def test_rest_joints_self_consistent(self, model, mesh):
        _, joints = model.forward(Tensor(np.zeros((1, 16, 3))),
                                  Tensor(np.zeros((1, 4))))
        want = mesh.joint_reg @ mesh.template
        np.testing.assert_allclose(joints.data[0], want, atol=1e-12)

    def test_root_rotation_is_rigid(self, model, mesh):
        pose = np.zeros((1, 16, 3))
        pose[0, 0] = [0.3, -1.1, 0.7]
        verts, joints = model.forward(Tensor(pose), Tensor(np.zeros((1, 4))))
        d_before = pdist(mesh.template)
        d_after = pdist(verts.data[0])
        assert np.abs(d_before - d_after).max() < 1e-9

    def test_root_rotation_pivots_at_root_joint(self, model, mesh):
        pose = np.zeros((1, 16, 3))
        pose[0, 0] = [0.0, 0.9, 0.0]
        _, joints = model.forward(Tensor(pose), Tensor(np.zeros((1, 4))))
        root_rest = (mesh.joint_reg @ mesh.template)[0]
        np.testing.assert_allclose(joints.data[0, 0], root_rest, atol=1e-12)

    def test_beta_moves_vertices_by_shape_basis(self, model, mesh):
        beta = np.array([[0.5, -1.0, 0.25, 2.0]])
        verts, _ = model.forward(Tensor(np.zeros((1, 16, 3))), Tensor(beta))
        want = mesh.template + mesh.shape_basis @ beta[0]
        np.testing.assert_allclose(verts.data[0], want, atol=1e-12)

    def test_elbow_bend_moves_only_downstream(self, model, mesh):
        pose = np.zeros((1, 16, 3))
        pose[0, 5] = [0.0, 0.0, 1.2]  # left elbow
        verts, joints = model.forward(Tensor(pose), Tensor(np.zeros((1, 4))))
        moved = np.abs(verts.data[0] - mesh.template).max(axis=1) > 1e-9
        lower_arm = mesh.vertex_part == B.PART_NAMES.index("l_lower_arm")
        legs = (mesh.vertex_part == B.PART_NAMES.index("l_leg")) | \
               (mesh.vertex_part == B.PART_NAMES.index("r_leg"))
        assert moved[lower_arm].all()
        assert not moved[legs].any()
        # wrist moves, shoulder stays
        assert np.abs(joints.data[0, 6] - (mesh.joint_reg @ mesh.template)[6]).max() > 1e-3
        np.testing.assert_allclose(joints.data[0, 4],
                                   (mesh.joint_reg @ mesh.template)[4], atol=1e-12)

    def test_grad_matches_fd_through_full_poser(self, model):
        rng = np.random.default_rng(3)
        M = rng.normal(size=(1, 216, 3))

        def f(pt):
            verts, joints = model.forward(pt, Tensor(beta0))
            return (verts * Tensor(M)).sum() + (joints * joints).sum()

        beta0 = rng.normal(size=(1, 4)) * 0.5
        pt = Tensor(rng.normal(size=(1, 16, 3)) * 0.4, requires_grad=True)
        with new_tape():
            g = grad_of(backward(f(pt)), pt).data
        fd = finite_diff_grad(f, pt, h=1e-6)
        assert rel_err(g, fd) < 1e-4

    def test_batched_forward_matches_loop(self, model):
        rng = np.random.default_rng(4)
        poses = rng.normal(size=(3, 16, 3)) * 0.3
        betas = rng.normal(size=(3, 4)) * 0.5
        vb, jb = model.forward(Tensor(poses), Tensor(betas))
        for i in range(3):
            vi, ji = model.forward(Tensor(poses[i:i + 1]), Tensor(betas[i:i + 1]))
            np.testing.assert_allclose(vb.data[i], vi.data[0], atol=1e-12)
            np.testing.assert_allclose(jb.data[i], ji.data[0], atol=1e-12)


class TestProjection:
    def test_unit_camera_drops_z(self):
        pts = np.array([[[0.3, -0.2, 5.0], [0.0, 0.1, -2.0]]])
        out = B.project_weak_perspective(Tensor(pts), Tensor([[1.0]]),
                                         Tensor([[0.0, 0.0]])).data
        np.testing.assert_allclose(out, pts[:, :, :2], rtol=1e-15)

    def test_scale_doubles_centered_coords(self):
        pts = np.array([[[0.3, -0.2, 1.0]]])
        a = B.project_weak_perspective(Tensor(pts), Tensor([[1.0]]),
                                       Tensor([[0.0, 0.0]])).data
        b = B.project_weak_perspective(Tensor(pts), Tensor([[2.0]]),
                                       Tensor([[0.0, 0.0]])).data
        np.testing.assert_allclose(b, 2 * a, rtol=1e-15)

    def test_grad_matches_fd(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(2, 4, 3))

        def f(ct):
            s = ct[:, 0:1]
            t = ct[:, 1:3]
            return (B.project_weak_perspective(Tensor(pts), s, t) ** 2.0).sum()

        ct = Tensor(np.array([[0.9, 0.1, -0.2], [1.1, 0.0, 0.3]]),
                    requires_grad=True)
        with new_tape():
            g = grad_of(backward(f(ct)), ct).data
        assert rel_err(g, finite_diff_grad(f, ct, h=1e-6)) < 1e-6

    def test_state_validation(self):
        st = B.BodyState(pose=Tensor(np.zeros((1, 16, 3))),
                         betas=Tensor(np.zeros((1, 4))),
                         scale=Tensor([[0.9]]), trans=Tensor([[0.0, 0.0]]))
        st.validate()
        st.scale = Tensor([[-0.1]])
        with pytest.raises(ContractError):
            st.validate()
        st.scale = Tensor([[np.nan]])
        with pytest.raises(ContractError):
            st.validate()


class TestMeshDownsample:
    def test_full_count_returns_everything(self, mesh):
        idx = B.mesh_downsample(mesh, mesh.num_vertices)
        assert sorted(idx.tolist()) == list(range(216))

    def test_single_is_seed_vertex(self, mesh):
        assert B.mesh_downsample(mesh, 1).tolist() == [0]

    def test_too_many_rejected(self, mesh):
        with pytest.raises(ContractError):
            B.mesh_downsample(mesh, 217)

    def test_beats_random_subsets_on_spread(self, mesh):
        d = 24
        idx = B.mesh_downsample(mesh, d)
        fps_min = pdist(mesh.template[idx]).min()
        rng = np.random.default_rng(6)
        for _ in range(20):
            sub = rng.choice(216, size=d, replace=False)
            assert fps_min >= pdist(mesh.template[sub]).min()

    def test_deterministic(self, mesh):
        a = B.mesh_downsample(mesh, 36)
        b = B.mesh_downsample(mesh, 36)
        assert (a == b).all()
