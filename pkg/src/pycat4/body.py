"""Articulated parametric body: shape blending, kinematics, skinning, camera.

The template is a procedural stick figure of capsule segments: 9 parts, 16
joints, 216 vertices (4 rings of 6 per part), 4 shape directions.  The math
mirrors the usual parametric-mesh pipeline: V = V0 + S.beta, rest joints
J.V, forward kinematics with per-joint rotations in the parent frame, then
linear blend skinning.  Zero pose and shape reproduce the template exactly:
skinning transforms are built against a rest chain computed by the same
floating-point operations, so their translations cancel bit-for-bit.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ContractError, Tensor

NUM_JOINTS = 16
NUM_SHAPES = 4
NUM_PARTS = 9
RING_FRACTIONS = (0.125, 0.375, 0.625, 0.875)  # binary-exact: weights sum to 1.0
RING_VERTS = 6

PARENTS = np.array([-1, 0, 1, 2, 2, 4, 5, 2, 7, 8, 0, 10, 11, 0, 13, 14])

JOINT_NAMES = [
    "pelvis", "spine", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
]

_REST = np.array([
    [0.0, 0.0, 0.0], [0.0, 0.25, 0.0], [0.0, 0.5, 0.0], [0.0, 0.65, 0.0],
    [0.18, 0.45, 0.0], [0.44, 0.45, 0.0], [0.68, 0.45, 0.0],
    [-0.18, 0.45, 0.0], [-0.44, 0.45, 0.0], [-0.68, 0.45, 0.0],
    [0.09, -0.05, 0.0], [0.09, -0.5, 0.0], [0.09, -0.95, 0.0],
    [-0.09, -0.05, 0.0], [-0.09, -0.5, 0.0], [-0.09, -0.95, 0.0],
])

# part -> (joint chain, capsule radius)
PART_CHAINS = [
    ("pelvis_region", (0, 1), 0.12),
    ("torso", (1, 2), 0.14),
    ("head", (2, 3), 0.09),
    ("l_upper_arm", (4, 5), 0.05),
    ("l_lower_arm", (5, 6), 0.04),
    ("r_upper_arm", (7, 8), 0.05),
    ("r_lower_arm", (8, 9), 0.04),
    ("l_leg", (10, 11, 12), 0.07),
    ("r_leg", (13, 14, 15), 0.07),
]

PART_NAMES = [name for name, _, _ in PART_CHAINS]


@dataclass
class ArticulatedMesh:
    template: np.ndarray        # [N, 3]
    shape_basis: np.ndarray     # [N, 3, B]
    joint_reg: np.ndarray       # [K, N] convex rows
    parents: np.ndarray         # [K], -1 for the root
    skin_weights: np.ndarray    # [N, K] convex rows
    faces: np.ndarray           # [F, 3]
    vertex_part: np.ndarray     # [N] part index
    vertex_uv: np.ndarray       # [N, 2] intrinsic (along, around) coords

    def validate(self):
        if (self.parents[0] != -1) or (self.parents[1:] <= -1).any():
            raise ContractError("parent tree must have exactly one root at index 0")
        if not (self.parents[1:] < np.arange(1, len(self.parents))).all():
            raise ContractError("parents must precede children")
        for name, rows in (("joint_reg", self.joint_reg),
                           ("skin_weights", self.skin_weights)):
            if (rows < 0).any():
                raise ContractError(f"{name} has negative weights")
            if np.abs(rows.sum(-1) - 1.0).max() > 1e-9:
                raise ContractError(f"{name} rows must sum to 1")

    @property
    def num_vertices(self):
        return self.template.shape[0]

    @property
    def num_joints(self):
        return self.joint_reg.shape[0]

    @property
    def num_shapes(self):
        return self.shape_basis.shape[2]


def _chain_point(chain, f):
    """Point at arclength fraction f along a joint chain, plus hat weights."""
    pts = _REST[list(chain)]
    segs = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = segs.sum()
    target = f * total
    acc = 0.0
    for i, s in enumerate(segs):
        if target <= acc + s or i == len(segs) - 1:
            local = (target - acc) / s
            pos = pts[i] * (1.0 - local) + pts[i + 1] * local
            weights = np.zeros(NUM_JOINTS)
            weights[chain[i]] = 1.0 - local
            weights[chain[i + 1]] = local
            return pos, weights, pts[i + 1] - pts[i]
        acc += s
    raise AssertionError("unreachable")


def _frame(direction):
    d = direction / np.linalg.norm(direction)
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(d, helper)
    u /= np.linalg.norm(u)
    v = np.cross(d, u)
    return u, v


def build_default_mesh():
    """Procedural capsule-per-part template; fully deterministic."""
    verts, weights, parts, uvs, radials = [], [], [], [], []
    faces = []
    for pid, (_, chain, radius) in enumerate(PART_CHAINS):
        base = len(verts)
        for ri, f in enumerate(RING_FRACTIONS):
            center, w, direction = _chain_point(chain, f)
            u, v = _frame(direction)
            for k in range(RING_VERTS):
                ang = 2.0 * np.pi * k / RING_VERTS
                radial = np.cos(ang) * u + np.sin(ang) * v
                verts.append(center + radius * radial)
                radials.append(radial)
                weights.append(w)
                parts.append(pid)
                uvs.append([f, k / RING_VERTS])
        for ri in range(len(RING_FRACTIONS) - 1):
            for k in range(RING_VERTS):
                a = base + ri * RING_VERTS + k
                b = base + ri * RING_VERTS + (k + 1) % RING_VERTS
                c = a + RING_VERTS
                d = b + RING_VERTS
                faces.append([a, b, c])
                faces.append([b, d, c])
    V0 = np.array(verts)
    W = np.array(weights)
    radials = np.array(radials)
    n = len(V0)

    col_sums = W.sum(axis=0)
    J = (W / col_sums[None, :]).T

    S = np.zeros((n, 3, NUM_SHAPES))
    S[:, :, 0] = 0.1 * V0                      # overall scale
    S[:, 1, 1] = 0.1 * V0[:, 1]                # height
    S[:, 0, 2] = 0.1 * V0[:, 0]                # width
    S[:, :, 3] = 0.05 * radials                # limb girth

    mesh = ArticulatedMesh(
        template=V0, shape_basis=S, joint_reg=J, parents=PARENTS.copy(),
        skin_weights=W, faces=np.array(faces, dtype=np.int64),
        vertex_part=np.array(parts, dtype=np.int64), vertex_uv=np.array(uvs))
    mesh.validate()
    return mesh


@dataclass
class BodyState:
    """Batched pose/shape/camera parameters (all Tensors)."""
    pose: Tensor    # [Bt, K, 3] axis-angle
    betas: Tensor   # [Bt, S]
    scale: Tensor   # [Bt, 1]
    trans: Tensor   # [Bt, 2]

    def validate(self):
        for name in ("pose", "betas", "scale", "trans"):
            if not np.isfinite(getattr(self, name).data).all():
                raise ContractError(f"{name} contains non-finite values")
        if (self.scale.data <= 0).any():
            raise ContractError("camera scale must be positive")


# ---------------------------------------------------------------------------
# differentiable kinematics

_SMALL_ANGLE_SQ = 1e-16  # |w| < 1e-8 switches to the Taylor branch


def rodrigues(omega):
    """Axis-angle [..., 3] -> rotation matrices [..., 3, 3].

    Cancellation-free form R = I + A*K + B*K^2 with A = sin(t)/t and
    B = 2*sin(t/2)^2 / t^2; below |w| < 1e-8 both switch to Taylor series,
    with safe substitutes keeping the unselected branch finite.
    """
    lead = omega.shape[:-1]
    w = T.reshape(omega, (-1, 3))
    a2 = (w * w).sum(axis=1, keepdims=True)  # [M, 1]
    small = a2.data < _SMALL_ANGLE_SQ
    a2_safe = T.where(small, T.Tensor(np.ones_like(a2.data)), a2)
    angle = T.sqrt(a2_safe)
    half_sin = T.sin(angle * 0.5)
    A = T.where(small, 1.0 - a2 * (1.0 / 6.0), T.sin(angle) / angle)
    B = T.where(small, 0.5 - a2 * (1.0 / 24.0), 2.0 * half_sin * half_sin / a2_safe)

    zeros = w[:, 0:1] * 0.0
    wx, wy, wz = w[:, 0:1], w[:, 1:2], w[:, 2:3]
    row0 = T.concat([zeros, -wz, wy], axis=1)
    row1 = T.concat([wz, zeros, -wx], axis=1)
    row2 = T.concat([-wy, wx, zeros], axis=1)
    K = T.stack([row0, row1, row2], axis=1)  # [M, 3, 3]
    K2 = T.matmul(K, K)
    eye = Tensor(np.broadcast_to(np.eye(3), K.shape).copy())
    A3 = T.reshape(A, (-1, 1, 1))
    B3 = T.reshape(B, (-1, 1, 1))
    R = eye + A3 * K + B3 * K2
    return T.reshape(R, lead + (3, 3))


class BodyModel:
    """Differentiable mesh poser over a fixed ArticulatedMesh."""

    def __init__(self, mesh=None):
        self.mesh = mesh or build_default_mesh()
        m = self.mesh
        self._W = Tensor(m.skin_weights)
        self._J = Tensor(m.joint_reg)
        self._V0 = Tensor(m.template)
        self._S2 = Tensor(m.shape_basis.reshape(-1, m.num_shapes).T)  # [B, N*3]

    def forward(self, pose, betas):
        """pose [Bt,K,3], betas [Bt,S] -> (vertices [Bt,N,3], joints [Bt,K,3])."""
        m = self.mesh
        Bt = pose.shape[0]
        N, K = m.num_vertices, m.num_joints
        offsets = T.reshape(T.matmul(betas, self._S2), (Bt, N, 3))
        V = self._V0 + offsets
        rest_j = T.matmul(self._J, V)  # [Bt, K, 3]
        R = rodrigues(pose)  # [Bt, K, 3, 3]

        G_R, G_t, rest_t = [], [], []
        for k in range(K):
            p = m.parents[k]
            if p < 0:
                rel = rest_j[:, k, :]
                G_R.append(R[:, k])
                G_t.append(rel)
                rest_t.append(rel)
            else:
                rel = rest_j[:, k, :] - rest_j[:, p, :]
                rel_col = T.reshape(rel, (Bt, 3, 1))
                G_R.append(T.matmul(G_R[p], R[:, k]))
                G_t.append(T.reshape(T.matmul(G_R[p], rel_col), (Bt, 3)) + G_t[p])
                rest_t.append(rel + rest_t[p])
        A_R, A_t = [], []
        for k in range(K):
            rest_col = T.reshape(rest_t[k], (Bt, 3, 1))
            shift = T.reshape(T.matmul(G_R[k], rest_col), (Bt, 3))
            A_R.append(G_R[k])
            A_t.append(G_t[k] - shift)
        joints = T.stack(G_t, axis=1)  # [Bt, K, 3]

        A_R_flat = T.reshape(T.stack(A_R, axis=1), (Bt, K, 9))
        T_R = T.reshape(T.matmul(self._W, A_R_flat), (Bt, N, 3, 3))
        T_t = T.matmul(self._W, T.stack(A_t, axis=1))  # [Bt, N, 3]
        v_col = T.reshape(V, (Bt, N, 3, 1))
        verts = T.reshape(T.matmul(T_R, v_col), (Bt, N, 3)) + T_t
        return verts, joints


def project_weak_perspective(points, scale, trans):
    """[Bt,M,3] with scale [Bt,1] and trans [Bt,2] -> [Bt,M,2]: s*(x,y) + t."""
    xy = points[:, :, 0:2]
    s = T.reshape(scale, (-1, 1, 1))
    t = T.reshape(trans, (-1, 1, 2))
    return xy * s + t


def mesh_downsample(mesh, count):
    """Deterministic farthest-point vertex subset, seeded at vertex 0."""
    n = mesh.num_vertices
    if count > n:
        raise ContractError(f"cannot pick {count} of {n} vertices")
    if count < 1:
        raise ContractError("need at least one vertex")
    V = mesh.template
    chosen = [0]
    dist = np.linalg.norm(V - V[0], axis=1)
    for _ in range(count - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(V - V[nxt], axis=1))
    return np.array(chosen, dtype=np.int64)


__all__ = [
    "NUM_JOINTS", "NUM_SHAPES", "NUM_PARTS", "PARENTS", "JOINT_NAMES",
    "PART_NAMES", "PART_CHAINS", "ArticulatedMesh", "build_default_mesh",
    "rodrigues", "BodyModel", "project_weak_perspective", "mesh_downsample",
]
