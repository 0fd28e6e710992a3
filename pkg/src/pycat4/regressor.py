"""Mesh-alignment feedback loop, auxiliary dense head, and training loss.

Three correction networks refine a flat parameter vector (pose, shape,
camera), one per pyramid level coarse to fine.  Each step poses the mesh,
projects a farthest-point vertex subset onto its level, samples features
there, and predicts an additive update; final layers start at zero so the
untrained loop is an exact identity on the mean state.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .body import BodyModel, BodyState, mesh_downsample, project_weak_perspective
from .layers import Conv2d, Linear, Module, ModuleList, grid_sample_bilinear
from .tensor import ContractError, Tensor


def default_theta0(num_joints, num_shapes, scale=0.9):
    """Mean state: zero pose and shape, camera (scale, 0, 0)."""
    t = np.zeros(num_joints * 3 + num_shapes + 3)
    t[num_joints * 3 + num_shapes] = scale
    return t


@dataclass
class StepState:
    theta: Tensor    # [Bt, D]
    state: BodyState
    verts: Tensor    # [Bt, N, 3]
    joints: Tensor   # [Bt, K, 3]
    kp2d: Tensor     # [Bt, K, 2]


@dataclass
class DensePrediction:
    logits: list     # per scale [Bt, P+1, S, S]
    uv: list         # per scale [Bt, 2, S, S], sigmoid range


class CorrectionNet(Module):
    """Two ReLU hidden layers; zero-initialized output so updates start at 0."""

    def __init__(self, in_dim, theta_dim, rng, hidden=256):
        super().__init__()
        self.fc1 = Linear(in_dim, hidden, rng)
        self.fc2 = Linear(hidden, hidden, rng)
        self.out = Linear(hidden, theta_dim, rng, zero_init=True)

    def forward(self, x):
        return self.out(T.relu(self.fc2(T.relu(self.fc1(x)))))


class DenseHead(Module):
    """Per-scale part-index logits and sigmoid UV maps."""

    def __init__(self, level_width, num_parts, rng, num_levels=3):
        super().__init__()
        self.num_parts = num_parts
        self.trunks = ModuleList([Conv2d(level_width, level_width, 3, rng, padding=1)
                                  for _ in range(num_levels)])
        self.part_convs = ModuleList([Conv2d(level_width, num_parts + 1, 1, rng)
                                      for _ in range(num_levels)])
        self.uv_convs = ModuleList([Conv2d(level_width, 2, 1, rng)
                                    for _ in range(num_levels)])

    def forward(self, levels):
        logits, uvs = [], []
        for lvl, trunk, pc, uc in zip(levels, self.trunks, self.part_convs,
                                      self.uv_convs):
            h = T.relu(trunk(lvl))
            logits.append(pc(h))
            uvs.append(T.sigmoid(uc(h)))
        return DensePrediction(logits=logits, uv=uvs)


class Regressor(Module):
    """IEF loop bound to the three pyramid levels plus the dense head."""

    def __init__(self, level_width, global_width, rng, body=None,
                 sample_verts=36, hidden=256, theta0=None):
        super().__init__()
        self.body = body or BodyModel()
        mesh = self.body.mesh
        self.theta_dim = mesh.num_joints * 3 + mesh.num_shapes + 3
        self.sample_idx = mesh_downsample(mesh, sample_verts)
        theta0 = (default_theta0(mesh.num_joints, mesh.num_shapes)
                  if theta0 is None else np.asarray(theta0, dtype=float))
        if theta0.shape != (self.theta_dim,):
            raise ContractError(f"theta0 must have {self.theta_dim} entries")
        if not np.isfinite(theta0).all() or theta0[-3] <= 0:
            raise ContractError("theta0 must be finite with positive scale")
        self.theta0 = theta0
        feat_dim = sample_verts * level_width + global_width
        self.correctors = ModuleList([
            CorrectionNet(feat_dim + self.theta_dim, self.theta_dim, rng, hidden)
            for _ in range(3)])
        self.dense = DenseHead(level_width, len(np.unique(mesh.vertex_part)), rng)

    def unpack(self, theta):
        K = self.body.mesh.num_joints
        S = self.body.mesh.num_shapes
        Bt = theta.shape[0]
        return BodyState(
            pose=T.reshape(theta[:, :K * 3], (Bt, K, 3)),
            betas=theta[:, K * 3:K * 3 + S],
            scale=theta[:, K * 3 + S:K * 3 + S + 1],
            trans=theta[:, K * 3 + S + 1:])

    def pose_state(self, theta):
        """theta -> full StepState (mesh, joints, 2D keypoints)."""
        st = self.unpack(theta)
        verts, joints = self.body.forward(st.pose, st.betas)
        kp2d = project_weak_perspective(joints, st.scale, st.trans)
        return StepState(theta=theta, state=st, verts=verts, joints=joints,
                         kp2d=kp2d)

    def mesh_aligned_features(self, level, global_vec, step):
        """Sample the level at projected downsampled vertices, flatten, and
        append the global vector."""
        sub = T.transpose(T.take(T.transpose(step.verts, (1, 0, 2)),
                                 self.sample_idx), (1, 0, 2))
        pts2d = project_weak_perspective(sub, step.state.scale, step.state.trans)
        feats = grid_sample_bilinear(level, pts2d)  # [Bt, C, d]
        Bt = feats.shape[0]
        return T.concat([T.reshape(feats, (Bt, -1)), global_vec], axis=1)

    def ief_step(self, theta, features, corrector):
        return theta + corrector(T.concat([features, theta], axis=1))

    def ief_loop(self, pyramid):
        """Run the three correction steps; returns per-step states."""
        if len(pyramid.levels) != 3:
            raise ContractError(f"expected 3 levels, got {len(pyramid.levels)}")
        Bt = pyramid.global_vec.shape[0]
        theta = Tensor(np.tile(self.theta0, (Bt, 1)))
        step = self.pose_state(theta)
        steps = []
        for level, corrector in zip(pyramid.levels, self.correctors):
            feats = self.mesh_aligned_features(level, pyramid.global_vec, step)
            theta = self.ief_step(step.theta, feats, corrector)
            step = self.pose_state(theta)
            steps.append(step)
        return steps

    def forward(self, pyramid):
        return self.ief_loop(pyramid), self.dense(pyramid.levels)


DEFAULT_LOSS_WEIGHTS = {
    "kp2d": 1.0, "j3d": 1.0, "v3d": 1.0,
    "parts": 0.1, "uv": 0.1, "cam": 1.0, "s_min": 0.5,
}


def _masked_sq_mean(pred, gt, mask):
    """Mean squared error over samples flagged in mask (zeros if none)."""
    if not mask.any():
        return Tensor(0.0)
    d = pred - Tensor(gt)
    sq = d * d
    m = mask.reshape((-1,) + (1,) * (sq.ndim - 1)).astype(float)
    denom = float(mask.sum()) * int(np.prod(sq.shape[1:]))
    return (sq * m).sum() / denom


def cross_entropy_map(logits, target, num_classes):
    """Pixelwise CE of [Bt,C,H,W] logits against integer targets [Bt,H,W]."""
    onehot = np.eye(num_classes)[target].transpose(0, 3, 1, 2)
    lse = T.logsumexp(logits, axis=1)
    picked = (logits * Tensor(onehot)).sum(axis=1)
    return (lse - picked).mean()


def total_loss(steps, dense, gt, weights=None):
    """Composite loss; returns (scalar Tensor, weighted per-term breakdown)."""
    w = dict(DEFAULT_LOSS_WEIGHTS)
    if weights:
        w.update(weights)
    if "kp2d" not in gt:
        raise ContractError("2D keypoint ground truth is mandatory")
    B = steps[-1].kp2d.shape[0]

    terms = {}
    kp_vis = gt.get("kp2d_vis")
    if kp_vis is not None:
        kp_vis = np.asarray(kp_vis, dtype=float)[:, :, None]  # [B, K, 1]
    kp = Tensor(0.0)
    for step in steps:
        d = step.kp2d - Tensor(gt["kp2d"])
        if kp_vis is None:
            kp = kp + (d * d).mean()
        else:
            sq = d * d * Tensor(kp_vis)
            kp = kp + sq.sum() / max(2.0 * kp_vis.sum(), 1.0)
    terms["kp2d"] = w["kp2d"] * kp

    has3d = np.asarray(gt.get("has3d", np.zeros(B, dtype=bool)), dtype=bool)
    final = steps[-1]
    if "joints3d" in gt:
        terms["j3d"] = w["j3d"] * _masked_sq_mean(final.joints, gt["joints3d"], has3d)
    if "verts3d" in gt:
        terms["v3d"] = w["v3d"] * _masked_sq_mean(final.verts, gt["verts3d"], has3d)

    if "parts" in gt:
        num_classes = dense.logits[0].shape[1]
        ce = Tensor(0.0)
        uv_term = Tensor(0.0)
        for logit, uv, part_gt, uv_gt in zip(dense.logits, dense.uv,
                                             gt["parts"], gt["uv"]):
            ce = ce + cross_entropy_map(logit, part_gt, num_classes)
            fg = (part_gt > 0).astype(float)[:, None]
            diff = T.absolute(uv - Tensor(uv_gt)) * fg
            uv_term = uv_term + diff.sum() / max(2.0 * fg.sum(), 1.0)
        terms["parts"] = w["parts"] * ce
        terms["uv"] = w["uv"] * uv_term

    s = final.state.scale
    gap = T.relu(w["s_min"] - s)
    terms["cam"] = w["cam"] * (gap * gap).mean()

    total = Tensor(0.0)
    for t in terms.values():
        total = total + t
    breakdown = {k: float(v.data) for k, v in terms.items()}
    breakdown["total"] = float(total.data)
    return total, breakdown


__all__ = [
    "default_theta0", "StepState", "DensePrediction", "CorrectionNet",
    "DenseHead", "Regressor", "DEFAULT_LOSS_WEIGHTS", "cross_entropy_map",
    "total_loss",
]
