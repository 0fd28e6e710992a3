"""The articulated body: template mesh, shape blending, pose skinning,
weak-perspective projection.

A 16-joint kinematic tree drives a 216-vertex mesh through linear blend
skinning.  Four shape directions bend the template before posing.
"""

import numpy as np

from pycat4.body import (JOINT_NAMES, NUM_JOINTS, NUM_SHAPES, PARENTS,
                         BodyModel, project_weak_perspective)
from pycat4.tensor import Tensor, no_grad

model = BodyModel()
mesh = model.mesh
print(f"mesh: {mesh.template.shape[0]} vertices, {mesh.faces.shape[0]} faces, "
      f"{NUM_JOINTS} joints, {NUM_SHAPES} shape directions")
print("kinematic tree:")
for j, name in enumerate(JOINT_NAMES):
    parent = "-" if PARENTS[j] < 0 else JOINT_NAMES[PARENTS[j]]
    print(f"  {j:2d} {name:<12} <- {parent}")

with no_grad():
    # rest pose, mean shape
    pose = Tensor(np.zeros((1, NUM_JOINTS, 3)))
    betas = Tensor(np.zeros((1, NUM_SHAPES)))
    verts, joints = model.forward(pose, betas)
    print("\nrest extent (x/y/z):",
          np.round(verts.data[0].max(0) - verts.data[0].min(0), 3))

    # bend the right elbow and lean the spine; axis-angle per joint
    bent = np.zeros((1, NUM_JOINTS, 3))
    bent[0, JOINT_NAMES.index("r_elbow")] = (0.0, 0.0, 1.2)
    bent[0, JOINT_NAMES.index("spine")] = (0.0, 0.0, 0.25)
    verts_b, joints_b = model.forward(Tensor(bent), betas)
    wrist = JOINT_NAMES.index("r_wrist")
    moved = np.linalg.norm(joints_b.data[0, wrist] - joints.data[0, wrist])
    print(f"wrist travel from the elbow bend: {moved:.3f} units")

    # shape directions change limb proportions at rest
    wide = model.forward(pose, Tensor(np.array([[2.0, 0, 0, 0]])))[0]
    print("first shape direction changes the mesh by max",
          f"{np.abs(wide.data - verts.data).max():.3f} units")

    # a weak-perspective camera flattens joints to normalized 2D
    kp2d = project_weak_perspective(joints_b, Tensor([[0.8]]),
                                    Tensor([[0.05, -0.1]]))
    print("\nprojected 2D joints (first 4 rows):")
    print(np.round(kp2d.data[0, :4], 3))
