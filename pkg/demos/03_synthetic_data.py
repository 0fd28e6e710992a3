"""Synthetic training data: rendered figures, dense labels, augmentation,
and the annotation export/ingest roundtrip.

Each sample packs an image, 2D keypoints, 3D joints and vertices, the true
body parameters, and dense part/UV maps, all mutually consistent.
"""

import json
import os
import tempfile

import numpy as np

from pycat4 import data

records = data.synth_generate(2, seed=7, img_size=56)
rec = records[0]
print("image:", rec.image.shape, "in [%.2f, %.2f]" % (rec.image.min(),
                                                      rec.image.max()))
print("keypoints2d:", rec.keypoints2d.shape,
      "(pixel x, pixel y, visibility)")
print("joints3d:", rec.joints3d.shape, " vertices3d:", rec.vertices3d.shape)
print("part map labels:", sorted(np.unique(rec.part_map).tolist()))

# coarse ASCII view of the part map (0 = background)
glyphs = " .123456789"
small = data.downsample_nearest(rec.part_map, 28)
print("\npart map (28x28):")
for row in small:
    print("".join(glyphs[v] for v in row))

# the stored camera and body parameters reproject onto the stored keypoints
from pycat4.body import BodyModel, project_weak_perspective
from pycat4.tensor import Tensor, no_grad

with no_grad():
    model = BodyModel()
    _, joints = model.forward(Tensor(rec.pose[None]), Tensor(rec.betas[None]))
    kp_n = project_weak_perspective(joints, Tensor([[rec.scale]]),
                                    Tensor(rec.trans[None])).data[0]
kp_pix = data.norm_to_pixel(kp_n, rec.img_size)
err = np.abs(kp_pix - rec.keypoints2d[:, :2]).max()
print(f"\nreprojection consistency: {err:.2e} px")

# augmentation rotates/scales/shifts image, labels, and parameters together
aug = data.augment(rec, rng=np.random.default_rng(1))
assert aug.image.shape == rec.image.shape
with no_grad():
    _, joints_a = model.forward(Tensor(aug.pose[None]), Tensor(aug.betas[None]))
    kp_a = project_weak_perspective(joints_a, Tensor([[aug.scale]]),
                                    Tensor(aug.trans[None])).data[0]
err_a = np.abs(data.norm_to_pixel(kp_a, rec.img_size)
               - aug.keypoints2d[:, :2]).max()
print(f"consistency after augmentation: {err_a:.2e} px")

# 2D annotations roundtrip through a COCO-style JSON file
with tempfile.TemporaryDirectory() as tmp:
    data.export_annotations(records, tmp)
    anno = json.load(open(os.path.join(tmp, "annotations.json")))
    print(f"\nexported {len(anno['images'])} images, "
          f"{len(anno['annotations'])} annotations, "
          f"{len(anno['categories'][0]['keypoints'])} named keypoints")
    back = data.ingest_annotations(os.path.join(tmp, "annotations.json"),
                                   images_dir=os.path.join(tmp, "images"))
    kp_err = np.abs(back[0].keypoints2d - rec.keypoints2d).max()
    print(f"keypoints after export/ingest: {kp_err:.2e} px difference")
