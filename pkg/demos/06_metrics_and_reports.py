"""Pose metrics and the two report layouts.

3D quality: MPJPE, PA-MPJPE (after similarity alignment), PVE.
2D quality: keypoint similarity (OKS) swept over thresholds into AP/AR.
"""

import numpy as np
from scipy.spatial.transform import Rotation

from pycat4.metrics import (MetricsReport, ap_ar, format_report, mpjpe, oks,
                            pa_mpjpe, percent_improvement, pve)

rng = np.random.default_rng(0)

# --- 3D: a noisy prediction and the same prediction rigidly displaced
gt = rng.normal(size=(16, 3))
noisy = gt + rng.normal(scale=0.02, size=gt.shape)
R = Rotation.from_euler("z", 30, degrees=True).as_matrix()
displaced = noisy @ R.T + np.array([0.5, 0.0, 0.0])

print("MPJPE of small noise        : %7.1f mm" % mpjpe(noisy, gt))
print("MPJPE after rigid transform : %7.1f mm" % mpjpe(displaced, gt))
print("PA-MPJPE (alignment undone) : %7.1f mm" % pa_mpjpe(displaced, gt))

# --- 2D: OKS falls off with error relative to instance scale
kp = rng.uniform(0, 100, size=(16, 2))
vis = np.ones(16)
for px in (0.0, 1.0, 5.0):
    score = oks(kp + px, kp, vis, area=2500.0)
    print(f"OKS at {px:3.0f}px offset on a 50x50 box: {score:.3f}")

# AP/AR sweep a greedy matcher over OKS thresholds
preds = [[(kp + rng.normal(scale=2.0, size=kp.shape), 0.9)],
         [(kp + rng.normal(scale=8.0, size=kp.shape), 0.8)]]
gts = [[(kp, vis, 2500.0)], [(kp, vis, 2500.0)]]
res = ap_ar(preds, gts)
print(f"\nAP@50:95 {res.ap_range:.3f}  AP@50 {res.ap[0.5]:.3f}  "
      f"AR@50:95 {res.ar_range:.3f}")

# --- report tables; improvement cells are computed internally
rows = [
    MetricsReport(name="Baseline", pve=140.0, mpjpe=120.0, pa_mpjpe=70.0),
    MetricsReport(name="CA_Transformer", pve=115.0, mpjpe=99.0, pa_mpjpe=58.0),
    MetricsReport(name="PyCAT4", pve=110.0, mpjpe=94.0, pa_mpjpe=56.0),
]
print("\n" + format_report(rows, kind="3d", fmt="txt"))

rows2 = [
    MetricsReport(name="Baseline", ap_50_95=0.14, ap_50=0.40, ap_75=0.06,
                  ar_50_95=0.28, ar_50=0.60, ar_75=0.22),
    MetricsReport(name="PyCAT4", ap_50_95=0.30, ap_50=0.62, ap_75=0.25,
                  ar_50_95=0.45, ar_50=0.77, ar_75=0.47),
]
print(format_report(rows2, kind="2d", fmt="txt"))

print("improvement arithmetic: 140.0 -> 110.0 is "
      f"{percent_improvement(110.0, 140.0):+.2f}% PVE")
