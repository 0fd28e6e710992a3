"""The five model variants, from plain CNN baseline to the full pipeline.

Each variant adds one mechanism to the previous one:
  baseline             convolutional trunk + iterative regressor
  ca                   + coordinate attention on the trunk features
  ca_transformer       + hierarchical windowed-attention backbone
  ca_fpn_transformer   + multi-scale pyramid fusion with dilated context
  pycat4               + temporal fusion over past frames
"""

import numpy as np

from pycat4.model import DISPLAY_NAMES, VARIANTS, PoseNetwork, pyramid_sizes
from pycat4.tensor import Tensor, no_grad

KW = dict(img_size=112, width=16, pyramid_width=16, depths=(1, 1, 2, 1),
          heads=(1, 2, 4, 8), window=7, ca_reduction=8, t_max=3,
          temporal_dim=32, sample_verts=24)


def param_count(model):
    return sum(p.data.size for _, p in model.named_parameters())


img = Tensor(np.random.default_rng(0).uniform(size=(1, 3, 112, 112)))
print(f"{'variant':<20} {'params':>9}  {'pyramid':<14} {'theta dim'}")
for variant in VARIANTS:
    net = PoseNetwork(np.random.default_rng(1), variant=variant, **KW)
    sizes = pyramid_sizes(variant, KW["img_size"])
    with no_grad():
        steps, dense = net(img)
    theta = steps[-1].theta
    print(f"{DISPLAY_NAMES[variant]:<20} {param_count(net):>9,}  "
          f"{str(sizes):<14} {theta.shape[1]}")

print("\nthe regressor emits one state per correction pass:")
net = PoseNetwork(np.random.default_rng(1), variant="pycat4", **KW)
with no_grad():
    steps, dense = net(img)
for i, s in enumerate(steps):
    print(f"  pass {i}: theta {s.theta.shape}, mesh {s.verts.shape}, "
          f"2D joints {s.kp2d.shape}")
print("dense heads:", [tuple(l.shape) for l in dense.logits])

# past frames enter through the temporal stage; the window is causal
with no_grad():
    frames = [Tensor(np.random.default_rng(k).uniform(size=(1, 3, 112, 112)))
              for k in range(3)]
    seq_steps, _ = net.forward_sequence(frames)
print("sequence input gives the same state shapes:",
      seq_steps[-1].theta.shape)
