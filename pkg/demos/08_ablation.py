"""Side-by-side training of all five variants on identical data order.

Every variant trains from the same seed over the same batch plan (the shared
digest proves it), then both report tables are rendered.  Miniature scale
here; the real study runs the same code at 112 pixels.
"""

import tempfile

from pycat4 import data, training
from pycat4.config import RunConfig

cfg = RunConfig(variant="pycat4", img_size=32, width=4, pyramid_width=4,
                depths=(1, 1, 1, 1), heads=(1, 1, 1, 1), window=4,
                ca_reduction=2, t_max=2, temporal_dim=8, sample_verts=8,
                batch_size=2, steps=6, lr=3e-4, seed=0, augment=False)
train_recs = data.synth_generate(4, seed=0, img_size=32)
eval_recs = data.synth_generate(3, seed=1, img_size=32)

with tempfile.TemporaryDirectory() as tmp:
    res = training.ablate(cfg, train_recs, eval_recs, out_dir=tmp,
                          log=lambda m: m.startswith("---") and print(m))
    print(f"\nall variants done in {res.seconds:.1f}s")
    print(f"shared data-order digest: {res.digest[:16]}...")
    print()
    print(res.tables["3d_txt"])
    print(res.tables["2d_txt"])
