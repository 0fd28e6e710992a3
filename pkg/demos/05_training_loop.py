"""A complete miniature training run: config, loss curve, checkpoints,
restore, and a quick sanity evaluation.

Uses a 32-pixel model so this finishes in about half a minute on one core.
"""

import tempfile
from pathlib import Path

import numpy as np

from pycat4 import data, training
from pycat4.config import RunConfig, config_text

cfg = RunConfig(variant="pycat4", img_size=32, width=4, pyramid_width=4,
                depths=(1, 1, 1, 1), heads=(1, 1, 1, 1), window=4,
                ca_reduction=2, t_max=2, temporal_dim=8, sample_verts=8,
                batch_size=4, steps=40, lr=5e-4, seed=0, augment=False)
print("config (flat text format, also embedded into checkpoints):")
print("\n".join(config_text(cfg).splitlines()[:6]), "...")

records = data.synth_generate(4, seed=3, img_size=32)
print(f"\ntraining on {len(records)} synthetic samples, "
      f"{cfg.steps} steps of batch {cfg.batch_size}")

with tempfile.TemporaryDirectory() as tmp:
    res = training.train(cfg, records, out_dir=tmp,
                         log=lambda m: print(" ", m))
    print(f"\nwall time: {res.seconds:.1f}s")
    print(f"data-order digest: {res.digest[:16]}...")

    first, last = res.curve[0], res.curve[-1]
    print("loss terms, first -> last step:")
    for key in first:
        print(f"  {key:<6} {first[key]:8.4f} -> {last[key]:8.4f}")

    # the checkpoint carries the config, so restore needs only the path
    model, cfg_back = training.load_model(res.ckpt_path)
    assert cfg_back == cfg
    same = all(np.array_equal(p.data, q.data)
               for (_, p), (_, q) in zip(res.model.named_parameters(),
                                         model.named_parameters()))
    print(f"\ncheckpoint restore: parameters identical = {same}")
    print("files written:", sorted(p.name for p in Path(tmp).iterdir()))

    rep = training.evaluate(model, records, mode="3d", cfg=cfg)
    print(f"\n3D eval on the training samples: MPJPE {rep.mpjpe:.1f} mm, "
          f"PVE {rep.pve:.1f} mm, PA-MPJPE {rep.pa_mpjpe:.1f} mm")
