"""Frame-directory streaming: rolling causal window, line-delimited output."""

import dataclasses
import json
import os
import time

import numpy as np
from PIL import Image

from . import tensor as T
from .data import norm_to_pixel
from .tensor import ContractError, Tensor

_IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp")


def read_frame(path, img_size):
    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.size != (img_size, img_size):
            im = im.resize((img_size, img_size), Image.BILINEAR)
        arr = np.asarray(im, dtype=float) / 255.0
    return arr.transpose(2, 0, 1)


def _record_line(name, step):
    st = step.state
    return json.dumps({
        "frame": name,
        "pose": np.round(st.pose.data[0], 10).tolist(),
        "betas": np.round(st.betas.data[0], 10).tolist(),
        "scale": round(float(st.scale.data[0, 0]), 10),
        "trans": np.round(st.trans.data[0], 10).tolist(),
        "joints2d": None,  # filled by caller with pixel coords
    })


@dataclasses.dataclass
class StreamResult:
    lines: list
    frames: int
    skipped: list
    timings: dict
    report: str


def throughput_report(timings, frames):
    """Task/time table over the honest pipeline stages."""
    rows = [("Frame Ingest", timings["ingest"]),
            ("Mesh Recovery", timings["recovery"]),
            ("Output Serialization", timings["serialization"])]
    total = sum(t for _, t in rows)
    rows.append(("Total", total))
    width = max(len(n) for n, _ in rows)
    lines = [f"{'Task':<{width}} | Time (s) | Per Frame (ms)"]
    for name, t in rows:
        per = 1000.0 * t / max(frames, 1)
        lines.append(f"{name:<{width}} | {t:8.3f} | {per:14.2f}")
    fps = frames / total if total > 0 else float("inf")
    lines.append(f"frames: {frames}, throughput: {fps:.2f} fps")
    return "\n".join(lines)


def stream(frames_dir, model, cfg, window=None, out_path=None, log=None):
    """Run causal-window inference over every image in a directory.

    Emits one JSON line per frame (body parameters plus 2D joint pixels).
    Unreadable files are skipped with a warning; an empty directory is an
    error.  window defaults to the model's temporal span and is capped by it.
    """
    if not os.path.isdir(frames_dir):
        raise ContractError(f"not a directory: {frames_dir}")
    window = cfg.t_max if window is None else window
    if not 1 <= window <= cfg.t_max:
        raise ContractError(f"window {window} outside [1, {cfg.t_max}]")
    if "temporal" not in model.flags:
        window = 1
    files = sorted(f for f in os.listdir(frames_dir)
                   if f.lower().endswith(_IMAGE_EXTS))
    if not files:
        raise ContractError(f"no image frames in {frames_dir}")

    timings = {"ingest": 0.0, "recovery": 0.0, "serialization": 0.0}
    lines, skipped = [], []
    buf = []
    for name in files:
        t0 = time.perf_counter()
        try:
            frame = read_frame(os.path.join(frames_dir, name), cfg.img_size)
        except (OSError, ValueError) as e:
            skipped.append(name)
            if log:
                log(f"warning: skipping unreadable frame {name}: {e}")
            continue
        t1 = time.perf_counter()
        timings["ingest"] += t1 - t0

        buf.append(frame)
        buf = buf[-window:]
        with T.no_grad():
            steps, _ = model.forward_sequence([Tensor(f[None]) for f in buf])
        final = steps[-1]
        t2 = time.perf_counter()
        timings["recovery"] += t2 - t1

        kp_pix = norm_to_pixel(final.kp2d.data[0], cfg.img_size)
        doc = json.loads(_record_line(name, final))
        doc["joints2d"] = np.round(kp_pix, 10).tolist()
        lines.append(json.dumps(doc))
        timings["serialization"] += time.perf_counter() - t2

    if not lines:
        raise ContractError(f"no readable frames in {frames_dir}")
    if out_path:
        with open(out_path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    report = throughput_report(timings, len(lines))
    return StreamResult(lines=lines, frames=len(lines), skipped=skipped,
                        timings=timings, report=report)


__all__ = ["read_frame", "stream", "StreamResult", "throughput_report"]
