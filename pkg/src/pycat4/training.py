"""Training, evaluation, and ablation drivers."""

import dataclasses
import hashlib
import os
import time

import numpy as np

from . import checkpoint as ckpt
from . import tensor as T
from .config import config_text
from .data import augment, downsample_nearest, norm_to_pixel, pixel_to_norm
from .metrics import MetricsReport, ap_ar, format_report, mpjpe, pa_mpjpe, pve
from .model import DISPLAY_NAMES, VARIANTS, PoseNetwork, pyramid_sizes
from .optim import Adam
from .regressor import total_loss
from .tensor import ContractError, Tensor


def build_model(cfg):
    cfg.validate()
    return PoseNetwork(np.random.default_rng(cfg.seed), **cfg.model_kwargs())


def batch_plan(n, batch_size, steps, seed):
    """Shuffled epoch cycling; the sha256 digest fingerprints the order."""
    if n < 1:
        raise ContractError("empty dataset")
    rng = np.random.default_rng(seed)
    parts, have = [], 0
    while have < steps * batch_size:
        perm = rng.permutation(n)
        parts.append(perm)
        have += n
    flat = np.concatenate(parts)[:steps * batch_size]
    plan = flat.reshape(steps, batch_size).astype(np.int64)
    return plan, hashlib.sha256(plan.tobytes()).hexdigest()


def _window(records, i, t):
    """Causal window of up to t frames ending at records[i], same sequence."""
    rec = records[i]
    out = [rec]
    j = i
    while len(out) < t:
        if j - 1 < 0:
            break
        prev, cur = records[j - 1], records[j]
        if prev.seq_id != cur.seq_id or prev.frame_id != cur.frame_id - 1:
            break
        out.append(prev)
        j -= 1
    return out[::-1]


def _draw_aug(cfg, rng, img_size):
    deg = rng.uniform(-cfg.aug_rot, cfg.aug_rot)
    a = rng.uniform(cfg.aug_scale_min, cfg.aug_scale_max)
    shift = rng.uniform(-cfg.aug_jitter, cfg.aug_jitter, size=2) * img_size
    return deg, a, shift


def prepare_gt(recs, cfg, sizes):
    """Loss targets for one batch of current frames."""
    kp = np.stack([r.keypoints2d for r in recs])
    gt = {
        "kp2d": pixel_to_norm(kp[:, :, :2], cfg.img_size),
        "kp2d_vis": (kp[:, :, 2] > 0).astype(float),
    }
    if any(r.has3d for r in recs):
        gt["has3d"] = np.array([r.has3d for r in recs])
        zj = np.zeros_like(recs[0].joints3d if recs[0].has3d else
                           next(r for r in recs if r.has3d).joints3d)
        zv = np.zeros_like(next(r for r in recs if r.has3d).vertices3d)
        gt["joints3d"] = np.stack(
            [r.joints3d if r.has3d else zj for r in recs])
        gt["verts3d"] = np.stack(
            [r.vertices3d if r.has3d else zv for r in recs])
    if all(r.part_map is not None for r in recs):
        gt["parts"] = [np.stack([downsample_nearest(r.part_map, s)
                                 for r in recs]) for s in sizes]
        gt["uv"] = [np.stack([downsample_nearest(r.uv_map, s)
                              for r in recs]) for s in sizes]
    return gt


def _batch_loss(model, records, idx, cfg, sizes, aug_rng):
    temporal = "temporal" in model.flags
    t_cap = cfg.t_max if temporal else 1
    windows = []
    for i in idx:
        win = _window(records, int(i), t_cap)
        if cfg.augment:
            p = _draw_aug(cfg, aug_rng, cfg.img_size)
            win = [augment(r, params=p) for r in win]
        windows.append(win)

    groups = {}
    for w in windows:
        groups.setdefault(len(w), []).append(w)
    B = len(windows)
    total, acc = None, {}
    for t in sorted(groups):
        wins = groups[t]
        frames = [Tensor(np.stack([w[k].image for w in wins]))
                  for k in range(t)]
        steps, dense = model.forward_sequence(frames)
        gt = prepare_gt([w[-1] for w in wins], cfg, sizes)
        loss, bd = total_loss(steps, dense, gt, weights=cfg.loss_weights())
        frac = len(wins) / B
        total = loss * frac if total is None else total + loss * frac
        for k, v in bd.items():
            acc[k] = acc.get(k, 0.0) + v * frac
    return total, acc


@dataclasses.dataclass
class TrainResult:
    model: object
    curve: list           # per-step weighted loss breakdowns
    digest: str           # data-order fingerprint
    ckpt_path: str = None
    seconds: float = 0.0


def train(cfg, records, out_dir=None, log=None):
    """Deterministic training run; aborts on the first non-finite loss term."""
    cfg.validate()
    if not records:
        raise ContractError("no training records")
    model = build_model(cfg)
    opt = Adam(model.parameters(), lr=cfg.lr)
    plan, digest = batch_plan(len(records), cfg.batch_size, cfg.steps,
                              cfg.seed + 1000)
    aug_rng = np.random.default_rng(cfg.seed + 2000)
    sizes = pyramid_sizes(cfg.variant, cfg.img_size)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    curve = []
    t0 = time.time()
    for step in range(cfg.steps):
        # fresh tape per step, else the op graph accumulates across steps
        with T.new_tape():
            loss, breakdown = _batch_loss(model, records, plan[step], cfg,
                                          sizes, aug_rng)
            for name, val in breakdown.items():
                if not np.isfinite(val):
                    raise ContractError(
                        f"non-finite loss term '{name}' at step {step}")
            grads = T.backward(loss)
        opt.step(grads)
        curve.append(breakdown)
        if log and (step % 25 == 0 or step == cfg.steps - 1):
            log(f"step {step:5d}  " + "  ".join(
                f"{k}={v:.5f}" for k, v in breakdown.items()))
        if out_dir and cfg.checkpoint_every \
                and (step + 1) % cfg.checkpoint_every == 0:
            ckpt.save_model(os.path.join(out_dir, f"step_{step + 1:05d}.ckpt"),
                            model, config_text(cfg))

    path = None
    if out_dir:
        path = os.path.join(out_dir, "model.ckpt")
        ckpt.save_model(path, model, config_text(cfg))
        keys = list(curve[0])
        with open(os.path.join(out_dir, "loss_curve.csv"), "w") as fh:
            fh.write("step," + ",".join(keys) + "\n")
            for s, bd in enumerate(curve):
                fh.write(f"{s}," + ",".join(f"{bd[k]:.10g}" for k in keys)
                         + "\n")
    return TrainResult(model=model, curve=curve, digest=digest,
                       ckpt_path=path, seconds=time.time() - t0)


def load_model(path):
    """Rebuild a model from a checkpoint with an embedded config."""
    from .config import parse_config
    loaded = ckpt.load_checkpoint(path)
    text = ckpt.stored_config_text(loaded)
    if text is None:
        raise ContractError(f"{path} has no embedded config; pass one explicitly")
    cfg = parse_config(text)
    model = build_model(cfg)
    ckpt.load_into(model, loaded)
    return model, cfg


def predict(model, records, cfg):
    """Final IEF state and dense maps per record (causal windows)."""
    temporal = "temporal" in model.flags
    t_cap = cfg.t_max if temporal else 1
    outs = []
    with T.no_grad():
        for i in range(len(records)):
            win = _window(records, i, t_cap)
            frames = [Tensor(w.image[None]) for w in win]
            steps, dense = model.forward_sequence(frames)
            outs.append((steps[-1], dense))
    return outs


def _gt_box_area(rec):
    vis = rec.keypoints2d[:, 2] > 0
    if not vis.any():
        raise ContractError("instance with no visible keypoints")
    xy = rec.keypoints2d[vis, :2]
    w, h = xy.max(axis=0) - xy.min(axis=0)
    return max(float(w * h), 1.0)


def _detection_score(dense):
    """Mean foreground probability of the finest part map."""
    logits = dense.logits[-1].data[0]
    z = logits - logits.max(axis=0, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=0, keepdims=True)
    return float(1.0 - p[0].mean())


def evaluate(model, records, mode="3d", cfg=None, oracle=False, name=None):
    """Metrics over a record list; oracle=True scores the GT against itself."""
    if mode not in ("3d", "2d"):
        raise ContractError(f"unknown eval mode {mode!r}")
    if not records:
        raise ContractError("no evaluation records")
    if cfg is None and not oracle:
        raise ContractError("evaluate needs the run config")
    rname = name or (DISPLAY_NAMES[model.variant] if model is not None
                     else "oracle")

    if mode == "3d":
        for r in records:
            if not r.has3d:
                raise ContractError("3d evaluation needs 3D ground truth")
        if oracle:
            pj = [r.joints3d for r in records]
            pv = [r.vertices3d for r in records]
        else:
            outs = predict(model, records, cfg)
            pj = [s.joints.data[0] for s, _ in outs]
            pv = [s.verts.data[0] for s, _ in outs]
        rep = MetricsReport(
            name=rname,
            pve=float(np.mean([pve(p, r.vertices3d)
                               for p, r in zip(pv, records)])),
            mpjpe=float(np.mean([mpjpe(p, r.joints3d)
                                 for p, r in zip(pj, records)])),
            pa_mpjpe=float(np.mean([pa_mpjpe(p, r.joints3d)
                                    for p, r in zip(pj, records)])))
        return rep.validate()

    gts = [[(r.keypoints2d[:, :2], r.keypoints2d[:, 2], _gt_box_area(r))]
           for r in records]
    if oracle:
        preds = [[(r.keypoints2d[:, :2], 1.0)] for r in records]
    else:
        outs = predict(model, records, cfg)
        preds = []
        for (step, dense), r in zip(outs, records):
            kp_pix = norm_to_pixel(step.kp2d.data[0], r.img_size)
            preds.append([(kp_pix, _detection_score(dense))])
    res = ap_ar(preds, gts)
    rep = MetricsReport(
        name=rname,
        ap_50_95=res.ap_range, ap_50=res.ap[0.5], ap_75=res.ap[0.75],
        ar_50_95=res.ar_range, ar_50=res.ar[0.5], ar_75=res.ar[0.75])
    return rep.validate()


@dataclasses.dataclass
class AblationResult:
    reports: list
    digest: str
    tables: dict
    seconds: float


def ablate(cfg, train_records, eval_records, out_dir=None, log=None):
    """Train and score every variant under identical seeds and data order."""
    reports, digests = [], set()
    t0 = time.time()
    for variant in VARIANTS:
        vcfg = dataclasses.replace(cfg, variant=variant)
        vdir = os.path.join(out_dir, variant) if out_dir else None
        if log:
            log(f"--- {variant} ({DISPLAY_NAMES[variant]})")
        res = train(vcfg, train_records, out_dir=vdir, log=log)
        digests.add(res.digest)
        r3 = evaluate(res.model, eval_records, "3d", vcfg)
        r2 = evaluate(res.model, eval_records, "2d", vcfg)
        reports.append(MetricsReport(
            name=DISPLAY_NAMES[variant], pve=r3.pve, mpjpe=r3.mpjpe,
            pa_mpjpe=r3.pa_mpjpe, ap_50_95=r2.ap_50_95, ap_50=r2.ap_50,
            ap_75=r2.ap_75, ar_50_95=r2.ar_50_95, ar_50=r2.ar_50,
            ar_75=r2.ar_75))
    if len(digests) != 1:
        raise ContractError(
            f"data order diverged across variants: {sorted(digests)}")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    tables = {}
    for kind in ("3d", "2d"):
        for fmt in ("txt", "csv"):
            text = format_report(reports, kind, fmt)
            tables[f"{kind}_{fmt}"] = text
            if out_dir:
                with open(os.path.join(out_dir, f"ablation_{kind}.{fmt}"),
                          "w") as fh:
                    fh.write(text if text.endswith("\n") else text + "\n")
    return AblationResult(reports=reports, digest=digests.pop(),
                          tables=tables, seconds=time.time() - t0)


__all__ = ["build_model", "batch_plan", "prepare_gt", "train", "TrainResult",
           "load_model", "predict", "evaluate", "ablate", "AblationResult"]
