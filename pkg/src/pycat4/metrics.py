"""Pose-estimation metrics and report tables.

3D block: MPJPE, PA-MPJPE (similarity-aligned), PVE, all in millimeters.
2D block: OKS-based AP/AR over a threshold sweep with greedy matching.
Everything here is plain numpy on ground-truth/prediction arrays; nothing
needs gradients.
"""

from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError

# per-keypoint falloff constants for the standard 17-point annotation format
COCO_SIGMAS = np.array([
    .026, .025, .025, .035, .035, .079, .079, .072, .072, .062, .062,
    .107, .107, .087, .087, .089, .089])

DEFAULT_SIGMA = 0.05
DEFAULT_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2))

CANONICAL_ORDER = ("Baseline", "CA", "CA_Transformer", "CA_FPN_Transformer",
                   "PyCAT4")


def mpjpe(pred, gt):
    """Mean per-joint position error in mm; inputs [K,3] in meters."""
    pred, gt = np.asarray(pred, dtype=float), np.asarray(gt, dtype=float)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ContractError(f"joint sets disagree: {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=1).mean() * 1000.0)


def pve(pred, gt):
    """Mean per-vertex error in mm; inputs [N,3] in meters."""
    pred, gt = np.asarray(pred, dtype=float), np.asarray(gt, dtype=float)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ContractError(f"vertex sets disagree: {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=1).mean() * 1000.0)


def procrustes_align(pred, gt):
    """Best similarity transform s*R @ p + t onto gt.

    Closed form from the centered cross-covariance, with the determinant
    guard so R is a proper rotation.  Returns (s, R, t, aligned_pred).
    """
    P, G = np.asarray(pred, dtype=float), np.asarray(gt, dtype=float)
    if P.shape != G.shape or P.ndim != 2 or P.shape[1] != 3:
        raise ContractError(f"point sets disagree: {P.shape} vs {G.shape}")
    M = P.shape[0]
    if M < 3:
        raise ContractError(f"need at least 3 points, got {M}")
    mu_p, mu_g = P.mean(axis=0), G.mean(axis=0)
    X, Y = P - mu_p, G - mu_g
    var_p = (X * X).sum() / M
    C = Y.T @ X / M
    if var_p < 1e-12 or np.linalg.matrix_rank(C, tol=1e-9) < 2:
        raise ContractError("degenerate point configuration")
    U, D, Vt = np.linalg.svd(C)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = float((D * np.diag(S)).sum() / var_p)
    t = mu_g - s * R @ mu_p
    aligned = s * P @ R.T + t
    return s, R, t, aligned


def pa_mpjpe(pred, gt):
    """MPJPE after similarity alignment, in mm."""
    _, _, _, aligned = procrustes_align(pred, gt)
    return mpjpe(aligned, gt)


def oks(pred, gt, visibility, area, sigmas=None):
    """Object keypoint similarity in [0,1].

    Mean over visible keypoints of exp(-d^2 / (2 * area * (2*sigma)^2)).
    """
    pred, gt = np.asarray(pred, dtype=float), np.asarray(gt, dtype=float)
    vis = np.asarray(visibility)
    if pred.shape != gt.shape or pred.shape[0] != vis.shape[0]:
        raise ContractError(f"keypoint sets disagree: {pred.shape} vs {gt.shape}")
    if area <= 0:
        raise ContractError(f"area must be positive, got {area}")
    if sigmas is None:
        sigmas = np.full(pred.shape[0], DEFAULT_SIGMA)
    else:
        sigmas = np.asarray(sigmas, dtype=float)
    mask = vis > 0
    if not mask.any():
        raise ContractError("no visible keypoints")
    d2 = ((pred - gt) ** 2).sum(axis=1)
    vals = np.exp(-d2 / (2.0 * area * (2.0 * sigmas) ** 2))
    return float(np.mean(vals[mask]))


def _greedy_match(preds, gts, threshold, sigmas):
    """Match detections to ground truths in descending score order.

    preds: list of (keypoints [K,2], score); gts: list of (keypoints [K,2],
    visibility [K], area).  Each GT is consumed at most once; a detection
    counts as a true positive iff its best available OKS clears the
    threshold.  Returns [(score, is_tp)] in processing order.
    """
    order = sorted(range(len(preds)), key=lambda i: -preds[i][1])
    taken = [False] * len(gts)
    out = []
    for i in order:
        kpts, score = preds[i]
        best_j, best_oks = -1, -1.0
        for j, (gk, gv, garea) in enumerate(gts):
            if taken[j] or not (np.asarray(gv) > 0).any():
                continue
            o = oks(kpts, gk, gv, garea, sigmas)
            if o > best_oks:
                best_j, best_oks = j, o
        if best_j >= 0 and best_oks >= threshold:
            taken[best_j] = True
            out.append((score, True))
        else:
            out.append((score, False))
    return out


def _ap_from_flags(scores, flags, total_gt):
    """101-point interpolated area under the precision-recall curve."""
    if not scores:
        return 0.0, 0.0
    order = np.argsort(-np.asarray(scores), kind="stable")
    tp = np.asarray(flags, dtype=float)[order]
    tp_cum = np.cumsum(tp)
    precision = tp_cum / np.arange(1, len(tp) + 1)
    recall = tp_cum / total_gt
    env = []
    for r in np.linspace(0.0, 1.0, 101):
        at = precision[recall >= r]
        env.append(float(at.max()) if at.size else 0.0)
    ap = sum(env) / 101.0
    return ap, float(recall[-1])


@dataclass
class ApArResult:
    ap: dict          # threshold -> AP
    ar: dict          # threshold -> max recall
    ap_range: float   # mean over thresholds
    ar_range: float


def ap_ar(predictions, ground_truths, thresholds=DEFAULT_THRESHOLDS,
          sigmas=None):
    """AP/AR over OKS thresholds.

    predictions: per-image list of (keypoints [K,2], score) lists;
    ground_truths: per-image list of (keypoints [K,2], visibility, area)
    lists.  Greedy matching per image, pooled ranking across images.
    """
    if len(predictions) != len(ground_truths):
        raise ContractError("prediction/GT image counts disagree")
    total_gt = sum(len(g) for g in ground_truths)
    if total_gt == 0:
        raise ContractError("no ground-truth instances: AP undefined")
    ap, ar = {}, {}
    for th in thresholds:
        scores, flags = [], []
        for preds, gts in zip(predictions, ground_truths):
            for score, is_tp in _greedy_match(preds, gts, th, sigmas):
                scores.append(score)
                flags.append(is_tp)
        ap[th], ar[th] = _ap_from_flags(scores, flags, total_gt)
    ap_range = sum(ap.values()) / len(ap)
    ar_range = sum(ar.values()) / len(ar)
    return ApArResult(ap=ap, ar=ar, ap_range=ap_range, ar_range=ar_range)


def percent_improvement(new, baseline, direction="lower"):
    """(new - baseline) / baseline * 100; sign follows the raw values."""
    if direction not in ("lower", "higher"):
        raise ContractError(f"unknown direction {direction!r}")
    if baseline == 0:
        raise ContractError("zero baseline: improvement undefined")
    return (new - baseline) / baseline * 100.0


@dataclass
class MetricsReport:
    name: str
    pve: float = None
    mpjpe: float = None
    pa_mpjpe: float = None
    ap_50_95: float = None
    ap_50: float = None
    ap_75: float = None
    ar_50_95: float = None
    ar_50: float = None
    ar_75: float = None
    improvements: dict = field(default_factory=dict)

    THREE_D = ("pve", "mpjpe", "pa_mpjpe")
    TWO_D = ("ap_50_95", "ap_50", "ap_75", "ar_50_95", "ar_50", "ar_75")

    def validate(self):
        for f in self.THREE_D:
            v = getattr(self, f)
            if v is not None and v < 0:
                raise ContractError(f"{f} must be >= 0, got {v}")
        for f in self.TWO_D:
            v = getattr(self, f)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ContractError(f"{f} must be in [0,1], got {v}")
        return self


def _order_reports(reports):
    known = {n: i for i, n in enumerate(CANONICAL_ORDER)}
    return sorted(range(len(reports)),
                  key=lambda i: (known.get(reports[i].name, len(known)), i))


def _render_rows(header, rows):
    widths = [max(len(str(r[c])) for r in [header] + rows)
              for c in range(len(header))]
    lines = []
    for r in [header] + rows:
        lines.append("  ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip())
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def _render_csv(header, rows):
    return "\n".join(",".join(str(v) for v in r) for r in [header] + rows) + "\n"


def _improvement_cell(new, baseline, direction):
    # a zero baseline leaves the percentage undefined; print a dash
    if baseline == 0:
        return "-"
    return f"{percent_improvement(new, baseline, direction):+.2f}%"


def format_report(reports, kind="3d", fmt="txt"):
    """Column-aligned table (or CSV) in canonical row order.

    kind="3d": Model | PVE | MPJPE | Recon. Error | PVE Improv. (%), with the
    improvement column relative to the first (baseline) row and omitted for a
    single report.  kind="2d": the six AP/AR columns plus, when there are at
    least two rows, a trailing improvement row (last vs first).
    """
    if not reports:
        raise ContractError("need at least one report")
    if kind not in ("3d", "2d"):
        raise ContractError(f"unknown report kind {kind!r}")
    order = _order_reports(reports)
    rep = [reports[i] for i in order]
    base = rep[0]
    if kind == "3d":
        header = ["Model", "PVE", "MPJPE", "Recon. Error"]
        multi = len(rep) > 1
        if multi:
            header.append("PVE Improv. (%)")
        rows = []
        for r in rep:
            row = [r.name, f"{r.pve:.2f}", f"{r.mpjpe:.2f}", f"{r.pa_mpjpe:.2f}"]
            if multi:
                if r is base:
                    row.append("-")
                else:
                    row.append(_improvement_cell(r.pve, base.pve, "lower"))
            rows.append(row)
    else:
        header = ["Model", "AP@50:95", "AP@50", "AP@75",
                  "AR@50:95", "AR@50", "AR@75"]
        rows = []
        for r in rep:
            rows.append([r.name] + [f"{getattr(r, f):.3f}"
                                    for f in MetricsReport.TWO_D])
        if len(rep) > 1:
            last = rep[-1]
            imp = ["Improvement (%)"]
            for f in MetricsReport.TWO_D:
                imp.append(_improvement_cell(getattr(last, f),
                                             getattr(base, f), "higher"))
            rows.append(imp)
    if fmt == "csv":
        return _render_csv(header, rows)
    if fmt != "txt":
        raise ContractError(f"unknown format {fmt!r}")
    return _render_rows(header, rows)


__all__ = [
    "COCO_SIGMAS", "DEFAULT_SIGMA", "DEFAULT_THRESHOLDS", "CANONICAL_ORDER",
    "mpjpe", "pve", "procrustes_align", "pa_mpjpe", "oks", "ap_ar",
    "ApArResult", "percent_improvement", "MetricsReport", "format_report",
]
