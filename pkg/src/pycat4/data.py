"""Synthetic sample generation, augmentation, and annotation ingestion.

Samples are self-consistent by construction: the stored 2D keypoints are the
weak-perspective projection of the stored 3D joints, which come from the
stored body parameters.  Rendering, part maps, and UV maps are rasterized
from the same posed mesh, so dense targets agree with the sparse ones.
"""

import dataclasses
import json
import os

import numpy as np
from PIL import Image

from . import tensor as T
from .body import (NUM_JOINTS, NUM_SHAPES, JOINT_NAMES, BodyModel, BodyState,
                   build_default_mesh, project_weak_perspective)
from .tensor import ContractError, Tensor

# rotation (deg), scale, and crop-jitter caps enforced by augment()
MAX_ROT_DEG = 30.0
SCALE_BOUNDS = (0.8, 1.2)
MAX_JITTER = 0.1

# flat-shading palette, one RGB row per body part
_PALETTE = np.array([
    [0.85, 0.35, 0.35],   # pelvis region
    [0.90, 0.65, 0.25],   # torso
    [0.95, 0.85, 0.55],   # head
    [0.35, 0.70, 0.35],   # l upper arm
    [0.45, 0.85, 0.55],   # l lower arm
    [0.30, 0.45, 0.85],   # r upper arm
    [0.45, 0.65, 0.95],   # r lower arm
    [0.70, 0.40, 0.80],   # l leg
    [0.85, 0.55, 0.60],   # r leg
])


@dataclasses.dataclass
class SampleRecord:
    """One training/eval sample; 3D and dense fields are optional."""
    image: np.ndarray               # [3, H, W] in [0, 1]
    keypoints2d: np.ndarray         # [K, 3] pixel x, y, visibility
    joints3d: np.ndarray = None     # [K, 3]
    vertices3d: np.ndarray = None   # [N, 3]
    pose: np.ndarray = None         # [K, 3] axis-angle
    betas: np.ndarray = None        # [S]
    scale: float = None
    trans: np.ndarray = None        # [2]
    part_map: np.ndarray = None     # [H, W] int, 0 = background
    uv_map: np.ndarray = None       # [2, H, W]
    seq_id: int = 0
    frame_id: int = 0

    @property
    def has3d(self):
        return self.joints3d is not None

    @property
    def img_size(self):
        return self.image.shape[1]

    def validate(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ContractError(f"image must be [3, H, W], got {self.image.shape}")
        if self.image.min() < 0.0 or self.image.max() > 1.0:
            raise ContractError("image values must lie in [0, 1]")
        if self.keypoints2d.shape != (NUM_JOINTS, 3):
            raise ContractError(
                f"keypoints2d must be [{NUM_JOINTS}, 3], got {self.keypoints2d.shape}")
        H, W = self.image.shape[1:]
        vis = self.keypoints2d[:, 2] > 0
        xy = self.keypoints2d[vis, :2]
        if xy.size and ((xy[:, 0] < 0) | (xy[:, 0] > W) |
                        (xy[:, 1] < 0) | (xy[:, 1] > H)).any():
            raise ContractError("visible keypoints must lie inside the image")


# ---------------------------------------------------------------------------
# coordinate conventions

def norm_to_pixel(xy, size):
    """[-1, 1] -> pixel units where pixel i spans [i, i+1] (center i+0.5)."""
    return (np.asarray(xy) + 1.0) * (size / 2.0)


def pixel_to_norm(xy, size):
    return np.asarray(xy) * (2.0 / size) - 1.0


def downsample_nearest(arr, size):
    """Nearest-neighbor resample of trailing [H, W] axes to [size, size]."""
    H, W = arr.shape[-2:]
    ri = np.minimum(((np.arange(size) + 0.5) * H / size).astype(int), H - 1)
    ci = np.minimum(((np.arange(size) + 0.5) * W / size).astype(int), W - 1)
    return arr[..., ri[:, None], ci[None, :]]


# ---------------------------------------------------------------------------
# rasterization

def rasterize_mesh(verts_pix, verts_z, faces, vertex_part, vertex_uv, size):
    """Z-buffered barycentric fill; larger z wins (viewer on the +z side).

    Returns (part_map [H, W] with 0 = background, uv_map [2, H, W],
    depth shading [H, W] in [0, 1] over foreground pixels).
    """
    H = W = size
    part_map = np.zeros((H, W), dtype=np.int64)
    uv_map = np.zeros((2, H, W))
    zbuf = np.full((H, W), -np.inf)

    for f in range(faces.shape[0]):
        i0, i1, i2 = faces[f]
        p0, p1, p2 = verts_pix[i0], verts_pix[i1], verts_pix[i2]
        lo = np.floor(np.minimum(np.minimum(p0, p1), p2)).astype(int)
        hi = np.ceil(np.maximum(np.maximum(p0, p1), p2)).astype(int)
        x0, y0 = np.maximum(lo, 0)
        x1, y1 = np.minimum(hi, (W, H))
        if x0 >= x1 or y0 >= y1:
            continue
        xs = np.arange(x0, x1) + 0.5
        ys = np.arange(y0, y1) + 0.5
        px, py = np.meshgrid(xs, ys)

        d = ((p1[0] - p0[0]) * (p2[1] - p0[1])
             - (p2[0] - p0[0]) * (p1[1] - p0[1]))
        if abs(d) < 1e-12:
            continue
        w1 = ((px - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (py - p0[1])) / d
        w2 = ((p1[0] - p0[0]) * (py - p0[1]) - (px - p0[0]) * (p1[1] - p0[1])) / d
        w0 = 1.0 - w1 - w2
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue

        z = w0 * verts_z[i0] + w1 * verts_z[i1] + w2 * verts_z[i2]
        tile = zbuf[y0:y1, x0:x1]
        win = inside & (z > tile)
        if not win.any():
            continue
        tile[win] = z[win]
        part_map[y0:y1, x0:x1][win] = vertex_part[i0] + 1
        u = w0 * vertex_uv[i0, 0] + w1 * vertex_uv[i1, 0] + w2 * vertex_uv[i2, 0]
        v = w0 * vertex_uv[i0, 1] + w1 * vertex_uv[i1, 1] + w2 * vertex_uv[i2, 1]
        uv_map[0, y0:y1, x0:x1][win] = np.clip(u[win], 0.0, 1.0)
        uv_map[1, y0:y1, x0:x1][win] = np.clip(v[win], 0.0, 1.0)

    fg = part_map > 0
    shade = np.zeros((H, W))
    if fg.any():
        z = zbuf[fg]
        span = z.max() - z.min()
        shade[fg] = 0.5 if span < 1e-12 else (z - z.min()) / span
    return part_map, uv_map, shade


def render_sample(state_np, model, size, rng):
    """Pose the mesh for one raw parameter dict and draw the full sample."""
    pose = Tensor(state_np["pose"][None])
    betas = Tensor(state_np["betas"][None])
    verts_t, joints_t = model.forward(pose, betas)
    scale = Tensor(np.array([[state_np["scale"]]]))
    trans = Tensor(state_np["trans"][None])
    kp_n = project_weak_perspective(joints_t, scale, trans).data[0]
    v2_n = project_weak_perspective(verts_t, scale, trans).data[0]

    verts3d = verts_t.data[0]
    joints3d = joints_t.data[0]
    kp_pix = norm_to_pixel(kp_n, size)
    verts_pix = norm_to_pixel(v2_n, size)

    mesh = model.mesh
    part_map, uv_map, shade = rasterize_mesh(
        verts_pix, verts3d[:, 2], mesh.faces, mesh.vertex_part,
        mesh.vertex_uv, size)

    image = rng.uniform(0.0, 0.25, size=(3, size, size))
    fg = part_map > 0
    color = _PALETTE[part_map[fg] - 1].T * (0.75 + 0.25 * shade[fg])
    image[:, fg] = color

    vis = ((kp_pix[:, 0] >= 0) & (kp_pix[:, 0] <= size)
           & (kp_pix[:, 1] >= 0) & (kp_pix[:, 1] <= size))
    sigma = max(size / 56.0, 1.0)
    ax = np.arange(size) + 0.5
    for k in np.nonzero(vis)[0]:
        bx, by = kp_pix[k]
        blob = np.exp(-((ax[None, :] - bx) ** 2 + (ax[:, None] - by) ** 2)
                      / (2.0 * sigma * sigma))
        image += 0.3 * blob[None]
    image = np.clip(image, 0.0, 1.0)

    kp = np.concatenate([kp_pix, np.where(vis, 2.0, 0.0)[:, None]], axis=1)
    return SampleRecord(
        image=image, keypoints2d=kp, joints3d=joints3d, vertices3d=verts3d,
        pose=state_np["pose"].copy(), betas=state_np["betas"].copy(),
        scale=float(state_np["scale"]), trans=state_np["trans"].copy(),
        part_map=part_map, uv_map=uv_map)


def _random_state(rng):
    pose = rng.uniform(-0.3, 0.3, size=(NUM_JOINTS, 3))
    pose[0] = [rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15),
               np.pi + rng.uniform(-0.3, 0.3)]  # z flip: head up in y-down pixels
    return {
        "pose": pose,
        "betas": rng.uniform(-1.0, 1.0, size=NUM_SHAPES),
        "scale": rng.uniform(0.65, 0.9),
        "trans": rng.uniform(-0.1, 0.1, size=2),
    }


def synth_generate(count, seed, img_size=112, video=False, t=5):
    """Generate `count` samples (or `count` sequences of length t if video)."""
    if count < 1:
        raise ContractError("count must be positive")
    if video and t < 1:
        raise ContractError("sequence length must be positive")
    rng = np.random.default_rng(seed)
    model = BodyModel(build_default_mesh())
    records = []
    with T.no_grad():
        for i in range(count):
            if not video:
                rec = render_sample(_random_state(rng), model, img_size, rng)
                rec.seq_id, rec.frame_id = i, 0
                records.append(rec)
                continue
            a, b = _random_state(rng), _random_state(rng)
            for f in range(t):
                u = f / max(t - 1, 1)
                mix = {k: (1.0 - u) * np.asarray(a[k]) + u * np.asarray(b[k])
                       for k in a}
                mix["scale"] = float(mix["scale"])
                rec = render_sample(mix, model, img_size, rng)
                rec.seq_id, rec.frame_id = i, f
                records.append(rec)
    for rec in records:
        rec.validate()
    return records


# ---------------------------------------------------------------------------
# augmentation

def _rot2(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


_MESH_CACHE = None


def _rest_root(betas):
    """Rest-pose root joint for the default body at the given shape."""
    global _MESH_CACHE
    if _MESH_CACHE is None:
        _MESH_CACHE = build_default_mesh()
    V = _MESH_CACHE.template + _MESH_CACHE.shape_basis @ betas
    return _MESH_CACHE.joint_reg[0] @ V


def _compose_root(rot2, root_aa):
    """Left-compose an in-plane rotation onto a root axis-angle vector."""
    from scipy.spatial.transform import Rotation
    R3 = np.eye(3)
    R3[:2, :2] = rot2
    R = R3 @ Rotation.from_rotvec(root_aa).as_matrix()
    return Rotation.from_matrix(R).as_rotvec()


def _warp_bilinear(image, inv, size):
    """Inverse-map warp of [C, H, W]; zero fill outside the source frame."""
    ax = np.arange(size) + 0.5
    gx, gy = np.meshgrid(ax, ax)
    src = inv[:2, :2] @ np.stack([gx.ravel(), gy.ravel()]) + inv[:2, 2:3]
    px, py = src[0] - 0.5, src[1] - 0.5
    x0, y0 = np.floor(px).astype(int), np.floor(py).astype(int)
    fx, fy = px - x0, py - y0
    out = np.zeros((image.shape[0], size * size))
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        xi, yi = x0 + dx, y0 + dy
        ok = (xi >= 0) & (xi < size) & (yi >= 0) & (yi < size)
        w = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy) * ok
        out += image[:, np.clip(yi, 0, size - 1), np.clip(xi, 0, size - 1)] * w
    return out.reshape(image.shape[0], size, size)


def _warp_nearest(arr, inv, size):
    ax = np.arange(size) + 0.5
    gx, gy = np.meshgrid(ax, ax)
    src = inv[:2, :2] @ np.stack([gx.ravel(), gy.ravel()]) + inv[:2, 2:3]
    xi, yi = np.floor(src[0]).astype(int), np.floor(src[1]).astype(int)
    ok = (xi >= 0) & (xi < size) & (yi >= 0) & (yi < size)
    vals = arr[..., np.clip(yi, 0, size - 1), np.clip(xi, 0, size - 1)]
    vals = vals * ok if arr.dtype != np.int64 else np.where(ok, vals, 0)
    return vals.reshape(arr.shape[:-2] + (size, size))


def augment(record, rng=None, rot=MAX_ROT_DEG, scale=SCALE_BOUNDS,
            jitter=MAX_JITTER, params=None):
    """Random rotate/scale/crop-shift; all stored GT moves consistently.

    `params` = (theta_deg, scale, shift_xy_px) pins the transform, e.g. to
    reuse one transform across a video sequence.  Ranges are capped at the
    module defaults; out-of-frame keypoints get their visibility cleared.
    """
    if rot > MAX_ROT_DEG + 1e-9 or rot < 0:
        raise ContractError(f"rotation range {rot} outside [0, {MAX_ROT_DEG}]")
    if scale[0] < SCALE_BOUNDS[0] - 1e-9 or scale[1] > SCALE_BOUNDS[1] + 1e-9 \
            or scale[0] > scale[1]:
        raise ContractError(f"scale range {scale} outside {SCALE_BOUNDS}")
    if jitter > MAX_JITTER + 1e-9 or jitter < 0:
        raise ContractError(f"crop jitter {jitter} outside [0, {MAX_JITTER}]")
    H, W = record.image.shape[1:]
    if H != W:
        raise ContractError("augmentation expects square images")

    if params is None:
        theta = np.deg2rad(rng.uniform(-rot, rot))
        a = rng.uniform(scale[0], scale[1])
        shift = rng.uniform(-jitter, jitter, size=2) * W
    else:
        theta, a, shift = params
        theta = np.deg2rad(theta)
        shift = np.asarray(shift, dtype=float)

    R = _rot2(theta)
    c = np.array([W / 2.0, H / 2.0])
    A = np.eye(3)
    A[:2, :2] = a * R
    A[:2, 2] = c + shift - a * (R @ c)
    if np.array_equal(A, np.eye(3)):
        return dataclasses.replace(record)
    inv = np.linalg.inv(A)

    new = dataclasses.replace(record)
    new.image = np.clip(_warp_bilinear(record.image, inv, W), 0.0, 1.0)

    kp = record.keypoints2d.copy()
    kp[:, :2] = kp[:, :2] @ A[:2, :2].T + A[:2, 2]
    inside = ((kp[:, 0] >= 0) & (kp[:, 0] <= W)
              & (kp[:, 1] >= 0) & (kp[:, 1] <= H))
    kp[:, 2] = np.where(inside, kp[:, 2], 0.0)
    new.keypoints2d = kp

    if record.has3d:
        # composing Rz onto the root axis-angle pivots the posed body about
        # the rest root joint, so GT rotates about that point and the pixel
        # shift lands in trans
        R3 = np.eye(3)
        R3[:2, :2] = R
        r0 = _rest_root(record.betas)
        new.joints3d = (record.joints3d - r0) @ R3.T + r0
        new.vertices3d = (record.vertices3d - r0) @ R3.T + r0
        new.pose = record.pose.copy()
        new.pose[0] = _compose_root(R, record.pose[0])
        new.scale = record.scale * a
        # pixel affine restated on [-1, 1] coords: x' = aR x + c_n
        c_n = A[:2, :2] @ np.ones(2) + 2.0 * A[:2, 2] / W - 1.0
        new.trans = (A[:2, :2] @ record.trans + c_n
                     - record.scale * a * ((np.eye(2) - R) @ r0[:2]))
    if record.part_map is not None:
        new.part_map = _warp_nearest(record.part_map, inv, W)
        new.uv_map = _warp_nearest(record.uv_map, inv, W)
    return new


# ---------------------------------------------------------------------------
# annotation files (keypoint-JSON subset compatible with common tooling)

def _require(obj, field, where):
    if field not in obj:
        raise ContractError(f"{where}: missing field '{field}'")
    return obj[field]


def export_annotations(records, out_dir, write_images=True):
    """Write images/*.png plus annotations.json; returns the json path."""
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    images, annos = [], []
    for i, rec in enumerate(records):
        name = f"img_{rec.seq_id:04d}_{rec.frame_id:03d}_{i:05d}.png"
        H, W = rec.image.shape[1:]
        if write_images:
            arr = np.clip(np.rint(rec.image * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(arr.transpose(1, 2, 0)).save(
                os.path.join(img_dir, name))
        images.append({"id": i + 1, "file_name": name,
                       "width": int(W), "height": int(H)})
        vis = rec.keypoints2d[:, 2] > 0
        xy = rec.keypoints2d[vis, :2]
        if xy.size:
            x0, y0 = xy.min(axis=0)
            x1, y1 = xy.max(axis=0)
        else:
            x0 = y0 = x1 = y1 = 0.0
        bbox = [float(x0), float(y0), float(x1 - x0), float(y1 - y0)]
        annos.append({
            "id": i + 1, "image_id": i + 1, "category_id": 1,
            "keypoints": [float(v) for v in rec.keypoints2d.ravel()],
            "num_keypoints": int(vis.sum()),
            "bbox": bbox, "area": float(bbox[2] * bbox[3]),
        })
    doc = {
        "images": images,
        "annotations": annos,
        "categories": [{"id": 1, "name": "person", "keypoints": JOINT_NAMES}],
    }
    path = os.path.join(out_dir, "annotations.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
    return path


def ingest_annotations(path, images_dir=None, load_images=True):
    """Read a keypoint-JSON file back into SampleRecords (2D-only GT).

    Image files are searched next to the json (images/ subdir) unless
    `images_dir` is given; `load_images=False` yields zero images sized
    from the declared width/height.
    """
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ContractError(
                f"{path}: invalid JSON at line {e.lineno} column {e.colno}: "
                f"{e.msg}") from e
    for field in ("images", "annotations", "categories"):
        _require(doc, field, path)
    cats = {c["id"]: c for c in doc["categories"]}
    img_meta = {}
    for im in doc["images"]:
        where = f"image entry {len(img_meta)}"
        img_meta[_require(im, "id", where)] = im
    if images_dir is None:
        images_dir = os.path.join(os.path.dirname(os.path.abspath(path)),
                                  "images")

    records = []
    for a in doc["annotations"]:
        where = f"annotation id {a.get('id', '?')}"
        image_id = _require(a, "image_id", where)
        kps = _require(a, "keypoints", where)
        cat = cats.get(a.get("category_id", 1))
        names = cat["keypoints"] if cat else JOINT_NAMES
        if len(kps) != 3 * len(names):
            raise ContractError(
                f"{where}: keypoints length {len(kps)} != 3*{len(names)}")
        if len(names) != NUM_JOINTS:
            raise ContractError(
                f"{where}: expected {NUM_JOINTS} keypoints, got {len(names)}")
        if image_id not in img_meta:
            raise ContractError(f"{where}: unknown image_id {image_id}")
        meta = img_meta[image_id]
        W = _require(meta, "width", f"image id {image_id}")
        H = _require(meta, "height", f"image id {image_id}")
        if load_images:
            fpath = os.path.join(images_dir, meta["file_name"])
            with Image.open(fpath) as im:
                arr = np.asarray(im.convert("RGB"), dtype=float) / 255.0
            image = arr.transpose(2, 0, 1)
        else:
            image = np.zeros((3, H, W))
        kp = np.array(kps, dtype=float).reshape(-1, 3)
        rec = SampleRecord(image=image, keypoints2d=kp,
                           seq_id=int(image_id), frame_id=0)
        vis = kp[:, 2] > 0
        oob = vis & ((kp[:, 0] < 0) | (kp[:, 0] > W)
                     | (kp[:, 1] < 0) | (kp[:, 1] > H))
        if oob.any():
            raise ContractError(
                f"{where}: visible keypoint outside the {W}x{H} image")
        records.append(rec)
    return records


# ---------------------------------------------------------------------------
# bulk array serialization for generated datasets

def save_dataset(records, path):
    """Pack homogeneous records into one .npz (requires full 3D+dense GT)."""
    if not records:
        raise ContractError("nothing to save")
    for rec in records:
        if not rec.has3d or rec.part_map is None:
            raise ContractError("save_dataset needs full-GT records")
    np.savez(
        path,
        images=np.stack([r.image for r in records]),
        keypoints2d=np.stack([r.keypoints2d for r in records]),
        joints3d=np.stack([r.joints3d for r in records]),
        vertices3d=np.stack([r.vertices3d for r in records]),
        pose=np.stack([r.pose for r in records]),
        betas=np.stack([r.betas for r in records]),
        scale=np.array([r.scale for r in records]),
        trans=np.stack([r.trans for r in records]),
        part_map=np.stack([r.part_map for r in records]),
        uv_map=np.stack([r.uv_map for r in records]),
        seq_id=np.array([r.seq_id for r in records], dtype=np.int64),
        frame_id=np.array([r.frame_id for r in records], dtype=np.int64),
    )


def load_dataset(path):
    with np.load(path) as z:
        n = z["images"].shape[0]
        return [SampleRecord(
            image=z["images"][i], keypoints2d=z["keypoints2d"][i],
            joints3d=z["joints3d"][i], vertices3d=z["vertices3d"][i],
            pose=z["pose"][i], betas=z["betas"][i],
            scale=float(z["scale"][i]), trans=z["trans"][i],
            part_map=z["part_map"][i], uv_map=z["uv_map"][i],
            seq_id=int(z["seq_id"][i]), frame_id=int(z["frame_id"][i]),
        ) for i in range(n)]


def load_records(path):
    """Load either a packed .npz dataset or an annotation .json file."""
    if str(path).endswith(".json"):
        return ingest_annotations(path)
    return load_dataset(path)


__all__ = [
    "SampleRecord", "synth_generate", "render_sample", "rasterize_mesh",
    "augment", "export_annotations", "ingest_annotations",
    "save_dataset", "load_dataset", "load_records",
    "norm_to_pixel", "pixel_to_norm", "downsample_nearest",
    "MAX_ROT_DEG", "SCALE_BOUNDS", "MAX_JITTER",
]
