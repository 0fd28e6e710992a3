"""Flat key=value run configuration.

One option per line, `key = value`, `#` starts a comment.  Tuple-valued
options take comma-separated integers.  Unknown and duplicate keys are
rejected with the offending line number.
"""

import dataclasses

import numpy as np

from .data import MAX_JITTER, MAX_ROT_DEG, SCALE_BOUNDS
from .model import VARIANTS
from .tensor import ContractError


@dataclasses.dataclass
class RunConfig:
    # model
    variant: str = "pycat4"
    img_size: int = 112
    in_ch: int = 3
    width: int = 32
    pyramid_width: int = 32
    depths: tuple = (2, 2, 2, 2)
    heads: tuple = (1, 2, 4, 8)
    window: int = 7
    ca_reduction: int = 8
    t_max: int = 5
    temporal_dim: int = 64
    sample_verts: int = 36
    # optimization
    lr: float = 5e-5
    batch_size: int = 8
    steps: int = 300
    seed: int = 0
    checkpoint_every: int = 0   # 0 = final checkpoint only
    # loss weights
    w_kp2d: float = 1.0
    w_j3d: float = 1.0
    w_v3d: float = 1.0
    w_parts: float = 0.1
    w_uv: float = 0.1
    w_cam: float = 1.0
    s_min: float = 0.5
    # augmentation
    augment: bool = True
    aug_rot: float = 30.0
    aug_scale_min: float = 0.8
    aug_scale_max: float = 1.2
    aug_jitter: float = 0.1

    def validate(self):
        if self.variant not in VARIANTS:
            raise ContractError(
                f"unknown variant '{self.variant}', expected one of {VARIANTS}")
        if self.img_size < 16 or self.img_size % 4 != 0:
            raise ContractError("img_size must be >= 16 and divisible by 4")
        if len(self.depths) != 4 or len(self.heads) != 4:
            raise ContractError("depths and heads must have four entries")
        for name in ("width", "pyramid_width", "window", "ca_reduction",
                     "t_max", "temporal_dim", "sample_verts", "batch_size",
                     "steps"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        if self.lr < 0 or self.checkpoint_every < 0:
            raise ContractError("lr and checkpoint_every must be nonnegative")
        for name in ("w_kp2d", "w_j3d", "w_v3d", "w_parts", "w_uv", "w_cam",
                     "s_min"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ContractError(f"{name} must be finite and nonnegative")
        if not 0.0 <= self.aug_rot <= MAX_ROT_DEG:
            raise ContractError(f"aug_rot outside [0, {MAX_ROT_DEG}]")
        if not SCALE_BOUNDS[0] <= self.aug_scale_min <= self.aug_scale_max \
                <= SCALE_BOUNDS[1]:
            raise ContractError(f"scale range outside {SCALE_BOUNDS}")
        if not 0.0 <= self.aug_jitter <= MAX_JITTER:
            raise ContractError(f"aug_jitter outside [0, {MAX_JITTER}]")
        return self

    def loss_weights(self):
        return {"kp2d": self.w_kp2d, "j3d": self.w_j3d, "v3d": self.w_v3d,
                "parts": self.w_parts, "uv": self.w_uv, "cam": self.w_cam,
                "s_min": self.s_min}

    def model_kwargs(self):
        return {"variant": self.variant, "img_size": self.img_size,
                "in_ch": self.in_ch, "width": self.width,
                "pyramid_width": self.pyramid_width, "depths": self.depths,
                "heads": self.heads, "window": self.window,
                "ca_reduction": self.ca_reduction, "t_max": self.t_max,
                "temporal_dim": self.temporal_dim,
                "sample_verts": self.sample_verts}


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key, raw, where):
    kind = _FIELDS[key].type
    try:
        if kind == "bool" or kind is bool:
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(f"not a boolean: {raw}")
        if kind == "int" or kind is int:
            return int(raw)
        if kind == "float" or kind is float:
            return float(raw)
        if kind == "tuple" or kind is tuple:
            return tuple(int(p.strip()) for p in raw.split(","))
        return raw
    except ValueError as e:
        raise ContractError(f"{where}: bad value for '{key}': {e}") from e


def parse_config(text, base=None):
    cfg = dataclasses.replace(base) if base else RunConfig()
    seen = set()
    for ln, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ContractError(f"line {ln}: expected 'key = value', got {line!r}")
        key, raw = (p.strip() for p in body.split("=", 1))
        if key not in _FIELDS:
            raise ContractError(f"line {ln}: unknown key '{key}'")
        if key in seen:
            raise ContractError(f"line {ln}: duplicate key '{key}'")
        seen.add(key)
        setattr(cfg, key, _coerce(key, raw, f"line {ln}"))
    cfg.validate()
    return cfg


def load_config(path, base=None):
    with open(path) as fh:
        return parse_config(fh.read(), base=base)


def config_text(cfg):
    """Serialize back to the flat format (parse_config inverse)."""
    lines = []
    for f in dataclasses.fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


__all__ = ["RunConfig", "parse_config", "load_config", "config_text"]
