"""Tests for the binary checkpoint container."""

import numpy as np
import pytest

from pycat4.checkpoint import (MAGIC, load_checkpoint, load_into, save_checkpoint,
                               save_model, stored_config_text)
from pycat4.config import RunConfig, config_text, parse_config
from pycat4.model import PoseNetwork
from pycat4.tensor import ContractError


def tiny_model(variant="pycat4", seed=0):
    rng = np.random.default_rng(seed)
    return PoseNetwork(rng, variant=variant, img_size=32, width=4,
                       pyramid_width=4, depths=(1, 1, 1, 1), heads=(1, 1, 1, 1),
                       window=4, ca_reduction=2, t_max=2, temporal_dim=8,
                       sample_verts=8)


class TestContainer:

    def test_roundtrip_dtypes(self, tmp_path):
        rng = np.random.default_rng(3)
        named = {
            "w": rng.normal(size=(3, 4, 5)),
            "idx": np.arange(-4, 4, dtype=np.int64).reshape(2, 4),
            "blob": np.frombuffer(b"hello", dtype=np.uint8),
            "scalar": np.float64(2.5),
        }
        p = tmp_path / "a.ckpt"
        save_checkpoint(p, named)
        got = load_checkpoint(p)
        assert set(got) == set(named)
        for k in named:
            want = np.asarray(named[k])
            assert got[k].dtype == want.dtype and got[k].shape == want.shape
            assert np.array_equal(got[k], want)

    def test_byte_determinism_ignores_insert_order(self, tmp_path):
        a = np.arange(6, dtype=np.float64).reshape(2, 3)
        b = np.ones(4)
        save_checkpoint(tmp_path / "x.ckpt", {"a": a, "b": b})
        save_checkpoint(tmp_path / "y.ckpt", {"b": b, "a": a})
        assert (tmp_path / "x.ckpt").read_bytes() == (tmp_path / "y.ckpt").read_bytes()

    def test_non_float64_floats_upcast(self, tmp_path):
        p = tmp_path / "f32.ckpt"
        save_checkpoint(p, {"w": np.ones(3, dtype=np.float32)})
        assert load_checkpoint(p)["w"].dtype == np.float64

    def test_rejects_non_finite(self, tmp_path):
        with pytest.raises(ContractError, match="non-finite values in 'w'"):
            save_checkpoint(tmp_path / "bad.ckpt", {"w": np.array([1.0, np.nan])})

    def test_empty_map(self, tmp_path):
        p = tmp_path / "empty.ckpt"
        save_checkpoint(p, {})
        assert load_checkpoint(p) == {}


class TestMalformed:

    def write_good(self, tmp_path):
        p = tmp_path / "good.ckpt"
        save_checkpoint(p, {"w": np.arange(4, dtype=np.float64)})
        return p, bytearray(p.read_bytes())

    def test_bad_magic(self, tmp_path):
        p, buf = self.write_good(tmp_path)
        buf[0] = ord("X")
        p.write_bytes(buf)
        with pytest.raises(ContractError, match="bad magic .* at offset 0"):
            load_checkpoint(p)

    def test_bad_version(self, tmp_path):
        p, buf = self.write_good(tmp_path)
        buf[8] = 9
        p.write_bytes(buf)
        with pytest.raises(ContractError,
                           match="unsupported format version 9 at offset 8"):
            load_checkpoint(p)

    def test_unknown_dtype_code(self, tmp_path):
        p, buf = self.write_good(tmp_path)
        # entry layout: 16B header, 2B name len, 1B name "w", then dtype code
        buf[19] = 7
        p.write_bytes(buf)
        with pytest.raises(ContractError,
                           match="unknown dtype code 7 for 'w' at offset 19"):
            load_checkpoint(p)

    def test_truncated_data(self, tmp_path):
        p, buf = self.write_good(tmp_path)
        p.write_bytes(buf[:-8])
        with pytest.raises(ContractError,
                           match="truncated checkpoint: wanted 32 bytes for 'w' data"):
            load_checkpoint(p)

    def test_truncated_header(self, tmp_path):
        p, buf = self.write_good(tmp_path)
        p.write_bytes(buf[:10])
        with pytest.raises(ContractError, match="wanted 8 bytes for header"):
            load_checkpoint(p)

    def test_trailing_bytes(self, tmp_path):
        p, buf = self.write_good(tmp_path)
        p.write_bytes(bytes(buf) + b"xx")
        with pytest.raises(ContractError, match="2 trailing bytes"):
            load_checkpoint(p)

    def test_magic_constant(self):
        assert MAGIC == b"PYCATCK1" and len(MAGIC) == 8


class TestModelRestore:

    def test_save_load_roundtrip_bitwise(self, tmp_path):
        m = tiny_model(seed=1)
        p = tmp_path / "m.ckpt"
        save_model(p, m)
        m2 = tiny_model(seed=2)
        before = {n: q.data.copy() for n, q in m.named_parameters()}
        load_into(m2, load_checkpoint(p))
        for n, q in m2.named_parameters():
            assert np.array_equal(q.data, before[n]), n

    def test_embedded_config(self, tmp_path):
        cfg = RunConfig(variant="ca", steps=7)
        m = tiny_model()
        p = tmp_path / "m.ckpt"
        save_model(p, m, config_text=config_text(cfg))
        loaded = load_checkpoint(p)
        text = stored_config_text(loaded)
        assert parse_config(text) == cfg
        # config entry must not disturb parameter restore
        load_into(tiny_model(seed=5), loaded)

    def test_no_config_returns_none(self, tmp_path):
        p = tmp_path / "m.ckpt"
        save_model(p, tiny_model())
        assert stored_config_text(load_checkpoint(p)) is None

    def test_missing_parameters_listed(self, tmp_path):
        # baseline has no coordinate gate or temporal stack, so its
        # checkpoint cannot populate the full variant
        p = tmp_path / "b.ckpt"
        save_model(p, tiny_model(variant="baseline"))
        with pytest.raises(ContractError,
                           match="checkpoint is missing parameters:"):
            load_into(tiny_model(variant="pycat4"), load_checkpoint(p))

    def test_unexpected_parameters_listed(self, tmp_path):
        m = tiny_model()
        named = {n: q.data for n, q in m.named_parameters()}
        named["stale.weight"] = np.zeros(3)
        p = tmp_path / "f.ckpt"
        save_checkpoint(p, named)
        with pytest.raises(ContractError,
                           match="unexpected parameters: stale.weight"):
            load_into(m, load_checkpoint(p))

    def test_shape_mismatch_named(self, tmp_path):
        m = tiny_model()
        named = {n: q.data for n, q in m.named_parameters()}
        first = next(iter(sorted(named)))
        named[first] = np.zeros(np.asarray(named[first]).shape + (2,))
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, named)
        with pytest.raises(ContractError, match=f"shape mismatch for '{first}'"):
            load_into(m, load_checkpoint(p))
