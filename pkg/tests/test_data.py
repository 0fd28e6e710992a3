"""Synthetic data pipeline: generation, augmentation, annotation files."""

import json
import os

import numpy as np
import pytest

from pycat4 import body, data
from pycat4 import tensor as T
from pycat4.tensor import ContractError


@pytest.fixture(scope="module")
def records():
    return data.synth_generate(4, seed=11, img_size=112)


def reproject(rec, model):
    """Independent re-pose of the stored parameters."""
    with T.no_grad():
        v, j = model.forward(T.Tensor(rec.pose[None]), T.Tensor(rec.betas[None]))
        kp_n = body.project_weak_perspective(
            j, T.Tensor(np.array([[rec.scale]])), T.Tensor(rec.trans[None]))
    return data.norm_to_pixel(kp_n.data[0], rec.img_size), j.data[0], v.data[0]


@pytest.fixture(scope="module")
def model():
    return body.BodyModel(body.build_default_mesh())


class TestSampleRecord:
    def test_validate_rejects_bad_image_shape(self, records):
        import dataclasses
        bad = dataclasses.replace(records[0], image=np.zeros((112, 112)))
        with pytest.raises(ContractError):
            bad.validate()

    def test_validate_rejects_out_of_range_values(self, records):
        import dataclasses
        bad = dataclasses.replace(records[0], image=records[0].image + 2.0)
        with pytest.raises(ContractError):
            bad.validate()

    def test_validate_rejects_outside_visible_keypoint(self, records):
        import dataclasses
        kp = records[0].keypoints2d.copy()
        kp[3] = [-5.0, 10.0, 2.0]
        bad = dataclasses.replace(records[0], keypoints2d=kp)
        with pytest.raises(ContractError):
            bad.validate()


class TestSynthGenerate:
    def test_shapes_and_ranges(self, records):
        for rec in records:
            assert rec.image.shape == (3, 112, 112)
            assert rec.image.min() >= 0.0 and rec.image.max() <= 1.0
            assert rec.keypoints2d.shape == (16, 3)
            assert rec.part_map.shape == (112, 112)
            assert rec.uv_map.shape == (2, 112, 112)
            assert rec.uv_map.min() >= 0.0 and rec.uv_map.max() <= 1.0

    def test_visible_keypoints_inside_image(self, records):
        for rec in records:
            vis = rec.keypoints2d[:, 2] > 0
            xy = rec.keypoints2d[vis, :2]
            assert (xy >= 0.0).all() and (xy <= 112.0).all()

    def test_foreground_present(self, records):
        for rec in records:
            fg = rec.part_map > 0
            assert fg.sum() > 50
            assert set(np.unique(rec.part_map)) <= set(range(10))
            assert len(np.unique(rec.part_map)) >= 6

    def test_background_has_no_uv(self, records):
        rec = records[0]
        bg = rec.part_map == 0
        assert np.array_equal(rec.uv_map[:, bg], np.zeros_like(rec.uv_map[:, bg]))

    def test_reprojection_consistency(self, records, model):
        for rec in records:
            kp, j3, v3 = reproject(rec, model)
            assert np.abs(kp - rec.keypoints2d[:, :2]).max() < 1e-6
            assert np.abs(j3 - rec.joints3d).max() < 1e-6
            assert np.abs(v3 - rec.vertices3d).max() < 1e-6

    def test_seed_determinism(self, records):
        again = data.synth_generate(4, seed=11, img_size=112)
        for a, b in zip(records, again):
            assert np.array_equal(a.image, b.image)
            assert np.array_equal(a.keypoints2d, b.keypoints2d)
            assert np.array_equal(a.part_map, b.part_map)
            assert np.array_equal(a.uv_map, b.uv_map)
        other = data.synth_generate(4, seed=12, img_size=112)
        assert not np.array_equal(other[0].image, records[0].image)

    def test_video_mode(self):
        vid = data.synth_generate(2, seed=5, img_size=64, video=True, t=4)
        assert len(vid) == 8
        assert [r.seq_id for r in vid] == [0, 0, 0, 0, 1, 1, 1, 1]
        assert [r.frame_id for r in vid] == [0, 1, 2, 3, 0, 1, 2, 3]
        for i in range(3):
            delta = np.abs(vid[i + 1].keypoints2d[:, :2]
                           - vid[i].keypoints2d[:, :2]).max()
            assert delta < 15.0

    def test_rejects_bad_counts(self):
        with pytest.raises(ContractError):
            data.synth_generate(0, seed=1)
        with pytest.raises(ContractError):
            data.synth_generate(1, seed=1, video=True, t=0)


class TestAugment:
    def test_identity_leaves_sample_unchanged(self, records):
        rec = records[0]
        out = data.augment(rec, params=(0.0, 1.0, (0.0, 0.0)))
        assert np.array_equal(out.image, rec.image)
        assert np.array_equal(out.keypoints2d, rec.keypoints2d)
        assert np.array_equal(out.joints3d, rec.joints3d)
        assert np.array_equal(out.part_map, rec.part_map)
        assert out.scale == rec.scale
        rng = np.random.default_rng(0)
        out2 = data.augment(rec, rng=rng, rot=0.0, scale=(1.0, 1.0), jitter=0.0)
        assert np.array_equal(out2.image, rec.image)

    def test_quarter_turn_matches_hand_oracle(self, records):
        # 90 deg about the center of a WxW image maps (x, y) -> (W - y, x)
        rec = records[0]
        out = data.augment(rec, params=(90.0, 1.0, (0.0, 0.0)))
        W = rec.img_size
        expect = np.stack([W - rec.keypoints2d[:, 1], rec.keypoints2d[:, 0]],
                          axis=1)
        vis = out.keypoints2d[:, 2] > 0
        assert np.abs(out.keypoints2d[vis, :2] - expect[vis]).max() < 0.5

    def test_quarter_turn_rotates_pixels_exactly(self, records):
        rec = records[0]
        out = data.augment(rec, params=(90.0, 1.0, (0.0, 0.0)))
        assert np.array_equal(out.part_map, np.rot90(rec.part_map, k=3))
        for c in range(3):
            assert np.allclose(out.image[c], np.rot90(rec.image[c], k=3),
                               atol=1e-12)

    def test_state_consistency_after_augment(self, records, model):
        rec = records[1]
        for params in [(17.0, 1.1, (3.0, -4.0)), (-25.0, 0.85, (-6.0, 2.0)),
                       (None)]:
            if params is None:
                out = data.augment(rec, rng=np.random.default_rng(9))
            else:
                out = data.augment(rec, params=params)
            kp, j3, v3 = reproject(out, model)
            assert np.abs(kp - out.keypoints2d[:, :2]).max() < 1e-9
            assert np.abs(j3 - out.joints3d).max() < 1e-9
            assert np.abs(v3 - out.vertices3d).max() < 1e-9

    def test_rotation_preserves_depth(self, records):
        rec = records[0]
        out = data.augment(rec, params=(30.0, 1.0, (0.0, 0.0)))
        assert np.allclose(out.joints3d[:, 2], rec.joints3d[:, 2], atol=1e-12)
        assert np.allclose(out.vertices3d[:, 2], rec.vertices3d[:, 2],
                           atol=1e-12)

    def test_scale_only_scales_distances_from_center(self, records):
        rec = records[0]
        out = data.augment(rec, params=(0.0, 1.2, (0.0, 0.0)))
        c = rec.img_size / 2.0
        d_old = rec.keypoints2d[:, :2] - c
        d_new = out.keypoints2d[:, :2] - c
        assert np.allclose(d_new, 1.2 * d_old, atol=1e-9)

    def test_shift_clears_visibility(self, records):
        rec = records[0]
        out = data.augment(rec, params=(0.0, 1.0, (100.0, 0.0)))
        assert (out.keypoints2d[:, 2] == 0).any()
        for k in np.nonzero(out.keypoints2d[:, 2] > 0)[0]:
            x, y = out.keypoints2d[k, :2]
            assert 0.0 <= x <= rec.img_size and 0.0 <= y <= rec.img_size

    def test_range_validation(self, records):
        rng = np.random.default_rng(0)
        with pytest.raises(ContractError):
            data.augment(records[0], rng=rng, rot=45.0)
        with pytest.raises(ContractError):
            data.augment(records[0], rng=rng, scale=(0.5, 1.0))
        with pytest.raises(ContractError):
            data.augment(records[0], rng=rng, jitter=0.2)


class TestAnnotations:
    def test_roundtrip_keypoints_exact(self, records, tmp_path):
        path = data.export_annotations(records, str(tmp_path))
        back = data.ingest_annotations(path)
        assert len(back) == len(records)
        for a, b in zip(records, back):
            assert np.array_equal(a.keypoints2d, b.keypoints2d)
            assert not b.has3d

    def test_image_roundtrip_within_quantization(self, records, tmp_path):
        path = data.export_annotations(records, str(tmp_path))
        back = data.ingest_annotations(path)
        err = np.abs(back[0].image - records[0].image).max()
        assert err <= 0.5 / 255.0 + 1e-12

    def test_load_without_images(self, records, tmp_path):
        path = data.export_annotations(records, str(tmp_path),
                                       write_images=False)
        back = data.ingest_annotations(path, load_images=False)
        assert back[0].image.shape == (3, 112, 112)
        assert back[0].image.sum() == 0.0

    def test_malformed_json_reports_line(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"images": [],\n "annotations": [}')
        with pytest.raises(ContractError, match=r"line 2 column"):
            data.ingest_annotations(str(p))

    def test_missing_field_named(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text(json.dumps({"images": [], "annotations": []}))
        with pytest.raises(ContractError, match="categories"):
            data.ingest_annotations(str(p))

    def test_wrong_keypoint_length_reports_context(self, records, tmp_path):
        path = data.export_annotations(records, str(tmp_path),
                                       write_images=False)
        doc = json.load(open(path))
        doc["annotations"][1]["keypoints"] = doc["annotations"][1]["keypoints"][:-3]
        json.dump(doc, open(path, "w"))
        with pytest.raises(ContractError, match=r"annotation id 2.*length 45"):
            data.ingest_annotations(str(path), load_images=False)

    def test_unknown_image_id(self, records, tmp_path):
        path = data.export_annotations(records, str(tmp_path),
                                       write_images=False)
        doc = json.load(open(path))
        doc["annotations"][0]["image_id"] = 99
        json.dump(doc, open(path, "w"))
        with pytest.raises(ContractError, match="unknown image_id 99"):
            data.ingest_annotations(str(path), load_images=False)

    def test_outside_visible_keypoint_rejected(self, records, tmp_path):
        path = data.export_annotations(records, str(tmp_path),
                                       write_images=False)
        doc = json.load(open(path))
        doc["annotations"][0]["keypoints"][0] = -40.0
        json.dump(doc, open(path, "w"))
        with pytest.raises(ContractError, match="outside"):
            data.ingest_annotations(str(path), load_images=False)


class TestSerialization:
    def test_npz_roundtrip_bit_exact(self, records, tmp_path):
        p = str(tmp_path / "ds.npz")
        data.save_dataset(records, p)
        back = data.load_dataset(p)
        for a, b in zip(records, back):
            assert np.array_equal(a.image, b.image)
            assert np.array_equal(a.joints3d, b.joints3d)
            assert np.array_equal(a.uv_map, b.uv_map)
            assert a.scale == b.scale and a.seq_id == b.seq_id

    def test_save_is_byte_deterministic(self, records, tmp_path):
        p1, p2 = str(tmp_path / "a.npz"), str(tmp_path / "b.npz")
        data.save_dataset(records, p1)
        data.save_dataset(records, p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_load_records_dispatches_on_extension(self, records, tmp_path):
        p = str(tmp_path / "ds.npz")
        data.save_dataset(records, p)
        assert len(data.load_records(p)) == 4
        jp = data.export_annotations(records, str(tmp_path))
        assert len(data.load_records(jp)) == 4

    def test_save_rejects_partial_records(self, records, tmp_path):
        import dataclasses
        partial = [dataclasses.replace(records[0], joints3d=None)]
        with pytest.raises(ContractError):
            data.save_dataset(partial, str(tmp_path / "x.npz"))


class TestResampling:
    def test_nearest_downsample_picks_centers(self):
        m = np.arange(16.0).reshape(4, 4)
        out = data.downsample_nearest(m, 2)
        assert np.array_equal(out, np.array([[5.0, 7.0], [13.0, 15.0]]))

    def test_pixel_norm_roundtrip(self):
        xy = np.random.default_rng(0).uniform(0, 112, size=(10, 2))
        back = data.norm_to_pixel(data.pixel_to_norm(xy, 112), 112)
        assert np.allclose(back, xy, atol=1e-12)
