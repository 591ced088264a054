import json
import struct

import numpy as np
import pytest

from psdlab.data import (
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    DatasetManifest,
    PoisonPlan,
    Split,
    TargetRule,
    apply_trigger,
    checkerboard_patch,
    gen_synthetic,
    load_idx,
    noise_blend,
    poison_count,
    poison_dataset,
    split_reference,
)
from psdlab.errors import ConsistencyError, FormatError, GeometryError, PlanError


def write_idx(path, magic: int, array: np.ndarray) -> None:
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    path.write_bytes(header + array.astype(np.uint8).tobytes())


class TestSynthetic:

    def test_shapes_and_balance(self):
        ds = gen_synthetic(4, 12, shape=(8, 8, 3), seed=1)
        assert ds.images.shape == (48, 8, 8, 3)
        assert np.bincount(ds.labels).tolist() == [12, 12, 12, 12]
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
        assert not ds.poisoned.any()

    def test_seeded(self):
        a = gen_synthetic(3, 5, shape=(8, 8, 1), seed=9)
        b = gen_synthetic(3, 5, shape=(8, 8, 1), seed=9)
        np.testing.assert_array_equal(a.images, b.images)

    def test_class_templates_differ(self):
        ds = gen_synthetic(10, 1, shape=(16, 16, 3), noise=0.0)
        flat = ds.flat
        for i in range(10):
            for j in range(i + 1, 10):
                assert not np.array_equal(flat[i], flat[j])

    def test_rejects_tiny_images(self):
        with pytest.raises(GeometryError):
            gen_synthetic(3, 5, shape=(6, 6, 3))


class TestTriggers:

    def test_patch_pastes_bottom_right(self):
        images = np.zeros((2, 8, 8, 3))
        trigger = checkerboard_patch(3, 3)
        out = apply_trigger(images, trigger)
        np.testing.assert_array_equal(out[:, 5:, 5:, :], np.broadcast_to(trigger.pattern, (2, 3, 3, 3)))
        assert out[:, :5, :, :].sum() == 0 and out[:, :, :5, :].sum() == 0
        assert images.sum() == 0

    def test_single_image(self):
        out = apply_trigger(np.zeros((8, 8, 1)), checkerboard_patch(3, 1))
        assert out.shape == (8, 8, 1)
        assert out[7, 7, 0] == 1.0 and out[7, 6, 0] == 0.0

    def test_blend_extremes(self, rng):
        x = rng.uniform(size=(4, 8, 8, 3))
        assert np.allclose(apply_trigger(x, noise_blend((8, 8, 3), 0.0, rng)), x)
        trigger = noise_blend((8, 8, 3), 1.0, rng)
        assert np.allclose(apply_trigger(x, trigger), trigger.pattern)

    def test_patch_must_fit(self):
        with pytest.raises(GeometryError):
            apply_trigger(np.zeros((2, 2, 3)), checkerboard_patch(3, 3))


@pytest.mark.parametrize("ratio,n,expected", [(0.29, 100, 29), (0.05, 1000, 50), (0.001, 999, 0), (0.0, 10, 0)])
def test_poison_count_floors(ratio, n, expected):
    assert poison_count(ratio, n) == expected


class TestPoisonDataset:

    def test_fixed_target(self, tiny_dataset):
        plan = PoisonPlan(0.2, checkerboard_patch(3, 3), TargetRule.FIXED, target_label=1, seed=4)
        out = poison_dataset(tiny_dataset, plan)
        assert out.poisoned.sum() == 6
        assert np.all(out.labels[out.poisoned] == 1)
        assert np.all(out.origin_labels[out.poisoned] != 1)
        for i in np.flatnonzero(out.poisoned):
            expected = apply_trigger(tiny_dataset.images[out.origin_index[i]], plan.trigger)
            np.testing.assert_array_equal(out.images[i], expected)
        clean = ~out.poisoned
        np.testing.assert_array_equal(out.images[clean], tiny_dataset.images[out.origin_index[clean]])

    def test_all_to_all(self, tiny_dataset):
        plan = PoisonPlan(0.3, checkerboard_patch(3, 3), TargetRule.ALL_TO_ALL, seed=1)
        out = poison_dataset(tiny_dataset, plan)
        p = out.poisoned
        np.testing.assert_array_equal(out.labels[p], (out.origin_labels[p] + 1) % 3)

    def test_zero_ratio_keeps_everything(self, tiny_dataset):
        out = poison_dataset(tiny_dataset, PoisonPlan(0.0, checkerboard_patch(3, 3)))
        assert not out.poisoned.any()
        assert sorted(out.origin_index.tolist()) == list(range(len(tiny_dataset)))

    def test_seeded(self, tiny_dataset):
        plan = PoisonPlan(0.2, checkerboard_patch(3, 3), seed=11)
        a, b = poison_dataset(tiny_dataset, plan), poison_dataset(tiny_dataset, plan)
        np.testing.assert_array_equal(a.origin_index, b.origin_index)
        np.testing.assert_array_equal(a.poisoned, b.poisoned)

    def test_not_enough_eligible(self):
        ds = gen_synthetic(2, 10, shape=(8, 8, 1))
        with pytest.raises(PlanError):
            poison_dataset(ds, PoisonPlan(0.6, checkerboard_patch(3, 1), target_label=0))

    def test_bad_ratio(self, tiny_dataset):
        with pytest.raises(PlanError):
            poison_dataset(tiny_dataset, PoisonPlan(1.0, checkerboard_patch(3, 3)))


def test_split_reference(rng):
    test = gen_synthetic(3, 20, shape=(8, 8, 1), split=Split.TEST)
    reference, rest = split_reference(test, 5, rng)
    assert reference.split is Split.REFERENCE and rest.split is Split.TEST
    assert np.bincount(reference.labels).tolist() == [5, 5, 5]
    assert len(rest) == 45
    assert set(reference.origin_index) | set(rest.origin_index) == set(range(60))
    assert not set(reference.origin_index) & set(rest.origin_index)


class TestIdx:

    def test_loads(self, tmp_path):
        images = np.arange(2 * 8 * 8).reshape(2, 8, 8) % 256
        write_idx(tmp_path / "img", IDX_IMAGES_MAGIC, images)
        write_idx(tmp_path / "lab", IDX_LABELS_MAGIC, np.array([3, 1]))
        ds = load_idx(tmp_path / "img", tmp_path / "lab", num_classes=10)
        assert ds.images.shape == (2, 8, 8, 1)
        assert ds.num_classes == 10
        np.testing.assert_allclose(ds.images[..., 0], images / 255.0)
        assert ds.labels.tolist() == [3, 1]

    def test_infers_classes(self, tmp_path):
        write_idx(tmp_path / "img", IDX_IMAGES_MAGIC, np.zeros((2, 8, 8)))
        write_idx(tmp_path / "lab", IDX_LABELS_MAGIC, np.array([0, 4]))
        assert load_idx(tmp_path / "img", tmp_path / "lab").num_classes == 5

    def test_bad_magic(self, tmp_path):
        write_idx(tmp_path / "img", IDX_LABELS_MAGIC, np.zeros((2, 8, 8)))
        write_idx(tmp_path / "lab", IDX_LABELS_MAGIC, np.array([0, 1]))
        with pytest.raises(FormatError):
            load_idx(tmp_path / "img", tmp_path / "lab")

    def test_truncated_body(self, tmp_path):
        write_idx(tmp_path / "img", IDX_IMAGES_MAGIC, np.zeros((2, 8, 8)))
        (tmp_path / "img").write_bytes((tmp_path / "img").read_bytes()[:-5])
        write_idx(tmp_path / "lab", IDX_LABELS_MAGIC, np.array([0, 1]))
        with pytest.raises(FormatError):
            load_idx(tmp_path / "img", tmp_path / "lab")

    def test_count_mismatch(self, tmp_path):
        write_idx(tmp_path / "img", IDX_IMAGES_MAGIC, np.zeros((3, 8, 8)))
        write_idx(tmp_path / "lab", IDX_LABELS_MAGIC, np.array([0, 1]))
        with pytest.raises(ConsistencyError):
            load_idx(tmp_path / "img", tmp_path / "lab")


def test_manifest_lists_poison(tmp_path, tiny_dataset):
    plan = PoisonPlan(0.1, checkerboard_patch(3, 3), seed=2)
    out = poison_dataset(tiny_dataset, plan)
    DatasetManifest.describe(out, plan, seed=2).write(tmp_path / "dataset.json")
    payload = json.loads((tmp_path / "dataset.json").read_text())
    assert payload["poison_indices"] == np.flatnonzero(out.poisoned).tolist()
    assert payload["plan"]["poisoning_ratio"] == 0.1
    assert payload["shape"] == [8, 8, 3]
