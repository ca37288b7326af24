import hashlib
from pathlib import Path

import numpy as np
import pytest

from eqseg.data import (EXPERT_CATEGORIES, DatasetIntegrityError, DriverLabel, Sample, SampleValidationError,
                        UnknownCategoryError, generate_synthetic, load_dataset, map_expert_category,
                        rotate_sample, rotated_test_set, synthetic_scene)


def tree_digest(root: Path):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("d40")
    generate_synthetic(40, 32, 5, root)
    return root


@pytest.mark.parametrize("category,label", [
    ("Oil palm plantation", DriverLabel.PLANTATION),
    ("Grassland/shrubland", DriverLabel.GRASSLAND_SHRUBLAND),
    ("Logging road", DriverLabel.OTHER),
    ("Small-scale mixed plantation", DriverLabel.SMALLHOLDER_AGRICULTURE),
    ("Fish pond", DriverLabel.OTHER),
])
def test_expert_mapping_examples(category, label):
    assert map_expert_category(category) is label


def test_expert_mapping_group_sizes():
    sizes = {g: sum(1 for v in EXPERT_CATEGORIES.values() if v == g) for g in DriverLabel}
    assert sizes == {DriverLabel.PLANTATION: 3, DriverLabel.GRASSLAND_SHRUBLAND: 1,
                     DriverLabel.SMALLHOLDER_AGRICULTURE: 3, DriverLabel.OTHER: 5}


@pytest.mark.parametrize("bad", ["Plantation", "oil palm plantation", "Cattle ranching", ""])
def test_expert_mapping_rejects_unknown(bad):
    with pytest.raises(UnknownCategoryError, match="valid"):
        map_expert_category(bad)


def test_driver_names():
    assert [d.display_name for d in DriverLabel] == ["Plantation", "Grassland/shrubland",
                                                     "Smallholder agriculture", "Other"]


def test_generation_deterministic(tmp_path):
    generate_synthetic(8, 32, 11, tmp_path / "a")
    generate_synthetic(8, 32, 11, tmp_path / "b")
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    generate_synthetic(8, 32, 12, tmp_path / "c")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")


def test_generation_preconditions(tmp_path):
    with pytest.raises(ValueError):
        generate_synthetic(3, 32, 0, tmp_path)
    with pytest.raises(ValueError):
        generate_synthetic(8, 16, 0, tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        generate_synthetic(4, 32, 0, blocker / "sub")


def test_layout_and_loading(dataset):
    assert (dataset / "labels.csv").read_text().startswith("id,category\n")
    samples, split = load_dataset(dataset)
    assert len(samples) == 40
    ids = [set(split.train), set(split.val), set(split.test)]
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
    assert set().union(*ids) == {s.id for s in samples}
    assert all(len(i) > 0 for i in ids)
    for name in ("train", "val", "test"):
        text = (dataset / "splits" / f"{name}.txt").read_bytes()
        assert text.endswith(b"\n") and b"\r" not in text


def test_samples_valid_and_balanced(dataset):
    samples, _ = load_dataset(dataset)
    counts = np.bincount([int(s.label) for s in samples], minlength=4)
    assert counts.max() - counts.min() <= 1
    for s in samples:
        assert s.image.shape == (3, 32, 32) and s.image.dtype == np.float32
        assert 0.0 <= s.image.min() and s.image.max() <= 1.0
        assert s.mask.shape == (1, 32, 32) and s.mask.any()
        assert set(np.unique(s.mask)) <= {0, 1}


@pytest.mark.parametrize("label", list(DriverLabel))
def test_scene_masks_nonempty_for_many_seeds(label):
    for seed in range(25):
        img, mask = synthetic_scene(label, 32, np.random.Generator(np.random.Philox(seed)))
        assert mask.any() and mask.shape == (32, 32)
        assert img.shape == (3, 32, 32)


def test_smallholder_scenes_have_several_components():
    from scipy import ndimage
    comps = []
    for seed in range(20):
        _, mask = synthetic_scene(DriverLabel.SMALLHOLDER_AGRICULTURE, 64, np.random.Generator(np.random.Philox(seed)))
        comps.append(ndimage.label(mask)[1])
    plantation = [ndimage.label(synthetic_scene(DriverLabel.PLANTATION, 64,
                                                np.random.Generator(np.random.Philox(s)))[1])[1]
                  for s in range(20)]
    assert np.mean(comps) > np.mean(plantation)


def test_missing_mask_names_id(tmp_path):
    generate_synthetic(8, 32, 1, tmp_path)
    (tmp_path / "masks" / "00003.png").unlink()
    with pytest.raises(DatasetIntegrityError, match="00003"):
        load_dataset(tmp_path)


def test_unknown_label_names_id(tmp_path):
    generate_synthetic(8, 32, 1, tmp_path)
    lines = (tmp_path / "labels.csv").read_text().splitlines()
    lines[3] = lines[3].split(",")[0] + ",Cattle ranching"
    (tmp_path / "labels.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(UnknownCategoryError, match="00002"):
        load_dataset(tmp_path)


def test_group_name_labels_accepted(tmp_path):
    generate_synthetic(8, 32, 1, tmp_path)
    lines = (tmp_path / "labels.csv").read_text().splitlines()
    sid = lines[1].split(",")[0]
    lines[1] = f"{sid},Smallholder agriculture"
    (tmp_path / "labels.csv").write_text("\n".join(lines) + "\n")
    samples, _ = load_dataset(tmp_path)
    assert samples[0].label is DriverLabel.SMALLHOLDER_AGRICULTURE


def test_size_mismatch_rejected(tmp_path):
    from PIL import Image
    generate_synthetic(8, 32, 1, tmp_path)
    Image.fromarray(np.full((16, 16), 255, np.uint8)).save(tmp_path / "masks" / "00001.png")
    with pytest.raises(SampleValidationError, match="00001"):
        load_dataset(tmp_path)


def test_overlapping_splits_rejected(tmp_path):
    generate_synthetic(8, 32, 1, tmp_path)
    train = (tmp_path / "splits" / "train.txt").read_text()
    val = tmp_path / "splits" / "val.txt"
    val.write_text(val.read_text() + train.splitlines()[0] + "\n")
    with pytest.raises(SampleValidationError):
        load_dataset(tmp_path)


def test_sample_invariants():
    img = np.zeros((3, 4, 4), np.float32)
    with pytest.raises(SampleValidationError):
        Sample("x", img, np.zeros((1, 4, 4), np.uint8), DriverLabel.OTHER)
    with pytest.raises(SampleValidationError):
        Sample("x", img, np.ones((1, 5, 4), np.uint8), DriverLabel.OTHER)


def test_rotated_quarter_examples(dataset):
    samples, _ = load_dataset(dataset)
    s = samples[0]
    same = rotate_sample(s, 0)
    assert np.array_equal(same.image, s.image) and np.array_equal(same.mask, s.mask)
    rotated = rotated_test_set(samples, "quarter", seed=3)
    for a, b in zip(samples, rotated):
        assert a.label == b.label and a.id == b.id
        assert a.mask.sum() == b.mask.sum()
        assert np.array_equal(np.sort(a.image.ravel()), np.sort(b.image.ravel()))
    for q in range(4):
        back = rotate_sample(rotate_sample(s, q), -q)
        assert back.image.tobytes() == s.image.tobytes() and back.mask.tobytes() == s.mask.tobytes()


def test_rotated_quarter_deterministic_and_mixed(dataset):
    samples, _ = load_dataset(dataset)
    a = rotated_test_set(samples, "quarter", seed=9)
    b = rotated_test_set(samples, "quarter", seed=9)
    assert all(x.image.tobytes() == y.image.tobytes() for x, y in zip(a, b))
    turned = [next(q for q in range(4) if np.array_equal(rotate_sample(s, q).image, r.image))
              for s, r in zip(samples, a)]
    assert len(set(turned)) > 1


def test_rotated_arbitrary(dataset):
    samples, _ = load_dataset(dataset)
    out = rotated_test_set(samples, "arbitrary", seed=4)
    for a, b in zip(samples, out):
        assert b.label == a.label and b.mask.any()
        assert set(np.unique(b.mask)) <= {0, 1}
        assert 0.0 <= b.image.min() and b.image.max() <= 1.0
    with pytest.raises(ValueError):
        rotated_test_set(samples, "diagonal")
    with pytest.raises(ValueError):
        rotated_test_set([], "quarter")
