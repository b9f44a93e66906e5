import os
from collections import Counter

import numpy as np
import pytest

from conftest import TINY
from utils.dataset import (
    MANIFEST_FIELDS,
    PairedWeatherDataset,
    augment,
    make_clean_scenes,
    make_dataset,
    read_manifest,
    scene_label,
)
from utils.degradation import degrade
from utils.errors import EmptyDirectoryError, ManifestError
from utils.image_io import quantize, read_image


def _lines(path):
    with open(path, encoding="utf-8") as f:
        return f.read().splitlines()


def test_make_clean_scenes_names_and_sizes(tmp_path):
    paths = make_clean_scenes(str(tmp_path / "clean"), count=7, size=24, seed=3)
    assert len(paths) == 7
    assert os.path.basename(paths[0]) == "street_0000.png"
    assert os.path.basename(paths[6]) == "street_0006.png"
    img = read_image(paths[1])
    assert img.shape == (24, 24, 3)
    assert img.std() > 0.01


def test_scene_label():
    assert scene_label("/data/street_0003.png") == "street"
    assert scene_label("Lake.png") == "lake"
    assert scene_label("_0001.png") == "scene"


def test_manifests_and_split_counts(synth_dir):
    for name in ("train", "val", "test"):
        lines = _lines(synth_dir / f"{name}.tsv")
        assert lines[0] == "# " + "\t".join(MANIFEST_FIELDS)
    train = read_manifest(str(synth_dir / "train.tsv"))
    val = read_manifest(str(synth_dir / "val.tsv"))
    test = read_manifest(str(synth_dir / "test.tsv"))
    assert len(val) == 1 and len(test) == 1
    unique = {r.lq for r in train}
    assert len(unique) == 8
    assert not unique & {r.lq for r in val + test}


def test_minority_kind_is_resampled_in_train_only(synth_dir):
    mix = TINY["data"]["mix"]
    train = read_manifest(str(synth_dir / "train.tsv"))
    per_file = Counter(r.lq for r in train)
    for record in train:
        assert per_file[record.lq] == mix[record.kind]["resample"]
    for name in ("val", "test"):
        records = read_manifest(str(synth_dir / f"{name}.tsv"))
        assert len({r.lq for r in records}) == len(records)


def test_synthesis_is_deterministic(tmp_path, clean_dir):
    mix = TINY["data"]["mix"]
    a = make_dataset(str(clean_dir), str(tmp_path / "a"), mix, seed=9, progress_bar=False)
    b = make_dataset(str(clean_dir), str(tmp_path / "b"), mix, seed=9, progress_bar=False)
    for name in ("train", "val", "test"):
        assert _lines(tmp_path / "a" / f"{name}.tsv") == _lines(tmp_path / "b" / f"{name}.tsv")
        assert a[name] == b[name]
    lq = a["train"][0].lq
    assert np.array_equal(read_image(tmp_path / "a" / lq), read_image(tmp_path / "b" / lq))


def test_pairs_regenerate_from_manifest(synth_dir):
    for record in read_manifest(str(synth_dir / "test.tsv")) + read_manifest(str(synth_dir / "train.tsv")):
        pair = record.load()
        assert np.array_equal(quantize(degrade(pair.hq, record.spec)), quantize(pair.lq))


def test_intensity_and_kind_follow_the_mix(synth_dir):
    mix = TINY["data"]["mix"]
    for record in read_manifest(str(synth_dir / "train.tsv")):
        lo, hi = mix[record.kind]["intensity"]
        assert lo <= record.intensity <= hi
        assert record.intensity == round(record.intensity, 4)
        assert record.lq.endswith(f"_{record.kind.replace('+', '-')}.png")


def test_resize_to_fixed_size(tmp_path, clean_dir):
    make_dataset(str(clean_dir), str(tmp_path / "s"), {"fog": {"weight": 1.0}}, seed=0, size=8,
                 progress_bar=False)
    record = read_manifest(str(tmp_path / "s" / "train.tsv"))[0]
    assert read_image(record.hq_path).shape == (8, 8, 3)


def test_empty_or_missing_clean_directory(tmp_path):
    (tmp_path / "empty").mkdir()
    (tmp_path / "empty" / "notes.txt").write_text("no images")
    with pytest.raises(EmptyDirectoryError):
        make_dataset(str(tmp_path / "empty"), str(tmp_path / "out"), TINY["data"]["mix"])
    with pytest.raises(EmptyDirectoryError):
        make_dataset(str(tmp_path / "nope"), str(tmp_path / "out"), TINY["data"]["mix"])


def test_unknown_mix_kind(tmp_path, clean_dir):
    with pytest.raises(ManifestError):
        make_dataset(str(clean_dir), str(tmp_path / "out"), {"hail": {"weight": 1.0}})


@pytest.mark.parametrize("line", [
    "a.png\tb.png\train\t0.5\t1",
    "a.png\tb.png\thail\t0.5\t1\tstreet",
    "a.png\tb.png\train\tstrong\t1\tstreet",
    "a.png\tb.png\train\t1.5\t1\tstreet",
])
def test_malformed_manifest_lines(tmp_path, line):
    path = tmp_path / "m.tsv"
    path.write_text("# header\n" + line + "\n")
    with pytest.raises(ManifestError):
        read_manifest(str(path), check_files=False)


def test_manifest_missing_files_and_empty(tmp_path):
    path = tmp_path / "m.tsv"
    path.write_text("a.png\tb.png\train\t0.5\t1\tstreet\n")
    with pytest.raises(ManifestError):
        read_manifest(str(path))
    assert read_manifest(str(path), check_files=False)[0].scene == "street"
    path.write_text("# only a header\n")
    with pytest.raises(ManifestError):
        read_manifest(str(path))
    with pytest.raises(ManifestError):
        read_manifest(str(tmp_path / "missing.tsv"))


def test_augment_crops_are_aligned(rng):
    hq = np.random.default_rng(0).random((20, 24, 3)).astype(np.float32)
    lq = hq * 0.5
    for _ in range(10):
        a, b = augment(lq, hq, rng, crop=16)
        assert a.shape == b.shape == (16, 16, 3)
        assert np.allclose(a, b * 0.5)


def test_augment_pads_small_images(rng):
    img = np.random.default_rng(1).random((10, 12, 3)).astype(np.float32)
    a, b = augment(img, img, rng, crop=16, hflip=False, vflip=False)
    assert a.shape == (16, 16, 3)
    assert np.array_equal(a[:10, :12], img)


def test_paired_dataset_items_and_captions(synth_dir):
    ds = PairedWeatherDataset.from_manifest(str(synth_dir / "train.tsv"))
    assert len(ds) == len(read_manifest(str(synth_dir / "train.tsv")))
    item = ds[0]
    assert item["lq"].shape == item["hq"].shape == (3, 16, 16)
    record = ds.records[0]
    assert item["caption"].text == f"a photo of {record.scene} in {record.spec.weather}"
    assert item["kind"] == record.kind
    assert item["name"] == os.path.basename(record.lq)


def test_sample_batch_is_reproducible(synth_dir):
    ds = PairedWeatherDataset.from_manifest(str(synth_dir / "train.tsv"))
    a = ds.sample_batch(np.random.default_rng(5), batch=3, crop=8)
    b = ds.sample_batch(np.random.default_rng(5), batch=3, crop=8)
    assert a["lq"].shape == (3, 3, 8, 8)
    assert np.array_equal(a["index"], b["index"])
    assert (a["lq"] == b["lq"]).all() and (a["hq"] == b["hq"]).all()
    assert [c.text for c in a["captions"]] == [c.text for c in b["captions"]]
