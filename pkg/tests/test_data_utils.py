import numpy as np
import pytest
from PIL import Image

from inpaint.utils.data_utils import (SYNTH_CLASSES, center_crop_square, ingest_images,
                                      load_image, save_image, split_by_hash, synth_dataset)


def write_png(path, width, height, seed=0):
    pixels = np.random.default_rng(seed).integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    Image.fromarray(pixels).save(path)
    return pixels


def test_synth_dataset_is_deterministic():
    a, b = synth_dataset(20, 32, seed=3), synth_dataset(20, 32, seed=3)
    assert np.array_equal(a.images, b.images)
    assert a.labels == b.labels
    assert not np.array_equal(a.images, synth_dataset(20, 32, seed=4).images)


def test_synth_dataset_range_and_shape():
    collection = synth_dataset(50, 16, seed=0)
    assert collection.images.shape == (50, 3, 16, 16)
    assert collection.resolution == 16
    assert collection.images.min() >= 0 and collection.images.max() <= 1
    assert len(collection.names) == len(set(collection.names)) == 50


def test_synth_dataset_mixes_classes():
    labels = synth_dataset(200, 8, seed=1).labels
    assert set(labels) == set(SYNTH_CLASSES)


def test_synth_dataset_rejects_empty():
    with pytest.raises(ValueError):
        synth_dataset(0, 16, seed=0)


def test_collection_subset_and_tensor():
    collection = synth_dataset(5, 8, seed=2)
    subset = collection.subset([4, 1])
    assert subset.names == [collection.names[4], collection.names[1]]
    tensor = collection.to_tensor([0, 2])
    assert tensor.shape == (2, 3, 8, 8)
    assert np.allclose(tensor.numpy(), collection.images[[0, 2]], atol=1e-7)


def test_center_crop_of_wide_image(tmp_path):
    pixels = write_png(tmp_path / 'wide.png', 100, 60)
    with Image.open(tmp_path / 'wide.png') as image:
        cropped = center_crop_square(image)
        assert cropped.size == (60, 60)
        assert np.array_equal(np.asarray(cropped), pixels[:, 20:80])


def test_load_image_crops_and_resizes(tmp_path):
    write_png(tmp_path / 'wide.png', 100, 60)
    array = load_image(tmp_path / 'wide.png', 32)
    assert array.shape == (3, 32, 32)
    assert array.min() >= 0 and array.max() <= 1
    assert load_image(tmp_path / 'wide.png', None).shape == (3, 60, 60)


def test_save_image_ppm(tmp_path):
    array = synth_dataset(1, 16, seed=5).images[0]
    save_image(array, tmp_path / 'image.ppm')
    assert (tmp_path / 'image.ppm').read_bytes().startswith(b'P6')
    np.testing.assert_allclose(load_image(tmp_path / 'image.ppm', None), array, atol=0.5 / 255 + 1e-12)


def test_split_by_hash_is_stable():
    names = [f'img-{i}.png' for i in range(10)]
    train, val = split_by_hash(names, 0.2)
    assert len(train) == 8 and len(val) == 2
    assert sorted(train + val) == list(range(10))
    assert split_by_hash(list(reversed(names)), 0.2)[1] == sorted(9 - i for i in val)


def test_ingest_images(tmp_path):
    for i in range(10):
        write_png(tmp_path / f'img-{i}.png', 48, 40, seed=i)
    result = ingest_images(str(tmp_path), 32, val_ratio=0.2)
    assert len(result.train) == 8 and len(result.val) == 2
    assert result.train.images.shape == (8, 3, 32, 32)
    assert not set(result.train.names) & set(result.val.names)
    assert result.skipped == []


def test_ingest_skips_corrupt_files(tmp_path):
    write_png(tmp_path / 'good.png', 20, 20)
    (tmp_path / 'bad.png').write_bytes(b'not an image')
    result = ingest_images(str(tmp_path), 16, val_ratio=0.0)
    assert result.train.names == ['good.png']
    assert result.skipped == ['bad.png']
    assert len(result.val) == 0


def test_ingest_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        ingest_images(str(tmp_path / 'missing'), 16)
    with pytest.raises(ValueError):
        ingest_images(str(tmp_path), 16)
    (tmp_path / 'bad.png').write_bytes(b'garbage')
    with pytest.raises(ValueError):
        ingest_images(str(tmp_path), 16)
