# Tests triplet batch sampling

import sketchkd as SK
import numpy as np
import pytest


def _check_row_integrity(dataset, batch):
    for row, anchor_id in enumerate(batch.anchor_ids):
        anchor = dataset[anchor_id]
        negative = dataset[batch.negative_ids[row]]

        assert batch.negative_ids[row] != anchor_id
        assert np.array_equal(batch.positive_photo[row], anchor.photo)
        assert np.array_equal(batch.anchor_sketch[row], anchor.sketches[batch.anchor_sketch_index[row]])
        assert np.array_equal(batch.positive_sketch[row], anchor.sketches[batch.positive_sketch_index[row]])
        assert np.array_equal(batch.negative_photo[row], negative.photo)
        assert any(np.array_equal(batch.negative_sketch[row], sketch) for sketch in negative.sketches)
        if len(anchor.sketches) > 1:
            assert batch.positive_sketch_index[row] != batch.anchor_sketch_index[row]


def test_two_instances():
    dataset = SK.generate_synthetic(2, 1, 2, seed=0)
    batch = SK.sample_triplet_batch(dataset, 4, np.random.default_rng(0))

    assert len(batch) == 4
    assert batch.anchor_sketch.shape == (4, 32, 32, 3)
    assert batch.augmented_photo.shape == (4, 32, 32, 3)
    for anchor_id, negative_id in zip(batch.anchor_ids, batch.negative_ids):
        assert anchor_id != negative_id


def test_pairing_integrity_over_seeds():
    dataset = SK.generate_synthetic(6, 2, 3, seed=1, image_size=16, n_unlabelled=2)
    for seed in range(10):
        batch = SK.sample_triplet_batch(dataset, 5, np.random.default_rng(seed))
        _check_row_integrity(dataset, batch)
        assert all(anchor_id.startswith("i") for anchor_id in batch.anchor_ids+batch.negative_ids)


def test_repeatable():
    dataset = SK.generate_synthetic(5, 1, 2, seed=2, image_size=16)
    a = SK.sample_triplet_batch(dataset, 3, np.random.default_rng(9))
    b = SK.sample_triplet_batch(dataset, 3, np.random.default_rng(9))

    assert a.anchor_ids == b.anchor_ids
    assert a.negative_ids == b.negative_ids
    assert np.array_equal(a.augmented_photo, b.augmented_photo)


def test_negative_frequencies():
    # Each non-anchor instance is the negative with frequency 1/9
    dataset = SK.generate_synthetic(10, 2, 2, seed=3, image_size=8)
    rng = np.random.default_rng(4)
    ids = [instance.instance_id for instance in dataset.labelled]
    counts = {anchor_id : {other : 0 for other in ids if other != anchor_id} for anchor_id in ids}

    batch = SK.sample_triplet_batch(dataset, 10000, rng, augmentation="color")
    for anchor_id, negative_id in zip(batch.anchor_ids, batch.negative_ids):
        counts[anchor_id][negative_id] += 1

    # Pool over anchors for a stable estimate
    totals = {other : 0 for other in ids}
    draws = {other : 0 for other in ids}
    for anchor_id, row in counts.items():
        n = sum(row.values())
        for other, count in row.items():
            totals[other] += count
            draws[other] += n
    for other in ids:
        assert abs(totals[other]/draws[other]-1.0/9.0) < 0.02


def test_fixed_anchors():
    dataset = SK.generate_synthetic(4, 2, 2, seed=5, image_size=8)
    batch = SK.sample_triplet_batch(dataset, 0, np.random.default_rng(0), anchor_ids=["i0002", "i0000", "i0002"])
    assert batch.anchor_ids == ["i0002", "i0000", "i0002"]


def test_augment_rng_keeps_ids():
    dataset = SK.generate_synthetic(5, 1, 2, seed=6, image_size=16)
    a = SK.sample_triplet_batch(dataset, 4, np.random.default_rng(1), augment_rng=np.random.default_rng(2), augmentation="structural")
    b = SK.sample_triplet_batch(dataset, 4, np.random.default_rng(1), augment_rng=np.random.default_rng(2), augmentation="blur")
    assert a.anchor_ids == b.anchor_ids
    assert a.negative_ids == b.negative_ids


def test_too_few_instances():
    dataset = SK.generate_synthetic(1, 1, 2, seed=0)
    with pytest.raises(SK.DatasetError):
        SK.sample_triplet_batch(dataset, 2, np.random.default_rng(0))


def test_photo_triplets():
    dataset = SK.generate_synthetic(3, 1, 2, seed=7, image_size=16, n_unlabelled=4)
    photos = {instance.instance_id : instance.photo for instance in dataset.unlabelled}
    batch = SK.sample_photo_triplet_batch(photos, 6, np.random.default_rng(3))

    assert len(batch) == 6
    for row, (anchor_id, negative_id) in enumerate(zip(batch.anchor_ids, batch.negative_ids)):
        assert anchor_id != negative_id
        assert anchor_id in photos
        assert np.array_equal(batch.anchor[row], photos[anchor_id])
        assert np.array_equal(batch.negative[row], photos[negative_id])

    with pytest.raises(SK.DatasetError):
        SK.sample_photo_triplet_batch({"u0000" : photos["u0000"]}, 2, np.random.default_rng(3))
