# Desk-scale training experiments. These take tens of minutes of CPU time and only
# run when SKETCHKD_RUN_EXPERIMENTS=1.

import os
import functools

import sketchkd as SK
from sketchkd.data import split_dataset, subsample_labelled
from sketchkd.helpers import component_rng
import numpy as np
import pytest

pytestmark = pytest.mark.skipif(os.environ.get("SKETCHKD_RUN_EXPERIMENTS") != "1", reason="set SKETCHKD_RUN_EXPERIMENTS=1 to run desk experiments")

SEEDS = [0, 1, 2, 3, 4]


def _desk_split(seed):
    # 32 training pairs, 16 gallery pairs, 64 unlabelled photos
    dataset = SK.generate_synthetic(48, 4, 2, seed=seed, image_size=32, n_unlabelled=64)
    return split_dataset(dataset, 16, component_rng(seed, "data.split"))


@functools.lru_cache(maxsize=None)
def _baseline_run(seed):
    train, test = _desk_split(seed)
    hp = SK.desk_profile().replace(seed=seed)
    return SK.train_student(train, hp, mode="strong_baseline", gallery=test)


def test_baseline_beats_chance():
    chance = 1.0/16.0
    passed = sum(1 for seed in SEEDS if _baseline_run(seed).reported["acc1"] >= 3.0*chance)
    assert passed >= 4


def test_ema_stabilises_accuracy():
    passed = 0
    for seed in SEEDS:
        trace = SK.stability_trace(_baseline_run(seed).metrics)
        if trace.std_ema <= trace.std_raw:
            passed += 1
    assert passed >= 4


def test_distillation_does_not_degrade():
    baseline = []
    distilled = []
    for seed in SEEDS:
        train, test = _desk_split(seed)
        train = subsample_labelled(train, 0.5, component_rng(seed, "study.subsample"))
        hp = SK.desk_profile().replace(seed=seed)

        teacher = SK.pretrain_teacher(train.photo_pool(), hp)
        assert teacher.probe_final < teacher.probe_initial

        baseline.append(SK.train_student(train, hp, mode="strong_baseline", gallery=test).reported["acc1"])
        distilled.append(SK.train_student(train, hp, mode="full_kd", bank=teacher.bank, gallery=test).reported["acc1"])

    print("strong_baseline {0:.4f}  full_kd {1:.4f}".format(np.mean(baseline), np.mean(distilled)))
    assert np.mean(distilled) >= np.mean(baseline)-0.02


def test_cross_category_beats_chance():
    seen = ["c00", "c01", "c02", "c03"]
    unseen = ["c04", "c05"]
    passed = 0
    for seed in SEEDS:
        dataset = SK.generate_synthetic(48, 6, 2, seed=seed, image_size=32, n_unlabelled=32)
        report = SK.cross_category_harness(dataset, seen, unseen, SK.desk_profile().replace(seed=seed))
        assert report.leaked_ids == []
        if report.mean["acc1"] > report.chance:
            passed += 1
    assert passed >= 4
