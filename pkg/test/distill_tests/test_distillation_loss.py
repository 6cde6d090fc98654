# Tests the similarity distributions, KL consistency and the distillation loss

import sketchkd as SK
from sketchkd.data import TripletBatch, PhotoTripletBatch
import numpy as np
import torch
import pytest


def test_similarity_distribution():
    p = SK.similarity_distribution([0.01, 0.02], 0.01)
    assert np.allclose(p.numpy(), [0.7311, 0.2689], atol=1e-4)

    p = SK.similarity_distribution([2.0, 2.0, 2.0], 0.5)
    assert np.allclose(p.numpy(), 1.0/3.0)


def test_similarity_distribution_extreme_temperature():
    p = SK.similarity_distribution([0.0, 1000.0], 1e-4)
    assert torch.isfinite(p).all()
    assert abs(float(p.sum())-1.0) < 1e-12


def test_similarity_distribution_preconditions():
    with pytest.raises(ValueError):
        SK.similarity_distribution([0.1, 0.2], 0.0)
    with pytest.raises(ValueError):
        SK.similarity_distribution([0.1, -0.2], 0.1)
    with pytest.raises(ValueError):
        SK.similarity_distribution([0.1, np.inf], 0.1)


def test_kl_consistency():
    assert abs(float(SK.kl_consistency([0.5, 0.5], [0.5, 0.5]))) < 1e-15
    assert abs(float(SK.kl_consistency([0.5, 0.5], [0.7311, 0.2689]))-0.120) < 1e-3

    # Zero teacher mass contributes nothing
    assert abs(float(SK.kl_consistency([1.0, 0.0], [0.5, 0.5]))-np.log(2.0)) < 1e-12

    with pytest.raises(ValueError):
        SK.kl_consistency([0.5, 0.4], [0.5, 0.5])
    with pytest.raises(ValueError):
        SK.kl_consistency([0.5, 0.5], [1.0])


def test_kl_teacher_is_constant():
    p_teacher = torch.tensor([0.3, 0.7], dtype=torch.float64, requires_grad=True)
    p_student = torch.tensor([0.6, 0.4], dtype=torch.float64, requires_grad=True)
    SK.kl_consistency(p_teacher, p_student).backward()
    assert p_teacher.grad is None
    assert p_student.grad is not None


class FlattenStudent(torch.nn.Module):
    # mu is the scaled, flattened image
    def __init__(self, scale):
        super().__init__()
        self.scale = torch.nn.Parameter(torch.tensor(float(scale), dtype=torch.float64))

    @property
    def dtype(self):
        return self.scale.dtype

    def forward(self, images, mode="student"):
        flat = images.reshape(images.shape[0], -1)
        return SK.BackboneOutput(f=flat, mu=self.scale*flat)


def _setup(seed=0):
    rng = np.random.default_rng(seed)
    pool = {"p{0}".format(i) : rng.random((2, 2, 3)) for i in range(6)}
    bank = SK.FeatureBank(sorted(pool), np.stack([pool[photo_id].reshape(-1) for photo_id in sorted(pool)], axis=0))
    anchors = ["p0", "p2"]
    empty = np.zeros((2, 2, 2, 3))
    labelled = TripletBatch(anchor_sketch=np.stack([pool[a] for a in anchors], axis=0), positive_photo=empty, negative_photo=empty,
                            positive_sketch=empty, negative_sketch=empty, augmented_photo=empty, anchor_ids=anchors,
                            negative_ids=["p1", "p3"], anchor_sketch_index=[0, 0], positive_sketch_index=[1, 1])
    unlabelled = PhotoTripletBatch(anchor=pool["p4"][np.newaxis], positive=pool["p4"][np.newaxis], negative=pool["p5"][np.newaxis],
                                   anchor_ids=["p4"], negative_ids=["p5"])
    return pool, bank, labelled, unlabelled


def test_student_matching_teacher_gives_zero():
    pool, bank, labelled, unlabelled = _setup()
    hp = SK.tiny_profile().replace(tau=1.0)
    total, breakdown = SK.distillation_loss(FlattenStudent(1.0), bank, labelled, unlabelled, hp, pool)

    assert abs(float(total)) < 1e-12
    for value in (breakdown.kl_pl, breakdown.kl_sl, breakdown.kl_pu):
        assert abs(float(value)) < 1e-12


def _oracle_term(bank, queries, K, tau, scale):
    values = []
    for q in queries:
        others = [photo_id for photo_id in bank.ids if photo_id != q]
        dists = sorted((float(((bank.row(o)-bank.row(q))**2).sum()), o) for o in others)[:K]
        t = np.array([dist for dist, _ in dists])
        s = scale**2*t
        p_t = np.exp(-t/tau)/np.exp(-t/tau).sum()
        p_s = np.exp(-s/tau)/np.exp(-s/tau).sum()
        values.append(float((p_t*np.log(p_t/p_s)).sum()))
    return np.mean(values)


def test_scalar_loop_oracle():
    rng = np.random.default_rng(0)
    for seed in range(100):
        pool, bank, labelled, unlabelled = _setup(seed)
        scale = float(rng.uniform(1.5, 3.0))
        hp = SK.tiny_profile().replace(tau=float(rng.uniform(0.3, 2.0)))
        total, breakdown = SK.distillation_loss(FlattenStudent(scale), bank, labelled, unlabelled, hp, pool)

        kl_pl = _oracle_term(bank, ["p0", "p2"], hp.K, hp.tau, scale)
        kl_pu = _oracle_term(bank, ["p4"], hp.K, hp.tau, scale)
        assert abs(float(breakdown.kl_pl)-kl_pl) <= 1e-10*kl_pl
        # The sketches equal their paired photos here
        assert abs(float(breakdown.kl_sl)-kl_pl) <= 1e-10*kl_pl
        assert abs(float(breakdown.kl_pu)-kl_pu) <= 1e-10*kl_pu
        expected = kl_pl+hp.lambda4*kl_pl+hp.lambda5*kl_pu
        assert abs(float(total)-expected) <= 1e-10*expected


def test_disabled_terms():
    pool, bank, labelled, unlabelled = _setup(2)
    hp = SK.tiny_profile().replace(tau=1.0)
    total, breakdown = SK.distillation_loss(FlattenStudent(2.0), bank, labelled, None, hp, pool, kl_pu=False)
    assert breakdown.kl_pu is None
    assert abs(float(total)-float(breakdown.kl_pl)-hp.lambda4*float(breakdown.kl_sl)) < 1e-12

    with pytest.raises(ValueError):
        SK.distillation_loss(FlattenStudent(2.0), bank, labelled, None, hp, pool)


def test_all_terms_disabled():
    pool, bank, _, _ = _setup(2)
    student = FlattenStudent(2.0)
    total, breakdown = SK.distillation_loss(student, bank, None, None, SK.tiny_profile(), pool, kl_pl=False, kl_sl=False, kl_pu=False)
    assert float(total) == 0.0
    assert total.dtype == torch.float64
    assert breakdown.as_floats() == {"kl_pl" : None, "kl_sl" : None, "kl_pu" : None, "total" : 0.0}


def test_gradient_reaches_student():
    pool, bank, labelled, unlabelled = _setup(3)
    student = FlattenStudent(2.0)
    total, _ = SK.distillation_loss(student, bank, labelled, unlabelled, SK.tiny_profile().replace(tau=1.0), pool)
    total.backward()
    assert student.scale.grad is not None
    assert float(student.scale.grad) > 0.0


def test_missing_ids():
    pool, bank, labelled, unlabelled = _setup(4)
    hp = SK.tiny_profile()

    # A neighbour photo absent from the pool
    short_pool = dict(pool)
    absent = bank.neighbours("p0", hp.K).neighbour_ids[0]
    del short_pool[absent]
    with pytest.raises(SK.BankMismatchError) as e:
        SK.distillation_loss(FlattenStudent(1.0), bank, labelled, unlabelled, hp, short_pool)
    assert absent in e.value.missing_ids

    # A query that the bank never saw
    small_bank = SK.FeatureBank([photo_id for photo_id in bank.ids if photo_id != "p4"], np.delete(bank.features, bank.index_of["p4"], axis=0))
    with pytest.raises(SK.BankMismatchError) as e:
        SK.distillation_loss(FlattenStudent(1.0), small_bank, labelled, unlabelled, hp, pool)
    assert "p4" in str(e.value)


def test_baseline_objectives():
    pool, bank, labelled, unlabelled = _setup(5)
    hp = SK.tiny_profile().replace(tau=1.0)
    for objective in ("regress", "rkd", "pkt"):
        matched, _ = SK.distillation_loss(FlattenStudent(1.0), bank, labelled, unlabelled, hp, pool, objective=objective)
        assert abs(float(matched)) < 1e-6
        total, _ = SK.distillation_loss(FlattenStudent(3.0), bank, labelled, unlabelled, hp, pool, objective=objective)
        assert torch.isfinite(total)

    with pytest.raises(ValueError):
        SK.distillation_loss(FlattenStudent(1.0), bank, labelled, unlabelled, hp, pool, objective="hint")
