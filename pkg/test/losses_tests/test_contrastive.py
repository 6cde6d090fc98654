# Tests the contrastive alternative to the photo triplets

import sketchkd as SK
from sketchkd.losses import TripletEmbeddings
import numpy as np
import torch
import pytest


def test_identical_pairs_large_temperature():
    # Every logit tends to zero, leaving one positive out of 2N-1 candidates
    f = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    loss = SK.contrastive_alternative(f, f.clone(), tau=1e6)
    assert abs(float(loss)-np.log(3.0)) < 1e-5


def test_well_separated_pairs():
    f = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    loss = SK.contrastive_alternative(f, f.clone(), tau=0.01)
    assert float(loss) < 1e-6


def test_permutation_invariance():
    rng = np.random.default_rng(0)
    f_a = rng.normal(size=(6, 4))
    f_b = rng.normal(size=(6, 4))
    order = rng.permutation(6)
    a = SK.contrastive_alternative(f_a, f_b, tau=0.5)
    b = SK.contrastive_alternative(f_a[order], f_b[order], tau=0.5)
    assert abs(float(a)-float(b)) < 1e-12


def test_shared_labels_are_positives():
    rng = np.random.default_rng(1)
    f_a = rng.normal(size=(4, 3))
    f_b = rng.normal(size=(4, 3))
    grouped = SK.contrastive_alternative(f_a, f_b, labels=["x", "x", "y", "y"], tau=0.5)
    single = SK.contrastive_alternative(f_a, f_b, tau=0.5)
    assert float(grouped) < float(single)


def test_preconditions():
    f = np.ones((3, 2))
    with pytest.raises(ValueError):
        SK.contrastive_alternative(f, f, tau=0.0)
    with pytest.raises(ValueError):
        SK.contrastive_alternative(f[:1], f[:1])
    with pytest.raises(ValueError):
        SK.contrastive_alternative(f, np.ones((2, 2)))
    with pytest.raises(ValueError):
        SK.contrastive_alternative(f, f, labels=[0, 1])


def test_photo_objective_switch():
    hp = SK.paper_default_profile()
    rng = np.random.default_rng(2)
    e = TripletEmbeddings(*(torch.as_tensor(rng.normal(size=(4, 3))) for _ in range(6)), ids=["a", "b", "c", "d"])

    triplet = SK.combined_training_loss(e, hp)
    contrastive = SK.combined_training_loss(e, hp, photo_objective="contrastive", contrastive_tau=0.2)

    assert float(triplet.cm) == float(contrastive.cm)
    assert float(triplet.im_s) == float(contrastive.im_s)
    assert abs(float(contrastive.im_p)-float(SK.contrastive_alternative(e.f_p, e.f_pt, labels=e.ids, tau=0.2))) < 1e-12

    with pytest.raises(ValueError):
        SK.combined_training_loss(e, hp, photo_objective="infonce")
