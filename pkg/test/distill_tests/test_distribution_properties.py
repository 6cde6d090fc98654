# Tests properties of the similarity distributions and KL over many random cases

import sketchkd as SK
import numpy as np
import torch


def _oracle_distribution(dists, tau):
    shifted = [-d/tau for d in dists]
    top = max(shifted)
    weights = [np.exp(s-top) for s in shifted]
    total = sum(weights)
    return [w/total for w in weights]


def test_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        K = int(rng.integers(1, 8))
        tau = float(10.0**rng.uniform(-2, 1))
        dists = rng.uniform(0.0, 3.0, size=K)
        p = SK.similarity_distribution(dists, tau).numpy()
        expected = _oracle_distribution(list(dists), tau)
        assert np.all(np.abs(p-expected) <= 1e-9*np.maximum(np.abs(expected), 1e-300))

        q_dists = rng.uniform(0.0, 3.0, size=K)
        q = SK.similarity_distribution(q_dists, tau).numpy()
        kl = float(SK.kl_consistency(p, q))
        expected_q = _oracle_distribution(list(q_dists), tau)
        expected_kl = sum(a*np.log(a/b) for a, b in zip(expected, expected_q) if a > 0.0)
        assert abs(kl-expected_kl) <= 1e-9*max(abs(expected_kl), 1e-12)


def test_sums_to_one():
    rng = np.random.default_rng(1)
    dists = rng.uniform(0.0, 50.0, size=(1000, 5))
    for tau in (0.001, 0.01, 1.0, 100.0):
        p = SK.similarity_distribution(dists, tau)
        assert torch.all(torch.abs(p.sum(dim=-1)-1.0) <= 1e-9)


def test_kl_non_negative():
    rng = np.random.default_rng(2)
    p = SK.similarity_distribution(rng.uniform(0.0, 2.0, size=(10000, 5)), 0.5)
    q = SK.similarity_distribution(rng.uniform(0.0, 2.0, size=(10000, 5)), 0.5)
    assert torch.all(SK.kl_consistency(p, q) >= -1e-15)


def test_kl_of_identical():
    rng = np.random.default_rng(3)
    p = SK.similarity_distribution(rng.uniform(0.0, 2.0, size=(1000, 5)), 0.1)
    assert torch.all(torch.abs(SK.kl_consistency(p, p.clone())) <= 1e-12)


def test_shift_invariance():
    rng = np.random.default_rng(4)
    for _ in range(100):
        dists = rng.uniform(0.0, 1.0, size=6)
        shift = float(rng.uniform(0.0, 10.0))
        a = SK.similarity_distribution(dists, 0.3)
        b = SK.similarity_distribution(dists+shift, 0.3)
        assert torch.all(torch.abs(a-b) <= 1e-9)
