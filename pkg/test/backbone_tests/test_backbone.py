# Tests the pyramid backbone's shapes, token routing and determinism

import sketchkd as SK
import numpy as np
import torch
import pytest


def _images(hp, n, seed=0):
    return np.random.default_rng(seed).random((n, hp.image_size, hp.image_size, 3)).astype(np.float32)


def test_desk_token_counts_and_sides():
    hp = SK.desk_profile()
    model = SK.PyramidBackbone(hp)
    output = model(torch.as_tensor(_images(hp, 2)), mode="student")

    # Student mode: N patch tokens plus one token enter each level
    assert model.last_trace == [(side*side+1, side) for side in hp.map_sides]
    assert output.f.shape == (2, hp.d)
    assert output.mu.shape == (2, hp.d)


def test_desk_teacher_mode():
    hp = SK.desk_profile()
    model = SK.PyramidBackbone(hp)
    output = model(torch.as_tensor(_images(hp, 2)), mode="teacher")

    assert output.mu is None
    assert model.last_trace == [(side*side, side) for side in hp.map_sides]


def test_full_profile_geometry():
    hp = SK.paper_default_profile()
    model = SK.PyramidBackbone(hp)
    output = model(torch.as_tensor(_images(hp, 1)), mode="student")

    assert [side for _, side in model.last_trace] == [56, 28, 14, 7]
    assert [n for n, _ in model.last_trace] == [56*56+1, 28*28+1, 14*14+1, 7*7+1]
    assert output.f.shape == (1, 512)
    assert output.mu.shape == (1, 512)


def test_last_level_token_design():
    hp = SK.desk_profile()
    model = SK.PyramidBackbone(hp, token_design="last_level")
    model(torch.as_tensor(_images(hp, 1)), mode="student")

    sides = hp.map_sides
    assert model.last_trace == [(sides[0]**2, sides[0]), (sides[1]**2, sides[1]), (sides[2]**2+1, sides[2])]


def test_no_token_design_shares_feature():
    hp = SK.tiny_profile()
    model = SK.PyramidBackbone(hp, token_design="none")
    output = model(torch.as_tensor(_images(hp, 3)), mode="student")
    assert torch.equal(output.f, output.mu)


def test_unknown_token_design():
    with pytest.raises(SK.ConfigError):
        SK.PyramidBackbone(SK.tiny_profile(), token_design="middle")


def test_wrong_image_shape():
    hp = SK.tiny_profile()
    model = SK.PyramidBackbone(hp)
    with pytest.raises(ValueError):
        model(torch.zeros(1, hp.image_size+2, hp.image_size+2, 3))


def test_wrong_mode():
    hp = SK.tiny_profile()
    model = SK.PyramidBackbone(hp)
    with pytest.raises(ValueError):
        model(torch.as_tensor(_images(hp, 1)), mode="distill")


def test_non_finite_activations():
    hp = SK.tiny_profile()
    model = SK.PyramidBackbone(hp)
    images = torch.as_tensor(_images(hp, 1))
    images[0, 0, 0, 0] = float("nan")
    with pytest.raises(SK.NonFiniteActivationError) as e:
        model(images)
    assert e.value.level == 1


def test_initialization_deterministic():
    hp = SK.tiny_profile()
    a = SK.PyramidBackbone(hp, seed=4)
    b = SK.PyramidBackbone(hp, seed=4)
    c = SK.PyramidBackbone(hp, seed=5)

    for (name, pa), (_, pb), (_, pc) in zip(a.named_parameters(), b.named_parameters(), c.named_parameters()):
        assert torch.equal(pa, pb), name
    assert any(not torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters()))


def test_initialization_does_not_touch_global_rng():
    torch.manual_seed(11)
    expected = torch.rand(3)
    torch.manual_seed(11)
    SK.PyramidBackbone(SK.tiny_profile())
    assert torch.equal(torch.rand(3), expected)


def test_parameter_names():
    hp = SK.tiny_profile()
    names = set(name for name, _ in SK.PyramidBackbone(hp).named_parameters())

    assert "level1.token" in names
    assert "level1.token_pos" in names
    assert "level2.token_pos" in names
    assert "level2.token" not in names
    assert "level1.token_proj.weight" in names
    assert "level2.norm.weight" in names
    assert "level1.patch_embed.pos" in names


def test_every_parameter_reaches_mu():
    hp = SK.tiny_profile()
    model = SK.PyramidBackbone(hp).double()
    output = model(torch.as_tensor(_images(hp, 2)).double(), mode="student")
    output.mu.sum().backward()

    for name, param in model.named_parameters():
        assert param.grad is not None, name


def test_embed_matches_forward():
    hp = SK.tiny_profile()
    model = SK.PyramidBackbone(hp).double()
    images = _images(hp, 5).astype(np.float64)

    f_batched = model.embed(images, mode="teacher", batch_size=2)
    for i in range(5):
        with torch.no_grad():
            f_single = model(torch.as_tensor(images[i:i+1]), mode="teacher").f.numpy()[0]
        assert np.allclose(f_batched[i], f_single, rtol=0.0, atol=1e-10)

    f, mu = model.embed(images, mode="student")
    assert f.shape == (5, hp.d)
    assert mu.shape == (5, hp.d)
