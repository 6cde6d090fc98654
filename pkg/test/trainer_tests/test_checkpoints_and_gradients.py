# Tests checkpoints, the student objective's gradient and the ablation table

import sketchkd as SK
from sketchkd.data import split_dataset
from sketchkd.trainer import student_loss, get_recipe
import numpy as np
import torch
import pytest


def _data(seed=0):
    dataset = SK.generate_synthetic(8, 2, 2, seed=seed, image_size=8, n_unlabelled=4)
    return split_dataset(dataset, 3, np.random.default_rng(seed))


def _hp():
    return SK.tiny_profile().replace(batch_size=4, epochs=1)


def test_checkpoint_round_trip(tmp_path):
    train, test = _data()
    result = SK.train_student(train, _hp(), gallery=test)
    filename = str(tmp_path/"student.ckpt")
    SK.save_checkpoint(filename, result.model, _hp(), state=result.state)

    checkpoint = SK.load_checkpoint(filename)
    assert checkpoint.kind == "student"
    assert checkpoint.step == 1
    assert checkpoint.hp == _hp()
    for (name, a), (_, b) in zip(result.model.state_dict().items(), checkpoint.model.state_dict().items()):
        assert torch.equal(a, b), name
    for name in result.ema.shadow:
        assert torch.equal(result.ema.shadow[name], checkpoint.ema.shadow[name])
    assert checkpoint.ema.step == result.ema.step

    payload = checkpoint.payload
    assert all(name.startswith("backbone.") for name in payload["params"])
    assert all(name.startswith("ema.") for name in payload["ema"])
    assert set(payload["rng"]) == {"sampling", "unlabelled", "augment"}


def test_checkpoint_restores_evaluation(tmp_path):
    train, test = _data()
    result = SK.train_student(train, _hp(), gallery=test)
    filename = str(tmp_path/"student.ckpt")
    SK.save_checkpoint(filename, result.model, _hp(), state=result.state)
    checkpoint = SK.load_checkpoint(filename, hp=_hp())

    before = SK.retrieval(result.model, test)
    after = SK.retrieval(checkpoint.model, test)
    assert np.array_equal(before.ranks, after.ranks)


def test_checkpoint_config_mismatch(tmp_path):
    model = SK.PyramidBackbone(_hp())
    filename = str(tmp_path/"model.ckpt")
    SK.save_checkpoint(filename, model, _hp())
    with pytest.raises(SK.ConfigError):
        SK.load_checkpoint(filename, hp=_hp().replace(tau=0.02))


def test_teacher_checkpoint_is_frozen(tmp_path):
    train, _ = _data()
    SK.pretrain_teacher(train.photo_pool(), _hp(), out_dir=str(tmp_path))
    checkpoint = SK.load_checkpoint(str(tmp_path/"teacher.ckpt"))
    assert checkpoint.kind == "teacher"
    assert checkpoint.model.token_design == "none"
    assert all(not param.requires_grad for param in checkpoint.model.parameters())


def test_checkpoint_missing_file(tmp_path):
    with pytest.raises(IOError):
        SK.load_checkpoint(str(tmp_path/"nothing.ckpt"))


def _objective(seed=4):
    # Full student objective on a fixed batch, in float64 at a moderate temperature
    hp = SK.tiny_profile().replace(tau=0.5)
    dataset = SK.generate_synthetic(3, 1, 2, seed=seed, image_size=8, n_unlabelled=2)
    pool = dataset.photo_pool()

    teacher = SK.PyramidBackbone(hp, token_design="none", init_name="teacher.init").double()
    bank = SK.build_bank(teacher, pool)
    unlabelled_photos = {instance.instance_id : instance.photo for instance in dataset.unlabelled}
    batch = SK.sample_triplet_batch(dataset, 2, np.random.default_rng(0))
    unlabelled_batch = SK.sample_photo_triplet_batch(unlabelled_photos, 2, np.random.default_rng(1))

    model = SK.PyramidBackbone(hp).double()
    recipe = get_recipe("full_kd")

    def total():
        return student_loss(model, batch, unlabelled_batch, hp, recipe, bank=bank, pool=pool)[0]

    return model, total


def test_total_loss_gradient():
    # Directional derivative of the full student objective against central differences
    model, total = _objective()
    loss = total()
    model.zero_grad()
    loss.backward()

    params = list(model.parameters())
    rng = np.random.default_rng(2)
    directions = [torch.as_tensor(rng.normal(size=tuple(param.shape))) for param in params]
    analytic = sum(float((param.grad*v).sum()) for param, v in zip(params, directions))

    eps = 1e-6
    with torch.no_grad():
        for param, v in zip(params, directions):
            param.add_(eps*v)
        upper = float(total())
        for param, v in zip(params, directions):
            param.sub_(2.0*eps*v)
        lower = float(total())
        for param, v in zip(params, directions):
            param.add_(eps*v)

    numeric = (upper-lower)/(2.0*eps)
    assert abs(analytic-numeric) <= 1e-5*max(1.0, abs(numeric))


def test_per_parameter_gradient():
    model, total = _objective()
    loss = total()
    model.zero_grad()
    loss.backward()

    eps = 1e-6
    rng = np.random.default_rng(3)
    checked = 0
    sampled = 0
    worst = 0.0
    with torch.no_grad():
        base = float(total())
        for name, param in model.named_parameters():
            flat = param.view(-1)
            grad = param.grad.view(-1)
            for index in rng.choice(flat.numel(), size=min(3, flat.numel()), replace=False):
                sampled += 1
                original = float(flat[index])
                flat[index] = original+eps
                upper = float(total())
                flat[index] = original-eps
                lower = float(total())
                flat[index] = original

                # One-sided slopes disagree when a hinge switches inside [-eps, eps]
                forward = (upper-base)/eps
                backward = (base-lower)/eps
                numeric = (upper-lower)/(2.0*eps)
                if abs(forward-backward) > 1e-2*max(abs(numeric), 1e-6):
                    continue

                analytic = float(grad[index])
                worst = max(worst, abs(analytic-numeric)/max(abs(analytic), abs(numeric), 1e-6))
                checked += 1

    assert checked >= 0.8*sampled
    assert worst < 1e-3


def test_ablation_rows(tmp_path):
    train, test = _data()
    table = SK.run_ablation("token_design", train, test, _hp(), seeds=[0], out_dir=str(tmp_path))

    assert table.variants == ["A", "B", "ours"]
    assert len(table.rows) == 3
    for row in table.rows:
        assert row["seeds"] == 1
        assert 0.0 <= row["acc1_mean"] <= 1.0
        assert row["acc1_std"] == 0.0

    with open(str(tmp_path/"ablation_token_design.csv"), 'r') as table_handle:
        lines = table_handle.read().splitlines()
    assert lines[0] == "variant,seeds,acc1_mean,acc1_std"
    assert [line.split(",")[0] for line in lines[1:]] == ["A", "B", "ours"]


def test_unknown_suite():
    train, test = _data()
    with pytest.raises(ValueError):
        SK.run_ablation("everything", train, test, _hp())


def test_loss_stripdown_rows(tmp_path):
    train, test = _data()
    table = SK.run_ablation("loss_stripdown", train, test, _hp(), seeds=[0], out_dir=str(tmp_path))

    assert table.variants == ["I", "II", "III", "IV", "full"]
    assert len(table.rows) == 5
    assert all(0.0 <= row["acc1_mean"] <= 1.0 for row in table.rows)

    with open(str(tmp_path/"ablation_loss_stripdown.csv"), 'r') as table_handle:
        lines = table_handle.read().splitlines()
    assert len(lines) == 6
    assert [line.split(",")[0] for line in lines[1:]] == ["I", "II", "III", "IV", "full"]


def test_training_leaves_inputs_untouched():
    train, test = _data()
    hp = _hp()
    teacher = SK.pretrain_teacher(train.photo_pool(), hp)
    photos = {instance.instance_id : instance.photo.copy() for instance in train.instances}
    sketches = {instance.instance_id : [sketch.copy() for sketch in instance.sketches] for instance in train.instances}
    bank_features = teacher.bank.features.copy()
    hash_before = SK.config_hash(hp)

    SK.train_student(train, hp, mode="full_kd", bank=teacher.bank, gallery=test)

    for instance in train.instances:
        assert np.array_equal(instance.photo, photos[instance.instance_id])
        assert len(instance.sketches) == len(sketches[instance.instance_id])
        for sketch, original in zip(instance.sketches, sketches[instance.instance_id]):
            assert np.array_equal(sketch, original)
    assert np.array_equal(teacher.bank.features, bank_features)
    assert SK.config_hash(hp) == hash_before
    assert hp == _hp()
