import numpy as np
import pytest

from pitta.backbone import (BackboneConfig, NonFiniteLossError, accuracy, build_backbone, forward,
                            init_pretrained, load_model, save_model, sgd_step, value_and_grad)
from pitta.losses import entropy_loss
from pitta.stream import make_windows
from pitta.synth import default_activities, generate
from pitta.tape import Var


def _source(seed=0, seconds=40.0):
    xs, ys = [], []
    for i, spec in enumerate(default_activities()):
        ws = make_windows(generate(spec, 50.0, seconds, seed + i), 64, 32, label=i, rate_hz=50.0)
        xs += [w.samples for w in ws]
        ys += [w.label for w in ws]
    return np.stack(xs), np.array(ys)


def test_forward_shapes(model, batch):
    out = forward(model, batch)
    assert out.logits.shape == (4, 3)
    assert out.z.shape == (4, 32)
    assert out.psi.shape == (4, 64, 3)
    np.testing.assert_allclose(out.probs.value.sum(axis=1), 1.0)


def test_adaptable_partition_is_norm_affine_only(model):
    assert set(model.adaptable_names) == {"in_norm.gamma", "in_norm.beta", "block1.norm.gamma",
                                         "block1.norm.beta"}
    assert not set(model.adaptable_names) & set(model.frozen_names)
    assert 0 < model.adaptable_fraction() < 0.05


def test_input_validation(model):
    with pytest.raises(ValueError):
        forward(model, np.zeros((2, 64, 2)))
    with pytest.raises(ValueError):
        forward(model, np.zeros((2, 8, 3)))
    with pytest.raises(ValueError):
        forward(model, np.zeros((2, 64, 3)), mode="test")
    with pytest.raises(ValueError):
        BackboneConfig(blocks=((0, 5, 2, 1),))


def test_sgd_step_touches_only_adaptable(model, batch):
    frozen = model.frozen_checksum()
    _, grads = value_and_grad(model, batch.data, lambda out, _: entropy_loss(out.probs, out.log_probs))
    before = model.adaptable_bytes()
    assert sgd_step(model, grads, 0.1)
    assert model.frozen_checksum() == frozen
    assert model.adaptable_bytes() != before
    with pytest.raises(KeyError):
        sgd_step(model, {"head.w": np.zeros_like(model.params["head.w"])}, 0.1)


def test_sgd_step_skips_non_finite(model):
    grads = {k: np.full_like(v, np.nan) for k, v in model.get_adaptable().items()}
    before = model.adaptable_bytes()
    assert not sgd_step(model, grads, 0.1)
    assert model.adaptable_bytes() == before


def test_non_finite_loss_raises(model, batch):
    with pytest.raises(NonFiniteLossError):
        value_and_grad(model, batch.data, lambda out, _: Var(np.nan))


def test_eval_mode_uses_running_stats(model, batch):
    a = forward(model, batch.data, "eval").logits.value
    model.running["in_norm.mean"] = model.running["in_norm.mean"] + 1.0
    b = forward(model, batch.data, "eval").logits.value
    c = forward(model, batch.data, "train").logits.value
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(c, forward(model, batch.data, "train").logits.value)


def test_save_load_round_trip(tmp_path, model, batch):
    save_model(model, tmp_path / "m.pitm")
    back = load_model(tmp_path / "m.pitm")
    assert back.config == model.config
    for k in model.params:
        np.testing.assert_array_equal(back.params[k], model.params[k])
    np.testing.assert_array_equal(forward(back, batch.data).logits.value, forward(model, batch.data).logits.value)
    (tmp_path / "bad").write_bytes(b"XXXX")
    with pytest.raises(ValueError):
        load_model(tmp_path / "bad")


def test_pretraining_learns_the_source_task():
    x, y = _source()
    model, rep = init_pretrained(BackboneConfig(), x, y, epochs=5, seed=0)
    assert rep.train_accuracy > 0.9 and rep.holdout_accuracy > 0.9
    xt, yt = _source(seed=50, seconds=20.0)
    assert accuracy(model, xt, yt) > 0.9


def test_pretraining_is_deterministic_and_validates():
    x, y = _source(seconds=10.0)
    a, _ = init_pretrained(BackboneConfig(), x, y, epochs=1, seed=4, homogeneous_frac=0.5)
    b, _ = init_pretrained(BackboneConfig(), x, y, epochs=1, seed=4, homogeneous_frac=0.5)
    assert a.frozen_checksum() == b.frozen_checksum() and a.adaptable_bytes() == b.adaptable_bytes()
    with pytest.raises(ValueError):
        init_pretrained(BackboneConfig(), x, y, homogeneous_frac=1.5)
    with pytest.raises(ValueError):
        init_pretrained(BackboneConfig(), x, np.zeros_like(y))


def test_build_backbone_identity_affine():
    m = build_backbone(BackboneConfig(), 3)
    for k in m.adaptable_names:
        expected = 1.0 if k.endswith("gamma") else 0.0
        np.testing.assert_array_equal(m.params[k], expected)
