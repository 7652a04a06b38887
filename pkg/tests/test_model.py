"""Tests for network construction, forward passes and checkpoints."""

import json

import numpy as np
import pytest

from rankmvml.errors import ContractError, DimensionError, ManifestError
from rankmvml.model import (
    BoundModel,
    MlpSpec,
    ModelConfig,
    classify,
    decode,
    discriminate,
    encode,
    init_model,
    load_checkpoint,
    load_fusion,
    save_checkpoint,
)
from rankmvml.ndcore import Node, const, sum_all


def test_init_is_deterministic(tiny_model_config):
    a = init_model([5, 4], 3, 4, seed=1, config=tiny_model_config)
    b = init_model([5, 4], 3, 4, seed=1, config=tiny_model_config)
    c = init_model([5, 4], 3, 4, seed=2, config=tiny_model_config)
    assert a.params.keys() == b.params.keys()
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert not np.array_equal(a.params["enc0_w0"], c.params["enc0_w0"])


def test_init_biases_zero_and_weights_bounded(tiny_model):
    for name, value in tiny_model.params.items():
        if "_b" in name:
            assert value.shape[0] == 1
            assert np.all(value == 0)
        else:
            fan_in, fan_out = value.shape
            assert np.all(np.abs(value) <= np.sqrt(6.0 / (fan_in + fan_out)))


def test_init_layer_shapes(tiny_model):
    assert tiny_model.params["enc0_w0"].shape == (5, 4)
    assert tiny_model.params["enc0_w1"].shape == (4, 3)
    assert tiny_model.params["dec1_w1"].shape == (4, 4)
    assert tiny_model.params["cls_w0"].shape == (3, 4)
    assert tiny_model.params["disc_w0"].shape == (6, 4)
    assert tiny_model.params["disc_w1"].shape == (4, 2)


def test_names_filter_by_module(tiny_model):
    assert tiny_model.names("cls") == ["cls_w0", "cls_b0"]
    assert all(name.startswith("disc") for name in tiny_model.names("disc"))
    assert len(tiny_model.names("enc", "dec")) == 16


def test_default_discriminator_width():
    assert ModelConfig(d_e=128).discriminator_width(3) == 96
    assert ModelConfig(d_e=16).discriminator_width(2) == 64
    assert ModelConfig(d_e=16, disc_hidden=5).discriminator_width(2) == 5


@pytest.mark.parametrize(
    "widths, activation", [((4,), "none"), ((4, 0), "none"), ((4, 2), "tanh")]
)
def test_mlp_spec_validation(widths, activation):
    with pytest.raises(ContractError):
        MlpSpec(widths, activation)


def test_zero_input_gives_zero_hidden_activation(tiny_model):
    z = encode(tiny_model, np.zeros((2, 5)), 0)
    assert np.array_equal(z.value, np.zeros((2, 3)))


def test_identity_encoder_decoder_recovers_input():
    model = init_model([3], 3, 2, seed=0, config=ModelConfig(d_e=3, hidden=()))
    model.params["enc0_w0"] = np.eye(3)
    model.params["dec0_w0"] = np.eye(3)
    x = np.random.default_rng(0).standard_normal((4, 3))
    assert np.array_equal(decode(model, encode(model, x, 0), 0).value, x)


def test_encode_rejects_wrong_width(tiny_model):
    with pytest.raises(DimensionError):
        encode(tiny_model, np.zeros((2, 4)), 0)


def test_discriminator_rows_sum_to_one(tiny_model):
    rng = np.random.default_rng(1)
    zs = [rng.standard_normal((6, 3)) * 10 for _ in range(2)]
    b = discriminate(tiny_model, zs).value
    assert np.all(np.abs(b.sum(axis=1) - 1.0) <= 1e-12)


def test_discriminator_single_view_is_all_ones():
    config = ModelConfig(d_e=3, hidden=(4,), disc_hidden=4)
    model = init_model([4], 3, 2, seed=0, config=config)
    b = discriminate(model, [np.random.default_rng(0).standard_normal((5, 3))]).value
    assert np.allclose(b, 1.0)


def test_discriminator_symmetric_weights_give_equal_scores(tiny_model):
    model = tiny_model.copy()
    half = np.random.default_rng(2).standard_normal((3, 4))
    model.params["disc_w0"] = np.vstack([half, half])
    column = np.random.default_rng(3).standard_normal((4, 1))
    model.params["disc_w1"] = np.tile(column, (1, 2))
    z = np.random.default_rng(4).standard_normal((5, 3))
    b = discriminate(model, [z, z]).value
    assert np.allclose(b[:, 0], b[:, 1])


def test_discriminator_requires_every_view(tiny_model):
    with pytest.raises(ContractError):
        discriminate(tiny_model, [np.zeros((2, 3))])


def test_zero_classifier_predicts_one_half(tiny_model):
    model = tiny_model.copy()
    model.params["cls_w0"] = np.zeros_like(model.params["cls_w0"])
    p = classify(model, np.random.default_rng(0).standard_normal((3, 3))).value
    assert np.all(p == 0.5)


def test_bound_model_shares_classifier_leaves(tiny_model):
    bound = tiny_model.bind()
    z = bound.encode(np.ones((2, 5)), 0)
    sum_all(bound.classify(z) + bound.classify(const(np.ones((2, 3))))).backward()
    grads = bound.gradients()
    assert np.any(grads["cls_w0"] != 0)
    assert np.all(grads["disc_w0"] == 0)


def test_bound_model_validates_overrides(tiny_model):
    with pytest.raises(ContractError):
        BoundModel(tiny_model, {"nope": Node.leaf(np.zeros((1, 1)))})
    with pytest.raises(DimensionError):
        BoundModel(tiny_model, {"cls_w0": Node.leaf(np.zeros((2, 2)))})


def test_check_compatible(tiny_model):
    tiny_model.check_compatible([5, 4], 4)
    with pytest.raises(ContractError):
        tiny_model.check_compatible([5, 5], 4)


# =============================================================================
# CHECKPOINTS
# =============================================================================


def test_checkpoint_round_trip(tmp_path, tiny_model):
    model = tiny_model.copy()
    model.params["cls_b0"] = np.array([[0.1, -1.0 / 3.0, 2.5e-7, 0.0]])
    save_checkpoint(model, tmp_path, epoch=7)
    loaded, epoch = load_checkpoint(tmp_path)
    assert epoch == 7
    assert loaded.dims == model.dims and loaded.c == model.c
    assert all(np.array_equal(loaded.params[k], model.params[k]) for k in model.params)
    assert loaded.specs() == model.specs()


@pytest.mark.parametrize("key", ["dims", "specs", "parameters"])
def test_checkpoint_missing_field(tmp_path, tiny_model, key):
    save_checkpoint(tiny_model, tmp_path, epoch=1)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    del manifest[key]
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(ManifestError) as excinfo:
        load_checkpoint(tmp_path)
    assert excinfo.value.field == key


def test_checkpoint_parameter_list_mismatch(tmp_path, tiny_model):
    save_checkpoint(tiny_model, tmp_path, epoch=1)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["parameters"] = manifest["parameters"][1:]
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(ManifestError, match="parameters"):
        load_checkpoint(tmp_path)


def test_checkpoint_records_fusion(tmp_path, tiny_model):
    save_checkpoint(tiny_model, tmp_path / "dynamic", epoch=1)
    assert load_fusion(tmp_path / "dynamic") == ("dynamic", None)
    save_checkpoint(
        tiny_model,
        tmp_path / "static",
        epoch=1,
        fusion="static",
        static_weights=(0.25, 0.75),
    )
    assert load_fusion(tmp_path / "static") == ("static", (0.25, 0.75))
    with pytest.raises(ContractError):
        save_checkpoint(tiny_model, tmp_path / "bad", epoch=1, fusion="mean")


def test_checkpoint_fusion_defaults_and_validation(tmp_path, tiny_model):
    save_checkpoint(
        tiny_model, tmp_path, epoch=1, fusion="static", static_weights=(0.5, 0.5)
    )
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    for key in ("fusion", "static_weights"):
        del manifest[key]
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    assert load_fusion(tmp_path) == ("dynamic", None)
    manifest["fusion"] = "static"
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(ManifestError) as excinfo:
        load_fusion(tmp_path)
    assert excinfo.value.field == "static_weights"
