import numpy as np
import pytest

from cmvit.errors import ConfigError, ShapeError
from cmvit.models import (
    ARCHS, CMFBlock, MViTBlock, ModelConfig, build_model, count_buffers, count_parameters,
    gradcheck_config, micro_config, paper_scale_config,
)
from cmvit.spectral import fft2_magnitude
from cmvit.tensor import Tensor, concat, grad_check, precision, tensor_create
from cmvit.verify import MODEL_STEP, MODEL_TOL, model_case
from oracles import expected_count


PINNED = [micro_config(a) for a in ARCHS] + [gradcheck_config(a) for a in ARCHS] + [
    micro_config("cmvit", cmf_conv_layers=3, mlp_ratio=4, num_classes=3),
    micro_config("cmvit_lbp", embed_dim=24, num_heads=3, lbp_embed_dim=7),
    micro_config("xception", xception_width=6, xception_middle_blocks=3),
]


def images(rng, n, size=32):
    return Tensor(rng.uniform(0, 1, size=(n, 3, size, size)))


@pytest.mark.parametrize("cfg", PINNED, ids=lambda c: f"{c.arch}-{c.embed_dim}-{c.xception_width}")
def test_parameter_count_matches_closed_form(cfg):
    model = build_model(cfg)
    assert count_parameters(model) == expected_count(cfg)
    enumerated = sum(int(np.prod(p.shape)) for _, p in model.named_parameters())
    assert count_parameters(model) == enumerated


def test_pinned_micro_counts():
    assert [count_parameters(build_model(micro_config(a))) for a in ARCHS] == [42050, 46674, 5058]


def test_parameter_names_unique_and_grads_shaped():
    for arch in ARCHS:
        named = list(build_model(micro_config(arch)).named_parameters())
        names = [n for n, _ in named]
        assert len(names) == len(set(names))
        assert all(p.grad.shape == p.shape for _, p in named)


def test_buffers_only_in_xception():
    assert count_buffers(build_model(micro_config("cmvit"))) == 0
    assert count_buffers(build_model(micro_config("xception"))) > 0


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(image_size=30, patch_size=8)
    with pytest.raises(ConfigError):
        ModelConfig(embed_dim=30, num_heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(num_classes=1)
    with pytest.raises(ConfigError):
        ModelConfig(arch="resnet")
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"arch": "cmvit", "depth": 3})


def test_paper_scale_configs_build_lazily():
    # only the configs are checked; building them is too large for a unit test
    for arch in ARCHS:
        assert paper_scale_config(arch).arch == arch


def test_cmf_preserves_shape(rng):
    block = CMFBlock(8, 4, 2, rng=rng)
    x = Tensor(rng.normal(size=(2, 8, 16, 16)))
    assert block(x).shape == (2, 8, 16, 16)


def test_cmf_zero_projection_is_identity(f64, rng):
    block = CMFBlock(8, 4, 2, rng=rng)
    block.proj.weight.data[...] = 0
    block.proj.bias.data[...] = 0
    x = Tensor(rng.normal(size=(2, 8, 6, 6)))
    assert np.array_equal(block(x).data, x.data)


def test_cmf_constant_planes_only_dc(f64, rng):
    block = CMFBlock(4, 4, 2, rng=rng)
    x = np.broadcast_to(rng.normal(size=(1, 4, 1, 1)), (1, 4, 8, 8)).copy()
    mag = fft2_magnitude(block.norm(Tensor(x))).data
    assert np.all(mag[..., 0, 0] > 0)
    off = mag.copy()
    off[..., 0, 0] = 0
    assert np.abs(off).max() < 1e-12


def test_mvit_zero_branches_is_identity(f64, rng):
    block = MViTBlock(32, 2, 2, rng=rng)
    for lin in (block.attn.out_proj, block.ffn.fc2):
        lin.weight.data[...] = 0
        lin.bias.data[...] = 0
    x = Tensor(rng.normal(size=(2, 16, 32)))
    assert np.array_equal(block(x).data, x.data)


def test_mvit_preserves_shape(rng):
    assert MViTBlock(32, 2, 2, rng=rng)(Tensor(rng.normal(size=(2, 16, 32)))).shape == (2, 16, 32)


def test_mvit_gradient_check(f64, rng):
    block = MViTBlock(8, 2, 2, rng=rng)
    w = Tensor(rng.normal(size=(1, 3, 8)))
    x = Tensor(0.5 * rng.normal(size=(1, 3, 8)))
    assert grad_check(lambda t: (block(t) * w).sum(), x, MODEL_STEP) < MODEL_TOL


@pytest.mark.parametrize("arch", ARCHS)
def test_probabilities_sum_to_one(arch, rng):
    model = build_model(micro_config(arch)).eval()
    p = model(images(rng, 5)).data
    assert p.shape == (5, 2)
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-6)
    assert np.all((p > 0) & (p <= 1))


@pytest.mark.parametrize("arch", ARCHS)
def test_wrong_image_size(arch, rng):
    with pytest.raises(ShapeError):
        build_model(micro_config(arch))(images(rng, 1, 16))


def test_zero_head_gives_uniform(rng):
    model = build_model(micro_config("cmvit"))
    model.head_fc2.weight.data[...] = 0
    model.head_fc2.bias.data[...] = 0
    assert model(images(rng, 3)).data.tolist() == [[0.5, 0.5]] * 3


def test_lbp_ablation_consistency(f64, rng):
    model = build_model(micro_config("cmvit_lbp"))
    model.lbp_embed.weight.data[...] = 0
    model.lbp_embed.bias.data[...] = 0
    x = images(rng, 2)
    zeros = tensor_create([2, model.cfg.lbp_embed_dim], 0.0)
    expected = model.head(concat([model.features(x), zeros], axis=1))
    assert np.array_equal(model.logits(x).data, expected.data)


def test_lbp_branch_monotone_invariant(f64, rng):
    model = build_model(micro_config("cmvit_lbp"))
    gray = rng.integers(0, 128, size=(2, 32, 32))
    remapped = np.minimum(255, 2 * gray)
    a = Tensor(np.repeat(gray[:, None], 3, axis=1) / 255.0)
    b = Tensor(np.repeat(remapped[:, None], 3, axis=1) / 255.0)
    assert np.array_equal(model.lbp_branch(a).data, model.lbp_branch(b).data)
    assert not np.array_equal(model.features(a).data, model.features(b).data)


def test_xception_eval_deterministic(rng):
    model = build_model(micro_config("xception"))
    model(images(rng, 4))  # populate running stats in train mode
    model.eval()
    x = images(rng, 3)
    assert np.array_equal(model(x).data, model(x).data)


@pytest.mark.parametrize("training", [False, True])
def test_xception_middle_block_residual_identity(f64, rng, training):
    model = build_model(micro_config("xception")).train(training)
    block = model.middle[0]
    last = block.stages[2].conv.pointwise
    last.weight.data[...] = 0
    last.bias.data[...] = 0
    x = Tensor(rng.normal(size=(2, 16, 8, 8)))
    assert np.array_equal(block(x).data, x.data)


@pytest.mark.parametrize("arch", ARCHS)
def test_full_model_gradient_check(arch):
    assert model_case(arch) < MODEL_TOL


def test_float64_build_is_float64():
    with precision("float64"):
        model = build_model(gradcheck_config("cmvit"))
    assert all(p.dtype == np.float64 for p in model.parameters())
