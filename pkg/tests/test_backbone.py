from unittest import mock

import pytest
import torch

from models.restoration.backbone import (
    ChannelAttention,
    CyclicPromptNet,
    Downsample,
    GatedFeedForward,
    TransformerBlock,
    Upsample,
)
from utils.errors import ContextMismatchError, DivisibilityError, MissingMetadataError, NonFiniteActivationError

CAPTION = ["a photo of street in rain and fog"]


@pytest.mark.parametrize("size", [16, 24])
def test_forward_shapes_and_range(tiny_model, size):
    img = torch.rand(2, 3, size, size)
    out = tiny_model.forward_cyclic(img, CAPTION * 2)
    assert out.first.shape == out.final.shape == img.shape
    for t in (out.first, out.final):
        assert t.min() >= 0.0 and t.max() <= 1.0
    assert out.residual.shape == (2, 1, size, size)


def test_prompt_token_counts(tiny_model, tiny_config):
    out = tiny_model.forward_cyclic(torch.rand(1, 3, 16, 16), CAPTION)
    assert out.initial_prompt.num_tokens == tiny_config.prompt.N + 1
    assert out.cyclic_prompt.num_tokens == 2
    assert out.initial_prompt.width == out.cyclic_prompt.width == tiny_config.prompt.D


def test_encoder_runs_once_per_cyclic_forward(tiny_model):
    with mock.patch.object(tiny_model, "encode", wraps=tiny_model.encode) as encode, \
            mock.patch.object(tiny_model, "decode", wraps=tiny_model.decode) as decode:
        tiny_model.forward_cyclic(torch.rand(1, 3, 16, 16), CAPTION)
    assert encode.call_count == 1
    assert decode.call_count == 2
    assert [c.args[1].iteration for c in decode.call_args_list] == [1, 2]


def test_non_divisible_input_is_rejected_by_forward(tiny_model):
    with pytest.raises(DivisibilityError):
        tiny_model.forward_cyclic(torch.rand(1, 3, 20, 16), CAPTION)


@pytest.mark.parametrize("hw", [(20, 28), (5, 5), (16, 16)])
def test_restore_pads_and_crops(tiny_model, hw):
    img = torch.rand(1, 3, *hw)
    out = tiny_model.restore(img, CAPTION)
    assert out.first.shape == out.final.shape == img.shape
    assert out.residual.shape == (1, 1, *hw)
    assert not out.final.requires_grad


def test_restore_matches_forward_on_divisible_input(tiny_model):
    img = torch.rand(1, 3, 16, 16)
    with torch.no_grad():
        direct = tiny_model.forward_cyclic(img, CAPTION)
    restored = tiny_model.restore(img, CAPTION)
    assert torch.equal(direct.final, restored.final)


def test_captions_required_with_text_prompt(tiny_model):
    with pytest.raises(MissingMetadataError):
        tiny_model.forward_cyclic(torch.rand(1, 3, 16, 16), None)


def test_single_caption_broadcasts_over_batch(tiny_model):
    img = torch.rand(2, 3, 16, 16)
    a = tiny_model.restore(img, CAPTION[0]).final
    b = tiny_model.restore(img, CAPTION * 2).final
    assert torch.allclose(a, b, atol=1e-6)


def test_prompted_decoder_needs_context(tiny_model):
    features = tiny_model.encode(torch.rand(1, 3, 16, 16))
    with pytest.raises(ContextMismatchError):
        tiny_model.decode(features, None)


def test_without_epm_second_pass_reuses_initial_prompt(make_config):
    torch.manual_seed(0)
    model = CyclicPromptNet(make_config(ablation={"use_epm": False})).eval()
    assert all(block.rpm is None for block in model.prompt_blocks.values())
    out = model.restore(torch.rand(1, 3, 16, 16), CAPTION)
    assert out.cyclic_prompt is None and out.residual is None
    assert torch.equal(out.first, out.final)


def test_without_rpm_blocks_have_no_modulator(make_config):
    torch.manual_seed(0)
    model = CyclicPromptNet(make_config(ablation={"use_rpm": False})).eval()
    assert model.rpm_bank() == {}
    assert model.parameter_counts()["residual_prior_modulators"] == 0
    out = model.restore(torch.rand(1, 3, 16, 16), CAPTION)
    assert out.cyclic_prompt.num_tokens == 2


def test_baseline_without_prompts(make_config):
    torch.manual_seed(0)
    model = CyclicPromptNet(make_config(ablation={"use_prompt": False})).eval()
    assert model.prompt_engine is None
    assert len(model.prompt_blocks) == 0
    out = model.restore(torch.rand(1, 3, 16, 16))
    assert out.initial_prompt is None
    assert torch.equal(out.first, out.final)


def test_text_ablation_runs_without_captions(make_config):
    torch.manual_seed(0)
    model = CyclicPromptNet(make_config(ablation={"use_text": False})).eval()
    out = model.restore(torch.rand(1, 3, 16, 16))
    assert out.initial_prompt.num_tokens == 3
    assert out.cyclic_prompt.num_tokens == 1


def test_compute_affine_per_level(tiny_model):
    r = torch.rand(1, 1, 16, 16)
    for level, c in ((4, 32), (3, 16), (2, 8)):
        alpha, beta = tiny_model.compute_affine(r, level)
        assert alpha.shape == beta.shape == (1, c, 16 // 2 ** (level - 1), 16 // 2 ** (level - 1))


def test_both_loss_terms_reach_the_encoder(tiny_config):
    torch.manual_seed(0)
    model = CyclicPromptNet(tiny_config)
    img = torch.rand(1, 3, 16, 16)
    target = torch.rand(1, 3, 16, 16)
    for pick in ("first", "final"):
        model.zero_grad(set_to_none=True)
        out = model.forward_cyclic(img, CAPTION)
        (getattr(out, pick) - target).abs().mean().backward()
        grad = model.patch_embed.weight.grad
        assert grad is not None and grad.abs().sum() > 0
    assert model.prompt_engine.mlp_weather_free.fc1.weight.grad.abs().sum() > 0


def test_construction_and_forward_are_deterministic(tiny_config):
    img = torch.rand(1, 3, 16, 16)
    outs = []
    for _ in range(2):
        torch.manual_seed(7)
        model = CyclicPromptNet(tiny_config).eval()
        outs.append(model.restore(img, CAPTION).final)
    assert torch.equal(outs[0], outs[1])


def test_parameter_counts_partition_total(tiny_model):
    counts = tiny_model.parameter_counts()
    parts = ["encoder", "decoder", "prompt_engine", "prompt_attention", "residual_prior_modulators"]
    assert all(counts[k] > 0 for k in parts)
    # frozen embedders hold buffers only
    assert sum(counts[k] for k in parts) == counts["total"]


def test_sampling_blocks_change_resolution():
    x = torch.randn(1, 4, 8, 8)
    assert Downsample(4)(x).shape == (1, 8, 4, 4)
    assert Upsample(4)(x).shape == (1, 2, 16, 16)


def test_attention_and_feedforward_preserve_shape():
    x = torch.randn(2, 8, 6, 4)
    assert ChannelAttention(8, num_heads=2)(x).shape == x.shape
    assert GatedFeedForward(8, expansion=2.0)(x).shape == x.shape


def test_transformer_block_gradcheck():
    torch.manual_seed(0)
    block = TransformerBlock(2, num_heads=1, expansion=2.0).double()
    x = torch.randn(1, 2, 2, 2, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(block, (x,), eps=1e-6, atol=1e-5, rtol=1e-4)


def test_transformer_block_flags_non_finite_activations():
    block = TransformerBlock(4, num_heads=1, check_finite=True)
    x = torch.randn(1, 4, 4, 4)
    x[0, 0, 0, 0] = float("inf")
    with pytest.raises(NonFiniteActivationError):
        block(x)


def test_encoder_latent_shape(tiny_model):
    features = tiny_model.encode(torch.rand(1, 3, 64, 64))
    assert features.latent.shape == (1, 8 * tiny_model.channels[0], 8, 8)
    assert [s.shape[1] for s in features.skips] == tiny_model.channels[:3]


def test_zero_input_transformer_block_is_finite():
    block = TransformerBlock(4, num_heads=2, expansion=2.0)
    assert torch.isfinite(block(torch.zeros(1, 4, 3, 3))).all()


def test_iteration_is_threaded_to_every_prompt_block(tiny_model):
    blocks = list(tiny_model.prompt_blocks.values())
    with mock.patch.object(blocks[0], "forward", wraps=blocks[0].forward) as f0, \
            mock.patch.object(blocks[1], "forward", wraps=blocks[1].forward) as f1, \
            mock.patch.object(blocks[2], "forward", wraps=blocks[2].forward) as f2:
        tiny_model.forward_cyclic(torch.rand(1, 3, 16, 16), CAPTION)
    for f in (f0, f1, f2):
        assert [c.args[1].iteration for c in f.call_args_list] == [1, 2]
