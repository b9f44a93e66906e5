import time

import pytest
import torch

from models.restoration.residual_prior import (
    LargeKernelChannelBlock,
    ResidualPriorModulator,
    compute_affine,
    extract_residual,
    level_size,
    modulate,
)
from utils.errors import ChannelCountError, ShapeMismatchError, UnknownLevelError


def test_residual_of_single_pixel():
    img = torch.tensor([0.8, 0.2, 0.5]).reshape(1, 3, 1, 1)
    assert extract_residual(img).item() == pytest.approx(0.6)


def test_grayscale_image_has_zero_residual():
    gray = torch.rand(1, 1, 8, 8).expand(1, 3, 8, 8)
    assert torch.count_nonzero(extract_residual(gray)) == 0


def test_residual_matches_per_pixel_oracle():
    g = torch.Generator().manual_seed(0)
    images = torch.rand(100, 3, 32, 32, generator=g)
    start = time.perf_counter()
    out = extract_residual(images)
    assert time.perf_counter() - start < 1.0
    for n in range(0, 100, 33):
        for y in range(32):
            for x in range(32):
                r, gr, b = (images[n, c, y, x].item() for c in range(3))
                assert out[n, 0, y, x].item() == pytest.approx(max(r, gr, b) - min(r, gr, b), abs=1e-7)


def test_residual_invariances():
    g = torch.Generator().manual_seed(1)
    img = torch.rand(2, 3, 16, 16, generator=g) * 0.5
    base = extract_residual(img)
    assert torch.allclose(extract_residual(img + 0.3), base, atol=1e-6)
    assert torch.allclose(extract_residual(0.5 * img), 0.5 * base, atol=1e-7)
    assert (base >= 0).all() and (base <= 1).all()


def test_residual_rejects_non_rgb():
    with pytest.raises(ChannelCountError):
        extract_residual(torch.rand(1, 1, 8, 8))


def test_modulate_identities_and_oracle():
    g = torch.Generator().manual_seed(2)
    x = torch.randn(2, 3, 4, 4, generator=g)
    alpha = torch.randn(2, 3, 4, 4, generator=g)
    beta = torch.randn(2, 3, 4, 4, generator=g)
    assert torch.equal(modulate(x, torch.ones_like(x), torch.zeros_like(x)), x)
    assert torch.equal(modulate(x, torch.zeros_like(x), beta), beta)
    out = modulate(x, alpha, beta)
    for idx in [(0, 0, 0, 0), (1, 2, 3, 1), (0, 1, 2, 3)]:
        assert out[idx] == alpha[idx] * x[idx] + beta[idx]
    x2 = torch.randn(2, 3, 4, 4, generator=g)
    zero = torch.zeros_like(x)
    assert torch.allclose(modulate(x + x2, alpha, zero), modulate(x, alpha, zero) + modulate(x2, alpha, zero))
    with pytest.raises(ShapeMismatchError):
        modulate(x, alpha[:, :2], beta)


@pytest.mark.parametrize("shape", [(1, 2, 4, 4), (2, 8, 5, 7), (1, 16, 1, 1)])
def test_large_kernel_block_preserves_shape(shape):
    block = LargeKernelChannelBlock(shape[1], kernel=7, se_ratio=4)
    assert block(torch.randn(shape)).shape == shape


def test_large_kernel_block_residual_skip_with_saturated_gates():
    torch.manual_seed(0)
    block = LargeKernelChannelBlock(4, kernel=3, se_ratio=2)
    with torch.no_grad():
        block.lka.weight.zero_()
        block.lka.bias.fill_(50.0)
        block.se_expand.weight.zero_()
        block.se_expand.bias.fill_(50.0)
    x = torch.randn(1, 4, 5, 5)
    expected = x + block.proj(x)
    assert torch.allclose(block(x), expected, atol=1e-6)


def test_large_kernel_block_gradcheck():
    torch.manual_seed(0)
    block = LargeKernelChannelBlock(2, kernel=3, se_ratio=2).double()
    x = torch.randn(1, 2, 4, 4, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda t: block(t).sum(), (x,), eps=1e-6, atol=1e-5, rtol=1e-4)

    names = [n for n, _ in block.named_parameters()]
    params = tuple(p.detach().clone().requires_grad_() for p in block.parameters())

    def fn(*ps):
        return torch.func.functional_call(block, dict(zip(names, ps)), (x.detach(),)).sum()

    assert torch.autograd.gradcheck(fn, params, eps=1e-6, atol=1e-5, rtol=1e-4)


def test_rpm_alpha_starts_near_identity():
    rpm = ResidualPriorModulator(8, kernel=3, se_ratio=2)
    alpha, beta = rpm(torch.rand(1, 1, 16, 16), (8, 8))
    assert alpha.shape == beta.shape == (1, 8, 8, 8)
    assert torch.allclose(alpha, torch.ones_like(alpha), atol=0.05)
    assert beta.abs().max() < 0.05


def test_compute_affine_shapes_and_determinism():
    torch.manual_seed(0)
    bank = {level: ResidualPriorModulator(c, kernel=3, se_ratio=2) for level, c in ((4, 32), (3, 16), (2, 8))}
    r = torch.rand(1, 1, 32, 32)
    for level, c in ((4, 32), (3, 16), (2, 8)):
        alpha, beta = compute_affine(r, level, bank)
        h, w = level_size(32, 32, level)
        assert alpha.shape == beta.shape == (1, c, h, w)
        alpha2, beta2 = compute_affine(r, level, bank)
        assert torch.equal(alpha, alpha2) and torch.equal(beta, beta2)
    with pytest.raises(UnknownLevelError):
        compute_affine(r, 1, bank)


def test_zero_residual_with_zero_biases_gives_zero_affine():
    rpm = ResidualPriorModulator(4, kernel=3, se_ratio=2)
    with torch.no_grad():
        for module in rpm.modules():
            if isinstance(module, torch.nn.Conv2d) and module.bias is not None:
                module.bias.zero_()
    alpha, beta = compute_affine(torch.zeros(1, 1, 8, 8), 2, {2: rpm})
    assert torch.count_nonzero(alpha) == 0
    assert torch.count_nonzero(beta) == 0
