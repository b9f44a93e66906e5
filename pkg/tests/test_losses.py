import pytest
import torch

from models.training.losses import loss_terms, loss_total
from utils.errors import ShapeMismatchError


def test_perfect_restorations_cost_nothing():
    gt = torch.rand(2, 3, 8, 8)
    assert loss_total(gt.clone(), gt.clone(), gt).item() == 0.0


def test_uniform_offsets():
    gt = torch.zeros(1, 3, 4, 4)
    terms = loss_terms(torch.full_like(gt, 0.1), torch.full_like(gt, 0.05), gt)
    assert terms["loss_first"].item() == pytest.approx(0.1)
    assert terms["loss_final"].item() == pytest.approx(0.05)
    assert terms["loss"].item() == pytest.approx(0.15)


def test_loss_matches_mean_absolute_error():
    g = torch.Generator().manual_seed(0)
    a, b, gt = (torch.rand(2, 3, 5, 7, generator=g, dtype=torch.float64) for _ in range(3))
    expected = sum(abs(a.flatten()[i] - gt.flatten()[i]).item() for i in range(gt.numel())) / gt.numel() + \
        sum(abs(b.flatten()[i] - gt.flatten()[i]).item() for i in range(gt.numel())) / gt.numel()
    assert loss_total(a, b, gt).item() == pytest.approx(expected, abs=1e-12)


def test_shape_mismatch():
    gt = torch.rand(1, 3, 8, 8)
    with pytest.raises(ShapeMismatchError):
        loss_total(torch.rand(1, 3, 8, 4), gt, gt)
    with pytest.raises(ShapeMismatchError):
        loss_total(gt, torch.rand(1, 3, 4, 8), gt)


def test_loss_gradcheck():
    g = torch.Generator().manual_seed(1)
    gt = torch.rand(1, 3, 3, 3, generator=g, dtype=torch.float64)
    # keep every entry away from the kink at zero
    a = (gt + 0.1 + torch.rand(gt.shape, generator=g, dtype=torch.float64) * 0.1).requires_grad_()
    b = (gt - 0.1 - torch.rand(gt.shape, generator=g, dtype=torch.float64) * 0.1).requires_grad_()
    assert torch.autograd.gradcheck(lambda x, y: loss_total(x, y, gt), (a, b), eps=1e-6, atol=1e-6)
