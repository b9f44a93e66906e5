import pytest
import torch
from safetensors.torch import load_file, save_file

from models.restoration.backbone import CyclicPromptNet
from utils.checkpoint import FORMAT_VERSION, load_checkpoint, load_state, read_checkpoint_info, save_checkpoint
from utils.errors import CheckpointVersionError


def test_roundtrip_restores_identical_outputs(tmp_path, tiny_model, tiny_config):
    path = save_checkpoint(str(tmp_path / "model.safetensors"), tiny_model, tiny_config, seed=3, step=12,
                           extra={"note": "desk"})
    model, config, info = load_checkpoint(path)

    assert info.format_version == FORMAT_VERSION
    assert (info.seed, info.step) == (3, 12)
    assert info.extra == {"note": "desk"}
    assert config.to_dict() == tiny_config.to_dict()
    for name, tensor in tiny_model.state_dict().items():
        assert torch.equal(model.state_dict()[name], tensor), name

    img = torch.rand(1, 3, 16, 16)
    caption = ["a photo of park in snow"]
    assert torch.equal(model.restore(img, caption).final, tiny_model.restore(img, caption).final)


def test_checkpoint_excludes_regenerable_embedder_buffers(tmp_path, tiny_model, tiny_config):
    path = save_checkpoint(str(tmp_path / "m.safetensors"), tiny_model, tiny_config, seed=0)
    assert not any("projection" in name for name in load_file(path))


def test_load_state_into_existing_model(tmp_path, tiny_model, tiny_config):
    path = save_checkpoint(str(tmp_path / "m.safetensors"), tiny_model, tiny_config, seed=0, step=5)
    torch.manual_seed(99)
    other = CyclicPromptNet(tiny_config)
    info = load_state(path, other)
    assert info.step == 5
    assert torch.equal(other.output.weight, tiny_model.output.weight)


def test_version_mismatch_is_rejected(tmp_path, tiny_model):
    path = str(tmp_path / "old.safetensors")
    tensors = {k: v.contiguous() for k, v in tiny_model.state_dict().items()}
    save_file(tensors, path, metadata={"format": "cyclicprompt", "format_version": "0"})
    with pytest.raises(CheckpointVersionError):
        read_checkpoint_info(path)
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_foreign_safetensors_is_rejected(tmp_path):
    path = str(tmp_path / "foreign.safetensors")
    save_file({"w": torch.zeros(2)}, path)
    with pytest.raises(CheckpointVersionError):
        read_checkpoint_info(path)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_checkpoint_info(str(tmp_path / "nope.safetensors"))
