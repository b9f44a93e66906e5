import pytest
import yaml

from models.training.ablation import (
    EXPECTED_ORDER,
    VARIANTS,
    find_inversions,
    run_ablation,
    summarize,
    variant_config,
    variant_overrides,
)
from utils.errors import ConfigError


def test_variant_overrides():
    assert variant_overrides("full") == {}
    assert variant_overrides("baseline") == {"ablation": {"use_prompt": False}}
    assert variant_overrides("n=4") == {"prompt": {"N": 4}}
    with pytest.raises(ConfigError):
        variant_overrides("everything")
    assert set(EXPECTED_ORDER) <= set(VARIANTS)


def test_variant_config_starts_from_the_full_model(make_config):
    base = make_config(ablation={"use_rpm": False, "use_text": False})
    config = variant_config(base, "c2p", seed=7)
    a = config.ablation
    assert (a.use_prompt, a.use_knowledge, a.use_input_vectors, a.use_text, a.use_rpm) == (True,) * 5
    assert a.use_epm is False
    assert config.train.seed == 7
    assert config.train.resume == ""
    assert variant_config(base, "n=1", seed=0).prompt.N == 1
    # the base is left untouched
    assert base.ablation.use_rpm is False


def test_knowledge_only_variant(make_config):
    a = variant_config(make_config(), "knowledge", seed=0).ablation
    assert a.use_knowledge and not (a.use_input_vectors or a.use_text or a.use_epm)


def test_find_inversions():
    summary = {"full": {"psnr_mean": 20.0}, "c2p": {"psnr_mean": 21.0}, "baseline": {"psnr_mean": 19.0}}
    inversions = find_inversions(summary)
    assert inversions == [{"expected_higher": "full", "expected_lower": "c2p", "gap": -1.0}]
    # absent variants are skipped, neighbours are compared directly
    assert find_inversions({"full": {"psnr_mean": 18.0}, "baseline": {"psnr_mean": 19.0}})[0]["gap"] == -1.0
    assert find_inversions({"full": {"psnr_mean": 30.0}}) == []


def test_summarize_mean_and_std():
    summary = summarize({"full": [{"psnr": 20.0, "ssim": 0.8}, {"psnr": 22.0, "ssim": 0.9}]})
    s = summary["full"]
    assert s["psnr_mean"] == pytest.approx(21.0)
    assert s["psnr_std"] == pytest.approx(1.0)
    assert s["ssim_mean"] == pytest.approx(0.85)
    assert s["runs"] == 2


def test_run_ablation_end_to_end(tmp_path, make_config, synth_dir):
    config = make_config(train={"iterations": 2})
    report_path = tmp_path / "ablation.yaml"
    report = run_ablation(config, str(synth_dir), ["baseline", "full"], [0], str(tmp_path / "runs"),
                          report_path=str(report_path))
    assert set(report["summary"]) == {"baseline", "full"}
    assert (tmp_path / "runs" / "baseline" / "seed_0" / "model.safetensors").is_file()
    assert (tmp_path / "runs" / "full" / "seed_0" / "loss_log.tsv").is_file()
    data = yaml.safe_load(report_path.read_text())
    assert data["variants"] == ["baseline", "full"]
    assert isinstance(data["inversions"], list)
    assert len(data["runs"]["full"]) == 1


def test_run_ablation_rejects_unknown_variants_before_training(tmp_path, make_config, synth_dir):
    with pytest.raises(ConfigError):
        run_ablation(make_config(), str(synth_dir), ["full", "bogus"], [0], str(tmp_path / "runs"))
    assert not (tmp_path / "runs").exists()
