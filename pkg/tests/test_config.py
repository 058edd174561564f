import pytest

from talkface.config import PipelineConfig, load_config, parse_config
from talkface.errors import ConfigError
from talkface.light import LightParams
from talkface.model import ModelConfig
from talkface.model.train import TrainConfig


def test_text_round_trip():
    cfg = PipelineConfig(epochs=7, channel_scale=0.125, audio_preset="appendix")
    assert parse_config(cfg.to_text()) == cfg


def test_comments_and_blank_lines():
    cfg = parse_config("# header\n\nepochs = 3  # short run\nirls_temperature=0.2\n")
    assert cfg.epochs == 3 and cfg.irls_temperature == 0.2


@pytest.mark.parametrize("text", [
    "no_such_key = 1",
    "epochs = many",
    "epochs",
    "zero_atlas_prob = 1.5",
    "atlas_size = 512",
    "audio_preset = other",
    "batch_size = 0",
])
def test_bad_config_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")


def test_derived_configs_follow_pipeline_values():
    cfg = parse_config("irls_patch_size = 8\nn_atlas_latent = 0\nbatch_size = 4\nmax_train_seconds = 9")
    assert cfg.light_params().patch_size == 8
    assert cfg.model_config().n_atlas_latent == 0
    tc = cfg.train_config(seed=5)
    assert tc.batch_size == 4 and tc.seed == 5 and tc.max_seconds == 9
    assert PipelineConfig().train_config().max_seconds is None


def test_defaults_agree_across_modules():
    cfg = PipelineConfig()
    lp, mc, tc = LightParams(), ModelConfig(), TrainConfig()
    assert (cfg.irls_temperature, cfg.irls_patch_size, cfg.irls_iterations) == \
        (lp.temperature, lp.patch_size, lp.iterations)
    assert (cfg.n_audio_latent, cfg.n_atlas_latent, cfg.channel_scale) == \
        (mc.n_audio_latent, mc.n_atlas_latent, mc.channel_scale)
    assert (cfg.batch_size, cfg.alpha_geo, cfg.alpha_bs, cfg.zero_atlas_prob, cfg.learning_rate) == \
        (tc.batch_size, tc.alpha_geo, tc.alpha_bs, tc.zero_atlas_prob, tc.learning_rate)
