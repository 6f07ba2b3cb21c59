import pytest

from lamassu.config import PRESETS, ConfigError, RunConfig, apply_overrides, load_config


def test_defaults_are_the_toy_configuration():
    cfg = RunConfig().validate()
    m = cfg.model
    assert (m.blocks, m.clusters, m.separate_layers, m.shared_layers, m.d, m.heads) == (2, 2, 1, 1, 64, 4)
    assert (m.chunk_frames, m.dropout, m.pred_layers) == (4, 0.1, 1)
    assert (cfg.loss.alpha, cfg.loss.beta) == (0.75, 0.4)
    assert (cfg.schedule.total_steps, cfg.schedule.all_ones_fraction) == (3000, 0.5)
    assert (cfg.optim.lr, cfg.optim.warmup, cfg.optim.batch) == (1e-3, 400, 32)
    assert (cfg.optim.beta1, cfg.optim.beta2, cfg.optim.eps) == (0.9, 0.98, 1e-9)
    d = cfg.data
    assert (d.n_train, d.n_dev, d.n_test, d.d_x, d.sigma, d.span_min, d.span_max) == (6000, 600, 600, 16, 0.1, 2, 4)
    assert (d.min_len, d.max_len, d.overlap) == (3, 12, 4)


def test_full_scale_preset():
    cfg = load_config(preset="full-scale")
    m = cfg.model
    assert m.blocks == 6
    assert m.blocks * (m.separate_layers + m.shared_layers) == 24
    assert m.chunk_frames * m.frame_ms == 160.0 and m.chunk_frames == 16
    assert "toy" in PRESETS


def test_file_then_overrides(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[model]\nvariant = spe\nclusters = 1\ntarget_lid_for_encoder = off\n"
                    "[loss]\nctc = on\n[schedule]\nall_ones_fraction = 0.9\n")
    cfg = load_config(path, overrides={"model.clusters": "2"})
    assert cfg.model.variant == "SPE" and cfg.model.clusters == 2
    assert cfg.model.target_lid_for_encoder is False and cfg.loss.ctc is True
    assert cfg.schedule.all_ones_fraction == 0.9


def test_ini_round_trip(tmp_path):
    cfg = apply_overrides(RunConfig(), {"model.d_j": 32, "loss.ctc": True, "data.sigma": 0.25}).validate()
    path = tmp_path / "c.ini"
    path.write_text(cfg.to_ini())
    assert load_config(path) == cfg
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("text,needle", [
    ("[model]\nwidth = 3\n", "model.width"),
    ("[modle]\nd = 3\n", "modle"),
    ("[model]\nd = three\n", "model.d"),
    ("[loss]\nctc = maybe\n", "loss.ctc"),
])
def test_bad_files_name_the_key(tmp_path, text, needle):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError, match=needle):
        load_config(path)


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        load_config(overrides={"model.variant": "MIX"})
    with pytest.raises(ConfigError):
        load_config(overrides={"model.d": 30})
    with pytest.raises(ConfigError):
        load_config(overrides={"schedule.all_ones_fraction": 0.0})
    with pytest.raises(ConfigError):
        load_config(preset="huge")
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), {"d": 3})
