import pytest

from rlmolgan.config import Config, ConfigError, default_run_dir, dump_config, load_config, override, parse_config


def test_defaults_follow_published_settings():
    c = Config()
    assert (c.lr_pretrain, c.lr_adv, c.batch_size, c.dropout, c.lam, c.K) == (1e-5, 2e-5, 64, 0.1, 0.5, 8)
    assert c.disc_lr == 1e-4
    assert override(c, mode="wgan").disc_lr == 1e-5
    assert (c.f_steps, c.d_steps, c.clip_c) == (1, 1, 0.01)


def test_parse_and_comments():
    c = parse_config("# comment\nseed = 7\n\nmode = wgan\nlam = 0.25\ndivergence_guard = false\n")
    assert (c.seed, c.mode, c.lam, c.divergence_guard) == (7, "wgan", 0.25, False)


def test_errors_carry_line_numbers():
    with pytest.raises(ConfigError) as e:
        parse_config("seed = 1\nwhat = 2\n")
    assert e.value.line == 2
    with pytest.raises(ConfigError) as e:
        parse_config("seed = 1\n\nbatch_size = many\n")
    assert e.value.line == 3
    with pytest.raises(ConfigError):
        parse_config("no equals sign here")


@pytest.mark.parametrize("text", ["epochs = 0", "mode = vae", "lam = 1.5", "mode = wgan\nclip_c = 0", "baseline_mode = median"])
def test_invariants(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_dump_round_trip(tmp_path):
    c = override(Config(), seed=3, mode="wgan", lr_adv=3e-4, corpus="x.smi", divergence_guard=False)
    path = tmp_path / "c.cfg"
    path.write_text(dump_config(c), encoding="utf-8")
    assert load_config(path) == c


def test_run_dir_env(monkeypatch):
    monkeypatch.setenv("RLMG_RUN_DIR", "/tmp/elsewhere")
    assert default_run_dir(Config()) == "/tmp/elsewhere"
    monkeypatch.delenv("RLMG_RUN_DIR")
    assert default_run_dir(Config()) == "runs/default"
