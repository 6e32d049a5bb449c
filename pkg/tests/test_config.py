import pytest

from recall_forge.config import ConfigError, KEYS, PipelineConfig, coerce, load_config, parse_config_text
from recall_forge.datamodel import Source


def test_defaults():
    cfg = PipelineConfig()
    assert cfg["copurchase.tau_days"] == 60.0
    assert cfg["eval.k"] == 200
    policy = cfg.fusion_policy()
    assert policy.quotas == ((Source.CO_PURCHASE, 88500), (Source.TITLE_SIMILARITY, 16500))
    hp = cfg.hyperparams()
    assert (hp.max_iterations, hp.convergence_error, hp.l1, hp.learning_rate) == (1000, 1e-6, 1.0, 0.1)


def test_unknown_key():
    with pytest.raises(ConfigError, match="unknown"):
        parse_config_text("copurchase.tau = 3\n")


def test_duplicate_key():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("seed = 1\nseed = 2\n")


@pytest.mark.parametrize("name,raw", [("copurchase.tau_days", "0"), ("eval.k", "1.5"),
                                      ("fusion.category_rule", "any"), ("fusion.order", "co_purchase,x"),
                                      ("report.figures", "maybe")])
def test_bad_values(name, raw):
    with pytest.raises(ConfigError):
        coerce(name, raw)


def test_whitelist_rule_needs_pairs():
    with pytest.raises(ConfigError):
        PipelineConfig({"fusion.category_rule": "whitelist"})


def test_relative_paths_resolve_against_file(tmp_path):
    (tmp_path / "sub").mkdir()
    conf = tmp_path / "sub" / "x.conf"
    conf.write_text("# c\npaths.items = items.tsv\n")
    cfg = load_config(conf, {"seed": 5})
    assert cfg["paths.items"] == str(tmp_path / "sub" / "items.tsv")
    assert cfg["seed"] == 5


def test_scratch_env_override(monkeypatch):
    monkeypatch.setenv("RECALL_FORGE_SCRATCH", "/tmp/elsewhere")
    assert PipelineConfig({"paths.scratch": "/tmp/a"}).engine().scratch_dir == "/tmp/elsewhere"


def test_dumps_round_trips():
    cfg = PipelineConfig({"seed": 9, "report.figures": False})
    assert PipelineConfig(parse_config_text(cfg.dumps())) == cfg
    assert len(cfg) == len(KEYS)
