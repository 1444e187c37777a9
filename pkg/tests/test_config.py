import pytest

from snsc.config import TrainConfig, config_from_text, config_to_text, load_config
from snsc.models import ModelConfig
from snsc.sidechain import SideChainConfig


def test_parse_with_comments(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# run\ntask = switchable\nkind=plain  # host\nbase_channels=12\n\nside_chain=true\n"
                 "num_relevance_instances=2\nS=6\nsteps=10\nlr=0.002\nstrict_deterministic=yes\n")
    cfg = load_config(p)
    assert cfg.task == "switchable" and cfg.steps == 10 and cfg.lr == 0.002 and cfg.strict_deterministic
    assert cfg.model.kind == "plain" and cfg.model.base_channels == 12
    assert cfg.model.side_chain.S == 6 and cfg.model.side_chain.num_relevance_instances == 2


def test_roundtrip():
    cfg = config_from_text("seed=3\nmodel_seed=5\nside_chain=true\nsc_width=4\nlr_schedule=cosine\n")
    assert cfg.seed == 3 and cfg.model.seed == 5 and cfg.model.side_chain.width == 4
    assert config_from_text(config_to_text(cfg)) == cfg
    base = TrainConfig()
    assert config_from_text(config_to_text(base)) == base


def test_haze_defaults_to_direct_output():
    assert config_from_text("task=haze\n").model.residual is False
    assert config_from_text("task=haze\nresidual=true\n").model.residual is True
    assert config_from_text("task=blurnoise\n").model.residual is True


@pytest.mark.parametrize("text", ["nonsense\n", "colour=red\n", "task=rain\n", "steps=ten\n",
                                  "residual=maybe\n", "kind=unet\npatch_size=30\n",
                                  "task=switchable\nside_chain=true\n", "lr_schedule=linear\n"])
def test_rejects_bad_configs(text):
    with pytest.raises(ValueError):
        config_from_text(text)


def test_lr_schedules():
    c = TrainConfig(steps=100, lr=1e-3, lr_schedule="cosine", lr_min=0.0)
    assert c.lr_at(0) == pytest.approx(1e-3) and c.lr_at(50) == pytest.approx(5e-4) and c.lr_at(100) == 0.0
    s = TrainConfig(lr=1.0, lr_schedule="step", lr_step_every=10, lr_gamma=0.5)
    assert [s.lr_at(i) for i in (0, 9, 10, 25)] == [1.0, 1.0, 0.5, 0.25]


def test_switchable_needs_even_batch():
    with pytest.raises(ValueError):
        TrainConfig(task="switchable", batch_size=3,
                    model=ModelConfig(side_chain=SideChainConfig(num_relevance_instances=2)))
