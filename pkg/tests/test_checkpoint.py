import numpy as np
import pytest

from snsc.checkpoint import Checkpoint, CheckpointError, from_model, model_from_checkpoint, restore_optimizer
from snsc.config import TrainConfig, config_to_text
from snsc.models import ModelConfig, build_model
from snsc.nn import Adam
from snsc.sidechain import SideChainConfig


@pytest.fixture
def ckpt():
    cfg = TrainConfig(model=ModelConfig(kind="plain", base_channels=4, side_chain=SideChainConfig(S=2)))
    model = build_model(cfg.model)
    opt = Adam(model.named_parameters())
    for p in opt.params.values():
        p.grad = np.ones_like(p.data)
    opt.step()
    return from_model(model, config_to_text(cfg), opt), model


def test_save_load_save_is_byte_identical(ckpt, tmp_path):
    c, _ = ckpt
    c.save(tmp_path / "a.snsc")
    Checkpoint.load(tmp_path / "a.snsc").save(tmp_path / "b.snsc")
    assert (tmp_path / "a.snsc").read_bytes() == (tmp_path / "b.snsc").read_bytes()


def test_order_and_values_preserved(ckpt):
    c, model = ckpt
    back = Checkpoint.from_bytes(c.to_bytes())
    assert list(back.tensors) == list(model.state_dict())
    assert list(back.optimizer) == list(c.optimizer)
    assert back.step == 1 and back.config_text == c.config_text
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(back.tensors[k], v)


def test_model_and_optimizer_restore(ckpt, rng):
    c, model = ckpt
    m2, cfg = model_from_checkpoint(Checkpoint.from_bytes(c.to_bytes()))
    assert cfg.model.side_chain.S == 2
    x = rng.random((1, 3, 8, 8)).astype(np.float32)
    model.eval()
    m2.eval()
    np.testing.assert_array_equal(model(x).data, m2(x).data)
    opt = Adam(m2.named_parameters())
    restore_optimizer(c, opt)
    assert opt.step_count == 1
    k = next(iter(opt.m))
    np.testing.assert_array_equal(opt.m[k], c.optimizer[f"m.{k}"])


def test_header_layout(ckpt):
    raw = ckpt[0].to_bytes()
    assert raw[:4] == b"SNSC"
    assert np.frombuffer(raw[4:12], "<u4").tolist() == [1, len(ckpt[0].tensors)]


@pytest.mark.parametrize("kind,mutate", [
    ("magic", lambda r: b"X" + r[1:]),
    ("version", lambda r: r[:4] + b"\x07" + r[5:]),
    ("truncated", lambda r: r[:-3]),
    ("trailing", lambda r: r + b"\x00"),
])
def test_structured_errors(ckpt, kind, mutate):
    with pytest.raises(CheckpointError) as e:
        Checkpoint.from_bytes(mutate(ckpt[0].to_bytes()))
    assert e.value.kind == kind


def test_incompatible_checkpoint_lists_names(ckpt):
    c, _ = ckpt
    other = build_model(ModelConfig(kind="plain", base_channels=4))
    with pytest.raises(KeyError) as e:
        other.load_state_dict(c.tensors)
    assert "snsc.compress.weight" in str(e.value)
