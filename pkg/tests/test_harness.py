import shutil

import numpy as np
import pytest

from snsc.checkpoint import Checkpoint, from_model
from snsc.config import TrainConfig, config_to_text
from snsc.datasets import generate_dataset, load_dataset, write_imgf
from snsc.harness import (CHECKPOINT_NAME, TrainingDiverged, evaluate, input_psnr, restore, sample_batch,
                          train)
from snsc.models import ModelConfig, build_model
from snsc.sidechain import SideChainConfig


def tiny_cfg(**kw):
    model = kw.pop("model", ModelConfig(kind="plain", base_channels=4, layers=5,
                                        side_chain=SideChainConfig(S=2)))
    opts = dict(patch_size=16, batch_size=4, steps=3, out_dir="")
    opts.update(kw)
    return TrainConfig(model=model, **opts)


def identity_model():
    m = build_model(ModelConfig(kind="plain", base_channels=4, layers=5))
    m.head.weight.data[:] = 0
    m.head.bias.data[:] = 0
    return m


def test_zero_steps_returns_initialization(blurnoise):
    cfg = tiny_cfg(steps=0)
    res = train(cfg, blurnoise)
    init = build_model(cfg.model).state_dict()
    assert res.log == [] and res.checkpoint.step == 0
    for k, v in init.items():
        np.testing.assert_array_equal(res.checkpoint.tensors[k], v)


def test_training_is_bitwise_reproducible(blurnoise):
    cfg = tiny_cfg(strict_deterministic=True, seed=4)
    a, b = train(cfg, blurnoise), train(cfg, blurnoise)
    assert [r["loss"] for r in a.log] == [r["loss"] for r in b.log]
    assert a.checkpoint.to_bytes() == b.checkpoint.to_bytes()


def test_resume_matches_uninterrupted_run(blurnoise, tmp_path):
    cfg = tiny_cfg(steps=4, strict_deterministic=True)
    full = train(cfg, blurnoise)
    half = train(tiny_cfg(steps=2, strict_deterministic=True), blurnoise)
    resumed = train(cfg, blurnoise, resume=half.checkpoint)
    assert resumed.checkpoint.tensors.keys() == full.checkpoint.tensors.keys()
    for k, v in full.checkpoint.tensors.items():
        np.testing.assert_array_equal(resumed.checkpoint.tensors[k], v)


def test_outputs_written(blurnoise, tmp_path):
    train(tiny_cfg(val_interval=2, checkpoint_interval=2), blurnoise, blurnoise.subset(range(2)),
          out_dir=tmp_path)
    assert Checkpoint.load(tmp_path / CHECKPOINT_NAME).step == 3
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == "step,loss,lr"
    assert [line.split(",")[0] for line in (tmp_path / "val.csv").read_text().splitlines()] == \
        ["step", "0", "2", "3"]


def test_switchable_batches_are_half_and_half(blurnoise):
    cfg = tiny_cfg(task="switchable", model=ModelConfig(
        kind="plain", base_channels=4, layers=5, side_chain=SideChainConfig(S=2, num_relevance_instances=2)))
    inp, tgt, modes = sample_batch(blurnoise, cfg, 7)
    assert modes.tolist() == [0, 0, 1, 1]
    inp2, _, _ = sample_batch(blurnoise, cfg, 7)
    np.testing.assert_array_equal(inp, inp2)
    # each target is a crop of the clean image (mode 0) or of the blurred one (mode 1)
    for b, m in enumerate(modes):
        src = blurnoise.aux if m == 1 else blurnoise.clean
        found = any(np.array_equal(tgt[b], src[i][:, y:y + 16, x:x + 16].astype(np.float32))
                    for i in range(len(blurnoise)) for y in range(17) for x in range(17)
                    if np.array_equal(inp[b], blurnoise.corrupt[i][:, y:y + 16, x:x + 16]))
        assert found
    train(cfg, blurnoise)


def test_divergence_keeps_last_checkpoint(blurnoise_root, tmp_path):
    root = tmp_path / "nan"
    shutil.copytree(blurnoise_root, root)
    for p in (root / "corrupt").iterdir():
        write_imgf(p, np.full((3, 32, 32), np.nan))
    with pytest.raises(TrainingDiverged) as e:
        train(tiny_cfg(), load_dataset(root), out_dir=tmp_path / "run")
    assert e.value.step == 0 and e.value.last_checkpoint is None


def test_identity_model_clean_vs_clean(blurnoise):
    ds = blurnoise.subset(range(4))
    ds.corrupt = ds.clean.astype(np.float32)
    res = evaluate(identity_model(), ds)
    # float32 inference moves values by ~1e-8, far below the PSNR cap
    assert res.mean_psnr == 100.0 and res.mean_ssim == pytest.approx(1.0, abs=1e-12)


def test_input_psnr_is_reproduced(blurnoise, tmp_path):
    stored = np.mean([float(r["input_psnr"]) for r in blurnoise.rows])
    assert input_psnr(blurnoise) == pytest.approx(stored, abs=1e-6)
    res = evaluate(identity_model(), blurnoise, out_csv=tmp_path / "e.csv")
    assert res.mean_psnr == pytest.approx(stored, abs=1e-6)
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "id,psnr,ssim,l1" and len(lines) == 13


def test_evaluate_is_order_invariant(blurnoise):
    model = build_model(ModelConfig(kind="plain", base_channels=4, layers=5))
    a = evaluate(model, blurnoise)
    b = evaluate(model, blurnoise.subset(np.random.default_rng(0).permutation(12)))
    assert (a.mean_psnr, a.mean_ssim, a.mean_l1) == (b.mean_psnr, b.mean_ssim, b.mean_l1)


def test_evaluate_accepts_checkpoint(blurnoise):
    cfg = tiny_cfg(steps=0)
    model = build_model(cfg.model)
    ck = from_model(model, config_to_text(cfg))
    assert evaluate(ck, blurnoise).mean_psnr == evaluate(model, blurnoise).mean_psnr


def test_restore_pads_and_crops(rng):
    m = build_model(ModelConfig(kind="unet", base_channels=4, depth=3, side_chain=SideChainConfig(S=2)))
    out, side = restore(m, rng.random((3, 3, 10, 14)), batch_size=2, return_side=True)
    assert out.shape == (3, 3, 10, 14) and side["validity"].shape == (3, 2, 10, 14)
    assert side["state"].shape == (3, 2)
    with pytest.raises(ValueError):
        restore(build_model(ModelConfig(kind="plain", base_channels=4)), rng.random((1, 3, 4, 4)),
                return_side=True)


def test_patch_larger_than_image(blurnoise):
    with pytest.raises(ValueError):
        sample_batch(blurnoise, tiny_cfg(patch_size=64), 0)


def test_two_thousand_steps_halve_validation_l1(sources, tmp_path):
    """Sanity floor on 32x32 blur+noise patches (about two minutes)."""
    generate_dataset("blurnoise", sources, tmp_path / "tr", 128, (32, 32), seed=11)
    generate_dataset("blurnoise", sources, tmp_path / "va", 16, (32, 32), seed=12)
    cfg = TrainConfig(task="blurnoise", steps=2000, batch_size=8, patch_size=32, out_dir="",
                      model=ModelConfig(kind="plain", base_channels=16, side_chain=SideChainConfig()))
    res = train(cfg, load_dataset(tmp_path / "tr"), load_dataset(tmp_path / "va"))
    first, last = res.val[0]["val_l1"], res.val[-1]["val_l1"]
    assert last <= 0.5 * first, (first, last)
