import math

import numpy as np
import pytest

import drpose


def test_schedule_and_diffusion():
    ab = drpose.alpha_bar()
    assert len(ab) == 1001 and ab[0] == 1.0
    assert abs(ab[200] - 0.8987059205995088890443959) < 1e-12
    y0 = np.random.default_rng(0).normal(size=(17, 3))
    eps = np.zeros((17, 3))
    np.testing.assert_allclose(drpose.forward_diffuse(y0, 200, eps), math.sqrt(ab[200]) * y0, rtol=1e-12)
    # noiseless posterior mean keeps y0 at y0
    np.testing.assert_allclose(drpose.posterior_mean(y0, y0, 1), y0, atol=1e-12)
    assert drpose.timestep_plan(200, 5, 1000) == [200, 160, 120, 80, 40]


def test_metrics():
    rng = np.random.default_rng(1)
    gt = rng.normal(scale=200.0, size=(17, 3))
    gt -= gt[0]
    assert drpose.mpjpe(gt, gt) == 0.0
    c, s = math.cos(0.3), math.sin(0.3)
    r = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    moved = 1.3 * gt @ r.T
    assert drpose.p_mpjpe(moved, gt) < 1e-6
    assert drpose.pck(gt, gt) == 100.0
    with pytest.raises(ValueError):
        drpose.pck(gt, gt, 0.0)


def test_aggregate_picks_closest_projection():
    rng = np.random.default_rng(2)
    pose = rng.normal(scale=200.0, size=(17, 3))
    pose -= pose[0]
    x = drpose.project(pose)
    far = pose + np.array([50.0, 0.0, 0.0])
    far[0] = 0.0
    hyps = np.stack([far, pose])
    np.testing.assert_array_equal(drpose.aggregate(hyps, x), pose)


def test_config_round_trip_and_errors():
    text = drpose.default_config()
    assert drpose.normalize_config(text) == text
    assert "train.batch_size" in drpose.config_keys()
    assert drpose.config_get("[train]\nepochs = 3\n", "train.epochs") == "3"
    with pytest.raises(ValueError):
        drpose.normalize_config("[train]\nnot_a_key = 1\n")


def test_tiny_pipeline(tmp_path):
    cfg = (
        "[data]\ntrain_count = 64\nval_count = 8\ntest_count = 4\n"
        "[model]\nchannels = 8\nheads = 2\nblocks = 1\ntime_embed_dim = 8\ninitial_layers = 1\nprm_hidden = 8\n"
        "[train]\nepochs = 1\npretrain_epochs = 1\nbatch_size = 32\n"
        "[infer]\nH = 3\nK = 2\nstrategy = aggregate\n"
        f"[run]\nout_dir = {tmp_path}\n"
    )
    run = drpose.new_run_dir(cfg)
    assert "train: 64 samples" in drpose.gen_data(cfg, run)
    drpose.train(cfg, run, "pretrain")
    drpose.train(cfg, run, "refine")
    out = drpose.infer(cfg, run)
    grid = drpose.eval(cfg, run, [out])
    assert "aggregate" in grid and "baseline" in grid

    model = drpose.Model.load(f"{run}/refine/final.drpm")
    x = drpose.project(np.zeros((17, 3)))
    hyps = model.hypotheses(x, H=4, K=2, seed=3, config=cfg)
    assert hyps.shape == (4, 17, 3)
    np.testing.assert_array_equal(hyps, model.hypotheses(x, H=4, K=2, seed=3, config=cfg))
    with pytest.raises(OSError):
        drpose.Model.load(f"{run}/missing.drpm")
