import numpy as np
import pytest

from avdit import tensor as tn
from avdit import trainer as tr
from avdit.model import build_model
from avdit.sampling import generate, moments_csv, sample_statistics

from helpers import tiny_run


@pytest.fixture(scope="module")
def trained():
    return tr.train(tiny_run())


def test_report_shape(trained):
    rep = trained.report
    assert rep.steps == list(range(40))
    assert sorted(rep.evals) == [0, 20, 39]
    lines = rep.to_csv().splitlines()
    assert lines[0] == ("step,loss_total,loss_v,loss_a,err_joint_t100,err_video_t100,err_audio_t100,"
                        "err_joint_t500,err_video_t500,err_audio_t500,err_joint_t900,err_video_t900,err_audio_t900")
    assert len(lines) == 41


def test_training_is_deterministic(trained):
    again = tr.train(tiny_run())
    assert again.report.to_csv() == trained.report.to_csv()


def test_seed_changes_the_run(trained):
    other = tr.train(tiny_run(**{"seed.data": 11}))
    assert other.report.to_csv() != trained.report.to_csv()


def test_freeze_partition_after_training(trained):
    cfg = tiny_run()
    fresh = build_model(cfg.model, seed=cfg.seed.init)
    before = dict(fresh.named_parameters())
    for name, p in trained.model.named_parameters():
        if p.requires_grad:
            assert not np.array_equal(p.data, before[name].data), f"{name} never updated"
        else:
            assert p.data.tobytes() == before[name].data.tobytes(), f"{name} drifted"


def test_oracle_scores_itself_zero():
    cfg = tiny_run()
    spec, s = tr.make_spec(cfg), tr.make_schedule(cfg)
    ev = tr.evaluate_against_oracle(tr.AnalyticDenoiser(spec, s), spec, s, [1, 100, 900], n=16)
    for row in ev.values():
        assert max(row.values()) < 1e-6


def test_untrained_audio_error_is_one():
    # the zero-initialized audio head predicts zero noise, which is exactly 100% relative error
    cfg = tiny_run()
    model = build_model(cfg.model, seed=0)
    ev = tr.evaluate_against_oracle(model, tr.make_spec(cfg), tr.make_schedule(cfg), [100], n=16)
    assert ev[100]["audio"] == pytest.approx(1.0, abs=1e-6)


def test_loss_decreases():
    res = tr.train(tiny_run(**{"train.steps": 300, "train.eval_every": 0, "train.lr": 2e-3}))
    sm = tr.smoothed(res.report.loss_total, 50)
    assert sm[-1] < sm[0]


def test_lower_bound_check():
    rep = tr.TrainReport([100])
    for i, v in enumerate([1.0, 1.2, 0.8, 1.1, 0.9]):
        rep.append(i, v, v / 2, v / 2, 0.0)
    mean, bound, ok = tr.lower_bound_check(rep, 1.0, window=5)
    assert mean == pytest.approx(1.0) and ok
    assert not tr.lower_bound_check(rep, 1.5, window=5)[2]


def test_checkpoint_round_trip(tmp_path, trained):
    cfg = tiny_run()
    tr.save_checkpoint(tmp_path / "c.avdt", trained.model, cfg, 40)
    model, cfg2, step = tr.load_checkpoint(tmp_path / "c.avdt")
    assert cfg2 == cfg and step == 40
    rng = np.random.default_rng(0)
    z_v = rng.standard_normal((2,) + cfg.model.video_latent_shape).astype(np.float32)
    z_a = rng.standard_normal((2,) + cfg.model.audio_latent_shape).astype(np.float32)
    with tn.no_grad():
        a = trained.model(z_v, z_a, np.array([5, 50]))
        b = model(z_v, z_a, np.array([5, 50]))
    np.testing.assert_array_equal(a[0].data, b[0].data)
    np.testing.assert_array_equal(a[1].data, b[1].data)


def test_train_writes_artifacts(tmp_path):
    tr.train(tiny_run(**{"train.steps": 3, "train.eval_every": 0}), out_dir=tmp_path)
    assert (tmp_path / "checkpoint.avdt").exists()
    assert (tmp_path / "metrics.csv").read_text().count("\n") == 4


def test_nan_aborts_with_last_good_checkpoint(tmp_path, monkeypatch):
    real = tr.sample_pairs
    calls = {"n": 0}

    def poisoned(spec, n, rng, dtype=np.float32):
        calls["n"] += 1
        pair = real(spec, n, rng, dtype)
        if calls["n"] == 4:
            pair.z_v[0, 0, 0, 0, 0] = np.nan
        return pair

    monkeypatch.setattr(tr, "sample_pairs", poisoned)
    with pytest.raises(tr.TrainingAborted) as info:
        tr.train(tiny_run(**{"train.eval_every": 0}), out_dir=tmp_path)
    assert "step 3" in str(info.value)
    model, _, step = tr.load_checkpoint(info.value.checkpoint)
    assert step == 3
    assert all(np.isfinite(p.data).all() for p in model.parameters())


def test_gradcheck_passes():
    rows = tr.gradcheck_suite(tiny_run())
    assert {r.group for r in rows} == {"temporal", "temporal_gate", "audio_lora", "audio_adapter", "fusion_lora",
                                       "fusion_gate", "audio_embed", "audio_head", "bias"}
    for r in rows:
        assert r.passed, (r.group, r.max_rel_err, r.worst)


def test_gradcheck_cross_fusion_passes():
    rows = tr.gradcheck_suite(tiny_run(**{"model.fusion_mode": "cross"}))
    assert any(r.group == "cross_fusion" for r in rows)
    assert all(r.passed for r in rows)


def test_gradcheck_catches_a_wrong_derivative(monkeypatch):
    monkeypatch.setattr(tn, "_gelu_grad", lambda x, th: 0.9 * (0.5 * (1.0 + th)))
    rows = tr.gradcheck_suite(tiny_run())
    failed = {r.group for r in rows if not r.passed}
    assert "audio_adapter" in failed


def test_ablation_config_switches():
    cfg = tr.ablation_config(tiny_run(), "no_temporal_adapter")
    assert cfg.model.temporal_adapter is False and cfg.model.fusion is True
    cfg = tr.ablation_config(tiny_run(), "no_audio_lora_and_adapter")
    assert not cfg.model.audio_lora and not cfg.model.audio_ffn_adapter


def test_sampling_summary_and_moments():
    cfg = tiny_run()
    spec, s = tr.make_spec(cfg), tr.make_schedule(cfg)
    pair = generate(tr.AnalyticDenoiser(spec, s), spec, s, n=64, steps=20, seed=3, chunk=32)
    assert pair.z_v.shape == (64,) + cfg.model.video_latent_shape
    again = generate(tr.AnalyticDenoiser(spec, s), spec, s, n=64, steps=20, seed=3, chunk=32)
    np.testing.assert_array_equal(pair.z_v, again.z_v)
    stats = sample_statistics(spec, pair)
    assert 0 <= stats["cross_sign_agreement"] <= 1
    text = moments_csv(spec, pair)
    assert text.splitlines()[0] == "coordinate,modality,mean,variance,exact_variance"
    assert "cov_rel_frobenius" in text
