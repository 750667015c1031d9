import math

import numpy as np
import pytest

import stsr

TINY = """
[data]
count = 16
height = 8
width = 8
genes = 2
scale = 2
[encoder]
feature_dim = 8
widths = 4,4
gene_panel = 2
[diffusion]
timesteps = 20
sample_steps = 5
base_width = 4
[train]
steps = 4
batch_size = 4
validation_count = 4
"""


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return (x / np.linalg.norm(x, axis=1, keepdims=True)).astype(np.float32)


def inter_sphere_oracle(m, c, tau):
    m = m.astype(np.float64)
    c = c.astype(np.float64)
    logits = m @ c.T / tau
    total = 0.0
    for j in range(len(m)):
        total += -(logits[j, j] - np.log(np.exp(logits[j]).sum()))
    return total / len(m)


def test_inter_sphere_matches_numpy_oracle():
    rng = np.random.default_rng(3)
    for n in (2, 3, 8):
        m, c = unit_rows(rng, n, 16), unit_rows(rng, n, 16)
        assert stsr.loss_inter_sphere(m, c, 0.25) == pytest.approx(inter_sphere_oracle(m, c, 0.25), abs=1e-5)


def test_identical_rows_give_closed_forms():
    same = np.tile(np.array([[0.6, 0.8, 0.0]], dtype=np.float32), (3, 1))
    assert stsr.loss_modal(same, same, 0.1) == pytest.approx(2 * math.log(4), abs=1e-6)
    assert stsr.loss_content(same, same, 0.1) == pytest.approx(2 * math.log(5), abs=1e-6)
    assert stsr.loss_inter_sphere(same, same, 0.1) == pytest.approx(math.log(3), abs=1e-6)


def test_config_round_trip_and_errors():
    text = stsr.default_config()
    assert stsr.canonical_config(text) == text
    assert len(stsr.fingerprint(text)) == 16
    assert stsr.fingerprint(TINY) != stsr.fingerprint(text)
    with pytest.raises(stsr.ConfigError, match="line 2"):
        stsr.canonical_config("[train]\nsteps = many\n")
    assert len(stsr.ablation_rows()) == 8


def test_dataset_file_round_trip(tmp_path):
    path = str(tmp_path / "d.c3df")
    stsr.generate_dataset(path, count=6, height=10, width=10, genes=3, scale=5, missing=0.5, seed=1)
    samples = stsr.load_dataset(path)
    assert len(samples) == 6
    for s in samples:
        assert s["histology"].shape == (3, 10, 10)
        assert s["hr_st"].shape == (3, 10, 10)
        assert s["hr_st"].dtype == np.float32
        assert s["lr_st"] is None or s["lr_st"].shape == (3, 2, 2)
        assert 0.0 <= s["hr_st"].min() and s["hr_st"].max() <= 1.0
    (tmp_path / "cut.c3df").write_bytes((tmp_path / "d.c3df").read_bytes()[:40])
    with pytest.raises(stsr.TruncationError):
        stsr.load_dataset(str(tmp_path / "cut.c3df"))


def test_training_is_deterministic_and_checkpoints_restore(tmp_path):
    a = stsr.Trainer(TINY)
    b = stsr.Trainer(TINY)
    ra, rb = a.train(4), b.train(4)
    assert ra == rb
    assert [r["step"] for r in ra] == [0, 1, 2, 3]
    assert all(math.isfinite(r["total"]) for r in ra)
    assert a.checkpoint_bytes() == b.checkpoint_bytes()

    data = str(tmp_path / "d.c3df")
    stsr.generate_dataset(data, count=16, height=8, width=8, genes=2, scale=2)
    c = stsr.Trainer(TINY, dataset=data)
    c.train(2)
    ckpt = str(tmp_path / "r.c3ck")
    c.save_checkpoint(ckpt)
    restored = stsr.Trainer.from_checkpoint(ckpt, data)
    assert restored.step == 2
    assert restored.checkpoint_bytes() == c.checkpoint_bytes()


def test_prediction_and_evaluation_contract():
    t = stsr.Trainer(TINY)
    t.train(2)
    idx = t.validation_indices
    preds = t.predict(idx, seed=1)
    assert len(preds) == len(idx) == 4
    for p in preds:
        assert p.shape == (2, 8, 8)
        assert np.all((p >= 0) & (p <= 1))
    again = t.predict(idx, seed=1)
    assert all(np.array_equal(x, y) for x, y in zip(preds, again))
    report = t.evaluate(label="val", seed=1)
    assert report["label"] == "val"
    assert report["sample_count"] == 4
    assert report["mean_rmse"] == pytest.approx(np.mean(report["rmse"]))
    assert report["config_fingerprint"] == stsr.fingerprint(t.config_text)


def test_evaluate_maps_on_known_values():
    truth = np.zeros((1, 2, 2), dtype=np.float32)
    pred = np.full((1, 2, 2), 0.5, dtype=np.float32)
    r = stsr.evaluate_maps([pred], [truth], [7])
    assert r["rmse"] == [pytest.approx(0.5)]
    assert r["pcc"] == [None]
    with pytest.raises(stsr.DimensionError):
        stsr.evaluate_maps([pred], [np.zeros((1, 3, 3), dtype=np.float32)], [7])
