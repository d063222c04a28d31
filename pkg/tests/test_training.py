import math

import numpy as np
import pytest

from seqdetect.channel import ChannelParams, simulate
from seqdetect.dataset import generate_dataset
from seqdetect.features import FeatureConfig, build_features
from seqdetect.training import (
    Minibatch, TrainConfig, TrainingData, TrainingDiverged, curriculum_sample, evaluate_loss, load_training_data,
    loss_and_grads, train,
)

LN2 = math.log(2)


def small(**kw):
    base = dict(detector="brnn", n_layers=1, hidden=8, l_max=10, batch=50, budget=1000, lr=1e-2)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def optical_data():
    ds = generate_dataset(60, 30, "optical", seed=5, params=ChannelParams.optical(tau=0.05))
    return TrainingData.from_dataset(ds, FeatureConfig.for_channel("optical"))


class TestCurriculum:
    def data(self, n=3, K=100):
        X = np.arange(n * K, dtype=np.float32).reshape(n, K, 1)
        return TrainingData(X, (np.arange(n * K).reshape(n, K) % 2))

    def test_lmax_two_gives_pairs(self):
        mb = curriculum_sample(self.data(), 2, 1000, np.random.default_rng(0))
        assert set(mb.lengths.tolist()) == {2}

    def test_length_frequencies(self):
        n = 100_000
        mb = curriculum_sample(self.data(n=1), 50, n, np.random.default_rng(1))
        freq = np.bincount(mb.lengths, minlength=51)[2:]
        p = 1 / 49
        sigma = math.sqrt(n * p * (1 - p))
        assert len(freq) == 49
        assert np.all(np.abs(freq - n * p) <= 3 * sigma)

    def test_offsets_cover_every_start(self):
        mb = curriculum_sample(self.data(n=1), 50, 100_000, np.random.default_rng(2))
        starts = mb.x[mb.lengths == 50, 0, 0].astype(int)
        assert set(starts.tolist()) == set(range(51))

    def test_contiguous_and_aligned(self):
        d = self.data()
        mb = curriculum_sample(d, 30, 200, np.random.default_rng(3))
        for b in range(200):
            ell = mb.lengths[b]
            v = mb.x[b, :ell, 0].astype(int)
            assert np.all(np.diff(v) == 1)
            assert np.array_equal(mb.y[b, :ell], v % 2)
            assert not mb.x[b, ell:].any()

    def test_short_sequences_rejected(self):
        with pytest.raises(ValueError):
            curriculum_sample(TrainingData(np.zeros((2, 1, 3)), np.zeros((2, 1), int)), 5, 4,
                              np.random.default_rng(0))


def test_bucketed_loss_matches_single_pass(optical_data):
    cfg = small(precision="float64")
    net = train(cfg.__class__(**{**cfg.__dict__, "budget": 50}), optical_data).net
    mb = curriculum_sample(optical_data, 10, 64, np.random.default_rng(0))
    mb = Minibatch(mb.x.astype(np.float64), mb.y, mb.lengths)
    l1, g1 = loss_and_grads(net, mb, 1)
    l4, g4 = loss_and_grads(net, mb, 4)
    assert l1 == pytest.approx(l4, rel=1e-12)
    for k in g1:
        assert np.allclose(g1[k], g4[k], rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("det", ["brnn", "rnn", "symbolwise"])
def test_initial_loss_near_ln_m(optical_data, det):
    r = train(small(detector=det, budget=50), optical_data)
    assert r.losses[0] == pytest.approx(LN2, rel=0.05)


def test_reproducible(optical_data):
    a = train(small(budget=300), optical_data)
    b = train(small(budget=300), optical_data)
    assert np.array_equal(a.losses, b.losses)
    for k in a.net.arrays:
        assert np.array_equal(a.net[k], b.net[k])
    c = train(small(budget=300, seed=1), optical_data)
    assert not np.array_equal(a.losses, c.losses)


def test_learns_the_optical_channel(optical_data):
    r = train(small(budget=10_000), optical_data)
    assert r.losses[-20:].mean() < 0.6 * LN2


def test_overfits_one_sequence():
    ds = generate_dataset(1, 100, "optical", seed=2, params=ChannelParams.optical(tau=0.05))
    X, Y = ds.features(FeatureConfig.for_channel("optical"))
    data = TrainingData(np.repeat(X, 500, axis=0), np.repeat(Y, 500, axis=0))
    cfg = TrainConfig(detector="rnn", n_layers=1, hidden=32, lr=1e-2, batch=500, budget=500 * 2000)

    class Done(Exception):
        pass

    seen = []

    def stop(step, loss, net):
        seen.append(loss)
        if loss < 1e-2:
            raise Done

    with pytest.raises(Done):
        train(cfg, data, progress=stop)
    assert len(seen) <= 2000


def test_zero_information_plateau():
    # background-only counts: features carry nothing about the labels
    p = ChannelParams.optical(tau=0.05, eta=5.0)
    rng = np.random.default_rng(0)
    fc = FeatureConfig.for_channel("optical")
    X = np.stack([build_features(simulate(np.zeros(40, int), p, rng), p.tau, fc) for _ in range(400)])
    Y = rng.integers(0, 2, (400, 40))
    r = train(small(budget=20_000, lr=3e-3), TrainingData(X.astype(np.float32), Y))
    tail = r.losses[-100:].mean()
    assert tail == pytest.approx(LN2, rel=0.02)


def test_shuffled_labels_do_not_learn(optical_data):
    rng = np.random.default_rng(1)
    Y = rng.permuted(optical_data.Y.reshape(-1)).reshape(optical_data.Y.shape)
    shuffled = TrainingData(optical_data.X, Y)
    r = train(small(budget=10_000, lr=3e-3), shuffled)
    held_out = generate_dataset(40, 30, "optical", seed=77, params=ChannelParams.optical(tau=0.05))
    val = TrainingData.from_dataset(held_out, FeatureConfig.for_channel("optical"))
    assert abs(evaluate_loss(r.net, val) - LN2) <= 0.05 * LN2


def test_divergence_aborts(optical_data):
    X = optical_data.X.copy()
    X[:, :, 0] = np.nan
    with pytest.raises(TrainingDiverged, match="step 0"):
        train(small(budget=100), TrainingData(X, optical_data.Y))


def test_validation_cadence(optical_data):
    r = train(small(budget=500, eval_every=3, n_val=5, seq_len=30), optical_data)
    assert [s for s, _ in r.val_losses] == [2, 5, 8]
    assert all(np.isfinite(v) for _, v in r.val_losses)


def test_curve_and_checkpoint(tmp_path, optical_data):
    from seqdetect.neural.network import load_checkpoint
    r = train(small(budget=200), optical_data)
    r.save(tmp_path / "n.npz", tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "step,examples,loss,val_loss" and len(lines) == 5
    assert lines[-1].startswith("3,200,")
    net = load_checkpoint(tmp_path / "n.npz", expect=r.net.arch)
    assert all(np.array_equal(net[k], r.net[k]) for k in net.arrays)


def test_config_file_and_presets(tmp_path):
    f = tmp_path / "t.cfg"
    f.write_text("# desk run\npreset = desk\ndetector = rnn\nkind = molecular\nseed = 4\nclip_norm = 5\n")
    cfg = TrainConfig.from_file(f)
    assert (cfg.detector, cfg.kind, cfg.hidden, cfg.n_train, cfg.seed, cfg.clip_norm) == (
        "rnn", "molecular", 160, 20_000, 4, 5.0)
    full = TrainConfig.full("brnn", "optical")
    assert (full.lr, full.batch, full.budget, full.l_max, full.n_layers, full.hidden) == (
        1e-3, 500, 500_000, 50, 3, 80)
    assert full.steps == 1000
    with pytest.raises(ValueError):
        TrainConfig(detector="cnn")


def test_dataset_kind_checked(tmp_path):
    generate_dataset(2, 5, "molecular").save(tmp_path / "m.sqds")
    with pytest.raises(ValueError, match="molecular"):
        load_training_data(TrainConfig(kind="optical", dataset=str(tmp_path / "m.sqds")))
