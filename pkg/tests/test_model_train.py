import math

import numpy as np
import numpy.testing as npt
import pytest

from fanet import tensor as T
from fanet.checkpoint import load_checkpoint
from fanet.config import TrainConfig
from fanet.data import SynthSpec, synthetic_samples
from fanet.decoder import bce_loss
from fanet.errors import ConfigError, NumericalError
from fanet.model import ABLATIONS, FANet, ModelConfig
from fanet.optim import Adam
from fanet.tensorio import load_tensor
from fanet.train import evaluate, predict_image, train

TINY = ModelConfig(decoder_width=4, tile_size=32)


def tiny(seed=0, **toggles):
    cfg = TINY if not toggles else TINY.with_toggles(**{**ABLATIONS["full"], **toggles})
    return FANet(cfg, seed=seed)


def data(n=4, seed=0):
    return synthetic_samples(SynthSpec(canvas=32, building_size=(6, 14), seed=seed), n)


def images(b=2, size=32, seed=0):
    return np.random.default_rng(seed).random((b, 3, size, size)).astype(np.float32)


# ---------------------------------------------------------------------------
# model assembly
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(ABLATIONS))
def test_every_ablation_keeps_output_shape(name):
    model = FANet(TINY.with_toggles(**ABLATIONS[name]), seed=1)
    seg = model(T.Tensor(images(2, 64)))
    assert seg.logits.shape == seg.probabilities.shape == (2, 1, 64, 64)
    p = seg.probabilities.data
    assert np.all(p > 0) and np.all(p < 1)


def test_toggles_share_weights():
    a, b = tiny(seed=2), tiny(seed=2, fam=False, dem=False)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        npt.assert_array_equal(pa.data, pb.data)


def test_dam_toggle_is_exact_at_initialisation():
    x = images(2, 64, seed=3)
    on, off = tiny(seed=4), tiny(seed=4, dam=False)
    for m in (on, off):
        m.decoder.classifier.weight.data = np.random.default_rng(5).standard_normal(
            m.decoder.classifier.weight.shape).astype(np.float32)
    assert np.max(np.abs(on.predict_proba(x) - off.predict_proba(x))) < 1e-6


def test_untrained_model_predicts_half():
    # zero-initialised classifier: flat 0.5 until the first update
    npt.assert_array_equal(tiny(seed=6).predict_proba(images(1, 32)), 0.5)


def test_constant_gray_gives_constant_map():
    model = tiny(seed=7)
    model.decoder.classifier.weight.data = np.random.default_rng(8).standard_normal(
        model.decoder.classifier.weight.shape).astype(np.float32)
    prob = predict_image(model, np.full((3, 64, 64), 0.5, np.float32))
    assert prob.shape == (64, 64)
    assert np.ptp(prob) < 1e-5


def test_forward_is_seed_deterministic():
    x = T.Tensor(images(2, 32, seed=9))
    a = tiny(seed=10)(x).logits.data
    b = tiny(seed=10)(x).logits.data
    c = tiny(seed=11)(x).logits.data
    assert np.array_equal(a, b)
    assert np.all(a == 0) and np.all(c == 0)   # zero-initialised classifier
    _, fa = tiny(seed=10)(x, return_features=True)
    _, fc = tiny(seed=11)(x, return_features=True)
    assert not np.array_equal(fa["high"].data, fc["high"].data)


def test_return_features():
    seg, feats = tiny(seed=12)(T.Tensor(images(1, 64)), return_features=True)
    assert feats["fused"].d1.shape == (1, 4, 16, 16)
    assert feats["high"].shape == (1, 4, 2, 2)


def test_model_config_validation_and_round_trip():
    with pytest.raises(ConfigError):
        ModelConfig(tile_size=48)
    with pytest.raises(ConfigError):
        ModelConfig(threshold=0)
    cfg = ModelConfig.full_size()
    assert cfg.encoder.channels == (64, 128, 320, 512) and cfg.tile_size == 512
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("shape", [(3, 64, 64), (3, 50, 70), (3, 150, 97), (3, 32, 200)])
def test_predict_image_any_size(shape):
    model = tiny(seed=13)
    model.decoder.classifier.bias.data[:] = 0.3
    prob = predict_image(model, np.random.default_rng(14).random(shape).astype(np.float32))
    assert prob.shape == shape[1:]
    assert np.all((prob > 0) & (prob < 1))


def test_predict_tiles_match_direct_forward():
    model = tiny(seed=15)
    model.decoder.classifier.weight.data[:] = 0.2
    img = np.random.default_rng(16).random((3, 64, 96)).astype(np.float32)
    prob = predict_image(model, img, tile_size=32)
    first = model.predict_proba(img[None, :, :32, :32])[0, 0]
    # batch composition changes BLAS summation order, hence a tolerance
    npt.assert_allclose(prob[:32, :32], first, atol=1e-6)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def cfg(**kw):
    base = dict(lr=1e-3, epochs=3, decay_every=2, batch_size=2, seed=1)
    base.update(kw)
    return TrainConfig(**base)


def test_one_step_decreases_loss():
    failures = 0
    for seed in range(10):
        model = tiny(seed=seed)
        model.decoder.classifier.weight.data = np.random.default_rng(seed).uniform(
            -0.3, 0.3, model.decoder.classifier.weight.shape).astype(np.float32)
        rng = np.random.default_rng(100 + seed)
        x = T.Tensor(images(2, 32, seed=seed))
        t = (rng.random((2, 1, 32, 32)) < 0.4).astype(np.float32)
        opt = Adam(model.parameters(), lr=1e-5)
        before = bce_loss(model(x), t)
        T.backward(before)
        opt.step()
        with T.no_grad():
            after = bce_loss(model(x), t)
        failures += not after.item() < before.item()
    assert failures <= 1


def test_training_is_bit_deterministic():
    runs = [train(tiny(seed=3), data(), cfg()) for _ in range(2)]
    assert runs[0].losses == runs[1].losses
    assert runs[0].losses[-1] < math.log(2)


def test_schedule_applied_per_epoch():
    res = train(tiny(seed=3), data(), cfg(epochs=5, decay_every=2))
    npt.assert_allclose([h["lr"] for h in res.history], [1e-3, 1e-3, 1e-4, 1e-4, 1e-5])


def test_zero_epochs_writes_initial_checkpoint(tmp_path):
    model = tiny(seed=4)
    res = train(model, data(), cfg(epochs=0), out_dir=tmp_path)
    assert res.losses == [] and res.epoch == 0
    ck = load_checkpoint(tmp_path / "last")
    assert ck.epoch == 0
    for a, b in zip(model.parameters(), ck.model.parameters()):
        npt.assert_array_equal(a.data, b.data)


def test_resume_reproduces_trajectory(tmp_path):
    samples, val = data(6), data(2, seed=9)
    full = train(tiny(seed=5), samples, cfg(epochs=4), val_samples=val)
    train(tiny(seed=5), samples, cfg(epochs=2), val_samples=val, out_dir=tmp_path)
    ck = load_checkpoint(tmp_path / "last")
    assert ck.epoch == 2 and ck.rng_state["next_epoch"] == 3
    rest = train(ck.model, samples, cfg(epochs=4), val_samples=val, optimizer=ck.optimizer,
                 start_epoch=ck.epoch + 1, history=ck.history, best_iou=ck.best_iou)
    assert rest.losses == full.losses
    assert rest.best_iou == full.best_iou


def test_best_and_last_checkpoints(tmp_path):
    res = train(tiny(seed=6), data(), cfg(epochs=3), val_samples=data(2, seed=3),
                out_dir=tmp_path)
    best = load_checkpoint(tmp_path / "best")
    last = load_checkpoint(tmp_path / "last")
    assert last.epoch == 3
    assert best.best_iou == res.best_iou
    vals = [h["val"]["iou"] for h in res.history]
    assert best.epoch == 1 + vals.index(max(vals))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_loss_aborts_with_dump(tmp_path):
    model = tiny(seed=7)
    model.decoder.classifier.bias.data[:] = np.nan
    with pytest.raises(NumericalError):
        train(model, data(), cfg(), out_dir=tmp_path)
    dump = tmp_path / "nan_batch"
    assert load_tensor(dump / "images.ftns").shape == (2, 3, 32, 32)
    assert load_tensor(dump / "masks.ftns").shape == (2, 1, 32, 32)
    assert (dump / "epoch.txt").read_text().strip() == "1"


def test_evaluate_ground_truth_model():
    samples = data()
    rep = evaluate(tiny(seed=8), samples)
    # flat 0.5 predicts everything as building
    assert rep.recall == 1.0 and rep.counts.fn == 0
