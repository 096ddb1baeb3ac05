import math

import numpy as np
import pytest

import bnn_cmim as bc


def test_xnor_matmul_matches_sign_product():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 130)).astype(np.float32)
    w = rng.standard_normal((7, 130)).astype(np.float32)
    sx = np.where(x >= 0, 1.0, -1.0)
    sw = np.where(w >= 0, 1.0, -1.0)
    np.testing.assert_array_equal(bc.xnor_matmul(x, w), sx @ sw.T)


def test_positive_score_is_l1_norm():
    a = np.array([0.3, -0.4, -0.6])
    dot, l1 = bc.sign_l1_identity(a)
    assert dot == l1
    assert abs(dot - 1.3) < 1e-15


def test_critic_against_direct_formula():
    s, tau, n, m = 0.4, 0.7, 4, 40
    log_h, log_1mh = bc.critic(s, tau, n, m)
    h = math.exp(s / tau) / (math.exp(s / tau) + n / m)
    assert log_h == pytest.approx(math.log(h), abs=1e-12)
    assert log_1mh == pytest.approx(math.log(1 - h), abs=1e-12)
    with pytest.raises(bc.BnnError):
        bc.critic(0.0, 0.0, 1, 1)


def test_nce_loss_one_negative():
    anchors = np.array([[1.0, -1.0]])
    positives = np.array([[0.5, -0.25]])
    bank = np.array([[0.5, -0.25], [0.2, 0.9]])
    r = bc.nce_loss(anchors, positives, [0], bank, tau=1.0, n_negatives=1, m_pairs=2)
    h = lambda s: math.exp(s) / (math.exp(s) + 0.5)
    expect = -(math.log(h(0.75)) + math.log(1 - h(0.2 - 0.9)))
    assert r["loss"] == pytest.approx(expect, abs=1e-12)
    assert r["grad_fp"].shape == (1, 2)


def test_information_measures():
    det = np.eye(4)
    assert bc.mutual_information(det) == pytest.approx(math.log(4))
    check = bc.verify_nce_bound(np.ones((4, 4)) + np.eye(4), 8, 500, seed=1)
    assert check["holds"]
    a = np.random.default_rng(1).standard_normal((200, 3))
    assert 0.0 <= bc.binarized_activation_mi(a, 4) <= math.log(2) + 1e-12


def test_presets_and_overrides():
    desk = bc.preset("desk")
    assert desk["arch"]["widths"] == [784, 512, 512, 10]
    assert desk["lambda"] == 0.8
    c = bc.resolve_config("smoke", ["lambda=0.4"])
    assert c["lambda"] == 0.4
    with pytest.raises(bc.BnnError):
        bc.resolve_config("smoke", ["nonsense=1"])
    assert bc.layer_weight(1, 2.0, 3) == 0.5


def test_train_and_load(tmp_path):
    data = tmp_path / "data"
    bc.synth(str(data), 300, 100, 3)
    out = bc.train("smoke", [f"data_dir={data}", f"out_dir={tmp_path / 'run'}", "epochs=1"])
    model = bc.Model(f"{out}/final.bnnc")
    assert model.epochs == 1
    assert model.tap_layers == [1, 2]
    x = np.zeros((3, 784), dtype=np.float32)
    assert model.logits(x).shape == (3, 10)
    assert model.activation(x, 1).shape == (3, 64)
    result = model.evaluate()
    assert result["total"] == 100
    assert 0.0 <= result["accuracy"] <= 100.0
