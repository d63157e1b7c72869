import numpy as np
import pytest

from camlink.conditioning import ConditionerConfig
from camlink.dataset import generate_instances
from camlink.metrics import accuracy
from camlink.models import ModelConfig
from camlink.training import TrainConfig, edge_rate, load_bundle, stack, train


@pytest.fixture(scope="module")
def data():
    return generate_instances(500, 8, 3, 0.45, 0), generate_instances(200, 8, 3, 0.45, 0, stream=1)


def test_supervised_loss_decreases_and_beats_zeros(data):
    tr, held = data
    res = train(tr, ModelConfig("attention_score"), TrainConfig(epochs=5, lr=3e-3), val=held)
    losses = [r["loss"] for r in res.log]
    assert all(b < a for a, b in zip(losses, losses[1:]))
    coords, labels, d, k = stack(held)
    probs = res.bundle.predict(coords, d, k)
    zeros = accuracy(np.zeros_like(labels), labels)
    assert accuracy(probs, labels, res.bundle.threshold) > zeros
    assert set(res.log[0]) == {"epoch", "loss", "accuracy", "variance"}


def test_same_seed_same_loss(data):
    tr, _ = data
    cfg = ModelConfig("graph_transformer", layers=1, d_model=8, heads=2, d_k=4,
                      conditioner=ConditionerConfig("cam"))
    a = train(tr[:64], cfg, TrainConfig(epochs=2))
    b = train(tr[:64], cfg, TrainConfig(epochs=2))
    assert a.log == b.log


def test_diffusion_loss_decreases(data):
    tr, _ = data
    cfg = ModelConfig("graph_transformer", layers=2, d_model=16, heads=2, d_k=8)
    res = train(tr, cfg, TrainConfig(task="diffusion", epochs=5, lr=3e-3, T=50))
    losses = [r["loss"] for r in res.log]
    assert losses[-1] < losses[0]
    assert res.bundle.m == pytest.approx(edge_rate(stack(tr)[1]))


def test_vae_trains(data):
    tr, _ = data
    cfg = ModelConfig("attention_score", d_model=16, heads=2, d_k=8)
    res = train(tr[:128], cfg, TrainConfig(task="vae", epochs=3, lr=3e-3, latent_dim=4))
    assert res.log[-1]["loss"] < res.log[0]["loss"]
    coords, _, d, k = stack(tr[:4])
    binary, probs = res.bundle.sample(coords, d, k, [[0, i] for i in range(4)])
    np.testing.assert_array_equal(binary, binary.transpose(0, 2, 1))


def test_resume_reproduces_trajectory(data, tmp_path):
    tr, held = data
    cfg = ModelConfig("graph_transformer", layers=1, d_model=8, heads=2, d_k=4,
                      conditioner=ConditionerConfig("cam2"))
    full = train(tr[:96], cfg, TrainConfig(epochs=4), val=held[:20], checkpoint_path=tmp_path / "full.ckpt")
    part = tmp_path / "part.ckpt"
    train(tr[:96], cfg, TrainConfig(epochs=2), val=held[:20], checkpoint_path=part)
    resumed = train(tr[:96], cfg, TrainConfig(epochs=4), val=held[:20], checkpoint_path=part, resume=True)
    for a, b in zip(full.log, resumed.log):
        assert abs(a["loss"] - b["loss"]) <= 1e-9
    ref, _, _ = load_bundle(tmp_path / "full.ckpt")
    got, _, _ = load_bundle(part)
    for key, arr in ref.model.state_dict().items():
        assert np.max(np.abs(arr - got.model.state_dict()[key])) <= 1e-9


def test_n_mismatch_rejected(data):
    with pytest.raises(ValueError):
        train(data[0][:8], ModelConfig(), TrainConfig(epochs=1), n_expected=16)
