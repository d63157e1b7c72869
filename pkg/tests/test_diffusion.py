import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camlink.dataset import generate_instances
from camlink.diffusion import (
    DiffusionDenoiser,
    build_schedule,
    diffusion_train_step,
    forward_noise,
    posterior,
    posterior_dist,
    q_bar,
    q_step,
    sample_reverse,
)
from camlink.errors import ConfigError
from camlink.models import ModelConfig
from camlink.training import stack

from oracles import ConstantPredictor, LabelOracle


def test_schedule_endpoints():
    sch = build_schedule(200, 0.008, 0.1)
    assert sch.alpha_bar[-1] == pytest.approx(0.0, abs=1e-30)
    assert sch.alpha_bar[0] == pytest.approx(np.cos(0.5 * np.pi * 0.008 / 1.008) ** 2, rel=1e-15)
    assert sch.alpha_bar[0] == pytest.approx(0.99984, abs=1e-5)
    assert np.all(np.diff(build_schedule(1000, 0.008, 0.1).alpha_bar) < 0)


@pytest.mark.parametrize("kw", [{"T": 0}, {"m": 0.0}, {"m": 1.0}, {"s": 0.0}])
def test_schedule_rejects_bad_values(kw):
    args = {"T": 10, "s": 0.008, "m": 0.2, **kw}
    with pytest.raises(ConfigError):
        build_schedule(**args)


def test_q_bar_examples():
    sch = build_schedule(200, 0.008, 0.13)
    np.testing.assert_allclose(q_bar(sch, 0), np.eye(2), atol=2e-4)
    np.testing.assert_allclose(q_bar(sch, 200), [[0.87, 0.13], [0.87, 0.13]], atol=1e-15)
    for t in range(201):
        np.testing.assert_allclose(q_bar(sch, t).sum(1), 1.0, rtol=0, atol=1e-12)
    a, m = sch.alpha_bar[50], 0.13
    np.testing.assert_allclose(q_bar(sch, 50), [[a + (1 - a) * (1 - m), (1 - a) * m],
                                                [(1 - a) * (1 - m), a + (1 - a) * m]], rtol=1e-15)


def test_composition_identity(rng):
    sch = build_schedule(200, 0.008, 0.21)
    for t in rng.integers(1, 201, size=100):
        np.testing.assert_allclose(q_bar(sch, t - 1) @ q_step(sch, t), q_bar(sch, t), rtol=0, atol=1e-10)


def test_forward_noise_endpoints(rng):
    sch = build_schedule(200, 0.008, 0.15)
    label = np.zeros((50, 20, 20), dtype=np.int8)
    label[:, 0, 1:] = label[:, 1:, 0] = 1
    near = forward_noise(label, sch, 0, rng)
    iu = np.triu_indices(20, 1)
    assert np.mean(near[:, iu[0], iu[1]] != label[:, iu[0], iu[1]]) <= 2e-4 * 3
    for e0 in (0, 1):
        flat = np.full((530, 20, 20), e0, dtype=np.int8)
        full = forward_noise(flat, sch, 200, rng)
        samples = full[:, iu[0], iu[1]]
        assert samples.size >= 10 ** 5
        assert abs(samples.mean() - 0.15) <= 0.02
    np.testing.assert_array_equal(full, full.transpose(0, 2, 1))
    assert np.all(full[:, np.arange(20), np.arange(20)] == 0)


def test_posterior_examples():
    sch = build_schedule(1000, 0.008, 0.1)
    for e0 in (0, 1):
        dist = posterior_dist(e0, e0, sch, 1)
        assert dist[e0] >= 0.999
        assert dist.sum() == pytest.approx(1.0, abs=1e-12)
        # abar_0 < 1, so a disagreeing e_1 is ambiguous about the step it flipped at
        flipped = posterior_dist(1 - e0, e0, sch, 1)
        a, prev = sch.alpha_bar[1] / sch.alpha_bar[0], sch.alpha_bar[0]
        pi = np.array([0.9, 0.1])
        w = np.array([(a * (v == 1 - e0) + (1 - a) * pi[1 - e0]) * (prev * (v == e0) + (1 - prev) * pi[v])
                      for v in (0, 1)])
        np.testing.assert_allclose(flipped, w / w.sum(), rtol=1e-12)
    with pytest.raises(ValueError):
        posterior(0, 0, sch, 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 200), st.integers(0, 1), st.integers(0, 1), st.floats(0.01, 0.99))
def test_posterior_matches_bayes_rule(t, e0, et, m):
    sch = build_schedule(200, 0.008, m)
    w = np.array([q_step(sch, t)[v, et] * q_bar(sch, t - 1)[e0, v] for v in (0, 1)])
    assert float(posterior(et, e0, sch, t)) == pytest.approx(w[1] / w.sum(), rel=1e-12, abs=1e-15)


def test_train_step_oracle_and_constant(rng):
    insts = generate_instances(20, 8, 3, 0.45, 0)
    coords, labels, d, k = stack(insts)
    sch = build_schedule(200, 0.008, 0.2)
    assert diffusion_train_step(coords, labels, LabelOracle(labels), sch, rng, d, k).item() < 1e-6
    m = 0.2
    loss = diffusion_train_step(coords, labels, ConstantPredictor(m), sch, rng, d, k).item()
    iu = np.triu_indices(8, 1)
    rate = labels[:, iu[0], iu[1]].mean(1)
    expect = np.mean(-(rate * np.log(m) + (1 - rate) * np.log(1 - m)))
    assert loss == pytest.approx(expect, rel=1e-12)


def _rngs(seed, count):
    return [np.random.default_rng([seed, i]) for i in range(count)]


def test_oracle_sampler_recovers_labels():
    insts = generate_instances(20, 8, 3, 0.45, 5)
    coords, labels, d, k = stack(insts)
    sch = build_schedule(200, 0.008, 0.2)
    out = sample_reverse(coords, LabelOracle(labels), sch, _rngs(0, 20), d, k)
    iu = np.triu_indices(8, 1)
    assert np.mean(out[:, iu[0], iu[1]] != labels[:, iu[0], iu[1]]) <= 0.001
    np.testing.assert_array_equal(out, out.transpose(0, 2, 1))


def test_sampler_deterministic_and_well_formed(rng):
    model = DiffusionDenoiser(ModelConfig("graph_transformer", layers=1, d_model=8, heads=2, d_k=4))
    coords = rng.random((3, 6, 2))
    sch = build_schedule(6, 0.008, 0.3)
    a = sample_reverse(coords, model, sch, _rngs(1, 3), 0.5, 3)
    b = sample_reverse(coords, model, sch, _rngs(1, 3), 0.5, 3)
    assert a.tobytes() == b.tobytes()
    assert set(np.unique(a)) <= {0, 1}
    np.testing.assert_array_equal(a, a.transpose(0, 2, 1))
    assert np.all(a[:, np.arange(6), np.arange(6)] == 0)
    c = sample_reverse(coords, model, sch, _rngs(1, 3), 0.5, 3, final="sample")
    assert c.shape == a.shape


def test_sampler_permutation_consistent():
    insts = generate_instances(4, 7, 3, 0.45, 9)
    coords, labels, d, k = stack(insts)
    sch = build_schedule(30, 0.008, 0.25)
    perm = np.random.default_rng(3).permutation(7)
    noise = {}

    def uniforms(step):
        if step not in noise:
            r = np.random.default_rng([11, step])
            u = np.triu(r.random((4, 7, 7)), 1)
            noise[step] = u + u.transpose(0, 2, 1)
        return noise[step]

    def permuted(step):
        return uniforms(step)[:, perm][:, :, perm]

    # a predictor that trusts the noisy graph half the time keeps the noise relevant
    class Mixed(LabelOracle):
        def predict_x0(self, coords, e_t, t_frac, d, k):
            from camlink.autodiff import Tensor
            return Tensor(0.5 * self.labels + 0.5 * np.asarray(e_t))

    a = sample_reverse(coords, Mixed(labels), sch, None, d, k, final="sample", uniforms=uniforms)
    pl = labels[:, perm][:, :, perm]
    b = sample_reverse(coords[:, perm], Mixed(pl), sch, None, d, k, final="sample", uniforms=permuted)
    np.testing.assert_array_equal(a[:, perm][:, :, perm], b)
