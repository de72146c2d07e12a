import numpy as np
import pytest

from palp_lab.diffcore import Tensor, mse
from palp_lab.diffusion import (
    broadcast_coefficient,
    build_schedule,
    cfg_predict,
    denoise_loss,
    q_sample,
    sample,
    x0_hat,
)
from palp_lab.models.prompt import Prompt

N_CASES = 100


@pytest.mark.parametrize("kwargs", [
    {"T": 1},
    {"beta_min": 0.0},
    {"beta_min": 0.03, "beta_max": 0.02},
    {"beta_max": 1.0},
])
def test_build_schedule_rejects_invalid_ranges(kwargs):
    with pytest.raises(ValueError):
        build_schedule(**kwargs)


def test_schedule_is_monotone_and_positive():
    s = build_schedule()
    assert s.T == 1000
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert s.alpha_bar[-1] > 0
    np.testing.assert_allclose(s.alpha, 1.0 - s.beta)
    t = np.array([0, 10, 999])
    np.testing.assert_allclose(
        s.rescale_factor(t), np.sqrt(s.alpha_bar[t]) / np.sqrt(1.0 - s.alpha_bar[t]), rtol=1e-12,
    )


def test_timesteps_are_checked():
    s = build_schedule(10)
    with pytest.raises(ValueError):
        s.sqrt_alpha_bar(10)
    with pytest.raises(ValueError):
        s.sqrt_alpha_bar(-1)
    with pytest.raises(ValueError):
        s.sqrt_alpha_bar(np.array([1.5]))


def test_x0_hat_inverts_q_sample():
    s = build_schedule()
    for seed in range(N_CASES):
        rng = np.random.default_rng(seed)
        x0 = rng.uniform(-1.0, 1.0, (4, 9))
        eps = rng.standard_normal(x0.shape)
        t = rng.integers(0, s.T, size=4)
        x_t = q_sample(x0, t, eps, s)
        np.testing.assert_allclose(x0_hat(x_t, eps, t, s).data, x0, atol=1e-10, rtol=0)

        t_single = int(rng.integers(0, s.T))
        x_t = q_sample(x0[0], t_single, eps[0], s)
        np.testing.assert_allclose(x0_hat(x_t, eps[0], t_single, s).data, x0[0], atol=1e-10, rtol=0)


def test_q_sample_checks_shapes():
    s = build_schedule(10)
    with pytest.raises(ValueError):
        q_sample(np.zeros((2, 3)), np.array([1, 2]), np.zeros((2, 4)), s)
    with pytest.raises(ValueError):
        broadcast_coefficient(np.array([1.0, 2.0, 3.0]), (2, 4))


def test_cfg_is_affine_in_alpha(tiny_base):
    rng = np.random.default_rng(3)
    y = Prompt(("sketch", "circle"))
    for _ in range(N_CASES):
        x_t = Tensor(rng.standard_normal((2, tiny_base.data_dim)))
        t = rng.integers(0, 1000, size=2)
        alpha = float(rng.uniform(0.0, 20.0))
        uncond = tiny_base.predict(x_t, t, Prompt.null()).data
        cond = tiny_base.predict(x_t, t, y).data
        guided = cfg_predict(tiny_base, x_t, t, y, alpha).data
        np.testing.assert_allclose(guided, uncond + alpha * (cond - uncond), atol=1e-10, rtol=0)


def test_cfg_with_unit_scale_is_the_conditional_prediction(tiny_base):
    x_t = Tensor(np.random.default_rng(0).standard_normal(tiny_base.data_dim))
    y = Prompt(("photo", "square", "dots"))
    np.testing.assert_array_equal(cfg_predict(tiny_base, x_t, 5, y, 1.0).data, tiny_base.predict(x_t, 5, y).data)


def test_denoise_loss_is_the_noise_mse(tiny_base, tiny_schedule):
    rng = np.random.default_rng(1)
    x0 = rng.uniform(-1.0, 1.0, (3, tiny_base.data_dim))
    eps = rng.standard_normal(x0.shape)
    t = np.array([0, 4, 9])
    prompts = [Prompt(("photo", "circle"))] * 3
    loss = denoise_loss(tiny_base, x0, prompts, t, eps, tiny_schedule)
    expected = mse(tiny_base.predict(q_sample(x0, t, eps, tiny_schedule), t, prompts), Tensor(eps))
    assert loss.item() == expected.item()


def test_sample_is_deterministic_per_seed(tiny_base, tiny_schedule):
    y = Prompt(("sketch", "triangle"))
    first = sample(tiny_base, y, tiny_schedule, 7.5, rng_seed=11, n=3)
    again = sample(tiny_base, y, tiny_schedule, 7.5, rng_seed=11, n=3)
    other = sample(tiny_base, y, tiny_schedule, 7.5, rng_seed=12, n=3)
    assert first.shape == (3, tiny_base.data_dim)
    np.testing.assert_array_equal(first, again)
    assert not np.array_equal(first, other)


def test_schedule_table_values():
    s = build_schedule(1000, 1e-4, 0.02)
    assert s.alpha_bar[0] == pytest.approx(0.9999, abs=1e-15)
    assert s.alpha_bar[999] == pytest.approx(float(np.prod(1.0 - np.linspace(1e-4, 0.02, 1000))), rel=1e-12)
    assert s.alpha_bar[999] == pytest.approx(4.0358e-5, rel=1e-3)
    assert build_schedule(2, 0.1, 0.1).alpha_bar[1] == pytest.approx(0.81, abs=1e-15)


def test_q_sample_hand_values():
    s = build_schedule(10)
    x0, eps = np.ones(3), np.ones(3)
    np.testing.assert_allclose(q_sample(x0, 0, np.zeros(3), s).data, np.sqrt(s.alpha_bar[0]) * x0, atol=1e-15)

    quarter = build_schedule(2, 0.75, 0.75)
    assert quarter.alpha_bar[0] == pytest.approx(0.25)
    np.testing.assert_allclose(q_sample(x0, 0, eps, quarter).data, 0.5 + np.sqrt(0.75), atol=1e-12)


class _StubPredictor:
    """Returns the true noise plus a constant offset."""

    data_dim = 4

    def __init__(self, eps, offset):
        self.eps = eps
        self.offset = offset

    def predict(self, x_t, t, prompt):
        return Tensor(self.eps + self.offset)


def test_denoise_loss_with_stub_predictors():
    s = build_schedule(10)
    rng = np.random.default_rng(2)
    x0 = rng.uniform(-1.0, 1.0, (2, 4))
    eps = rng.standard_normal(x0.shape)
    prompts = [Prompt(("photo",))] * 2
    assert denoise_loss(_StubPredictor(eps, 0.0), x0, prompts, np.array([1, 5]), eps, s).item() == 0.0
    assert denoise_loss(_StubPredictor(eps, 0.3), x0, prompts, np.array([1, 5]), eps, s).item() == pytest.approx(0.09)


def test_x0_hat_with_zero_prediction():
    s = build_schedule(10)
    x_t = np.random.default_rng(4).standard_normal(5)
    np.testing.assert_allclose(x0_hat(x_t, np.zeros(5), 3, s).data, x_t / np.sqrt(s.alpha_bar[3]), atol=1e-15)


def test_cfg_with_zero_scale_is_the_unconditional_prediction(tiny_base):
    x_t = Tensor(np.random.default_rng(5).standard_normal(tiny_base.data_dim))
    guided = cfg_predict(tiny_base, x_t, 5, Prompt(("sketch", "cross")), 0.0)
    np.testing.assert_array_equal(guided.data, tiny_base.predict(x_t, 5, Prompt.null()).data)
