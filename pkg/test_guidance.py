import numpy as np
import pytest

from palp_lab.denoiser import ModelState, init_params, init_table, trainable_set
from palp_lab.diffcore import GradientError, Tape, Tensor, dot, grad
from palp_lab.diffusion import cfg_predict, q_sample, x0_hat
from palp_lab.guidance import (
    GUIDANCES,
    GuidanceBranch,
    GuidanceNotImplementedError,
    PalpGuidance,
    PromptRoleError,
    SdsGuidance,
    apply_palp_grad,
    get_guidance,
    guidance_loss_sds,
    palp_direction,
    renoise,
    sds_direction,
)
from palp_lab.models.config import GuidanceConfig, TrainConfig
from palp_lab.models.prompt import Prompt
from palp_lab.models.role import GuidanceMode, PromptRole, TrainableMode, Weighting
from palp_lab.prompts import base_vocabulary
from palp_lab.trainer import draw_batch, prepare_model, step_gradients

Y_P = Prompt(("photo", "[V]"), PromptRole.PERSONALIZATION)
Y_C = Prompt(("photo", "circle"), PromptRole.CLEAN)


def _trained_looking(model, seed=0):
    """Nonzero adapter and a moved placeholder row, so the two branches differ."""
    rng = np.random.default_rng(seed)
    named = {f"lora.{i}.B": 0.1 * rng.standard_normal(b.shape) for i, b in zip(model.lora.targets, model.lora.B)}
    named["embedding.placeholders"] = model.table.placeholder_rows + 0.5 * rng.standard_normal(model.table.placeholder_rows.shape)
    return model.replace(named)


@pytest.fixture
def fresh_model(tiny_base, toy_subject, tiny_train_config):
    return prepare_model(tiny_base, [toy_subject], tiny_train_config)


def test_registry():
    assert set(GUIDANCES) == {GuidanceMode.SDS, GuidanceMode.PALP}
    assert isinstance(get_guidance(GuidanceMode.PALP), PalpGuidance)
    assert isinstance(get_guidance(GuidanceMode.SDS), SdsGuidance)
    with pytest.raises(ValueError):
        get_guidance(GuidanceMode.NONE)
    for reserved in (GuidanceMode.NFSD, GuidanceMode.VSD):
        with pytest.raises(GuidanceNotImplementedError):
            get_guidance(reserved)
    for guidance in GUIDANCES.values():
        assert guidance.name == guidance.mode.value
        assert guidance.description


def test_prompt_roles_are_enforced(tiny_base, fresh_model):
    x = np.zeros(tiny_base.data_dim)
    cfg = GuidanceConfig()
    with pytest.raises(PromptRoleError):
        palp_direction(tiny_base, fresh_model, x, 3, Prompt(("sketch", "[V]")), Y_P, cfg)
    with pytest.raises(PromptRoleError):
        palp_direction(tiny_base, fresh_model, x, 3, Y_C, Prompt(("photo", "circle")), cfg)
    with pytest.raises(PromptRoleError):
        sds_direction(tiny_base, x, 3, Prompt(("sketch", "[V]")), 7.5, x)


def test_zero_residual_for_a_fresh_adapter(tiny_base, fresh_model):
    rng = np.random.default_rng(0)
    cfg = GuidanceConfig(alpha=7.5, beta=7.5)
    for _ in range(20):
        x_hat_t = rng.standard_normal((3, tiny_base.data_dim))
        t = rng.integers(0, 10, size=3)
        direction = palp_direction(tiny_base, fresh_model, x_hat_t, t, [Y_C] * 3, [Y_P] * 3, cfg)
        assert np.all(direction.data == 0.0)


def test_residual_is_nonzero_once_scales_or_weights_differ(tiny_base, fresh_model):
    x_hat_t = np.random.default_rng(1).standard_normal(tiny_base.data_dim)
    imbalanced = palp_direction(tiny_base, fresh_model, x_hat_t, 4, Y_C, Y_P, GuidanceConfig(alpha=15.0, beta=7.5))
    assert np.linalg.norm(imbalanced.data) > 0
    moved = palp_direction(tiny_base, _trained_looking(fresh_model), x_hat_t, 4, Y_C, Y_P, GuidanceConfig(alpha=7.5, beta=7.5))
    assert np.linalg.norm(moved.data) > 0


def test_guidance_from_another_base(tiny_base, fresh_model):
    rng = np.random.default_rng(9)
    other = ModelState(init_params((16, 16), (8,), 4, 4, rng), init_table(base_vocabulary(), 4, rng))
    x_hat_t = rng.standard_normal(tiny_base.data_dim)
    cfg = GuidanceConfig(alpha=7.5, beta=7.5)
    direction = palp_direction(other, fresh_model, x_hat_t, 4, Y_C, Y_P, cfg)
    expected = cfg_predict(other, x_hat_t, 4, Y_C, 7.5).data - cfg_predict(fresh_model, x_hat_t, 4, Y_P, 7.5).data
    np.testing.assert_array_equal(direction.data, expected)


def test_sds_direction_and_weighting(tiny_base, tiny_schedule):
    rng = np.random.default_rng(2)
    x_t = rng.standard_normal((2, tiny_base.data_dim))
    eps = rng.standard_normal(x_t.shape)
    t = np.array([1, 8])
    constant = sds_direction(tiny_base, x_t, t, Y_C, 7.5, eps).data
    np.testing.assert_array_equal(constant, cfg_predict(tiny_base, x_t, t, Y_C, 7.5).data - eps)

    weighted = sds_direction(tiny_base, x_t, t, Y_C, 7.5, eps, Weighting.ONE_MINUS_ALPHA_BAR, tiny_schedule).data
    w = 1.0 - tiny_schedule.alpha_bar[t]
    np.testing.assert_allclose(weighted, constant * w[:, None], rtol=1e-12)
    with pytest.raises(ValueError):
        sds_direction(tiny_base, x_t, t, Y_C, 7.5, eps, Weighting.ONE_MINUS_ALPHA_BAR)


def test_renoise_is_off_the_tape(tiny_schedule):
    tape = Tape()
    x0 = tape.leaf(np.ones(4))
    eps = np.full(4, 0.5)
    renoised = renoise(x0, 3, eps, tiny_schedule)
    assert not renoised.is_tracked
    np.testing.assert_array_equal(renoised.data, q_sample(np.ones(4), 3, eps, tiny_schedule).data)


def test_branch_noise_sharing(fresh_model, tiny_schedule):
    rng = np.random.default_rng(3)
    x_t = Tensor(rng.standard_normal((2, fresh_model.data_dim)))
    eps_pred = fresh_model.predict(x_t, np.array([2, 5]), [Y_P] * 2)
    eps = rng.standard_normal(x_t.shape)
    fresh = rng.standard_normal(x_t.shape)
    t = np.array([2, 5])

    shared = GuidanceBranch.from_prediction(x_t, eps_pred, t, eps, [Y_C] * 2, [Y_P] * 2, GuidanceConfig(), tiny_schedule, fresh)
    assert shared.eps is eps
    independent = GuidanceBranch.from_prediction(
        x_t, eps_pred, t, eps, [Y_C] * 2, [Y_P] * 2, GuidanceConfig(share_noise=False), tiny_schedule, fresh,
    )
    assert independent.eps is fresh
    assert not np.array_equal(shared.x_hat_t.data, independent.x_hat_t.data)
    with pytest.raises(ValueError):
        GuidanceBranch.from_prediction(
            x_t, eps_pred, t, eps, [Y_C] * 2, [Y_P] * 2, GuidanceConfig(share_noise=False), tiny_schedule,
        )


def _single_sample_setup(model, s, seed):
    rng = np.random.default_rng(seed)
    names = trainable_set(TrainableMode.PERSONALIZE, model)
    tape = Tape()
    bound = model.bind(tape, names)
    t = int(rng.integers(0, s.T))
    x_t = q_sample(rng.uniform(-1.0, 1.0, model.data_dim), t, rng.standard_normal(model.data_dim), s)
    eps_pred = bound.predict(x_t, t, Y_P)
    estimate = x0_hat(x_t, eps_pred, t, s)
    direction = rng.standard_normal(model.data_dim)
    return bound, t, eps_pred, estimate, direction


def test_rescaled_gradient_cancels_the_x0_scaling(fresh_model, tiny_schedule):
    model = _trained_looking(fresh_model)
    for seed in range(20):
        bound, t, eps_pred, estimate, direction = _single_sample_setup(model, tiny_schedule, seed)
        rescaled = apply_palp_grad(direction, estimate, bound.leaves, t, tiny_schedule, GuidanceConfig(rescale=True))
        by_leaf = grad(dot(Tensor(-direction), eps_pred), bound.leaves.values())
        for name, leaf in bound.leaves.items():
            np.testing.assert_allclose(rescaled[name], by_leaf[leaf], rtol=1e-8, atol=1e-10)


def test_rescale_multiplies_by_the_schedule_ratio(fresh_model, tiny_schedule):
    model = _trained_looking(fresh_model)
    for seed in range(20):
        bound, t, _, estimate, direction = _single_sample_setup(model, tiny_schedule, seed)
        plain = apply_palp_grad(direction, estimate, bound.leaves, t, tiny_schedule, GuidanceConfig(rescale=False))
        rescaled = apply_palp_grad(direction, estimate, bound.leaves, t, tiny_schedule, GuidanceConfig(rescale=True))
        factor = float(tiny_schedule.rescale_factor(t))
        for name in plain:
            np.testing.assert_allclose(rescaled[name], factor * plain[name], rtol=1e-9, atol=1e-12)


def test_apply_palp_grad_needs_a_tracked_estimate(tiny_schedule):
    with pytest.raises(GradientError):
        apply_palp_grad(np.ones(3), Tensor(np.ones(3)), {}, 2, tiny_schedule, GuidanceConfig())


def test_guidance_loss_sds_checks_mode(fresh_model, tiny_base, tiny_schedule):
    names = trainable_set(TrainableMode.PERSONALIZE, fresh_model)
    bound = fresh_model.bind(Tape(), names)
    x0 = np.zeros((1, fresh_model.data_dim))
    eps = np.ones_like(x0)
    with pytest.raises(ValueError):
        guidance_loss_sds(tiny_base, bound, x0, np.array([3]), eps, [Y_C], [Y_P], GuidanceConfig(), tiny_schedule)
    contribution = guidance_loss_sds(
        tiny_base, bound, x0, np.array([3]), eps, [Y_C], [Y_P],
        GuidanceConfig(mode=GuidanceMode.SDS), tiny_schedule,
    )
    assert set(contribution.grads) == set(names)


def test_lambda_zero_and_zero_residual_reduce_to_the_baseline(fresh_model, toy_subject, tiny_base, tiny_schedule):
    batch = draw_batch(toy_subject, 3, tiny_schedule.T, seed=0, step=1)
    baseline = TrainConfig(batch=3, progress=False)
    baseline_grads = step_gradients(fresh_model, batch, Y_C, baseline, tiny_schedule, tiny_base).grads

    switched_off = TrainConfig(batch=3, lambda_palp=0.0, guidance=GuidanceConfig(), progress=False)
    off = step_gradients(fresh_model, batch, Prompt(("sketch", "circle"), PromptRole.CLEAN), switched_off, tiny_schedule, tiny_base)

    matched = TrainConfig(batch=3, guidance=GuidanceConfig(alpha=7.5, beta=7.5), progress=False)
    zero = step_gradients(fresh_model, batch, Y_C, matched, tiny_schedule, tiny_base)
    assert zero.guidance_norm == 0.0
    for name, g in baseline_grads.items():
        np.testing.assert_array_equal(off.grads[name], g)
        np.testing.assert_array_equal(zero.grads[name], g)
