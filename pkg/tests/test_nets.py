import numpy as np
import pytest

from asynces import nets


def central_difference_param_grad(spec, params, x, upstream, step=1e-6):
    grad = np.zeros_like(params)
    for i in range(params.size):
        hi = params.copy()
        hi[i] += step
        lo = params.copy()
        lo[i] -= step
        grad[i] = (np.sum(nets.forward(spec, hi, x) * upstream)
                   - np.sum(nets.forward(spec, lo, x) * upstream)) / (2 * step)
    return grad


def test_param_count_default_actor_shape():
    # (17 states, 6 actions) with (400, 300) hidden layers
    spec = nets.actor_spec(17, 6, (400, 300))
    assert nets.param_count(spec) == 17 * 400 + 400 + 400 * 300 + 300 + 300 * 6 + 6
    assert nets.param_count(spec) == 129_306


def test_flatten_round_trip_is_exact():
    spec = nets.MlpSpec((4, 8, 3), hidden="tanh", output="tanh")
    params = nets.init_params(spec, np.random.default_rng(0))
    layers = nets.unflatten(spec, params)
    assert np.array_equal(nets.flatten(layers), params)


def test_unflatten_rejects_wrong_length():
    spec = nets.MlpSpec((4, 8, 3))
    with pytest.raises(ValueError):
        nets.unflatten(spec, np.zeros(nets.param_count(spec) + 1))


def test_bad_specs_rejected():
    with pytest.raises(ValueError):
        nets.MlpSpec((5,))
    with pytest.raises(ValueError):
        nets.MlpSpec((5, 0, 2))
    with pytest.raises(ValueError):
        nets.MlpSpec((5, 4, 2), hidden="relu6")


def test_zero_parameters_give_zero_outputs():
    aspec = nets.actor_spec(3, 2, (8, 8))
    cspec = nets.critic_spec(3, 2, (8, 8))
    s = np.random.default_rng(0).standard_normal(3)
    a = np.zeros(2)
    assert np.array_equal(nets.actor_forward(aspec, np.zeros(nets.param_count(aspec)), s),
                          np.zeros(2))
    assert nets.critic_forward(cspec, np.zeros(nets.param_count(cspec)), s, a)[0] == 0.0


def test_tiny_identity_net():
    spec = nets.MlpSpec((1, 1), hidden="tanh", output="tanh")
    params = np.array([1.0, 0.0])  # w=1, b=0
    assert nets.forward(spec, params, np.array([0.0]))[0] == 0.0
    assert nets.forward(spec, params, np.array([2.0]))[0] == pytest.approx(np.tanh(2.0))


def test_actor_output_strictly_inside_unit_box():
    spec = nets.actor_spec(5, 3, (16, 16))
    rng = np.random.default_rng(42)
    params = nets.init_params(spec, rng)
    for _ in range(20):
        out = nets.actor_forward(spec, params, 3.0 * rng.standard_normal(5))
        assert np.all(np.abs(out) < 1.0)


def test_critic_finite_for_finite_inputs():
    spec = nets.critic_spec(4, 2, (16, 16))
    rng = np.random.default_rng(1)
    params = nets.init_params(spec, rng)
    q = nets.critic_forward(spec, params, 100.0 * rng.standard_normal((8, 4)),
                            rng.standard_normal((8, 2)))
    assert np.all(np.isfinite(q))


def test_forward_is_deterministic():
    spec = nets.actor_spec(4, 2, (8, 8))
    params = nets.init_params(spec, np.random.default_rng(9))
    x = np.random.default_rng(10).standard_normal((5, 4))
    assert np.array_equal(nets.forward(spec, params, x), nets.forward(spec, params, x))


@pytest.mark.parametrize("spec", [
    nets.critic_spec(4, 1, (8, 8)),       # leaky-relu, linear head
    nets.actor_spec(3, 2, (8, 8)),        # tanh throughout
    nets.MlpSpec((5, 12, 4), hidden="leaky_relu", output="tanh"),
])
def test_backprop_matches_central_differences(spec):
    rng = np.random.default_rng(7)
    params = nets.init_params(spec, rng)
    x = rng.standard_normal((6, spec.in_dim))
    upstream = rng.standard_normal((6, spec.out_dim))
    y, cache = nets.forward_cached(spec, params, x)
    grad, _ = nets.backward(spec, params, cache, upstream)
    fd = central_difference_param_grad(spec, params, x, upstream)
    rel = np.abs(grad - fd) / (np.abs(fd) + 1e-8)
    assert rel.max() < 1e-4


def test_zero_upstream_gives_zero_gradient():
    spec = nets.actor_spec(3, 2, (8,))
    rng = np.random.default_rng(3)
    params = nets.init_params(spec, rng)
    _, cache = nets.forward_cached(spec, params, rng.standard_normal((4, 3)))
    grad, grad_x = nets.backward(spec, params, cache, np.zeros((4, 2)))
    assert not grad.any() and not grad_x.any()


def test_gradient_is_linear_in_upstream():
    spec = nets.critic_spec(3, 1, (8,))
    rng = np.random.default_rng(4)
    params = nets.init_params(spec, rng)
    x = rng.standard_normal((4, 4))
    up = rng.standard_normal((4, 1))
    _, cache = nets.forward_cached(spec, params, x)
    g1, _ = nets.backward(spec, params, cache, up)
    g2, _ = nets.backward(spec, params, cache, 3.0 * up)
    assert np.allclose(3.0 * g1, g2, atol=1e-10)


def test_dimension_mismatch_raises():
    spec = nets.actor_spec(3, 2, (8,))
    params = nets.init_params(spec, np.random.default_rng(0))
    with pytest.raises(ValueError):
        nets.forward(spec, params, np.zeros(4))


def test_init_params_fan_in_bounds():
    spec = nets.MlpSpec((100, 4), hidden="tanh")
    params = nets.init_params(spec, np.random.default_rng(0))
    assert np.all(np.abs(params) <= 0.1 + 1e-12)  # 1/sqrt(100)


def test_sgd_and_adam_reduce_a_quadratic():
    for make in (lambda: nets.Sgd(0.1), lambda: nets.Sgd(0.05, momentum=0.9),
                 lambda: nets.Adam(0.1)):
        opt = make()
        x = np.array([3.0, -2.0])
        for _ in range(200):
            x = opt.step(x, 2.0 * x)
        assert np.linalg.norm(x) < 1e-2
