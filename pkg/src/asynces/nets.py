"""Fixed-architecture MLPs over flat parameter vectors.

The search operates on raw parameter space, so networks are pure
functions of (spec, flat vector, input). ``unflatten`` returns views into
the flat vector; nothing here owns parameters. Reverse-mode gradients are
hand-rolled: the gradient workers need d(loss)/d(params) for the critics
and d(critic)/d(action) chained into the actor.
"""

from dataclasses import dataclass

import numpy as np

HIDDEN_ACTS = ("tanh", "leaky_relu")
OUTPUT_ACTS = ("tanh", None)


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple
    hidden: str = "tanh"
    output: str | None = None
    leaky_slope: float = 0.01

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("need at least input and output layers")
        if any(s < 1 for s in sizes):
            raise ValueError("layer sizes must be positive")
        if self.hidden not in HIDDEN_ACTS:
            raise ValueError("unknown hidden activation %r" % (self.hidden,))
        if self.output not in OUTPUT_ACTS:
            raise ValueError("unknown output activation %r" % (self.output,))

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]


def actor_spec(state_dim: int, action_dim: int, hidden=(400, 300)) -> MlpSpec:
    """tanh hidden layers, tanh output: actions live in [-1, 1]."""
    return MlpSpec((state_dim, *hidden, action_dim), hidden="tanh", output="tanh")


def critic_spec(state_dim: int, action_dim: int, hidden=(400, 300)) -> MlpSpec:
    """leaky-ReLU hidden layers, linear scalar output."""
    return MlpSpec((state_dim + action_dim, *hidden, 1), hidden="leaky_relu", output=None)


def param_count(spec: MlpSpec) -> int:
    sizes = spec.layer_sizes
    return sum((sizes[i] + 1) * sizes[i + 1] for i in range(len(sizes) - 1))


def unflatten(spec: MlpSpec, params: np.ndarray):
    """Per-layer (W, b) views into the flat vector; no copies."""
    params = np.asarray(params)
    if params.ndim != 1 or params.size != param_count(spec):
        raise ValueError("flat vector has %d entries, spec needs %d"
                         % (params.size, param_count(spec)))
    layers = []
    off = 0
    sizes = spec.layer_sizes
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        w = params[off:off + fan_in * fan_out].reshape(fan_in, fan_out)
        off += fan_in * fan_out
        b = params[off:off + fan_out]
        off += fan_out
        layers.append((w, b))
    return layers


def flatten(layers, dtype=np.float64) -> np.ndarray:
    parts = []
    for w, b in layers:
        parts.append(np.asarray(w, dtype=dtype).ravel())
        parts.append(np.asarray(b, dtype=dtype).ravel())
    return np.concatenate(parts)


def init_params(spec: MlpSpec, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Uniform fan-in scaling, +-1/sqrt(fan_in) per layer."""
    out = np.empty(param_count(spec), dtype=dtype)
    off = 0
    sizes = spec.layer_sizes
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        bound = 1.0 / np.sqrt(fan_in)
        n = (fan_in + 1) * fan_out
        out[off:off + n] = rng.uniform(-bound, bound, size=n).astype(dtype)
        off += n
    return out


def _activate(spec, s, last):
    kind = spec.output if last else spec.hidden
    if kind == "tanh":
        return np.tanh(s)
    if kind == "leaky_relu":
        return np.where(s > 0, s, spec.leaky_slope * s)
    return s


def _activation_grad(spec, s, y, last):
    kind = spec.output if last else spec.hidden
    if kind == "tanh":
        return 1.0 - y * y
    if kind == "leaky_relu":
        return np.where(s > 0, 1.0, spec.leaky_slope)
    return np.ones_like(s)


def forward_cached(spec: MlpSpec, params: np.ndarray, x):
    """Run the net, keeping per-layer inputs and pre-activations for backward."""
    x = np.asarray(x, dtype=params.dtype)
    squeeze = x.ndim == 1
    h = x.reshape(1, -1) if squeeze else x
    if h.shape[1] != spec.in_dim:
        raise ValueError("input has width %d, spec expects %d" % (h.shape[1], spec.in_dim))
    layers = unflatten(spec, params)
    inputs, pres = [], []
    n_last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        inputs.append(h)
        s = h @ w + b
        pres.append(s)
        h = _activate(spec, s, i == n_last)
    y = h[0] if squeeze else h
    return y, (squeeze, inputs, pres)


def forward(spec: MlpSpec, params: np.ndarray, x):
    return forward_cached(spec, params, x)[0]


def backward(spec: MlpSpec, params: np.ndarray, cache, grad_y):
    """Reverse pass; returns (gradient w.r.t. params, gradient w.r.t. input)."""
    squeeze, inputs, pres = cache
    layers = unflatten(spec, params)
    g = np.asarray(grad_y, dtype=params.dtype)
    if squeeze:
        g = g.reshape(1, -1)
    grad_flat = np.empty_like(params)
    # gradient views share grad_flat's memory, so writes land in place
    grads = unflatten(spec, grad_flat)
    n_last = len(layers) - 1
    for i in range(n_last, -1, -1):
        w, _ = layers[i]
        y_i = _activate(spec, pres[i], i == n_last)
        ds = g * _activation_grad(spec, pres[i], y_i, i == n_last)
        gw, gb = grads[i]
        np.matmul(inputs[i].T, ds, out=gw)
        np.sum(ds, axis=0, out=gb)
        g = ds @ w.T
    grad_x = g[0] if squeeze else g
    return grad_flat, grad_x


def actor_forward(spec: MlpSpec, params: np.ndarray, state):
    return forward(spec, params, state)


def critic_forward(spec: MlpSpec, params: np.ndarray, state, action):
    state = np.atleast_2d(np.asarray(state, dtype=params.dtype))
    action = np.atleast_2d(np.asarray(action, dtype=params.dtype))
    q = forward(spec, params, np.concatenate([state, action], axis=1))
    return q[:, 0]


class Sgd:
    """Plain gradient descent, optional momentum."""

    def __init__(self, lr: float, momentum: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self._v = None

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.momentum == 0.0:
            return params - params.dtype.type(self.lr) * grad
        if self._v is None:
            self._v = np.zeros_like(params)
        self._v = self.momentum * self._v + grad
        return params - params.dtype.type(self.lr) * self._v


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = None
        self._v = None
        self._t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self._m is None:
            self._m = np.zeros_like(params)
            self._v = np.zeros_like(params)
        self._t += 1
        self._m = self.beta1 * self._m + (1.0 - self.beta1) * grad
        self._v = self.beta2 * self._v + (1.0 - self.beta2) * grad * grad
        m_hat = self._m / (1.0 - self.beta1 ** self._t)
        v_hat = self._v / (1.0 - self.beta2 ** self._t)
        step = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params - step.astype(params.dtype)


def make_optimizer(name: str, lr: float, momentum: float = 0.0):
    if name == "sgd":
        return Sgd(lr, momentum)
    if name == "adam":
        return Adam(lr)
    raise ValueError("unknown optimizer %r" % (name,))
