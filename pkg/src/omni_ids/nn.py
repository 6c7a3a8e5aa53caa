"""Small dense/LSTM network engine in float64 numpy.

Layers cache what their backward pass needs during ``forward``; gradients
are exact (backprop through the full unroll for LSTMs). ``gradient_check``
compares them against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "linear", "softmax", "tanh")


def sigmoid(z):
    """Logistic function via 0.5 * (1 + tanh(z / 2)); no overflow for large |z|."""
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def relu(z):
    return np.maximum(z, 0.0)


def activate(z, activation: str):
    if activation == "relu":
        return relu(z)
    if activation == "sigmoid":
        return sigmoid(z)
    if activation == "linear":
        return np.asarray(z, dtype=np.float64)
    if activation == "softmax":
        return softmax(z)
    if activation == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {activation!r}")


def glorot_uniform(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


# -- dense ----------------------------------------------------------------------

@dataclass
class DenseParams:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)


def dense_forward(params: DenseParams, x, activation: str = "linear"):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.W.shape[1]:
        raise ValueError(f"input has {x.shape[-1]} features, layer expects {params.W.shape[1]}")
    return activate(x @ params.W.T + params.b, activation)


class Dense:
    def __init__(self, n_in: int, n_out: int, activation: str = "linear", rng=None):
        if activation not in ("relu", "sigmoid", "linear", "tanh"):
            raise ValueError(f"unsupported layer activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = DenseParams(glorot_uniform(rng, n_out, n_in), np.zeros(n_out))
        self.activation = activation
        self._cache = None

    @property
    def arrays(self):
        return [self.params.W, self.params.b]

    def forward(self, x):
        out = dense_forward(self.params, x, self.activation)
        self._cache = (x, out)
        return out

    def backward(self, dout):
        x, out = self._cache
        if self.activation == "relu":
            dz = dout * (out > 0)
        elif self.activation == "sigmoid":
            dz = dout * out * (1.0 - out)
        elif self.activation == "tanh":
            dz = dout * (1.0 - out * out)
        else:
            dz = dout
        grads = [dz.T @ x, dz.sum(axis=0)]
        return dz @ self.params.W, grads


# -- LSTM -----------------------------------------------------------------------

GATES = ("f", "i", "o", "c")


@dataclass
class LSTMParams:
    """Gate weights stacked in the order forget, input, output, candidate."""

    W: np.ndarray  # (4H, in)
    U: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    def gate(self, name: str):
        H = self.hidden_size
        k = GATES.index(name)
        sl = slice(k * H, (k + 1) * H)
        return self.W[sl], self.U[sl], self.b[sl]


@dataclass
class LSTMState:
    h: np.ndarray
    c: np.ndarray


def init_lstm_params(n_in: int, hidden: int, rng, forget_bias: float = 1.0) -> LSTMParams:
    W = np.concatenate([glorot_uniform(rng, hidden, n_in) for _ in GATES])
    U = np.concatenate([glorot_uniform(rng, hidden, hidden) for _ in GATES])
    b = np.zeros(4 * hidden)
    b[:hidden] = forget_bias
    return LSTMParams(W, U, b)


def _lstm_gates(params: LSTMParams, x, h_prev):
    H = params.hidden_size
    a = x @ params.W.T + h_prev @ params.U.T + params.b
    s = sigmoid(a[..., :3 * H])
    return s[..., :H], s[..., H:2 * H], s[..., 2 * H:], np.tanh(a[..., 3 * H:])


def lstm_cell(params: LSTMParams, x_t, prev: LSTMState) -> LSTMState:
    """One step: c = f*c_prev + i*tanh(.), h = o*tanh(c)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape[-1] != params.W.shape[1] or prev.h.shape[-1] != params.hidden_size:
        raise ValueError("lstm_cell: input or state shape does not match parameters")
    f, i, o, g = _lstm_gates(params, x_t, prev.h)
    c = f * prev.c + i * g
    return LSTMState(o * np.tanh(c), c)


class LSTMLayer:
    def __init__(self, n_in: int, hidden: int, rng=None, forget_bias: float = 1.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = init_lstm_params(n_in, hidden, rng, forget_bias)
        self._cache = None

    @property
    def arrays(self):
        return [self.params.W, self.params.U, self.params.b]

    def forward(self, X):
        """X: (batch, T, in) -> hidden states (batch, T, H), zero initial state."""
        p = self.params
        B, T, _ = X.shape
        H = p.hidden_size
        # time-major internally so each step touches contiguous memory
        Xt = np.ascontiguousarray(np.swapaxes(X, 0, 1), dtype=np.float64)
        hs = np.zeros((T + 1, B, H))
        cs = np.zeros((T + 1, B, H))
        gates = Xt @ p.W.T + p.b
        UT = p.U.T
        for t in range(T):
            a = gates[t]
            a += hs[t] @ UT
            a[:, :3 * H] = sigmoid(a[:, :3 * H])
            np.tanh(a[:, 3 * H:], out=a[:, 3 * H:])
            np.multiply(a[:, :H], cs[t], out=cs[t + 1])
            cs[t + 1] += a[:, H:2 * H] * a[:, 3 * H:]
            np.multiply(a[:, 2 * H:3 * H], np.tanh(cs[t + 1]), out=hs[t + 1])
        self._cache = (Xt, hs, cs, gates)
        return np.swapaxes(hs[1:], 0, 1)

    def backward(self, dH):
        Xt, hs, cs, gates = self._cache
        p = self.params
        T, B, _ = Xt.shape
        H = p.hidden_size
        dHt = np.swapaxes(dH, 0, 1)
        dA = np.empty((T, B, 4 * H))  # pre-activation gradients per step
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        tcs = np.tanh(cs[1:])
        for t in reversed(range(T)):
            a = gates[t]
            f, i, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
            tc = tcs[t]
            dh = dHt[t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            da = dA[t]
            da[:, :H] = dc * cs[t] * f * (1.0 - f)
            da[:, H:2 * H] = dc * g * i * (1.0 - i)
            da[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
            da[:, 3 * H:] = dc * i * (1.0 - g * g)
            dh_next = da @ p.U
            dc_next = dc * f
        dA2 = dA.reshape(T * B, 4 * H)
        dW = dA2.T @ Xt.reshape(T * B, -1)
        dU = dA2.T @ hs[:-1].reshape(T * B, H)
        db = dA2.sum(axis=0)
        dX = np.swapaxes(dA @ p.W, 0, 1)
        return dX, [dW, dU, db]


# -- losses ---------------------------------------------------------------------

def _as_labels(y, n_classes):
    y = np.asarray(y)
    if y.ndim == 2:
        if y.shape[1] != n_classes or not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
            raise ValueError("targets must be one-hot rows")
        return y.argmax(axis=1)
    if y.ndim == 1 and (y.min(initial=0) < 0 or y.max(initial=0) >= n_classes):
        raise ValueError("class index out of range")
    return y.astype(np.intp)


def softmax_cross_entropy(logits, y) -> float:
    """Mean of -log softmax(logits)[true class].

    ``y`` with the same rank as ``logits`` is one-hot; one rank lower holds
    class indices.
    """
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y)
    if y.ndim == logits.ndim:
        y = np.atleast_2d(y)
    elif y.ndim == logits.ndim - 1:
        y = np.atleast_1d(y)
    else:
        raise ValueError("targets must be one-hot or class indices")
    logits = np.atleast_2d(logits)
    if logits.shape[1] < 2:
        raise ValueError("softmax cross entropy needs at least 2 classes")
    labels = _as_labels(y, logits.shape[1])
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(logz - shifted[np.arange(len(labels)), labels]))


def softmax_cross_entropy_grad(logits, labels):
    """Mean loss and its gradient w.r.t. logits for integer labels."""
    p = softmax(logits)
    n = logits.shape[0]
    loss = -np.mean(np.log(np.maximum(p[np.arange(n), labels], 1e-300)))
    d = p.copy()
    d[np.arange(n), labels] -= 1.0
    return float(loss), d / n


def binary_cross_entropy(p, y, eps: float = 1e-12) -> float:
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def sigmoid_cross_entropy_grad(z, y):
    """Binary cross entropy on logits ``z`` (stable form) and d loss / d z."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    loss = np.mean(np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z))))
    return float(loss), ((sigmoid(z) - y) / z.shape[0])[:, None]


# -- networks -------------------------------------------------------------------

class _Network:
    """Shared plumbing: the output layer emits logits, the loss is picked by width."""

    n_outputs: int

    @property
    def arrays(self):
        raise NotImplementedError

    def forward(self, X):
        raise NotImplementedError

    def _backward(self, dlogits):
        raise NotImplementedError

    def loss_from_logits(self, logits, y):
        if self.n_outputs == 1:
            return sigmoid_cross_entropy_grad(logits, y)
        return softmax_cross_entropy_grad(logits, np.asarray(y, dtype=np.intp))

    def loss(self, X, y) -> float:
        return self.loss_from_logits(self.forward(X), y)[0]

    def loss_and_grad(self, X, y):
        """Mean batch loss and gradients aligned with :attr:`arrays`."""
        loss, dlogits = self.loss_from_logits(self.forward(X), y)
        return loss, self._backward(dlogits)

    def proba(self, X):
        logits = self.forward(X)
        if self.n_outputs == 1:
            p = sigmoid(logits[:, 0])
            return np.column_stack([1.0 - p, p])
        return softmax(logits)

    def get_weights(self):
        return [a.copy() for a in self.arrays]

    def set_weights(self, arrays):
        for dst, src in zip(self.arrays, arrays, strict=True):
            if dst.shape != np.shape(src):
                raise ValueError(f"weight shape {np.shape(src)} != {dst.shape}")
            dst[...] = src


class MLP(_Network):
    """Dense stack: ``hidden_layers`` activated layers then a linear output.

    The output weights are shrunk by ``output_scale`` so an untrained net
    starts near uniform class probabilities.
    """

    def __init__(self, n_in, n_outputs, hidden_layers=(64,), activation="relu", rng=None,
                 output_scale=0.1):
        rng = rng if rng is not None else np.random.default_rng(0)
        sizes = [n_in, *hidden_layers]
        self.layers = [Dense(a, b, activation, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.layers.append(Dense(sizes[-1], n_outputs, "linear", rng))
        self.layers[-1].params.W *= output_scale
        self.n_outputs = n_outputs

    @property
    def arrays(self):
        return [a for layer in self.layers for a in layer.arrays]

    def forward(self, X):
        out = np.asarray(X, dtype=np.float64)
        for layer in self.layers:
            out = layer.forward(out)
        return out

    def _backward(self, dlogits):
        grads = []
        d = dlogits
        for layer in reversed(self.layers):
            d, g = layer.backward(d)
            grads = g + grads
        return grads


class LSTMNet(_Network):
    """Stacked LSTM layers; a dense head reads the last layer's final hidden state."""

    def __init__(self, n_in, n_outputs, hidden_size=10, n_layers=2, rng=None, forget_bias=1.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        sizes = [n_in] + [hidden_size] * n_layers
        self.lstms = [LSTMLayer(a, b, rng, forget_bias) for a, b in zip(sizes[:-1], sizes[1:])]
        self.head = Dense(hidden_size, n_outputs, "linear", rng)
        self.n_outputs = n_outputs

    @property
    def arrays(self):
        return [a for layer in self.lstms for a in layer.arrays] + self.head.arrays

    def forward(self, X):
        out = np.asarray(X, dtype=np.float64)
        if out.ndim != 3:
            raise ValueError(f"expected (batch, T, features) input, got shape {out.shape}")
        for layer in self.lstms:
            out = layer.forward(out)
        self._T = out.shape[1]
        return self.head.forward(out[:, -1])

    def _backward(self, dlogits):
        d_last, grads = self.head.backward(dlogits)
        dH = np.zeros(d_last.shape[:1] + (self._T,) + d_last.shape[1:])
        dH[:, -1] = d_last
        for layer in reversed(self.lstms):
            dH, g = layer.backward(dH)
            grads = g + grads
        return grads


def backward(network: _Network, X, y):
    """Gradients of the mean batch loss for every parameter array."""
    return network.loss_and_grad(X, y)[1]


# -- optimisation ---------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adam_step(params, grads, state: AdamState):
    """In-place bias-corrected Adam update of ``params``; returns (params, state)."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v, strict=True):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


# -- verification ---------------------------------------------------------------

@dataclass
class GradCheck:
    max_rel_error: float
    worst: tuple = field(default=())


def gradient_check(network: _Network, X, y, h: float = 1e-5, floor: float = 1e-6) -> GradCheck:
    """Compare analytic gradients with central differences on every parameter.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``. With ``h = 1e-5``
    the difference quotient carries round-off near 1e-11, so gradients
    smaller than ``floor`` are compared on an absolute scale.
    """
    _, grads = network.loss_and_grad(X, y)
    grads = [g.copy() for g in grads]
    worst = 0.0
    where = ()
    for k, (p, g) in enumerate(zip(network.arrays, grads)):
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            up = network.loss(X, y)
            p[idx] = orig - h
            down = network.loss(X, y)
            p[idx] = orig
            num = (up - down) / (2 * h)
            rel = abs(g[idx] - num) / max(abs(g[idx]), abs(num), floor)
            if rel > worst:
                worst, where = rel, (k, idx, g[idx], num)
    return GradCheck(worst, where)
