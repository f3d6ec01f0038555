"""Fully-connected networks with hand-written backprop, plus Adam."""
import numpy as np


def relu(x):
    return np.maximum(x, 0.0)


class Mlp:
    """Dense network: ReLU on hidden layers, identity on the output layer.

    Inputs are row-major batches of shape (batch, features).
    """

    def __init__(self, sizes, rng, activation="relu", dtype=np.float64):
        self.sizes = tuple(int(s) for s in sizes)
        self.dtype = np.dtype(dtype)
        self.activations = [activation] * (len(self.sizes) - 2) + ["linear"]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(self.dtype))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out).astype(self.dtype))

    @property
    def params(self):
        """Weights and biases interleaved: [W0, b0, W1, b1, ...]."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_params(self, params):
        for i in range(len(self.weights)):
            self.weights[i] = np.asarray(params[2 * i], dtype=self.dtype)
            self.biases[i] = np.asarray(params[2 * i + 1], dtype=self.dtype)

    def copy(self):
        new = object.__new__(Mlp)
        new.sizes = self.sizes
        new.dtype = self.dtype
        new.activations = list(self.activations)
        new.weights = [w.copy() for w in self.weights]
        new.biases = [b.copy() for b in self.biases]
        return new

    def forward(self, x):
        """Return (output, cache) where cache holds the layer inputs."""
        x = np.asarray(x, dtype=self.dtype)
        cache = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else relu(z)
            cache.append(h)
        return h, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dout, need_params=True):
        """Backpropagate ``dout`` (dLoss/dOutput).

        Returns (param_grads, dx). With ``need_params=False`` only the input
        gradient is formed and param_grads is None.
        """
        grads = [None] * (2 * len(self.weights)) if need_params else None
        d = np.asarray(dout, dtype=self.dtype)
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = cache[i]
            if need_params:
                grads[2 * i] = h_in.T @ d
                grads[2 * i + 1] = d.sum(axis=0)
            d = d @ self.weights[i].T
            if i > 0:
                d = d * (cache[i] > 0)
        return grads, d

    def all_finite(self):
        return all(np.all(np.isfinite(p)) for p in self.params)


class Adam:
    """Adam over a fixed list of parameter arrays (updated in place)."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state):
        self.t = int(state["t"])
        self.m = [np.array(a) for a in state["m"]]
        self.v = [np.array(a) for a in state["v"]]
