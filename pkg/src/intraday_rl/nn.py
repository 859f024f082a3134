"""Actor-critic MLP with hand-written reverse-mode gradients and Adam.

The trunk is a stack of dense tanh layers shared by two linear heads: the
Gaussian policy mean and the state value. The policy log-std is a free,
state-independent parameter. Everything runs in float64.

Checkpoints are a directory holding ``params.npz`` (one named array per
parameter) and ``manifest.json`` (layer sizes, activation, seed).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import NoForwardPass, NonFiniteInput, ShapeMismatch

HIDDEN_SIZES = (64, 64, 32)
LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
    "identity": (lambda x: x, lambda y: np.ones_like(y)),
}


def parameter_count(sizes) -> int:
    sizes = list(sizes)
    trunk = sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))
    return trunk + 2 * (sizes[-1] + 1) + 1


def orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


class ActorCritic:
    def __init__(
        self,
        n_inputs: int = 12,
        hidden=HIDDEN_SIZES,
        activation: str = "tanh",
        seed: int = 0,
        log_std_init: float = -0.5,
        head_gain: float = 0.01,
    ):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = [n_inputs, *hidden]
        self.activation = activation
        self.seed = seed
        self._act, self._dact = _ACTIVATIONS[activation]
        rng = np.random.default_rng(seed)
        p = {}
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            p[f"W{i}"] = orthogonal(rng, a, b, np.sqrt(2.0))
            p[f"b{i}"] = np.zeros(b)
        last = self.sizes[-1]
        p["W_mu"] = orthogonal(rng, last, 1, head_gain)
        p["b_mu"] = np.zeros(1)
        p["W_v"] = orthogonal(rng, last, 1, 1.0)
        p["b_v"] = np.zeros(1)
        p["log_std"] = np.full(1, float(log_std_init))
        self.params = p
        self._cache = None

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def log_std(self) -> float:
        return float(self.params["log_std"][0])

    def clamp_log_std(self) -> None:
        np.clip(self.params["log_std"], LOG_STD_MIN, LOG_STD_MAX, out=self.params["log_std"])

    def forward(self, obs: np.ndarray):
        """Return ``(mean, log_std, value)``, each of shape ``(n,)``."""
        x = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        if x.shape[1] != self.sizes[0]:
            raise ShapeMismatch(f"expected {self.sizes[0]} inputs, got {x.shape[1]}")
        if not np.all(np.isfinite(x)):
            raise NonFiniteInput("observation batch contains non-finite values")
        p = self.params
        acts = [x]
        h = x
        for i in range(self.n_layers):
            h = self._act(h @ p[f"W{i}"] + p[f"b{i}"])
            acts.append(h)
        mean = (h @ p["W_mu"] + p["b_mu"])[:, 0]
        value = (h @ p["W_v"] + p["b_v"])[:, 0]
        log_std = np.full(len(x), p["log_std"][0])
        self._cache = acts
        return mean, log_std, value

    def backward(self, d_mean, d_log_std, d_value) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given its partials w.r.t. the last forward outputs."""
        if self._cache is None:
            raise NoForwardPass("backward called before forward")
        acts = self._cache
        p = self.params
        h = acts[-1]
        n = len(h)
        d_mean = np.broadcast_to(np.asarray(d_mean, dtype=np.float64), (n,))
        d_value = np.broadcast_to(np.asarray(d_value, dtype=np.float64), (n,))
        g = {
            "W_mu": h.T @ d_mean[:, None],
            "b_mu": np.array([d_mean.sum()]),
            "W_v": h.T @ d_value[:, None],
            "b_v": np.array([d_value.sum()]),
            "log_std": np.array([np.sum(d_log_std)]),
        }
        dh = d_mean[:, None] @ p["W_mu"].T + d_value[:, None] @ p["W_v"].T
        for i in reversed(range(self.n_layers)):
            dz = dh * self._dact(acts[i + 1])
            g[f"W{i}"] = acts[i].T @ dz
            g[f"b{i}"] = dz.sum(axis=0)
            if i:
                dh = dz @ p[f"W{i}"].T
        return g

    # flat views for gradient checks and snapshots

    def keys(self) -> list[str]:
        return list(self.params)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params.values()])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for k, v in self.params.items():
            self.params[k] = np.asarray(flat[i : i + v.size], dtype=np.float64).reshape(v.shape).copy()
            i += v.size

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_snapshot(self, snap: dict[str, np.ndarray]) -> None:
        for k in self.params:
            if snap[k].shape != self.params[k].shape:
                raise ShapeMismatch(f"parameter {k}: {snap[k].shape} vs {self.params[k].shape}")
        self.params = {k: snap[k].copy() for k in self.params}

    def copy(self) -> "ActorCritic":
        other = object.__new__(ActorCritic)
        other.__dict__.update(self.__dict__)
        other.sizes = list(self.sizes)
        other.params = self.snapshot()
        other._cache = None
        return other

    def manifest(self) -> dict:
        return {
            "sizes": self.sizes,
            "activation": self.activation,
            "seed": self.seed,
            "n_params": self.n_params(),
            "parameters": {k: list(v.shape) for k, v in self.params.items()},
        }

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        np.savez(d / "params.npz", **self.params)
        (d / "manifest.json").write_text(json.dumps(self.manifest(), indent=2))

    @classmethod
    def load(cls, directory: str | Path) -> "ActorCritic":
        d = Path(directory)
        man = json.loads((d / "manifest.json").read_text())
        sizes = man["sizes"]
        net = cls(sizes[0], sizes[1:], man["activation"], man["seed"])
        with np.load(d / "params.npz") as z:
            net.load_snapshot({k: z[k] for k in z.files})
        return net


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """In-place bias-corrected update of ``params``."""
        if grads.keys() != self.m.keys():
            raise ShapeMismatch("gradient keys do not match optimizer state")
        for k, g in grads.items():
            if g.shape != self.m[k].shape or params[k].shape != g.shape:
                raise ShapeMismatch(f"gradient {k} has shape {g.shape}, expected {self.m[k].shape}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}

    def load_state_dict(self, state: dict) -> None:
        self.t = state["t"]
        self.m = {k: v.copy() for k, v in state["m"].items()}
        self.v = {k: v.copy() for k, v in state["v"].items()}
