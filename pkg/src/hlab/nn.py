"""Small dense networks in numpy with exact gradients.

Everything the trainer and the analysis need from a network lives here:
forward evaluation, reverse-mode gradients with respect to parameters and
inputs, a forward-accumulated input Jacobian, Adam/SGD steps guarded by
global-norm clipping, and Polyak target updates. float64 throughout.

A network is a list of (W, b) layers. Hidden layers use ReLU; the head is
either linear (value heads) or softmax (action heads). Softmax outputs are
differentiated through the full Jacobian S = diag(p) - p p^T, not just the
diagonal.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Literal, Sequence

import numpy as np

Head = Literal["linear", "softmax"]


class TrainingDiverged(RuntimeError):
    """Raised when a gradient or parameter stops being finite."""


@dataclass
class MlpParams:
    weights: list[np.ndarray]  # layer l: (fan_out, fan_in)
    biases: list[np.ndarray]  # layer l: (fan_out,)
    head: Head = "linear"

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.head)

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases)
                               for a in pair])

    def assign_flat(self, flat: np.ndarray) -> None:
        need = sum(w.size + b.size for w, b in zip(self.weights, self.biases))
        if flat.size != need:
            raise ValueError(f"flat vector has {flat.size} entries, "
                             f"network needs {need}")
        k = 0
        for w, b in zip(self.weights, self.biases):
            w[...] = flat[k:k + w.size].reshape(w.shape)
            k += w.size
            b[...] = flat[k:k + b.size]
            k += b.size

    def to_json_dict(self) -> dict:
        return {
            "head": self.head,
            "layers": [
                {"w": w.tolist(), "b": b.tolist()}
                for w, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "MlpParams":
        weights = [np.array(layer["w"], dtype=float) for layer in doc["layers"]]
        biases = [np.array(layer["b"], dtype=float) for layer in doc["layers"]]
        return cls(weights, biases, doc["head"])


def init_params(in_dim: int, hidden: Sequence[int], out_dim: int, head: Head,
                rng: np.random.Generator) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    dims = [in_dim, *hidden, out_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights, biases, head)


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params: MlpParams, x: np.ndarray,
            return_cache: bool = False):
    """Evaluate the network on a vector (in_dim,) or a batch (m, in_dim).

    With return_cache=True also returns the per-layer pre-activations and
    activations needed by the backward passes.
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x.reshape(1, -1) if squeeze else x
    if h.shape[1] != params.in_dim:
        raise ValueError(f"input dim {h.shape[1]} does not match network "
                         f"in_dim {params.in_dim}")
    acts = [h]
    pre = []
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        pre.append(z)
        if l < params.n_layers - 1:
            h = np.maximum(z, 0.0)
        elif params.head == "softmax":
            h = _softmax(z)
        else:
            h = z
        acts.append(h)
    out = h[0] if squeeze else h
    if return_cache:
        return out, (acts, pre, squeeze)
    return out


def _head_vjp(params: MlpParams, upstream: np.ndarray, out: np.ndarray,
              z_last: np.ndarray) -> np.ndarray:
    """Pull upstream cotangent back through the head nonlinearity."""
    del z_last
    if params.head == "softmax":
        # g_z = S^T u with S = diag(p) - p p^T (symmetric)
        dot = (upstream * out).sum(axis=-1, keepdims=True)
        return out * (upstream - dot)
    return upstream


def backward_params(params: MlpParams, x: np.ndarray,
                    upstream: np.ndarray) -> "MlpParams":
    """Gradient of sum_batch <upstream, f(x)> w.r.t. every weight and bias.

    upstream has the same shape as forward(params, x); batch rows are summed,
    matching the mean-loss convention when the caller pre-divides by m.
    """
    out, (acts, pre, squeeze) = forward(params, x, return_cache=True)
    u = np.asarray(upstream, dtype=float)
    if squeeze:
        u = u.reshape(1, -1)
        out = out.reshape(1, -1)
    g = _head_vjp(params, u, out, pre[-1])
    grads_w: list[np.ndarray] = [None] * params.n_layers  # type: ignore
    grads_b: list[np.ndarray] = [None] * params.n_layers  # type: ignore
    for l in range(params.n_layers - 1, -1, -1):
        grads_w[l] = g.T @ acts[l]
        grads_b[l] = g.sum(axis=0)
        if l > 0:
            g = (g @ params.weights[l]) * (pre[l - 1] > 0.0)
    return MlpParams(grads_w, grads_b, params.head)


def input_gradient(params: MlpParams, x: np.ndarray,
                   upstream: np.ndarray) -> np.ndarray:
    """Gradient of <upstream, f(x)> w.r.t. x; batched rows stay independent."""
    out, (acts, pre, squeeze) = forward(params, x, return_cache=True)
    u = np.asarray(upstream, dtype=float)
    if squeeze:
        u = u.reshape(1, -1)
        out = out.reshape(1, -1)
    g = _head_vjp(params, u, out, pre[-1])
    for l in range(params.n_layers - 1, 0, -1):
        g = (g @ params.weights[l]) * (pre[l - 1] > 0.0)
    g = g @ params.weights[0]
    return g[0] if squeeze else g


def input_jacobian(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Exact Jacobian df/dx at a single input, shape (out_dim, in_dim).

    Forward accumulation: push the identity through each layer's linear map
    and activation derivative, then through the head's Jacobian.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("input_jacobian expects a single input vector")
    out, (acts, pre, _sq) = forward(params, x, return_cache=True)
    jac = np.eye(params.in_dim)
    for l in range(params.n_layers):
        jac = params.weights[l] @ jac
        if l < params.n_layers - 1:
            jac = jac * (pre[l][0] > 0.0)[:, None]
    if params.head == "softmax":
        p = out
        jac = (np.diag(p) - np.outer(p, p)) @ jac
    return jac


# ---------------------------------------------------------------------------
# Optimization

@dataclass
class OptimizerState:
    """Adam moments (or bare SGD when algo='sgd')."""

    algo: Literal["adam", "sgd"] = "adam"
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: MlpParams, lr: float,
                   algo: Literal["adam", "sgd"] = "adam") -> "OptimizerState":
        blanks = [np.zeros_like(a) for pair in zip(params.weights, params.biases)
                  for a in pair]
        return cls(algo=algo, lr=lr,
                   m=[b.copy() for b in blanks], v=blanks)


def global_norm(grads: MlpParams) -> float:
    total = 0.0
    for w, b in zip(grads.weights, grads.biases):
        total += float(np.sum(w * w)) + float(np.sum(b * b))
    return float(np.sqrt(total))


def clip_and_apply(params: MlpParams, grads: MlpParams, opt: OptimizerState,
                   max_grad_norm: float = 0.5) -> float:
    """Scale grads to global norm <= max_grad_norm, take one descent step.

    Returns the pre-clip global norm. Raises TrainingDiverged if gradients or
    the updated parameters are not finite.
    """
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise TrainingDiverged(f"gradient norm is {norm}")
    scale = 1.0
    if max_grad_norm > 0 and norm > max_grad_norm:
        scale = max_grad_norm / norm
    flat_pairs = list(zip(grads.weights, grads.biases))
    arrays = [a for pair in flat_pairs for a in pair]
    targets = [a for pair in zip(params.weights, params.biases) for a in pair]
    if opt.algo == "adam":
        opt.t += 1
        bc1 = 1.0 - opt.beta1 ** opt.t
        bc2 = 1.0 - opt.beta2 ** opt.t
        for g, m, v, p in zip(arrays, opt.m, opt.v, targets):
            gs = g * scale
            m[...] = opt.beta1 * m + (1.0 - opt.beta1) * gs
            v[...] = opt.beta2 * v + (1.0 - opt.beta2) * gs * gs
            p -= opt.lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
    else:
        for g, p in zip(arrays, targets):
            p -= opt.lr * g * scale
    for p in targets:
        if not np.all(np.isfinite(p)):
            raise TrainingDiverged("parameters left the finite range")
    return norm


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> None:
    """Polyak step: target <- tau * online + (1 - tau) * target, in place."""
    for tw, ow in zip(target.weights, online.weights):
        tw *= 1.0 - tau
        tw += tau * ow
    for tb, ob in zip(target.biases, online.biases):
        tb *= 1.0 - tau
        tb += tau * ob


def params_to_json(params: MlpParams, fp: IO[str] | None = None) -> str:
    text = json.dumps(params.to_json_dict())
    if fp is not None:
        fp.write(text)
    return text


def params_from_json(text_or_fp) -> MlpParams:
    if hasattr(text_or_fp, "read"):
        doc = json.load(text_or_fp)
    else:
        doc = json.loads(text_or_fp)
    return MlpParams.from_json_dict(doc)
