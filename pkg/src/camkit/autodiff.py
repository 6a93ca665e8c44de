"""Reverse-mode gradients of class scores with respect to layer activations.

``forward_to`` evaluates a model while caching every layer output plus the
maxpool routing indices; ``grad_score_wrt_activation`` then walks the tail
(the layers after the visualized activation) backwards.  The tail is
piecewise linear (relu, maxpool, linear, conv, gap, flatten), so all higher
derivatives of the raw score vanish almost everywhere; treating the class
output as ``exp(score)`` gives the closed forms in ``higher_order_maps``.

A visualized layer is taken after its immediately following relu record, if
any, so the differentiated activations are the nonnegative feature maps a
user actually sees.  Scores are pre-softmax logits throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model_format import Model
from .tensor_ops import (
    conv2d,
    conv2d_backward_data,
    global_avg_pool,
    linear,
    maxpool2d_backward,
    maxpool2d_with_indices,
    relu,
)

__all__ = [
    "ForwardTrace",
    "DerivativeMaps",
    "forward_to",
    "infer",
    "run_tail",
    "grad_score_wrt_activation",
    "higher_order_maps",
    "finite_diff_grad",
    "finite_diff_exp_maps",
]


@dataclass(frozen=True)
class ForwardTrace:
    """Immutable record of one forward pass.

    ``outputs[i]`` is the output of layer ``i``; ``pool_indices`` maps a
    maxpool layer name to its argmax routing table.  ``scores`` are the
    final logits and ``prebias_scores`` the same vector before the last
    linear layer's bias was added (equal to ``scores`` when the model does
    not end in a linear layer).  ``target_index`` points at the layer whose
    output is the visualized activation map.
    """

    layer_name: str
    target_index: int
    input: np.ndarray
    outputs: tuple[np.ndarray, ...]
    pool_indices: dict[str, np.ndarray]
    scores: np.ndarray
    prebias_scores: np.ndarray

    @property
    def target_activations(self) -> np.ndarray:
        return self.outputs[self.target_index]


def _apply_layer(model: Model, index: int, x: np.ndarray, pool_indices: dict | None = None):
    rec = model.layers[index]
    if rec.kind == "conv":
        w, b = model.weights[rec.name]
        return conv2d(x, w, b, rec.conv_spec())
    if rec.kind == "relu":
        return relu(x)
    if rec.kind == "maxpool":
        out, idx = maxpool2d_with_indices(x, rec.params["window"], rec.params["stride"])
        if pool_indices is not None:
            pool_indices[rec.name] = idx
        return out
    if rec.kind == "flatten":
        return x.reshape(-1)
    if rec.kind == "linear":
        w, b = model.weights[rec.name]
        return linear(x, w, b)
    if rec.kind == "gap":
        return global_avg_pool(x)
    raise AssertionError(f"unhandled layer kind {rec.kind!r}")


def resolve_target_index(model: Model, layer_name: str) -> int:
    """Index of the activation to visualize; absorbs a following relu."""
    idx = model.layer_index(layer_name)
    if idx + 1 < len(model.layers) and model.layers[idx + 1].kind == "relu":
        idx += 1
    return idx


def forward_to(model: Model, input: np.ndarray, layer_name: str) -> ForwardTrace:
    """Run the model on ``input``, caching activations for ``layer_name``.

    The trace keeps every layer output so the gradient pass can gate relus
    and route maxpools from cached values.  Unknown layer names are rejected
    with the list of valid names.
    """
    target = resolve_target_index(model, layer_name)
    spec = model.input_spec
    expected = (spec.channels, spec.height, spec.width)
    x = np.asarray(input, dtype=np.float64)
    if x.shape != expected:
        raise ValueError(f"input shape {x.shape} does not match model input {expected}")

    pool_indices: dict[str, np.ndarray] = {}
    outputs = []
    cur = x
    for i in range(len(model.layers)):
        cur = _apply_layer(model, i, cur, pool_indices)
        outputs.append(cur)

    scores = outputs[-1]
    last = model.layers[-1]
    if last.kind == "linear":
        # Recompute the head matmul without its bias; subtracting the bias
        # from the scores instead would round differently and make the
        # pre-bias vector depend on the bias values.
        head_in = outputs[-2] if len(outputs) > 1 else x
        prebias = model.weights[last.name][0] @ head_in
    else:
        prebias = scores
    return ForwardTrace(
        layer_name=layer_name,
        target_index=target,
        input=x,
        outputs=tuple(outputs),
        pool_indices=pool_indices,
        scores=scores,
        prebias_scores=prebias,
    )


def infer(model: Model, input: np.ndarray) -> np.ndarray:
    """Plain inference: the final class-score vector."""
    return forward_to(model, input, model.layers[-1].name).scores


def run_tail(model: Model, start_index: int, activation: np.ndarray) -> np.ndarray:
    """Recompute the scores from a (possibly perturbed) activation of layer
    ``start_index``, re-running only the tail."""
    cur = np.asarray(activation, dtype=np.float64)
    for i in range(start_index + 1, len(model.layers)):
        cur = _apply_layer(model, i, cur)
    return cur


def grad_score_wrt_activation(trace: ForwardTrace, model: Model, class_c: int) -> np.ndarray:
    """Reverse-mode gradient of logit ``class_c`` w.r.t. the traced activations.

    Walks the tail backwards: relu gates by the cached output sign, maxpool
    routes along the cached argmax, linear and conv transpose-propagate, gap
    spreads uniformly.
    """
    n_classes = trace.scores.shape[0]
    if not 0 <= class_c < n_classes:
        raise ValueError(f"class index {class_c} out of range [0, {n_classes})")

    grad = np.zeros(n_classes)
    grad[class_c] = 1.0
    for i in range(len(model.layers) - 1, trace.target_index, -1):
        rec = model.layers[i]
        layer_in = trace.outputs[i - 1] if i > 0 else trace.input
        if rec.kind == "linear":
            w, _ = model.weights[rec.name]
            grad = w.T @ grad
        elif rec.kind == "flatten":
            grad = grad.reshape(layer_in.shape)
        elif rec.kind == "relu":
            grad = grad * (trace.outputs[i] > 0)
        elif rec.kind == "maxpool":
            grad = maxpool2d_backward(
                grad,
                trace.pool_indices[rec.name],
                layer_in.shape,
                rec.params["window"],
                rec.params["stride"],
            )
        elif rec.kind == "conv":
            w, _ = model.weights[rec.name]
            grad = conv2d_backward_data(grad, w, layer_in.shape, rec.conv_spec())
        elif rec.kind == "gap":
            k, h, w_ = layer_in.shape
            grad = np.broadcast_to((grad / (h * w_))[:, None, None], (k, h, w_)).copy()
        else:
            raise AssertionError(f"unhandled layer kind {rec.kind!r}")
    return grad


@dataclass(frozen=True)
class DerivativeMaps:
    """First, second and third order derivative maps of exp(score).

    With ``y = exp(s)`` and a piecewise-linear tail, the m-th derivative of
    y w.r.t. any activation entry is ``exp(s) * g**m`` where g is the plain
    score gradient.  All three maps share one shape; d2 is nonnegative and
    d3 carries the sign of d1 wherever d1 is nonzero.
    """

    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray
    score: float


def higher_order_maps(g: np.ndarray, score: float, shift: float = 0.0) -> DerivativeMaps:
    """Closed-form derivative maps of ``exp(score)`` from the score gradient.

    ``shift`` is subtracted inside the exponential for overflow safety
    (callers typically pass the maximum score); it scales all three maps by
    the same positive constant, which cancels downstream in the importance
    ratios and the final map normalization.
    """
    e = float(np.exp(score - shift))
    g = np.asarray(g, dtype=np.float64)
    g2 = g * g
    return DerivativeMaps(d1=e * g, d2=e * g2, d3=e * g2 * g, score=float(score))


def finite_diff_grad(
    model: Model, input: np.ndarray, layer_name: str, class_c: int, h: float = 1e-4
) -> np.ndarray:
    """Central-difference gradient oracle, re-running only the tail."""
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    trace = forward_to(model, input, layer_name)
    a = trace.target_activations
    start = trace.target_index
    grad = np.zeros_like(a)
    for idx in np.ndindex(a.shape):
        ap = a.copy(); ap[idx] += h
        am = a.copy(); am[idx] -= h
        sp = run_tail(model, start, ap)[class_c]
        sm = run_tail(model, start, am)[class_c]
        grad[idx] = (sp - sm) / (2.0 * h)
    return grad


def finite_diff_exp_maps(
    model: Model,
    input: np.ndarray,
    layer_name: str,
    class_c: int,
    h: float = 1e-3,
    shift: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Finite-difference 2nd and 3rd derivatives of exp(score - shift).

    Used by the gradcheck harness to validate the closed forms in
    ``higher_order_maps``.  ``shift`` defaults to the maximum score at the
    unperturbed point so the stencil never overflows.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    trace = forward_to(model, input, layer_name)
    a = trace.target_activations
    start = trace.target_index
    if shift is None:
        shift = float(trace.scores.max())

    def f(act: np.ndarray) -> float:
        return float(np.exp(run_tail(model, start, act)[class_c] - shift))

    f0 = f(a)
    d2 = np.zeros_like(a)
    d3 = np.zeros_like(a)
    for idx in np.ndindex(a.shape):
        vals = {}
        for mult in (-2, -1, 1, 2):
            ap = a.copy()
            ap[idx] += mult * h
            vals[mult] = f(ap)
        d2[idx] = (vals[1] - 2.0 * f0 + vals[-1]) / (h * h)
        d3[idx] = (vals[2] - 2.0 * vals[1] + 2.0 * vals[-1] - vals[-2]) / (2.0 * h ** 3)
    return d2, d3
