"""Four-layer perceptron with exact gradients of the grouped L1 loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from quadplan.surrogate.features import TARGET_GROUPS

HIDDEN = (32, 128, 128)
ACTIVATIONS = ("softsign", "softsign", "relu", "linear")


def softsign(a):
    return a / (1.0 + np.abs(a))


def _act(name, a):
    if name == "softsign":
        return softsign(a)
    if name == "relu":
        return np.maximum(a, 0.0)
    return a


def _act_grad(name, a):
    if name == "softsign":
        d = 1.0 + np.abs(a)
        return 1.0 / (d * d)
    if name == "relu":
        return (a > 0.0).astype(a.dtype)
    return np.ones_like(a)


@dataclass(eq=False)
class MlpParams:
    weights: list
    biases: list
    m_w: list = field(default_factory=list)
    v_w: list = field(default_factory=list)
    m_b: list = field(default_factory=list)
    v_b: list = field(default_factory=list)
    step: int = 0

    def __post_init__(self):
        if not self.m_w:
            self.m_w = [np.zeros_like(w) for w in self.weights]
            self.v_w = [np.zeros_like(w) for w in self.weights]
            self.m_b = [np.zeros_like(b) for b in self.biases]
            self.v_b = [np.zeros_like(b) for b in self.biases]
        for k in range(len(self.weights) - 1):
            if self.weights[k].shape[1] != self.weights[k + 1].shape[0]:
                raise ValueError(f"layer {k} output does not match layer {k + 1} input")

    @property
    def shapes(self):
        return [w.shape for w in self.weights]

    def copy(self) -> "MlpParams":
        def cp(xs):
            return [x.copy() for x in xs]
        return MlpParams(cp(self.weights), cp(self.biases), cp(self.m_w), cp(self.v_w),
                         cp(self.m_b), cp(self.v_b), self.step)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


def init_params(n_in: int, n_out: int = 15, rng: np.random.Generator | None = None,
                hidden=HIDDEN) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    rng = rng if rng is not None else np.random.default_rng(0)
    dims = (n_in, *hidden, n_out)
    ws, bs = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        lim = np.sqrt(6.0 / (a + b))
        ws.append(rng.uniform(-lim, lim, size=(a, b)))
        bs.append(np.zeros(b))
    return MlpParams(ws, bs)


def mlp_forward(params: MlpParams, x):
    """Outputs for a single row (n_in,) or a batch (B, n_in), plus the cache."""
    h = np.asarray(x, dtype=float)
    pre, post = [], [h]
    for w, b, name in zip(params.weights, params.biases, ACTIVATIONS):
        a = h @ w + b
        h = _act(name, a)
        pre.append(a)
        post.append(h)
    return h, (pre, post)


def group_l1(y, target):
    """Sum over target groups of the mean absolute error within each group."""
    r = np.atleast_2d(y) - np.atleast_2d(target)
    return float(sum(np.abs(r[:, s]).mean() for _, s in TARGET_GROUPS))


def group_l1_parts(y, target) -> dict:
    r = np.atleast_2d(y) - np.atleast_2d(target)
    return {name: float(np.abs(r[:, s]).mean()) for name, s in TARGET_GROUPS}


def mlp_backward(params: MlpParams, x, target, cache=None):
    """Loss and exact (sub)gradients ``(loss, dW list, db list)``.

    The subgradient of ``|r|`` at ``r = 0`` is taken as 0.
    """
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    t2 = np.atleast_2d(np.asarray(target, dtype=float))
    if cache is None:
        y, (pre, post) = mlp_forward(params, x2)
    else:
        pre, post = cache
        y = post[-1]
    y = np.atleast_2d(y)
    bsz = y.shape[0]
    r = y - t2
    g = np.zeros_like(r)
    for _, s in TARGET_GROUPS:
        width = s.stop - s.start
        g[:, s] = np.sign(r[:, s]) / (bsz * width)
    loss = group_l1(y, t2)
    dws = [None] * len(params.weights)
    dbs = [None] * len(params.weights)
    delta = g
    for k in range(len(params.weights) - 1, -1, -1):
        delta = delta * _act_grad(ACTIVATIONS[k], np.atleast_2d(pre[k]))
        dws[k] = np.atleast_2d(post[k]).T @ delta
        dbs[k] = delta.sum(axis=0)
        if k:
            delta = delta @ params.weights[k].T
    return loss, dws, dbs


def adam_step(params: MlpParams, dws, dbs, lr=1e-4, weight_decay=1e-4, beta1=0.9, beta2=0.999,
              eps=1e-8) -> None:
    """In-place Adam update with decoupled weight decay on weights and biases."""
    params.step += 1
    t = params.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    shrink = 1.0 - lr * weight_decay
    for ps, ms, vs, gs in ((params.weights, params.m_w, params.v_w, dws),
                           (params.biases, params.m_b, params.v_b, dbs)):
        for p, m, v, g in zip(ps, ms, vs, gs):
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            p *= shrink
            p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
