"""Object attention: score each detected object, softmax-normalize, and hand
the argmax object's weighted feature to the policy.

The argmax is hard (no gradient through the index); gradients still reach the
selector and the per-object encoder through the weighted feature o.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import DenseNet, softmax

FEATURE_DIM = 6  # bbox (4) + depth (1) + score (1)
ENCODED_DIM = 6
OUTPUT_DIM = 12  # g_m * w_m (6) + raw feature of m (6)


class NoDetection(Exception):
    """Raised when attend() is called with no object features."""


@dataclass
class AttentionParams:
    fc: DenseNet  # 6 -> 6, ReLU
    selector: DenseNet  # 12 -> 1, linear

    @staticmethod
    def init(rng) -> "AttentionParams":
        return AttentionParams(DenseNet([FEATURE_DIM, ENCODED_DIM], ["relu"], rng),
                               DenseNet([2 * ENCODED_DIM, 1], ["none"], rng))

    def params(self):
        return self.fc.params() + self.selector.params()


@dataclass
class AttentionOutput:
    o: np.ndarray  # 12-vector for the policy
    m: int  # attended object index
    weights: np.ndarray  # per-object softmax scores
    cache: tuple  # forward cache for attend_backward


def attend(features, params: AttentionParams) -> AttentionOutput:
    """Encode each feature, pool, score, softmax, pick the argmax object."""
    if len(features) == 0:
        raise NoDetection("attend() requires at least one object feature")
    xs = [f.vector if hasattr(f, "vector") else np.asarray(f, dtype=np.float64)
          for f in features]
    gs, fc_caches = [], []
    for x in xs:
        g, c = params.fc.forward(x)
        gs.append(g)
        fc_caches.append(c)
    g_global = np.mean(gs, axis=0)
    scores, sel_caches = [], []
    for g in gs:
        s, c = params.selector.forward(np.concatenate([g, g_global]))
        scores.append(s[0])
        sel_caches.append(c)
    weights = softmax(scores)
    m = int(np.argmax(weights))
    o = np.concatenate([gs[m] * weights[m], xs[m]])
    cache = (xs, gs, g_global, weights, m, fc_caches, sel_caches)
    return AttentionOutput(o, m, weights, cache)


def attend_backward(output: AttentionOutput, d_o, params: AttentionParams):
    """Gradients of a scalar loss (with upstream d_o) w.r.t. attention
    parameters and the input features.

    Returns (param grads aligned with params.params(), list of per-feature
    gradients)."""
    xs, gs, g_global, weights, m, fc_caches, sel_caches = output.cache
    k = len(xs)
    d_o = np.asarray(d_o, dtype=np.float64)
    d_gs = [np.zeros(ENCODED_DIM) for _ in range(k)]
    d_xs = [np.zeros(FEATURE_DIM) for _ in range(k)]

    # o = concat(g_m * w_m, x_m)
    d_gs[m] += d_o[:ENCODED_DIM] * weights[m]
    d_xs[m] += d_o[ENCODED_DIM:]
    d_weights = np.zeros(k)
    d_weights[m] = float(d_o[:ENCODED_DIM] @ gs[m])

    # softmax backward
    d_scores = weights * (d_weights - float(d_weights @ weights))

    # selector backward
    sel_grads = [np.zeros_like(p) for p in params.selector.params()]
    d_g_global = np.zeros(ENCODED_DIM)
    for i in range(k):
        g_i, d_in = params.selector.backward(sel_caches[i], np.array([d_scores[i]]))
        for acc, g in zip(sel_grads, g_i):
            acc += g
        d_gs[i] += d_in[:ENCODED_DIM]
        d_g_global += d_in[ENCODED_DIM:]

    # meanpool backward
    for i in range(k):
        d_gs[i] += d_g_global / k

    # per-object encoder backward
    fc_grads = [np.zeros_like(p) for p in params.fc.params()]
    for i in range(k):
        g_i, d_x = params.fc.backward(fc_caches[i], d_gs[i])
        for acc, g in zip(fc_grads, g_i):
            acc += g
        d_xs[i] += d_x

    return fc_grads + sel_grads, d_xs
