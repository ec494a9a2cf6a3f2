"""Positional encoding, the two small MLPs, activation heads, and Adam.

The envmap net maps encoded texel coordinates (plus fixed per-texel noise
channels) through 4x128 ReLU layers to 3 Softplus outputs. The material net
maps encoded pixel coordinates concatenated with the raw 5-channel
prediction m through the same trunk to 5 outputs, squashed by a scaled tanh
centered on m so optimization starts at the predictions.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tape as tp


@dataclass
class PosEncoding:
    num_bands: int = 6
    include_input: bool = False

    def out_dim(self, in_dim):
        return (2 * self.num_bands + (1 if self.include_input else 0)) * in_dim


def pos_encode(coords, enc):
    """Per coordinate p: [sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^{L-1} pi p),
    cos(2^{L-1} pi p)] (+ raw p when include_input). coords: [N, D] in [0,1]."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim == 1:
        coords = coords[:, None]
    cols = []
    for d in range(coords.shape[1]):
        p = coords[:, d]
        for b in range(enc.num_bands):
            w = (2.0 ** b) * np.pi
            cols.append(np.sin(w * p))
            cols.append(np.cos(w * p))
        if enc.include_input:
            cols.append(p)
    return np.stack(cols, axis=1)


@dataclass
class MlpParams:
    """Weights/biases of an affine+ReLU stack; head applied by the caller."""
    sizes: list           # e.g. [in, 128, 128, 128, 128, out]
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    head: str = "softplus"  # softplus | scaled_tanh

    def n_params(self):
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def init_mlp(sizes, head, seed=0, last_scale=1e-2):
    """He init for ReLU hiddens; the last layer is scaled down so scaled-tanh
    heads start near the identity on m and softplus heads start near ln 2."""
    rng = np.random.Generator(np.random.PCG64(seed))
    p = MlpParams(sizes=list(sizes), head=head)
    for k in range(len(sizes) - 1):
        fan_in = sizes[k]
        std = np.sqrt(2.0 / fan_in)
        if k == len(sizes) - 2:
            std *= last_scale
        p.weights.append(rng.normal(0.0, std, size=(fan_in, sizes[k + 1])))
        p.biases.append(np.zeros(sizes[k + 1]))
    return p


def lift_mlp(params, tape):
    """Register every weight/bias as a tape leaf; returns (wvars, bvars)."""
    wv = [tape.var(w) for w in params.weights]
    bv = [tape.var(b) for b in params.biases]
    return wv, bv


def mlp_forward(params, features, lifted=None):
    """Affine+ReLU stack on [N, in] features; raw output z (no head).

    With lifted=(wvars, bvars) from lift_mlp the pass is recorded on their
    tape; otherwise it is a plain numpy pass over params.
    """
    ws, bs = lifted if lifted is not None else (params.weights, params.biases)
    if features.shape[1] != params.sizes[0]:
        raise ValueError(
            f"feature dim {features.shape[1]} != first layer {params.sizes[0]}")
    h = features
    last = len(ws) - 1
    for k, (w, b) in enumerate(zip(ws, bs)):
        h = tp.matmul(h, w) + b
        if k != last:
            h = tp.relu(h)
    return h


def head_softplus(z):
    """ln(1+e^z), stable for large |z|; strictly positive outputs."""
    return tp.softplus(z)


def head_scaled_tanh(z, m, zeta):
    """zeta*tanh(z) + m; identity on m at z=0. Callers clamp to [0,1] for
    storage, gradients flow through the pre-clamp value."""
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    return zeta * tp.tanh(z) + m


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state, params, grads):
    """Bias-corrected Adam on a list of arrays; updates params in place.

    Non-finite gradients skip the step (returns False) instead of poisoning
    the moments.
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for g in grads:
        if not np.all(np.isfinite(g)):
            return False
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return True
