"""Hot numeric kernels for the differentiable models.

Single-source functions written in the numpy subset numba can compile; the
``backend.jit`` decorator makes them ``@njit`` kernels or leaves them as
plain numpy, depending on FEDUNLEARN_BACKEND.  Everything operates on a flat
parameter vector plus a layer-size table so the same kernels serve the
linear-softmax and MLP models.

Conventions:
  theta  flat float64 parameter vector, layer by layer, W before b
  sizes  int64 vector [n_in, hidden..., n_out]
  act    activation code (ACT_TANH / ACT_RELU) for hidden layers
  X      float64 (n, p) C-contiguous feature matrix
  y      int64 (n,) class labels
  l2     ridge coefficient; the penalty is 0.5 * l2 * ||theta||^2

The curvature-vector pass is the exact forward-over-reverse second-order
differentiation (no finite differences), so its output matches the true
Hessian-vector product to machine precision.
"""

import math

import numpy as np

from .backend import jit

ACT_TANH = 0
ACT_RELU = 1


@jit
def _act_forward(z, act):
    if act == ACT_TANH:
        return np.tanh(z)
    return np.maximum(z, 0.0)


@jit
def _act_deriv(a, act):
    # first derivative expressed through the activation value a = sigma(z)
    if act == ACT_TANH:
        return 1.0 - a * a
    return (a > 0.0) * 1.0


@jit
def _act_second(a, act):
    # second derivative through the activation value; zero for relu
    if act == ACT_TANH:
        return -2.0 * a * (1.0 - a * a)
    return a * 0.0


@jit
def _layer_offsets(sizes):
    L = sizes.shape[0] - 1
    offs = np.empty(L + 1, np.int64)
    offs[0] = 0
    for l in range(L):
        offs[l + 1] = offs[l] + sizes[l] * sizes[l + 1] + sizes[l + 1]
    return offs


@jit
def _forward(theta, sizes, act, X):
    """Run the network; returns (per-layer inputs, logits)."""
    L = sizes.shape[0] - 1
    offs = _layer_offsets(sizes)
    acts = [X]
    z = X
    for l in range(L):
        ni = sizes[l]
        no = sizes[l + 1]
        base = offs[l]
        W = theta[base:base + ni * no].reshape(ni, no)
        b = theta[base + ni * no:base + ni * no + no]
        z = acts[l] @ W + b
        if l < L - 1:
            acts.append(_act_forward(z, act))
    return acts, z


@jit
def _softmax_ce(logits, y):
    """Row-stable softmax; returns (probabilities, per-row cross-entropy)."""
    n = logits.shape[0]
    C = logits.shape[1]
    probs = np.empty_like(logits)
    losses = np.empty(n)
    for i in range(n):
        m = logits[i, 0]
        for j in range(1, C):
            v = logits[i, j]
            if v > m:
                m = v
        s = 0.0
        for j in range(C):
            e = math.exp(logits[i, j] - m)
            probs[i, j] = e
            s += e
        inv = 1.0 / s
        for j in range(C):
            probs[i, j] *= inv
        losses[i] = math.log(s) - (logits[i, y[i]] - m)
    return probs, losses


@jit
def forward_logits(theta, sizes, act, X):
    acts, z = _forward(theta, sizes, act, X)
    return z


@jit
def per_example_ce(theta, sizes, act, X, y):
    acts, z = _forward(theta, sizes, act, X)
    probs, losses = _softmax_ce(z, y)
    return losses


@jit
def loss_value(theta, sizes, act, X, y, l2):
    acts, z = _forward(theta, sizes, act, X)
    probs, losses = _softmax_ce(z, y)
    return losses.sum() / X.shape[0] + 0.5 * l2 * (theta @ theta)


@jit
def loss_and_grad(theta, sizes, act, X, y, l2):
    """Mean cross-entropy plus ridge, with its exact gradient."""
    n = X.shape[0]
    L = sizes.shape[0] - 1
    offs = _layer_offsets(sizes)
    acts, z = _forward(theta, sizes, act, X)
    probs, losses = _softmax_ce(z, y)
    loss = losses.sum() / n + 0.5 * l2 * (theta @ theta)

    delta = probs / n
    for i in range(n):
        delta[i, y[i]] -= 1.0 / n

    grad = np.zeros_like(theta)
    for l in range(L - 1, -1, -1):
        ni = sizes[l]
        no = sizes[l + 1]
        base = offs[l]
        a_in = acts[l]
        gW = np.ascontiguousarray(a_in.T) @ delta
        grad[base:base + ni * no].reshape(ni, no)[:, :] = gW
        grad[base + ni * no:base + ni * no + no] = delta.sum(axis=0)
        if l > 0:
            W = theta[base:base + ni * no].reshape(ni, no)
            delta = (delta @ np.ascontiguousarray(W.T)) * _act_deriv(acts[l], act)
    grad += l2 * theta
    return loss, grad


@jit
def hvp_dampless(theta, sizes, act, X, y, l2, v):
    """Exact Hessian-vector product via a forward-over-reverse pass."""
    n = X.shape[0]
    L = sizes.shape[0] - 1
    offs = _layer_offsets(sizes)

    # forward pass carrying the directional derivative of every activation
    acts = [X]
    racts = [np.zeros_like(X)]
    rzs = [np.zeros_like(X)]  # rzs[l] pairs with acts[l]; index 0 unused
    z = X
    rz = X
    for l in range(L):
        ni = sizes[l]
        no = sizes[l + 1]
        base = offs[l]
        W = theta[base:base + ni * no].reshape(ni, no)
        b = theta[base + ni * no:base + ni * no + no]
        V = v[base:base + ni * no].reshape(ni, no)
        c = v[base + ni * no:base + ni * no + no]
        z = acts[l] @ W + b
        rz = acts[l] @ V + racts[l] @ W + c
        if l < L - 1:
            a = _act_forward(z, act)
            acts.append(a)
            racts.append(_act_deriv(a, act) * rz)
            rzs.append(rz)

    probs, losses = _softmax_ce(z, y)
    C = z.shape[1]

    delta = probs / n
    for i in range(n):
        delta[i, y[i]] -= 1.0 / n

    # directional derivative of delta through the softmax Jacobian
    rdelta = np.empty_like(delta)
    for i in range(n):
        dot = 0.0
        for j in range(C):
            dot += probs[i, j] * rz[i, j]
        for j in range(C):
            rdelta[i, j] = probs[i, j] * (rz[i, j] - dot) / n

    hv = np.zeros_like(theta)
    for l in range(L - 1, -1, -1):
        ni = sizes[l]
        no = sizes[l + 1]
        base = offs[l]
        a_in = acts[l]
        ra_in = racts[l]
        rgW = np.ascontiguousarray(ra_in.T) @ delta \
            + np.ascontiguousarray(a_in.T) @ rdelta
        hv[base:base + ni * no].reshape(ni, no)[:, :] = rgW
        hv[base + ni * no:base + ni * no + no] = rdelta.sum(axis=0)
        if l > 0:
            W = theta[base:base + ni * no].reshape(ni, no)
            V = v[base:base + ni * no].reshape(ni, no)
            Wt = np.ascontiguousarray(W.T)
            Vt = np.ascontiguousarray(V.T)
            sp = _act_deriv(acts[l], act)
            dW = delta @ Wt
            rdelta = (rdelta @ Wt + delta @ Vt) * sp \
                + dW * _act_second(acts[l], act) * rzs[l]
            delta = dW * sp
    hv += l2 * v
    return hv
