"""Minimal reverse-mode differentiation over ndarray values.

Each op builds a Var node holding the forward value and a vjp closure that
maps the upstream gradient to per-parent gradients. ``backward`` walks the
graph once in reverse topological order, accumulating into ``Var.grad``.
Only the ops the compression/classification pipeline needs are provided.
"""

import numpy as np


class Var:
    __slots__ = ("value", "parents", "vjp", "grad")

    def __init__(self, value, parents=(), vjp=None):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.grad = None

    def __repr__(self):
        return f"Var(shape={np.shape(self.value)}, leaf={self.vjp is None})"


def lift(x):
    return x if isinstance(x, Var) else Var(np.asarray(x, dtype=np.float64))


def backward(root, seed=None):
    """Accumulate gradients of root wrt every reachable Var."""
    topo = []
    visited = set()
    stack = [(root, iter(root.parents))]
    visited.add(id(root))
    while stack:
        node, it = stack[-1]
        advanced = False
        for parent in it:
            if id(parent) not in visited:
                visited.add(id(parent))
                stack.append((parent, iter(parent.parents)))
                advanced = True
                break
        if not advanced:
            topo.append(node)
            stack.pop()

    root.grad = np.ones_like(root.value) if seed is None else seed
    for node in reversed(topo):
        if node.vjp is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            if g is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


def add(a, b):
    a, b = lift(a), lift(b)
    return Var(a.value + b.value, (a, b), lambda g: (g, g))


def mul_const(x, c):
    """Elementwise multiply by a non-differentiated array (e.g. a mask)."""
    c = np.asarray(c, dtype=np.float64)
    return Var(x.value * c, (x,), lambda g: (g * c,))


def matmul(a, b):
    a, b = lift(a), lift(b)
    out = a.value @ b.value
    return Var(out, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def batch_mode_product(x, m, mode):
    """Mode product applied per sample: x is (B, d_1..d_K), m is
    (out, d_mode), contraction happens on axis mode+1."""
    axis = mode + 1
    xv, mv = x.value, m.value
    out = np.moveaxis(np.tensordot(xv, mv, axes=([axis], [1])), -1, axis)
    other = tuple(a for a in range(xv.ndim) if a != axis)

    def vjp(g):
        gx = np.moveaxis(np.tensordot(g, mv, axes=([axis], [0])), -1, axis)
        gm = np.tensordot(g, xv, axes=(other, other))
        return gx, gm

    return Var(out, (x, m), vjp)


def prefix_pad_batch(x, dims):
    """Keep the per-sample corner block x[:, :m_1, ..., :m_K], zero the
    rest. Matches the transmit-prefix-then-zero-pad deployment path."""
    sl = (slice(None),) + tuple(slice(0, m) for m in dims)
    out = np.zeros_like(x.value)
    out[sl] = x.value[sl]

    def vjp(g):
        gx = np.zeros_like(g)
        gx[sl] = g[sl]
        return (gx,)

    return Var(out, (x,), vjp)


def relu(x):
    keep = x.value > 0
    return Var(np.where(keep, x.value, 0.0), (x,), lambda g: (g * keep,))


def conv2d(x, w, b, stride=1, padding=0):
    """Channel-last 2d convolution via im2col.

    x: (B, H, W, C_in), w: (kh, kw, C_in, C_out), b: (C_out,).
    """
    bsz, h, wd, cin = x.value.shape
    kh, kw, wcin, cout = w.value.shape
    assert cin == wcin, (cin, wcin)
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    xp = x.value
    if padding:
        xp = np.pad(xp, ((0, 0), (padding, padding), (padding, padding), (0, 0)))

    cols = np.empty((bsz, ho, wo, kh, kw, cin))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]
    cols2 = cols.reshape(bsz * ho * wo, kh * kw * cin)
    wmat = w.value.reshape(kh * kw * cin, cout)
    out = (cols2 @ wmat).reshape(bsz, ho, wo, cout) + b.value

    def vjp(g):
        g2 = g.reshape(bsz * ho * wo, cout)
        gw = (cols2.T @ g2).reshape(w.value.shape)
        gb = g2.sum(axis=0)
        gcols = (g2 @ wmat.T).reshape(bsz, ho, wo, kh, kw, cin)
        gxp = np.zeros((bsz, h + 2 * padding, wd + 2 * padding, cin))
        for i in range(kh):
            for j in range(kw):
                gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, padding : padding + h, padding : padding + wd, :] if padding else gxp
        return gx, gw, gb

    return Var(out, (x, w, b), vjp)


def global_avg_pool(x):
    _, h, w, _ = x.value.shape
    out = x.value.mean(axis=(1, 2))

    def vjp(g):
        return (np.broadcast_to(g[:, None, None, :], x.value.shape) / (h * w),)

    return Var(out, (x,), vjp)


def dense(x, w, b):
    out = x.value @ w.value + b.value

    def vjp(g):
        return g @ w.value.T, x.value.T @ g, g.sum(axis=0)

    return Var(out, (x, w, b), vjp)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy between row softmax of logits and integer labels.

    Returns (loss Var, probabilities ndarray).
    """
    labels = np.asarray(labels)
    bsz = logits.value.shape[0]
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    probs = np.exp(z - lse[:, None])
    losses = lse - z[np.arange(bsz), labels]
    loss = np.asarray(losses.mean())

    def vjp(g):
        onehot = np.zeros_like(probs)
        onehot[np.arange(bsz), labels] = 1.0
        return ((probs - onehot) * (float(g) / bsz),)

    return Var(loss, (logits,), vjp), probs
