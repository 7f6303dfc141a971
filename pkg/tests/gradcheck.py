"""Central finite-difference gradient checker for layer graphs."""

import numpy as np

from cwsep.nn.graph import INPUT
from cwsep.nn.layers import BatchNorm2d, Concat, Conv2d, Dropout


def bn_invariant_biases(net):
    """Conv biases whose output only reaches batch norms (through concat/dropout).

    Batch statistics subtract any per-channel constant, so these biases have
    an identically zero gradient in training mode.
    """
    consumers = {i: [] for i in range(len(net.nodes))}
    for j, node in enumerate(net.nodes):
        for i in node.inputs:
            if i != INPUT:
                consumers[i].append(j)

    def only_bn(i):
        users = consumers[i]
        if not users:
            return False
        for j in users:
            layer = net.nodes[j].layer
            if isinstance(layer, BatchNorm2d):
                continue
            if isinstance(layer, (Concat, Dropout)) and only_bn(j):
                continue
            return False
        return True

    return {f"{n.name}.bias" for i, n in enumerate(net.nodes)
            if isinstance(n.layer, Conv2d) and "bias" in n.layer.params and only_bn(i)}


def check_gradients(net, x, n_samples=200, eps=1e-5, seed=0):
    """Compare backprop with central differences on ``sum(R * net(x))``.

    Returns ``(relative_errors, invariant_abs)``: relative errors of at least
    ``n_samples`` sampled parameters with a well-defined gradient, and the
    largest of |numeric|, |analytic| for each batch-norm-invariant bias
    (both should vanish up to rounding).
    """
    rng = np.random.default_rng(seed)
    out = net.forward(x, training=True)
    R = rng.standard_normal(out.shape)
    grads = {k: v.copy() for k, v in net.backward(R).items()}
    params = net.params()
    gauge = bn_invariant_biases(net)
    regular = [k for k in params if k not in gauge]
    per = -(-n_samples // len(regular))
    picks = [(k, tuple(int(rng.integers(s)) for s in params[k].shape))
             for k in regular for _ in range(per)]
    picks += [(k, (0,)) for k in sorted(gauge)]

    def loss():
        return float(np.sum(net.forward(x, training=True) * R))

    rel, inv = [], []
    for name, idx in picks:
        p = params[name]
        old = p[idx]
        p[idx] = old + eps
        fp = loss()
        p[idx] = old - eps
        fm = loss()
        p[idx] = old
        num = (fp - fm) / (2 * eps)
        ana = grads[name][idx]
        if name in gauge:
            inv.append(max(abs(num), abs(ana)))
        else:
            rel.append(abs(num - ana) / max(abs(num), abs(ana), 1e-300))
    net.clear()
    return np.array(rel), np.array(inv)
