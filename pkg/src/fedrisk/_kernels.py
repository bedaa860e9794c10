"""Hot training and distance kernels, with numba and pure-numpy twins.

The training inner loops (mini-batch logistic regression, mini-batch MLP
with Adam) and the SMOTE distance matrix dominate runtime. Each kernel
exists twice: a numba ``@njit`` version with explicit left-to-right
summation loops, and a vectorized numpy version. Both are deterministic
for a fixed backend; results between backends agree to floating-point
reassociation error, not bit-for-bit.

Backend selection: the ``FEDRISK_KERNELS`` environment variable
("numba" or "numpy") picks the backend at import; the default is numba
when importable, else numpy. ``set_backend`` switches at runtime (used
by the benchmark and the cross-backend tests).

Flat MLP parameter layout shared with :mod:`fedrisk.models`:
W1 row-major (h1*d), b1 (h1), W2 (h2*h1), b2 (h2), W3 (h2), b3 (1).
"""

import math
import os
import warnings

import numpy as np

from .errors import ConfigError

PROB_CLAMP = 1e-12

_ENV_VAR = "FEDRISK_KERNELS"

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy twins
# ---------------------------------------------------------------------------


def _sigmoid_vec(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _lr_train_epochs_np(X, y, w, b, lr, l2, batch_size, orders):
    n = X.shape[0]
    n_epochs = orders.shape[0]
    losses = np.zeros(n_epochs)
    for e in range(n_epochs):
        order = orders[e]
        loss_sum = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            Xb = X[idx]
            yb = y[idx]
            prob = _sigmoid_vec(Xb @ w + b)
            pc = np.clip(prob, PROB_CLAMP, 1.0 - PROB_CLAMP)
            loss_sum += -np.sum(yb * np.log(pc) + (1.0 - yb) * np.log(1.0 - pc))
            err = prob - yb
            inv = 1.0 / len(idx)
            w -= lr * ((Xb.T @ err) * inv + l2 * w)
            b -= lr * (np.sum(err) * inv)
        losses[e] = loss_sum / n
    return b, losses


def _mlp_train_epochs_np(
    X, y, p, m, v, t, d, h1, h2, lr, beta1, beta2, eps, batch_size, orders
):
    n = X.shape[0]
    n_epochs = orders.shape[0]
    losses = np.zeros(n_epochs)

    o1 = h1 * d
    o2 = o1 + h1
    o3 = o2 + h2 * h1
    o4 = o3 + h2
    o5 = o4 + h2
    g = np.empty_like(p)

    for e in range(n_epochs):
        order = orders[e]
        loss_sum = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            Xb = X[idx]
            yb = y[idx]
            W1 = p[:o1].reshape(h1, d)
            b1 = p[o1:o2]
            W2 = p[o2:o3].reshape(h2, h1)
            b2 = p[o3:o4]
            W3 = p[o4:o5]
            b3 = p[o5]

            Z1 = Xb @ W1.T + b1
            A1 = np.maximum(Z1, 0.0)
            Z2 = A1 @ W2.T + b2
            A2 = np.maximum(Z2, 0.0)
            z3 = A2 @ W3 + b3
            prob = _sigmoid_vec(z3)
            pc = np.clip(prob, PROB_CLAMP, 1.0 - PROB_CLAMP)
            loss_sum += -np.sum(yb * np.log(pc) + (1.0 - yb) * np.log(1.0 - pc))

            d3 = prob - yb
            D2 = np.where(Z2 > 0.0, d3[:, None] * W3[None, :], 0.0)
            D1 = np.where(Z1 > 0.0, D2 @ W2, 0.0)

            inv = 1.0 / len(idx)
            g[:o1] = (D1.T @ Xb).ravel()
            g[o1:o2] = D1.sum(axis=0)
            g[o2:o3] = (D2.T @ A1).ravel()
            g[o3:o4] = D2.sum(axis=0)
            g[o4:o5] = d3 @ A2
            g[o5] = d3.sum()
            g *= inv

            t += 1
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            mhat = m / (1.0 - beta1**t)
            vhat = v / (1.0 - beta2**t)
            p -= lr * mhat / (np.sqrt(vhat) + eps)
        losses[e] = loss_sum / n
    return t, losses


def _pairwise_sq_dists_np(A, B):
    out = np.empty((A.shape[0], B.shape[0]))
    for i in range(A.shape[0]):
        diff = B - A[i]
        out[i] = np.einsum("ij,ij->i", diff, diff)
    return out


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def _sigmoid_scalar_nb(z):
        if z >= 0.0:
            return 1.0 / (1.0 + math.exp(-z))
        ez = math.exp(z)
        return ez / (1.0 + ez)

    @njit(cache=True)
    def _lr_train_epochs_nb(X, y, w, b, lr, l2, batch_size, orders):
        n, d = X.shape
        n_epochs = orders.shape[0]
        losses = np.zeros(n_epochs)
        gw = np.empty(d)
        for e in range(n_epochs):
            order = orders[e]
            loss_sum = 0.0
            for start in range(0, n, batch_size):
                end = min(start + batch_size, n)
                nb = end - start
                for j in range(d):
                    gw[j] = 0.0
                gb = 0.0
                for ii in range(start, end):
                    i = order[ii]
                    z = b
                    for j in range(d):
                        z += w[j] * X[i, j]
                    prob = _sigmoid_scalar_nb(z)
                    pc = min(max(prob, PROB_CLAMP), 1.0 - PROB_CLAMP)
                    loss_sum += -(
                        y[i] * math.log(pc) + (1.0 - y[i]) * math.log(1.0 - pc)
                    )
                    err = prob - y[i]
                    for j in range(d):
                        gw[j] += err * X[i, j]
                    gb += err
                inv = 1.0 / nb
                for j in range(d):
                    w[j] -= lr * (gw[j] * inv + l2 * w[j])
                b -= lr * (gb * inv)
            losses[e] = loss_sum / n
        return b, losses

    @njit(cache=True)
    def _mlp_train_epochs_nb(
        X, y, p, m, v, t, d, h1, h2, lr, beta1, beta2, eps, batch_size, orders
    ):
        n = X.shape[0]
        n_epochs = orders.shape[0]
        losses = np.zeros(n_epochs)

        o1 = h1 * d
        o2 = o1 + h1
        o3 = o2 + h2 * h1
        o4 = o3 + h2
        o5 = o4 + h2
        W1 = p[:o1].reshape(h1, d)
        b1 = p[o1:o2]
        W2 = p[o2:o3].reshape(h2, h1)
        b2 = p[o3:o4]
        W3 = p[o4:o5]

        g = np.empty(p.shape[0])
        gW1 = g[:o1].reshape(h1, d)
        gb1 = g[o1:o2]
        gW2 = g[o2:o3].reshape(h2, h1)
        gb2 = g[o3:o4]
        gW3 = g[o4:o5]

        z1 = np.empty(h1)
        a1 = np.empty(h1)
        z2 = np.empty(h2)
        a2 = np.empty(h2)
        d2 = np.empty(h2)
        d1 = np.empty(h1)

        for e in range(n_epochs):
            order = orders[e]
            loss_sum = 0.0
            for start in range(0, n, batch_size):
                end = min(start + batch_size, n)
                nb = end - start
                for k in range(g.shape[0]):
                    g[k] = 0.0
                for ii in range(start, end):
                    i = order[ii]
                    for i1 in range(h1):
                        z = b1[i1]
                        for j in range(d):
                            z += W1[i1, j] * X[i, j]
                        z1[i1] = z
                        a1[i1] = z if z > 0.0 else 0.0
                    for i2 in range(h2):
                        z = b2[i2]
                        for i1 in range(h1):
                            z += W2[i2, i1] * a1[i1]
                        z2[i2] = z
                        a2[i2] = z if z > 0.0 else 0.0
                    z3 = p[o5]
                    for i2 in range(h2):
                        z3 += W3[i2] * a2[i2]
                    prob = _sigmoid_scalar_nb(z3)
                    pc = min(max(prob, PROB_CLAMP), 1.0 - PROB_CLAMP)
                    loss_sum += -(
                        y[i] * math.log(pc) + (1.0 - y[i]) * math.log(1.0 - pc)
                    )

                    d3 = prob - y[i]
                    g[o5] += d3
                    for i2 in range(h2):
                        gW3[i2] += d3 * a2[i2]
                        d2[i2] = d3 * W3[i2] if z2[i2] > 0.0 else 0.0
                    for i2 in range(h2):
                        if d2[i2] != 0.0:
                            gb2[i2] += d2[i2]
                            for i1 in range(h1):
                                gW2[i2, i1] += d2[i2] * a1[i1]
                    for i1 in range(h1):
                        acc = 0.0
                        for i2 in range(h2):
                            acc += W2[i2, i1] * d2[i2]
                        d1[i1] = acc if z1[i1] > 0.0 else 0.0
                    for i1 in range(h1):
                        if d1[i1] != 0.0:
                            gb1[i1] += d1[i1]
                            for j in range(d):
                                gW1[i1, j] += d1[i1] * X[i, j]

                inv = 1.0 / nb
                t += 1
                bc1 = 1.0 - beta1**t
                bc2 = 1.0 - beta2**t
                for k in range(p.shape[0]):
                    gk = g[k] * inv
                    m[k] = beta1 * m[k] + (1.0 - beta1) * gk
                    v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk
                    p[k] -= lr * (m[k] / bc1) / (math.sqrt(v[k] / bc2) + eps)
            losses[e] = loss_sum / n
        return t, losses

    @njit(cache=True)
    def _pairwise_sq_dists_nb(A, B):
        na, d = A.shape
        nb = B.shape[0]
        out = np.empty((na, nb))
        for i in range(na):
            for j in range(nb):
                s = 0.0
                for k in range(d):
                    diff = A[i, k] - B[j, k]
                    s += diff * diff
                out[i, j] = s
        return out


_BACKENDS = {
    "numpy": {
        "lr_train_epochs": _lr_train_epochs_np,
        "mlp_train_epochs": _mlp_train_epochs_np,
        "pairwise_sq_dists": _pairwise_sq_dists_np,
    }
}
if _HAVE_NUMBA:
    _BACKENDS["numba"] = {
        "lr_train_epochs": _lr_train_epochs_nb,
        "mlp_train_epochs": _mlp_train_epochs_nb,
        "pairwise_sq_dists": _pairwise_sq_dists_nb,
    }


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def _initial_backend() -> str:
    requested = os.environ.get(_ENV_VAR, "").strip().lower()
    if not requested:
        return "numba" if _HAVE_NUMBA else "numpy"
    if requested not in ("numba", "numpy"):
        raise ConfigError(
            f"{_ENV_VAR} must be 'numba' or 'numpy', got {requested!r}"
        )
    if requested == "numba" and not _HAVE_NUMBA:
        warnings.warn(
            f"{_ENV_VAR}=numba requested but numba is not importable; "
            "falling back to the numpy backend",
            RuntimeWarning,
            stacklevel=2,
        )
        return "numpy"
    return requested


_active = _initial_backend()


def active_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    """Switch kernel backend at runtime ("numba" or "numpy")."""
    global _active
    if name not in _BACKENDS:
        raise ConfigError(
            f"unknown kernel backend {name!r}; available: {available_backends()}"
        )
    _active = name


def lr_train_epochs(X, y, w, b, lr, l2, batch_size, orders):
    """Run mini-batch SGD logistic-regression epochs.

    Mutates ``w`` in place; returns ``(b, per_epoch_losses)`` where the
    loss is the mean pre-update binary cross-entropy over the epoch.
    ``orders`` is an (epochs, n) int64 array of shuffled row indices.
    """
    return _BACKENDS[_active]["lr_train_epochs"](
        X, y, w, float(b), float(lr), float(l2), int(batch_size), orders
    )


def mlp_train_epochs(X, y, p, m, v, t, d, h1, h2, lr, beta1, beta2, eps, batch_size, orders):
    """Run mini-batch Adam epochs on a flat MLP parameter vector.

    Mutates ``p``, ``m`` and ``v`` in place; returns ``(t, losses)`` with
    the updated Adam step counter.
    """
    return _BACKENDS[_active]["mlp_train_epochs"](
        X,
        y,
        p,
        m,
        v,
        int(t),
        int(d),
        int(h1),
        int(h2),
        float(lr),
        float(beta1),
        float(beta2),
        float(eps),
        int(batch_size),
        orders,
    )


def pairwise_sq_dists(A, B):
    """Squared Euclidean distances between the rows of A and the rows of B."""
    return _BACKENDS[_active]["pairwise_sq_dists"](A, B)
