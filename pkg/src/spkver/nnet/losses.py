"""Training heads: softmax cross-entropy and angular-margin softmax."""

from __future__ import annotations

import numpy as np
from numpy.polynomial import chebyshev

from .layers import Layer, _uniform


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_labels(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return labels


def cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    labels = _check_labels(labels, logits.shape[1])
    logp = _log_softmax(logits)
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


class SoftmaxHead(Layer):
    kind = "softmax_head"

    def __init__(self, in_dim, n_classes, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.params = {"W": _uniform(rng, in_dim, (in_dim, n_classes), dtype, 3.0), "b": np.zeros(n_classes, dtype)}

    def logits(self, x):
        return x @ self.params["W"] + self.params["b"]

    def forward(self, x, labels):
        z = self.logits(x)
        loss, dz = cross_entropy(z, labels)
        self._cache = (x, dz)
        self.last_logits = z
        return loss

    def backward(self):
        x, dz = self._cache
        self.grads["W"] = x.T @ dz
        self.grads["b"] = dz.sum(axis=0)
        return dz @ self.params["W"].T


def psi(cos_theta: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Monotone margin function (-1)^k cos(m theta) - 2k and its derivative in cos(theta).

    ``cos(m theta)`` is evaluated as the Chebyshev polynomial T_m(cos theta),
    which keeps the derivative finite at theta = 0 and theta = pi.
    """
    c = np.clip(cos_theta, -1.0, 1.0)
    theta = np.arccos(c)
    k = np.minimum(np.floor(m * theta / np.pi), m - 1)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    coef = np.zeros(m + 1)
    coef[m] = 1.0
    t_m = chebyshev.chebval(c, coef)
    dt_m = chebyshev.chebval(c, chebyshev.chebder(coef))
    return sign * t_m - 2.0 * k, sign * dt_m


class AsoftmaxHead(Layer):
    """Angular softmax on L2-normalised class weights.

    Non-target logits are ``|x| cos(theta_j)``; the target logit is
    ``|x| (lam cos(theta_y) + psi(theta_y)) / (1 + lam)``. ``lam`` blends
    towards plain normalised-weight softmax and is annealed by the trainer.
    """

    kind = "asoftmax_head"

    def __init__(self, in_dim, n_classes, margin=2, rng=None, dtype=np.float32):
        super().__init__()
        if int(margin) != margin or margin < 1:
            raise ValueError(f"margin must be an integer >= 1, got {margin}")
        self.margin = int(margin)
        self.lam = 0.0
        rng = rng or np.random.default_rng(0)
        self.params = {"W": _uniform(rng, in_dim, (in_dim, n_classes), dtype, 3.0)}

    def _normalized(self):
        w = self.params["W"]
        norms = np.maximum(np.linalg.norm(w, axis=0), 1e-12)
        return w / norms, norms

    def logits(self, x):
        """Cosine logits without the margin, as used at prediction time."""
        wn, _ = self._normalized()
        return x @ wn

    def forward(self, x, labels):
        labels = _check_labels(labels, self.params["W"].shape[1])
        wn, norms = self._normalized()
        n = x.shape[0]
        rows = np.arange(n)
        xnorm = np.maximum(np.linalg.norm(x, axis=1), 1e-12)
        u = x @ wn
        cos_y = u[rows, labels] / xnorm
        psi_y, dpsi_y = psi(cos_y, self.margin)
        lam = self.lam
        z = u.copy()
        z[rows, labels] = (lam * u[rows, labels] + xnorm * psi_y) / (1.0 + lam)
        loss, dz = cross_entropy(z, labels)
        self._cache = (x, labels, wn, norms, xnorm, cos_y, psi_y, dpsi_y, dz)
        self.last_logits = z
        return loss

    def backward(self):
        x, labels, wn, norms, xnorm, cos_y, psi_y, dpsi_y, dz = self._cache
        lam = self.lam
        rows = np.arange(x.shape[0])
        dzy = dz[rows, labels]
        dz_plain = dz.copy()
        dz_plain[rows, labels] = 0.0
        xhat = x / xnorm[:, None]
        wy = wn[:, labels].T
        # target logit: (lam u_y + |x| psi(c_y)) / (1 + lam)
        d_target_x = (lam * wy + psi_y[:, None] * xhat + dpsi_y[:, None] * (wy - cos_y[:, None] * xhat)) / (1 + lam)
        dx = dz_plain @ wn.T + dzy[:, None] * d_target_x
        dwn = x.T @ dz_plain
        coef = dzy * (lam + dpsi_y) / (1 + lam)
        np.add.at(dwn.T, labels, coef[:, None] * x)
        dW = (dwn - wn * (wn * dwn).sum(axis=0)) / norms
        self.grads["W"] = dW.astype(self.params["W"].dtype, copy=False)
        return dx


def asoftmax_loss(x: np.ndarray, weights: np.ndarray, labels, m: int = 2, lam: float = 0.0):
    """Loss and (dx, dW) of angular softmax for raw class weights of shape (dim, classes)."""
    head = AsoftmaxHead(x.shape[1], weights.shape[1], m, dtype=weights.dtype)
    head.params["W"] = weights
    head.lam = lam
    loss = head.forward(x, labels)
    dx = head.backward()
    return loss, dx, head.grads["W"]
