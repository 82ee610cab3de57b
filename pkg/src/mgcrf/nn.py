"""One-hidden-layer sigmoid network with a linear output unit."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class FeedForwardRegressor:
    """``f(x) = sigmoid(x @ W1 + b1) @ w2 + b2``."""

    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float

    @property
    def input_dim(self):
        return self.W1.shape[0]

    @property
    def hidden_dim(self):
        return self.W1.shape[1]

    def hidden(self, X):
        return expit(np.asarray(X, dtype=float) @ self.W1 + self.b1)

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        shape = X.shape[:-1]
        out = self.hidden(X.reshape(-1, self.input_dim)) @ self.w2 + self.b2
        return out.reshape(shape)

    @classmethod
    def zeros(cls, input_dim, hidden_dim, bias=0.0):
        return cls(np.zeros((input_dim, hidden_dim)), np.zeros(hidden_dim),
                   np.zeros(hidden_dim), float(bias))


@dataclass
class NNSettings:
    hidden: Optional[int] = None  # default 2 * input_dim
    max_epochs: int = 2000
    learning_rate: float = 0.1
    momentum: float = 0.9
    val_fraction: float = 0.1
    patience: int = 200
    seed: int = 0


@dataclass(frozen=True)
class TrainingLog:
    train_loss: tuple  # accepted epochs only, non-increasing
    val_loss: tuple
    best_epoch: int


def _loss_and_grad(params, X, y):
    W1, b1, w2, b2 = params
    H = expit(X @ W1 + b1)
    err = H @ w2 + b2 - y
    n = y.size
    loss = float(err @ err) / n
    d_out = 2.0 * err / n
    g_w2 = H.T @ d_out
    g_b2 = d_out.sum()
    d_h = np.outer(d_out, w2) * H * (1.0 - H)
    return loss, (X.T @ d_h, d_h.sum(axis=0), g_w2, g_b2)


def _mse(params, X, y):
    W1, b1, w2, b2 = params
    err = expit(X @ W1 + b1) @ w2 + b2 - y
    return float(err @ err) / y.size


def train_ffn(features, labels, settings=None, return_log=False):
    """Fit a regressor by full-batch gradient descent with momentum.

    Inputs and targets are standardized internally and the scaling is
    folded back into the returned weights.  A step that would raise the
    training loss is rejected (momentum reset, step halved), so accepted
    epochs never increase it.  With at least 10 examples a validation split
    drives early stopping and the best-validation weights are returned.
    """
    settings = settings or NNSettings()
    X = np.asarray(features, dtype=float)
    X = X.reshape(-1, X.shape[-1])
    y = np.asarray(labels, dtype=float).ravel()
    if y.size == 0:
        raise TrainingError("no labeled examples")
    if y.size != X.shape[0]:
        raise ValueError("features and labels disagree in length")
    D = X.shape[1]
    H = settings.hidden or 2 * D
    rng = np.random.default_rng(settings.seed)

    x_mean, x_scale = X.mean(axis=0), X.std(axis=0)
    x_scale[x_scale == 0] = 1.0
    y_mean, y_scale = y.mean(), y.std()
    if y_scale == 0:
        y_scale = 1.0
    Xs = (X - x_mean) / x_scale
    ys = (y - y_mean) / y_scale

    n_val = int(round(settings.val_fraction * y.size)) if y.size >= 10 else 0
    order = rng.permutation(y.size)
    val, tr = order[:n_val], order[n_val:]
    Xt, yt = Xs[tr], ys[tr]

    params = [rng.normal(0.0, 1.0 / np.sqrt(D), (D, H)), np.zeros(H),
              rng.normal(0.0, 1.0 / np.sqrt(H), H), 0.0]
    velocity = [np.zeros_like(np.asarray(p, dtype=float)) for p in params]
    lr = settings.learning_rate
    loss, grads = _loss_and_grad(params, Xt, yt)
    if not np.isfinite(loss):
        raise TrainingError("non-finite initial loss")
    train_hist, val_hist = [loss], []
    best = (np.inf, [np.copy(p) for p in params], 0)
    stale = 0
    for epoch in range(settings.max_epochs):
        velocity = [settings.momentum * v - lr * g for v, g in zip(velocity, grads)]
        trial = [p + v for p, v in zip(params, velocity)]
        t_loss, t_grads = _loss_and_grad(trial, Xt, yt)
        if not np.isfinite(t_loss) or t_loss > loss:
            velocity = [np.zeros_like(v) for v in velocity]
            lr *= 0.5
            if lr < 1e-12:
                break
            continue
        params, loss, grads = trial, t_loss, t_grads
        lr *= 1.02
        train_hist.append(loss)
        if n_val:
            v_loss = _mse(params, Xs[val], ys[val])
            val_hist.append(v_loss)
            if v_loss < best[0]:
                best, stale = (v_loss, [np.copy(p) for p in params], epoch), 0
            else:
                stale += 1
                if stale >= settings.patience:
                    break
    if n_val:
        params, best_epoch = best[1], best[2]
    else:
        best_epoch = len(train_hist) - 1
    if not np.isfinite(loss):
        raise TrainingError("non-finite training loss")

    W1, b1, w2, b2 = params
    model = FeedForwardRegressor(
        W1=W1 / x_scale[:, None],
        b1=b1 - (x_mean / x_scale) @ W1,
        w2=w2 * y_scale,
        b2=float(y_mean + y_scale * b2))
    if return_log:
        return model, TrainingLog(tuple(train_hist), tuple(val_hist), best_epoch)
    return model


def ffn_predict(model, features):
    return model(features)
