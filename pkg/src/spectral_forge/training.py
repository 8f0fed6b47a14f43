"""Mini-batch training loops shared by the experiment protocols."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import tensor as T
from .nn.losses import weighted_cross_entropy
from .nn.optim import Adam, PlateauTracker, TrainSchedule
from .nn.tensor import Tensor, no_grad
from .preprocess import AugmentationSpec, augment_batch, class_weights


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def curves(self) -> dict:
        return {"train_loss": list(self.train_loss), "val_loss": list(self.val_loss), "lr": list(self.lr)}


def batches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


def evaluate_loss(model, X, y, weights, batch_size: int = 256) -> float:
    """Weighted cross-entropy over a whole array, in eval mode."""
    was = model.training
    model.eval()
    num = den = 0.0
    w = np.asarray(weights, dtype=np.float64)
    with no_grad():
        for s in range(0, len(X), batch_size):
            yb = y[s:s + batch_size]
            lsm = T.log_softmax(model(X[s:s + batch_size]), axis=1).data.astype(np.float64)
            nll = -lsm[np.arange(len(yb)), yb]
            num += float((w[yb] * nll).sum())
            den += float(w[yb].sum())
    model.train(was)
    return num / den


def _snapshot(params):
    return [p.data.copy() for p in params]


def _restore(params, snap):
    for p, d in zip(params, snap):
        p.data = d.copy()


def fit_classifier(model, X, y, *, num_classes: int, sched: TrainSchedule = TrainSchedule(),
                   Xval=None, yval=None, weights=None, params=None,
                   aug_spec: AugmentationSpec | None = None, augment_prob: float = 0.0,
                   rng: np.random.Generator | None = None) -> TrainHistory:
    """Adam on class-weighted cross-entropy with plateau decay and early stopping.

    The monitored loss is the validation loss when ``Xval`` is given, else the
    epoch's mean training loss. The best weights seen are restored at the end.
    ``params`` restricts the update to a subset (the rest stays fixed).
    """
    X = np.asarray(X, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    rng = np.random.default_rng(sched.seed) if rng is None else rng
    if weights is None:
        weights = class_weights(y, num_classes)
    params = model.trainable_parameters() if params is None else list(params)
    opt = Adam(params, lr=sched.lr0)
    tracker = PlateauTracker(sched)
    hist = TrainHistory()
    best = _snapshot(params)
    model.train()
    for epoch in range(sched.max_epochs):
        opt.lr = tracker.lr
        total = 0.0
        for idx in batches(len(X), sched.batch_size, rng):
            xb = X[idx]
            if aug_spec is not None and augment_prob > 0:
                xb = augment_batch(xb, aug_spec, rng, augment_prob).astype(np.float32)
            model.zero_grad()
            loss = weighted_cross_entropy(model(xb), y[idx], weights)
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
        train_loss = total / len(X)
        val_loss = evaluate_loss(model, Xval, yval, weights) if Xval is not None else train_loss
        hist.train_loss.append(train_loss)
        hist.val_loss.append(val_loss)
        hist.lr.append(tracker.lr)
        if tracker.update(val_loss):
            best = _snapshot(params)
            hist.best_epoch = epoch
        if tracker.stop:
            break
    _restore(params, best)
    model.zero_grad()
    model.eval()
    return hist


def fit_unsupervised(model, loss_fn, X, *, sched: TrainSchedule, Xval=None, params=None,
                     rng: np.random.Generator | None = None, min_epochs: int = 0) -> TrainHistory:
    """Generic loop for label-free objectives. ``loss_fn(model, xb, rng)``
    returns a scalar tensor; the monitored quantity mirrors :func:`fit_classifier`."""
    X = np.asarray(X, dtype=np.float32)
    rng = np.random.default_rng(sched.seed) if rng is None else rng
    params = model.trainable_parameters() if params is None else list(params)
    opt = Adam(params, lr=sched.lr0)
    tracker = PlateauTracker(sched)
    hist = TrainHistory()
    best = _snapshot(params)
    model.train()
    for epoch in range(sched.max_epochs):
        opt.lr = tracker.lr
        total, count = 0.0, 0
        for idx in batches(len(X), sched.batch_size, rng):
            model.zero_grad()
            loss = loss_fn(model, X[idx], rng)
            if loss is None:
                continue
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
            count += len(idx)
        train_loss = total / max(count, 1)
        if Xval is not None:
            model.eval()
            with no_grad():
                val_loss = float(np.mean([float(loss_fn(model, Xval[s:s + 256], rng).data)
                                          for s in range(0, len(Xval), 256)]))
            model.train()
        else:
            val_loss = train_loss
        hist.train_loss.append(train_loss)
        hist.val_loss.append(val_loss)
        hist.lr.append(tracker.lr)
        if tracker.update(val_loss):
            best = _snapshot(params)
            hist.best_epoch = epoch
        if tracker.stop and epoch + 1 >= min_epochs:
            break
    _restore(params, best)
    model.zero_grad()
    model.eval()
    return hist


def predict_proba(model, X, batch_size: int = 256) -> np.ndarray:
    return model.predict_proba(np.asarray(X, dtype=np.float32), batch_size)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))
