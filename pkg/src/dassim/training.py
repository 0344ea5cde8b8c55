"""Mean-squared-error training for dense networks, autoencoders and LSTM stacks.

Mini-batches are drawn with the seeded stream and parameters move with the
package Adam, so a fixed TrainingConfig reproduces loss histories exactly.
The validation split is taken once up front: a random subset for dense
networks and autoencoders, the trailing block for sequence models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as T
from .errors import DassimError, DimensionMismatch, NanEncountered
from .operators import Autoencoder, DenseNetwork, LstmStack
from .optim import AdamState, adam_step
from .rng import RngHandle


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    seed: int = 0
    validation_fraction: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise DassimError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise DassimError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise DassimError(
                f"validation_fraction must lie in [0, 1), got {self.validation_fraction}"
            )
        if self.learning_rate < 0.0:
            raise DassimError("learning_rate must be non-negative")


@dataclass
class TrainResult:
    network: object
    train_loss: list
    validation_loss: list | None


def validation_split_size(n_samples: int, fraction: float) -> int:
    """Number of held-out samples: floor of n * fraction."""
    return int(n_samples * fraction)


def _flatten(arrays):
    shapes = [a.shape for a in arrays]
    return np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays]), shapes


def _unflatten(vec, shapes):
    out = []
    pos = 0
    for shape in shapes:
        n = int(np.prod(shape)) if shape else 1
        out.append(vec[pos:pos + n].reshape(shape))
        pos += n
    return out


def _batch_indices(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _dense_loss(net, params, x_batch, y_batch):
    pred = net.forward(x_batch, params=params)
    d = T.sub(pred, y_batch)
    return T.mean_all(T.mul(d, d))


def _autoencoder_loss(ae, params, x_batch, _y_batch):
    n_enc = 2 * len(ae.encoder.layers)
    z = ae.encoder.forward(x_batch, params=params[:n_enc])
    rec = ae.decoder.forward(z, params=params[n_enc:])
    d = T.sub(rec, x_batch)
    return T.mean_all(T.mul(d, d))


def _lstm_loss(model, params, x_batch, y_batch):
    # y_batch: (batch, out_seq_length, dim); accumulate per-step errors to
    # avoid materializing a 3-D node.
    rows = model.rollout(x_batch, params=params)
    total = None
    for t, row in enumerate(rows):
        d = T.sub(row, y_batch[:, t, :])
        term = T.mean_all(T.mul(d, d))
        total = term if total is None else T.add(total, term)
    return T.mul(total, 1.0 / len(rows))


def train(net, inputs, targets, cfg: TrainingConfig) -> TrainResult:
    """Fit a network by mini-batch Adam on mean squared error.

    ``targets`` may be None for autoencoders (reconstruction of the
    inputs). Returns a new network; the argument is left untouched. On a
    non-finite loss or gradient the loop aborts with ``NanEncountered``
    whose ``partial`` carries the history so far.
    """
    inputs = np.asarray(inputs, dtype=float)
    if isinstance(net, Autoencoder):
        loss_fn = _autoencoder_loss
        targets = inputs if targets is None else np.asarray(targets, dtype=float)
        sequential = False
    elif isinstance(net, LstmStack):
        loss_fn = _lstm_loss
        if targets is None:
            raise DimensionMismatch("sequence training requires explicit target windows")
        targets = np.asarray(targets, dtype=float)
        if targets.shape[1] != net.out_seq_length:
            raise DimensionMismatch(
                f"target window length {targets.shape[1]} != out_seq_length {net.out_seq_length}"
            )
        sequential = True
    elif isinstance(net, DenseNetwork):
        loss_fn = _dense_loss
        if targets is None:
            raise DimensionMismatch("dense training requires targets")
        targets = np.asarray(targets, dtype=float)
        sequential = False
    else:
        raise DassimError(f"cannot train model of type {type(net).__name__}")

    if inputs.shape[0] != targets.shape[0]:
        raise DimensionMismatch(
            f"{inputs.shape[0]} inputs vs {targets.shape[0]} targets"
        )

    n = inputs.shape[0]
    n_val = validation_split_size(n, cfg.validation_fraction)
    rng = RngHandle(cfg.seed)
    if n_val > 0:
        if sequential:
            train_idx = np.arange(n - n_val)
            val_idx = np.arange(n - n_val, n)
        else:
            order = rng.permutation(n)
            val_idx = order[:n_val]
            train_idx = order[n_val:]
    else:
        train_idx = np.arange(n)
        val_idx = None
    x_train, y_train = inputs[train_idx], targets[train_idx]
    x_val = inputs[val_idx] if val_idx is not None else None
    y_val = targets[val_idx] if val_idx is not None else None

    arrays = [np.array(a) for a in net.parameter_arrays()]
    flat, shapes = _flatten(arrays)
    state = AdamState.initial(flat.size, cfg.learning_rate)

    train_hist: list[float] = []
    val_hist: list[float] = []

    def partial():
        trained = net.with_parameters(_unflatten(flat, shapes))
        return TrainResult(trained, train_hist, val_hist if n_val > 0 else None)

    for _epoch in range(cfg.epochs):
        batch_losses = []
        for idx in _batch_indices(len(x_train), cfg.batch_size, rng):
            tp = T.GradientTape()
            param_nodes = [tp.input(a) for a in _unflatten(flat, shapes)]
            loss = loss_fn(net, param_nodes, x_train[idx], y_train[idx])
            loss_val = float(loss.value)
            if not np.isfinite(loss_val):
                raise NanEncountered("training loss is non-finite", partial=partial())
            grads = T.gradient(loss, param_nodes, warn_disconnected=False)
            gflat, _ = _flatten(grads)
            try:
                flat, state = adam_step(flat, gflat, state)
            except NanEncountered as exc:
                raise NanEncountered(str(exc), partial=partial()) from exc
            batch_losses.append(loss_val)
        train_hist.append(float(np.mean(batch_losses)))
        if n_val > 0:
            params = _unflatten(flat, shapes)
            val_loss = float(loss_fn(net, params, x_val, y_val))
            val_hist.append(val_loss)

    return partial()
