"""Differentiable forward and observation operators.

An operator pairs an evaluation map with a consistent vector-Jacobian
product so that variational costs can be differentiated through it. Linear
maps, tape-defined physics steps, dense networks, stacked LSTMs and
autoencoder halves all satisfy the same contract and compose freely.

Forward models follow one window convention throughout the package: a
model applied to the state at instant T emits ``sequence_length`` rows
covering instants T, T+1, ..., T+sequence_length-1, so the last row lands
``sequence_length - 1`` forward steps later. Rows before the last are
inter-observation fill used only for output trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as T
from .errors import DassimError, DimensionMismatch
from .rng import RngHandle


class DifferentiableOperator:
    """Evaluation plus vector-Jacobian product.

    ``input_dim`` is the accepted state length. ``output_shape`` is
    ``(dim,)`` for observation operators and ``(seq_len, dim)`` for
    forward models. ``vjp(x, ct)`` returns ``ct^T J(x)`` reshaped to the
    input; it must agree with finite differences on smooth inputs.
    """

    input_dim: int | None = None
    output_shape: tuple | None = None

    def evaluate(self, x) -> np.ndarray:
        raise NotImplementedError

    def vjp(self, x, cotangent) -> np.ndarray:
        _, pullback = self.evaluate_with_pullback(x)
        return pullback(np.asarray(cotangent, dtype=float))

    def evaluate_with_pullback(self, x):
        """Forward value plus a pullback closure reusing that forward pass."""
        raise NotImplementedError

    def __call__(self, x):
        return self.evaluate(x)

    @property
    def output_dim(self):
        if self.output_shape is None:
            return None
        return self.output_shape[-1]


class LinearOperator(DifferentiableOperator):
    """Observation through a fixed matrix: evaluate(x) = H x, vjp = H^T ct."""

    def __init__(self, matrix):
        h = np.asarray(matrix, dtype=float)
        if h.ndim != 2:
            raise DimensionMismatch(f"linear operator needs a 2-D matrix, got shape {h.shape}")
        if not np.all(np.isfinite(h)):
            raise DassimError("linear operator matrix contains non-finite entries")
        self.matrix = h
        self.input_dim = h.shape[1]
        self.output_shape = (h.shape[0],)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_dim:
            raise DimensionMismatch(
                f"state length {x.shape[-1]} != operator input dim {self.input_dim}"
            )
        return x @ self.matrix.T

    def evaluate_with_pullback(self, x):
        return self.evaluate(x), lambda ct: ct @ self.matrix


def linear_operator(h) -> LinearOperator:
    return LinearOperator(h)


def identity_operator(dim: int) -> LinearOperator:
    return LinearOperator(np.eye(dim))


class TapeOperator(DifferentiableOperator):
    """Operator defined by a function written in tape primitives.

    ``fn(x)`` must be built from :mod:`dassim.tape` functions so that the
    same source evaluates plain arrays directly and differentiates when
    handed a tape node.
    """

    def __init__(self, fn, input_dim, output_shape):
        self.fn = fn
        self.input_dim = int(input_dim)
        self.output_shape = tuple(output_shape)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise DimensionMismatch(
                f"expected input shape ({self.input_dim},), got {x.shape}"
            )
        return x

    def evaluate(self, x):
        return np.asarray(self.fn(self._check(x)), dtype=float)

    def evaluate_with_pullback(self, x):
        x = self._check(x)
        tp = T.GradientTape()
        xn = tp.input(x)
        out = self.fn(xn)

        def pullback(ct):
            return T.gradient(out, [xn], seed_cotangent=ct, warn_disconnected=False)[0]

        return np.array(out.value), pullback


class PersistenceModel(DifferentiableOperator):
    """Forward model that repeats the input state for the whole window."""

    def __init__(self, dim: int, sequence_length: int):
        self.input_dim = int(dim)
        self.output_shape = (int(sequence_length), int(dim))

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise DimensionMismatch(f"expected shape ({self.input_dim},), got {x.shape}")
        return np.tile(x, (self.output_shape[0], 1))

    def evaluate_with_pullback(self, x):
        return self.evaluate(x), lambda ct: np.asarray(ct, dtype=float).sum(axis=0)


def persistence_model(dim: int, sequence_length: int) -> PersistenceModel:
    return PersistenceModel(dim, sequence_length)


def physics_model(step_fn, dim: int, sequence_length: int, args=()) -> TapeOperator:
    """Forward model from a tape-compatible single-step function.

    The emitted block starts with the input state itself, followed by
    ``sequence_length - 1`` applications of ``step_fn``.
    """
    if sequence_length < 1:
        raise DimensionMismatch("sequence length must be >= 1")

    def fn(x):
        rows = [x]
        cur = x
        for _ in range(sequence_length - 1):
            cur = step_fn(cur, *args)
            rows.append(cur)
        return T.stack_rows(rows)

    return TapeOperator(fn, dim, (sequence_length, dim))


class ComposedOperator(DifferentiableOperator):
    """Pipeline of operators applied in the listed order."""

    def __init__(self, parts):
        flat = []
        for p in parts:
            if isinstance(p, ComposedOperator):
                flat.extend(p.parts)
            else:
                flat.append(p)
        if not flat:
            raise DimensionMismatch("compose requires at least one operator")
        for left, right in zip(flat[:-1], flat[1:]):
            out_dim = left.output_dim
            if left.output_shape is not None and len(left.output_shape) != 1:
                raise DimensionMismatch("only vector-valued operators can be chained")
            if out_dim is not None and right.input_dim is not None and out_dim != right.input_dim:
                raise DimensionMismatch(
                    f"cannot chain output dim {out_dim} into input dim {right.input_dim}"
                )
        self.parts = flat
        self.input_dim = flat[0].input_dim
        self.output_shape = flat[-1].output_shape

    def evaluate(self, x):
        cur = np.asarray(x, dtype=float)
        for p in self.parts:
            cur = p.evaluate(cur)
        return cur

    def evaluate_with_pullback(self, x):
        cur = np.asarray(x, dtype=float)
        pullbacks = []
        for p in self.parts:
            cur, pb = p.evaluate_with_pullback(cur)
            pullbacks.append(pb)

        def pullback(ct):
            for pb in reversed(pullbacks):
                ct = pb(ct)
            return ct

        return cur, pullback


def compose(*parts) -> DifferentiableOperator:
    """Chain operators; the first listed is applied first.

    Nested compositions are flattened, so regrouping the same parts yields
    the identical arithmetic order. Dimension mismatches are reported at
    construction, not first use.
    """
    if len(parts) == 1 and isinstance(parts[0], (list, tuple)):
        parts = tuple(parts[0])
    if len(parts) == 1 and not isinstance(parts[0], ComposedOperator):
        return parts[0]
    return ComposedOperator(parts)


class CallableOperator(DifferentiableOperator):
    """Wrap a plain callable ``fn(x, *args)`` as an operator.

    Without an explicit ``vjp_fn`` the wrapped operator cannot be
    differentiated; variational algorithms will reject it. Use a
    ``TapeOperator`` (or pass ``vjp_fn``) when gradients are required.
    """

    def __init__(self, fn, args=(), input_dim=None, output_shape=None, vjp_fn=None):
        self.fn = fn
        self.args = tuple(args)
        self.input_dim = input_dim
        self.output_shape = tuple(output_shape) if output_shape is not None else None
        self._vjp_fn = vjp_fn

    @property
    def differentiable(self):
        return self._vjp_fn is not None

    def evaluate(self, x):
        return np.asarray(self.fn(np.asarray(x, dtype=float), *self.args), dtype=float)

    def evaluate_with_pullback(self, x):
        if self._vjp_fn is None:
            raise DassimError(
                "wrapped callable has no vector-Jacobian product; provide vjp_fn "
                "or build the model from tape primitives (TapeOperator)"
            )
        x = np.asarray(x, dtype=float)
        return self.evaluate(x), lambda ct: np.asarray(self._vjp_fn(x, ct), dtype=float)


# ---------------------------------------------------------------------------
# Neural building blocks
# ---------------------------------------------------------------------------

_ACTIVATIONS = {
    "tanh": T.tanh,
    "sigmoid": T.sigmoid,
    "relu": T.relu,
    "identity": lambda v: v,
}


@dataclass
class DenseLayer:
    weight: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise DimensionMismatch(
                f"layer weight {self.weight.shape} / bias {self.bias.shape} inconsistent"
            )
        if self.activation not in _ACTIVATIONS:
            raise DassimError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise DassimError("layer parameters contain non-finite entries")


def _init_matrix(rng: RngHandle, fan_in: int, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


class DenseNetwork:
    """Stack of affine layers with elementwise activations."""

    def __init__(self, layers):
        layers = list(layers)
        if not layers:
            raise DimensionMismatch("network needs at least one layer")
        for a, b in zip(layers[:-1], layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise DimensionMismatch(
                    f"layer dims do not chain: {a.weight.shape} -> {b.weight.shape}"
                )
        self.layers = layers
        self.input_dim = layers[0].weight.shape[0]
        self.output_dim = layers[-1].weight.shape[1]

    @classmethod
    def create(cls, dims, activations=None, seed: int = 0) -> "DenseNetwork":
        """Seeded network with uniform +-1/sqrt(fan_in) initialization.

        ``dims`` lists layer widths input-first; ``activations`` defaults
        to tanh on hidden layers and identity on the output layer.
        """
        if len(dims) < 2:
            raise DimensionMismatch("need at least an input and an output width")
        if activations is None:
            activations = ["tanh"] * (len(dims) - 2) + ["identity"]
        if len(activations) != len(dims) - 1:
            raise DimensionMismatch("one activation required per layer")
        rng = RngHandle(seed)
        layers = []
        for i, act in enumerate(activations):
            w = _init_matrix(rng, dims[i], (dims[i], dims[i + 1]))
            b = _init_matrix(rng, dims[i], (dims[i + 1],))
            layers.append(DenseLayer(w, b, act))
        return cls(layers)

    def forward(self, x, params=None):
        """Evaluate on an array or tape node; batched rows are allowed.

        ``params`` optionally substitutes the flat parameter list produced
        by :meth:`parameter_arrays` (tape nodes during training).
        """
        cur = x
        for i, layer in enumerate(self.layers):
            if params is None:
                w, b = layer.weight, layer.bias
            else:
                w, b = params[2 * i], params[2 * i + 1]
            cur = _ACTIVATIONS[layer.activation](T.affine(cur, w, b))
        return cur

    def parameter_arrays(self):
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        return out

    def with_parameters(self, arrays) -> "DenseNetwork":
        layers = [
            DenseLayer(arrays[2 * i], arrays[2 * i + 1], layer.activation)
            for i, layer in enumerate(self.layers)
        ]
        return DenseNetwork(layers)

    def as_operator(self) -> TapeOperator:
        return TapeOperator(self.forward, self.input_dim, (self.output_dim,))


def dense_forward(net: DenseNetwork, x) -> np.ndarray:
    """Sequential affine-plus-activation evaluation of a dense network."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.input_dim:
        raise DimensionMismatch(
            f"input length {x.shape[-1]} != network input dim {net.input_dim}"
        )
    return np.asarray(net.forward(x), dtype=float)


@dataclass
class LstmLayerWeights:
    """Gate parameters of one cell: w_* map the step input, u_* the hidden state."""

    w_i: np.ndarray
    u_i: np.ndarray
    b_i: np.ndarray
    w_f: np.ndarray
    u_f: np.ndarray
    b_f: np.ndarray
    w_c: np.ndarray
    u_c: np.ndarray
    b_c: np.ndarray
    w_o: np.ndarray
    u_o: np.ndarray
    b_o: np.ndarray

    def arrays(self):
        return [self.w_i, self.u_i, self.b_i, self.w_f, self.u_f, self.b_f,
                self.w_c, self.u_c, self.b_c, self.w_o, self.u_o, self.b_o]


class LstmStack:
    """Stacked LSTM with an affine readout, rolled out autoregressively.

    The readout maps the top hidden state back to a state vector which
    feeds the next cell step, so the readout width equals ``input_dim``.
    Row t of a rollout is the state t steps after the input instant; row 0
    is the model's own reconstruction of the current state, matching the
    forward-model window convention.
    """

    def __init__(self, layers, readout_weight, readout_bias, out_seq_length: int):
        self.layers = list(layers)
        self.readout_weight = np.asarray(readout_weight, dtype=float)
        self.readout_bias = np.asarray(readout_bias, dtype=float)
        if out_seq_length < 1:
            raise DimensionMismatch("out_seq_length must be >= 1")
        self.out_seq_length = int(out_seq_length)
        self.num_layers = len(self.layers)
        self.input_dim = self.layers[0].w_i.shape[0]
        self.hidden_dim = self.layers[0].w_i.shape[1]
        if self.readout_weight.shape != (self.hidden_dim, self.input_dim):
            raise DimensionMismatch(
                f"readout weight {self.readout_weight.shape} must map hidden "
                f"{self.hidden_dim} to state {self.input_dim}"
            )
        for k, lay in enumerate(self.layers):
            in_dim = self.input_dim if k == 0 else self.hidden_dim
            for name in ("w_i", "w_f", "w_c", "w_o"):
                if getattr(lay, name).shape != (in_dim, self.hidden_dim):
                    raise DimensionMismatch(f"layer {k} gate {name} shape mismatch")
            for name in ("u_i", "u_f", "u_c", "u_o"):
                if getattr(lay, name).shape != (self.hidden_dim, self.hidden_dim):
                    raise DimensionMismatch(f"layer {k} gate {name} shape mismatch")

    @classmethod
    def create(cls, num_layers: int, input_dim: int, hidden_dim: int,
               out_seq_length: int, seed: int = 0) -> "LstmStack":
        rng = RngHandle(seed)
        layers = []
        for k in range(num_layers):
            in_dim = input_dim if k == 0 else hidden_dim
            mk = lambda shape, fan: _init_matrix(rng, fan, shape)
            layers.append(LstmLayerWeights(
                w_i=mk((in_dim, hidden_dim), in_dim), u_i=mk((hidden_dim, hidden_dim), hidden_dim),
                b_i=mk((hidden_dim,), in_dim),
                w_f=mk((in_dim, hidden_dim), in_dim), u_f=mk((hidden_dim, hidden_dim), hidden_dim),
                b_f=mk((hidden_dim,), in_dim),
                w_c=mk((in_dim, hidden_dim), in_dim), u_c=mk((hidden_dim, hidden_dim), hidden_dim),
                b_c=mk((hidden_dim,), in_dim),
                w_o=mk((in_dim, hidden_dim), in_dim), u_o=mk((hidden_dim, hidden_dim), hidden_dim),
                b_o=mk((hidden_dim,), in_dim),
            ))
        readout_w = _init_matrix(rng, hidden_dim, (hidden_dim, input_dim))
        readout_b = _init_matrix(rng, hidden_dim, (input_dim,))
        return cls(layers, readout_w, readout_b, out_seq_length)

    def parameter_arrays(self):
        out = []
        for lay in self.layers:
            out.extend(lay.arrays())
        out.extend([self.readout_weight, self.readout_bias])
        return out

    def with_parameters(self, arrays) -> "LstmStack":
        layers = []
        for k in range(self.num_layers):
            chunk = arrays[12 * k: 12 * (k + 1)]
            layers.append(LstmLayerWeights(*chunk))
        return LstmStack(layers, arrays[-2], arrays[-1], self.out_seq_length)

    def _cell(self, lay_params, x, h, c):
        (w_i, u_i, b_i, w_f, u_f, b_f, w_c, u_c, b_c, w_o, u_o, b_o) = lay_params
        i = T.sigmoid(T.add(T.affine(x, w_i, b_i), T.matmul(h, u_i)))
        f = T.sigmoid(T.add(T.affine(x, w_f, b_f), T.matmul(h, u_f)))
        g = T.tanh(T.add(T.affine(x, w_c, b_c), T.matmul(h, u_c)))
        o = T.sigmoid(T.add(T.affine(x, w_o, b_o), T.matmul(h, u_o)))
        c_new = T.add(T.mul(f, c), T.mul(i, g))
        h_new = T.mul(o, T.tanh(c_new))
        return h_new, c_new

    def rollout(self, x0, length=None, params=None):
        """Emit rows for the requested window; see the class note for timing.

        ``x0`` may be a vector, a (batch, input_dim) matrix or a tape node.
        Each emitted state feeds the next cell step through the readout.
        """
        length = self.out_seq_length if length is None else int(length)
        values = np.asarray(x0.value if isinstance(x0, T.TapeNode) else x0, dtype=float)
        batched = values.ndim == 2
        hidden_shape = (values.shape[0], self.hidden_dim) if batched else (self.hidden_dim,)
        if params is None:
            layer_params = [lay.arrays() for lay in self.layers]
            readout_w, readout_b = self.readout_weight, self.readout_bias
        else:
            layer_params = [params[12 * k: 12 * (k + 1)] for k in range(self.num_layers)]
            readout_w, readout_b = params[-2], params[-1]
        h = [np.zeros(hidden_shape) for _ in range(self.num_layers)]
        c = [np.zeros(hidden_shape) for _ in range(self.num_layers)]
        cur = x0
        rows = []
        for _ in range(length):
            inp = cur
            for k in range(self.num_layers):
                h[k], c[k] = self._cell(layer_params[k], inp, h[k], c[k])
                inp = h[k]
            cur = T.affine(inp, readout_w, readout_b)
            rows.append(cur)
        return rows

    def _rollout_stacked(self, x0):
        return T.stack_rows(self.rollout(x0))

    def as_operator(self) -> TapeOperator:
        return TapeOperator(self._rollout_stacked, self.input_dim,
                            (self.out_seq_length, self.input_dim))


def lstm_rollout(model: LstmStack, x0) -> np.ndarray:
    """Autoregressive rollout of length ``out_seq_length`` from one state."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.input_dim,):
        raise DimensionMismatch(
            f"initial state shape {x0.shape} != ({model.input_dim},)"
        )
    return np.stack([np.asarray(r, dtype=float) for r in model.rollout(x0)], axis=0)


class Autoencoder:
    """Encoder/decoder pair compressing a flattened field to a latent vector."""

    def __init__(self, encoder: DenseNetwork, decoder: DenseNetwork):
        if encoder.output_dim != decoder.input_dim:
            raise DimensionMismatch(
                f"encoder output {encoder.output_dim} != decoder input {decoder.input_dim}"
            )
        if encoder.input_dim != decoder.output_dim:
            raise DimensionMismatch(
                f"encoder input {encoder.input_dim} != decoder output {decoder.output_dim}"
            )
        self.encoder = encoder
        self.decoder = decoder
        self.latent_dim = encoder.output_dim
        self.field_dim = encoder.input_dim

    @classmethod
    def create(cls, field_dim: int, latent_dim: int, hidden=(256, 64),
               seed: int = 0) -> "Autoencoder":
        enc_dims = [field_dim, *hidden, latent_dim]
        dec_dims = list(reversed(enc_dims))
        encoder = DenseNetwork.create(enc_dims, seed=seed)
        decoder = DenseNetwork.create(dec_dims, seed=seed + 1)
        return cls(encoder, decoder)

    def encode(self, x):
        return self.encoder.forward(x)

    def decode(self, z):
        return self.decoder.forward(z)

    def reconstruct(self, x):
        return self.decode(self.encode(x))

    def parameter_arrays(self):
        return self.encoder.parameter_arrays() + self.decoder.parameter_arrays()

    def with_parameters(self, arrays) -> "Autoencoder":
        n_enc = 2 * len(self.encoder.layers)
        return Autoencoder(self.encoder.with_parameters(arrays[:n_enc]),
                           self.decoder.with_parameters(arrays[n_enc:]))

    def encoder_operator(self) -> TapeOperator:
        return self.encoder.as_operator()

    def decoder_operator(self) -> TapeOperator:
        return self.decoder.as_operator()
