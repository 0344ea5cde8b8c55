"""Model file format: versioned magic, JSON shape header, float64 payload.

Layout::

    b"DASSIM-NN-1\\n"                      magic, 12 bytes
    uint64 little-endian                    header length in bytes
    JSON header (utf-8, sorted keys)        kind + architecture + array manifest
    concatenated arrays                     row-major float64, little-endian

Identical models serialize to identical bytes, so retraining with the same
seed reproduces model files exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DassimError
from .operators import Autoencoder, DenseLayer, DenseNetwork, LstmLayerWeights, LstmStack

MAGIC = b"DASSIM-NN-1\n"


def _dense_spec(net: DenseNetwork):
    return {
        "dims": [net.input_dim] + [lay.weight.shape[1] for lay in net.layers],
        "activations": [lay.activation for lay in net.layers],
    }


def _dense_arrays(net: DenseNetwork):
    return net.parameter_arrays()


def _dense_from(spec, arrays):
    layers = []
    for i, act in enumerate(spec["activations"]):
        layers.append(DenseLayer(arrays[2 * i], arrays[2 * i + 1], act))
    return DenseNetwork(layers)


def save_model(path, model) -> None:
    if isinstance(model, DenseNetwork):
        kind, spec = "dense", _dense_spec(model)
        arrays = _dense_arrays(model)
    elif isinstance(model, LstmStack):
        kind = "lstm"
        spec = {
            "num_layers": model.num_layers,
            "input_dim": model.input_dim,
            "hidden_dim": model.hidden_dim,
            "out_seq_length": model.out_seq_length,
        }
        arrays = model.parameter_arrays()
    elif isinstance(model, Autoencoder):
        kind = "autoencoder"
        spec = {"encoder": _dense_spec(model.encoder), "decoder": _dense_spec(model.decoder)}
        arrays = model.parameter_arrays()
    else:
        raise DassimError(f"cannot serialize model of type {type(model).__name__}")

    header = {
        "kind": kind,
        "spec": spec,
        "arrays": [list(a.shape) for a in arrays],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise DassimError(f"{path}: not a model file (bad magic {magic!r})")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = []
        for shape in header["arrays"]:
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise DassimError(f"{path}: truncated payload")
            arrays.append(np.frombuffer(buf, dtype="<f8").astype(float).reshape(shape))

    kind, spec = header["kind"], header["spec"]
    if kind == "dense":
        return _dense_from(spec, arrays)
    if kind == "lstm":
        layers = []
        for k in range(spec["num_layers"]):
            layers.append(LstmLayerWeights(*arrays[12 * k: 12 * (k + 1)]))
        return LstmStack(layers, arrays[-2], arrays[-1], spec["out_seq_length"])
    if kind == "autoencoder":
        n_enc = 2 * len(spec["encoder"]["activations"])
        return Autoencoder(_dense_from(spec["encoder"], arrays[:n_enc]),
                           _dense_from(spec["decoder"], arrays[n_enc:]))
    raise DassimError(f"{path}: unknown model kind {kind!r}")
