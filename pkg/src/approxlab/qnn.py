"""Quantized feed-forward network representation and integer inference.

Networks carry int8 weights in sign + 7-bit-magnitude form (no -128), int32
biases and real-valued scales.  Activations between layers are unsigned
uint8 in [0, 255]; products inside conv/dense layers are computed as
``sign(w) * table[|w|][activation]`` where ``table`` is an 8x8 unsigned
multiplier lookup, so any approximate multiplier can stand in for the exact
one.  Accumulation is 32-bit-safe signed integer arithmetic; requantization
multiplies by ``scale_in / scale_out`` in exact float64, rounds half away
from zero and clamps to [0, 255].  The final dense layer has a null
``scale_out`` and emits raw integer logits; argmax ties resolve to the first
index.

File format (byte-exact, see docs/formats.md): a JSON envelope next to a
little-endian binary blob holding int8 weight and int32 bias sections
referenced by offset and length.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import NETWORK_FORMAT_VERSION
from .errors import NetworkFormatError

try:  # same opt-in knob as the simulator
    if os.environ.get("APPROXLAB_NO_JIT"):
        raise ImportError
    import numba as _numba
except ImportError:
    _numba = None


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

@dataclass
class Conv2d:
    name: str
    weights: np.ndarray          # (C_out, C_in, kh, kw) int8, |w| <= 127
    bias: np.ndarray             # (C_out,) int32
    stride: int
    pad: int
    scale_in: float              # scale of one accumulator unit (act * weight)
    scale_out: float             # scale of the output activation
    type: str = field(default="conv2d", init=False)

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.weights.shape[1]:
            raise NetworkFormatError(
                f"{self.name}: expected {self.weights.shape[1]} input "
                f"channels, got {c}")
        kh, kw = self.weights.shape[2:]
        ho = (h + 2 * self.pad - kh) // self.stride + 1
        wo = (w + 2 * self.pad - kw) // self.stride + 1
        return (self.weights.shape[0], ho, wo)

    def mult_count(self, in_shape):
        co, ho, wo = self.out_shape(in_shape)
        ci, kh, kw = self.weights.shape[1:]
        return co * ho * wo * ci * kh * kw


@dataclass
class Dense:
    name: str
    weights: np.ndarray          # (out, in) int8
    bias: np.ndarray             # (out,) int32
    scale_in: float
    scale_out: float | None     # None: output layer, raw integer logits
    type: str = field(default="dense", init=False)

    def out_shape(self, in_shape):
        (n,) = in_shape
        if n != self.weights.shape[1]:
            raise NetworkFormatError(
                f"{self.name}: expected {self.weights.shape[1]} inputs, got {n}")
        return (self.weights.shape[0],)

    def mult_count(self, in_shape):
        return self.weights.shape[0] * self.weights.shape[1]


@dataclass
class Relu:
    name: str
    type: str = field(default="relu", init=False)

    def out_shape(self, in_shape):
        return in_shape


@dataclass
class GlobalAvgPool:
    name: str
    type: str = field(default="avgpool", init=False)

    def out_shape(self, in_shape):
        c = in_shape[0]
        return (c, 1, 1)


@dataclass
class Flatten:
    name: str
    type: str = field(default="flatten", init=False)

    def out_shape(self, in_shape):
        total = 1
        for d in in_shape:
            total *= d
        return (total,)


@dataclass
class ResidualAdd:
    """Adds the uint8 output of an earlier layer, rescaling both sides."""

    name: str
    other: int                   # index of the earlier layer (-1: network input)
    scale_in: float              # scale of the main path
    scale_other: float
    scale_out: float
    type: str = field(default="residual_add", init=False)

    def out_shape(self, in_shape):
        return in_shape


Layer = Union[Conv2d, Dense, Relu, GlobalAvgPool, Flatten, ResidualAdd]


@dataclass
class QuantizedNetwork:
    layers: list
    class_count: int
    input_shape: tuple

    def __post_init__(self):
        self.validate()

    def shapes(self) -> list[tuple]:
        """Output shape after each layer; raises if shapes do not chain."""
        shape = tuple(self.input_shape)
        out = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, ResidualAdd):
                other_shape = (tuple(self.input_shape) if layer.other < 0
                               else out[layer.other])
                if other_shape != shape:
                    raise NetworkFormatError(
                        f"{layer.name}: cannot add shape {other_shape} to {shape}")
            shape = layer.out_shape(shape)
            out.append(shape)
        return out

    def validate(self) -> None:
        shapes = self.shapes()
        if shapes[-1] != (self.class_count,):
            raise NetworkFormatError(
                f"final layer produces {shapes[-1]}, expected "
                f"({self.class_count},)")
        for layer in self.layers:
            if isinstance(layer, (Conv2d, Dense)):
                w = layer.weights
                if w.dtype != np.int8 or int(w.min(initial=0)) < -127:
                    raise NetworkFormatError(
                        f"{layer.name}: weights must be int8 with magnitude "
                        f"<= 127")
                if layer.bias.dtype != np.int32:
                    raise NetworkFormatError(
                        f"{layer.name}: bias must be int32")
        last = self.layers[-1]
        if not isinstance(last, Dense) or last.scale_out is not None:
            raise NetworkFormatError(
                "network must end in a dense logits layer (scale_out null)")

    def mult_layers(self) -> list[tuple[int, int]]:
        """(layer_index, multiplication_count) for every conv/dense layer."""
        shape = tuple(self.input_shape)
        counts = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, (Conv2d, Dense)):
                counts.append((i, layer.mult_count(shape)))
            shape = layer.out_shape(shape)
        return counts

    @property
    def total_mults(self) -> int:
        return sum(c for _, c in self.mult_layers())


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def _round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def _requant(acc: np.ndarray, scale: float) -> np.ndarray:
    q = _round_half_away(acc.astype(np.float64) * scale)
    return np.clip(q, 0, 255).astype(np.uint8)


def signed_product_table(table: np.ndarray) -> np.ndarray:
    """(255, 256) int32 indexed by (w + 127, activation): sign-folded LUT."""
    t = np.asarray(table, dtype=np.int64)
    if t.shape != (256, 256):
        raise NetworkFormatError("multiplier table must be 256x256")
    out = np.empty((255, 256), dtype=np.int32)
    out[127:] = t[:128]                  # w in 0..127
    out[:127] = -t[127:0:-1]             # w in -127..-1 -> -table[|w|]
    return out


if _numba is not None:

    @_numba.njit(cache=True)
    def _conv_lut_jit(xp, w, bias, slut, stride, out):  # pragma: no cover
        co_n, ci_n, kh, kw = w.shape
        _, ho, wo = out.shape
        for co in range(co_n):
            for oy in range(ho):
                for ox in range(wo):
                    acc = np.int64(bias[co])
                    for ci in range(ci_n):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += slut[w[co, ci, ky, kx] + 127,
                                            xp[ci, oy * stride + ky,
                                               ox * stride + kx]]
                    out[co, oy, ox] = acc
else:
    _conv_lut_jit = None


def _conv_accumulate(x: np.ndarray, layer: Conv2d, slut: np.ndarray) -> np.ndarray:
    """LUT-based convolution accumulator (int64, bias included)."""
    p = layer.pad
    xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
    co, ho, wo = layer.out_shape(x.shape)
    out = np.empty((co, ho, wo), dtype=np.int64)
    if _conv_lut_jit is not None:
        _conv_lut_jit(xp, layer.weights, layer.bias, slut, layer.stride, out)
        return out
    # numpy fallback: im2col then a flat-table gather
    ci, kh, kw = layer.weights.shape[1:]
    s = layer.stride
    cols = np.empty((ho * wo, ci * kh * kw), dtype=np.int32)
    i = 0
    for ky in range(kh):
        for kx in range(kw):
            patch = xp[:, ky:ky + s * ho:s, kx:kx + s * wo:s]
            cols[:, i::kh * kw] = patch.reshape(ci, -1).T
            i += 1
    wflat = layer.weights.reshape(co, -1).astype(np.int32) + 127
    flat = slut.ravel()
    acc = np.empty((co, ho * wo), dtype=np.int64)
    for c in range(co):
        acc[c] = flat[wflat[c][None, :] * 256 + cols].sum(axis=1, dtype=np.int64)
    return acc.reshape(co, ho, wo) + layer.bias[:, None, None]


def _dense_accumulate(x: np.ndarray, layer: Dense, slut: np.ndarray) -> np.ndarray:
    w = layer.weights.astype(np.int32) + 127
    products = slut[w, x[None, :].astype(np.int32)]
    return products.sum(axis=1, dtype=np.int64) + layer.bias


def prepare_luts(net: QuantizedNetwork, table_map) -> list:
    """Per-layer signed product tables.

    ``table_map`` is one 256x256 table for every layer or a dict mapping
    layer index to a table (every conv/dense index must be covered).
    """
    if isinstance(table_map, np.ndarray):
        slut = signed_product_table(table_map)
        return [slut if isinstance(l, (Conv2d, Dense)) else None
                for l in net.layers]
    prepared = [None] * len(net.layers)
    cache: dict[int, np.ndarray] = {}
    for i, layer in enumerate(net.layers):
        if isinstance(layer, (Conv2d, Dense)):
            if i not in table_map:
                raise NetworkFormatError(
                    f"no multiplier table for layer {i} ({layer.name})")
            key = id(table_map[i])
            if key not in cache:
                cache[key] = signed_product_table(table_map[i])
            prepared[i] = cache[key]
    return prepared


def infer_prepared(net: QuantizedNetwork, x: np.ndarray,
                   prepared: list) -> tuple[int, np.ndarray]:
    """Forward pass with per-layer signed product tables."""
    if x.dtype != np.uint8 or x.shape != tuple(net.input_shape):
        raise NetworkFormatError(
            f"input must be uint8 of shape {tuple(net.input_shape)}, got "
            f"{x.dtype} {x.shape}")
    act = x
    saved: list[np.ndarray] = []
    logits = None
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Conv2d):
            acc = _conv_accumulate(act, layer, prepared[i])
            act = _requant(acc, layer.scale_in / layer.scale_out)
        elif isinstance(layer, Dense):
            acc = _dense_accumulate(act, layer, prepared[i])
            if layer.scale_out is None:
                logits = acc
                act = None
            else:
                act = _requant(acc, layer.scale_in / layer.scale_out)
        elif isinstance(layer, Relu):
            pass  # activations are already clamped to [0, 255]
        elif isinstance(layer, GlobalAvgPool):
            mean = act.astype(np.float64).mean(axis=(1, 2), keepdims=True)
            act = np.clip(_round_half_away(mean), 0, 255).astype(np.uint8)
        elif isinstance(layer, Flatten):
            act = act.reshape(-1)
        elif isinstance(layer, ResidualAdd):
            other = x if layer.other < 0 else saved[layer.other]
            v = (act.astype(np.float64) * (layer.scale_in / layer.scale_out)
                 + other.astype(np.float64) * (layer.scale_other / layer.scale_out))
            act = np.clip(_round_half_away(v), 0, 255).astype(np.uint8)
        saved.append(act)
    return int(np.argmax(logits)), logits


def infer(net: QuantizedNetwork, x: np.ndarray, table: np.ndarray,
          ) -> tuple[int, np.ndarray]:
    """Forward pass with one multiplier table used in every layer."""
    return infer_prepared(net, x, prepare_luts(net, table))


def infer_reference(net: QuantizedNetwork, x: np.ndarray,
                    ) -> tuple[int, np.ndarray]:
    """LUT-free integer reference path (direct products, float64 matmul).

    Independent of the table-driven engine; used to cross-check it.
    """
    if x.dtype != np.uint8 or x.shape != tuple(net.input_shape):
        raise NetworkFormatError("input shape/dtype mismatch")
    act = x
    saved: list[np.ndarray] = []
    logits = None
    for layer in net.layers:
        if isinstance(layer, Conv2d):
            p = layer.pad
            xp = np.pad(act, ((0, 0), (p, p), (p, p))) if p else act
            co, ho, wo = layer.out_shape(act.shape)
            ci, kh, kw = layer.weights.shape[1:]
            s = layer.stride
            cols = np.empty((ho * wo, ci * kh * kw), dtype=np.float64)
            i = 0
            for ky in range(kh):
                for kx in range(kw):
                    patch = xp[:, ky:ky + s * ho:s, kx:kx + s * wo:s]
                    cols[:, i::kh * kw] = patch.reshape(ci, -1).T
                    i += 1
            wmat = layer.weights.reshape(co, -1).astype(np.float64)
            acc = (wmat @ cols.T).astype(np.int64) + layer.bias[:, None]
            act = _requant(acc.reshape(co, ho, wo),
                           layer.scale_in / layer.scale_out)
        elif isinstance(layer, Dense):
            acc = (layer.weights.astype(np.float64)
                   @ act.astype(np.float64)).astype(np.int64) + layer.bias
            if layer.scale_out is None:
                logits = acc
                act = None
            else:
                act = _requant(acc, layer.scale_in / layer.scale_out)
        elif isinstance(layer, Relu):
            pass
        elif isinstance(layer, GlobalAvgPool):
            mean = act.astype(np.float64).mean(axis=(1, 2), keepdims=True)
            act = np.clip(_round_half_away(mean), 0, 255).astype(np.uint8)
        elif isinstance(layer, Flatten):
            act = act.reshape(-1)
        elif isinstance(layer, ResidualAdd):
            other = x if layer.other < 0 else saved[layer.other]
            v = (act.astype(np.float64) * (layer.scale_in / layer.scale_out)
                 + other.astype(np.float64) * (layer.scale_other / layer.scale_out))
            act = np.clip(_round_half_away(v), 0, 255).astype(np.uint8)
        saved.append(act)
    return int(np.argmax(logits)), logits


# ---------------------------------------------------------------------------
# Network file format
# ---------------------------------------------------------------------------

def save_network(net: QuantizedNetwork, json_path) -> None:
    json_path = os.fspath(json_path)
    base = os.path.dirname(json_path) or "."
    blob_name = os.path.splitext(os.path.basename(json_path))[0] + ".bin"
    blob = bytearray()

    def put(arr: np.ndarray) -> dict:
        raw = arr.tobytes()  # little-endian on all supported platforms
        ref = {"offset": len(blob), "length": len(raw)}
        blob.extend(raw)
        return ref

    shape = tuple(net.input_shape)
    layers_json = []
    for layer in net.layers:
        shape = layer.out_shape(shape) if not isinstance(layer, ResidualAdd) \
            else shape
        entry = {"type": layer.type, "name": layer.name, "shape": list(shape)}
        if isinstance(layer, Conv2d):
            entry.update(
                stride=layer.stride, pad=layer.pad,
                kernel=list(layer.weights.shape[2:]),
                in_channels=int(layer.weights.shape[1]),
                out_channels=int(layer.weights.shape[0]),
                scale_in=layer.scale_in, scale_out=layer.scale_out,
                weights_ref=put(layer.weights), bias_ref=put(layer.bias),
                mults=None)
        elif isinstance(layer, Dense):
            entry.update(
                in_features=int(layer.weights.shape[1]),
                out_features=int(layer.weights.shape[0]),
                scale_in=layer.scale_in, scale_out=layer.scale_out,
                weights_ref=put(layer.weights), bias_ref=put(layer.bias),
                mults=None)
        elif isinstance(layer, ResidualAdd):
            entry.update(other=layer.other, scale_in=layer.scale_in,
                         scale_other=layer.scale_other,
                         scale_out=layer.scale_out)
        layers_json.append(entry)
    for (idx, count) in net.mult_layers():
        layers_json[idx]["mults"] = count

    envelope = {
        "version": NETWORK_FORMAT_VERSION,
        "class_count": net.class_count,
        "input_shape": list(net.input_shape),
        "blob": blob_name,
        "layers": layers_json,
    }
    with open(os.path.join(base, blob_name), "wb") as fh:
        fh.write(bytes(blob))
    fd, tmp = tempfile.mkstemp(dir=base, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(envelope, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, json_path)


def load_network(json_path) -> QuantizedNetwork:
    json_path = os.fspath(json_path)
    base = os.path.dirname(json_path) or "."
    try:
        with open(json_path) as fh:
            envelope = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise NetworkFormatError(f"cannot read network file: {e}")
    if envelope.get("version") != NETWORK_FORMAT_VERSION:
        raise NetworkFormatError(
            f"unsupported network format version {envelope.get('version')!r}")
    try:
        with open(os.path.join(base, envelope["blob"]), "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise NetworkFormatError(f"cannot read weight blob: {e}")

    def get(ref, dtype, shape):
        raw = blob[ref["offset"]:ref["offset"] + ref["length"]]
        if len(raw) != ref["length"]:
            raise NetworkFormatError("weight blob is truncated")
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()

    layers = []
    for entry in envelope["layers"]:
        t = entry["type"]
        name = entry.get("name", t)
        if t == "conv2d":
            co, ci = entry["out_channels"], entry["in_channels"]
            kh, kw = entry["kernel"]
            layers.append(Conv2d(
                name=name,
                weights=get(entry["weights_ref"], np.int8, (co, ci, kh, kw)),
                bias=get(entry["bias_ref"], np.int32, (co,)),
                stride=entry["stride"], pad=entry["pad"],
                scale_in=entry["scale_in"], scale_out=entry["scale_out"]))
        elif t == "dense":
            of, inf = entry["out_features"], entry["in_features"]
            layers.append(Dense(
                name=name,
                weights=get(entry["weights_ref"], np.int8, (of, inf)),
                bias=get(entry["bias_ref"], np.int32, (of,)),
                scale_in=entry["scale_in"], scale_out=entry["scale_out"]))
        elif t == "relu":
            layers.append(Relu(name=name))
        elif t == "avgpool":
            layers.append(GlobalAvgPool(name=name))
        elif t == "flatten":
            layers.append(Flatten(name=name))
        elif t == "residual_add":
            layers.append(ResidualAdd(
                name=name, other=entry["other"], scale_in=entry["scale_in"],
                scale_other=entry["scale_other"], scale_out=entry["scale_out"]))
        else:
            raise NetworkFormatError(f"unknown layer type {t!r}")
    net = QuantizedNetwork(layers=layers,
                           class_count=envelope["class_count"],
                           input_shape=tuple(envelope["input_shape"]))
    # stored mult counts must match the counts recomputed from shapes
    stored = {i: entry.get("mults") for i, entry in enumerate(envelope["layers"])
              if entry["type"] in ("conv2d", "dense")}
    for idx, count in net.mult_layers():
        if stored.get(idx) != count:
            raise NetworkFormatError(
                f"layer {idx}: stored mult count {stored.get(idx)} != "
                f"recomputed {count}")
    return net


# ---------------------------------------------------------------------------
# Dataset file format
# ---------------------------------------------------------------------------

def save_dataset(images: np.ndarray, labels: np.ndarray, json_path) -> None:
    if images.dtype != np.uint8:
        raise NetworkFormatError("images must be uint8")
    json_path = os.fspath(json_path)
    base = os.path.dirname(json_path) or "."
    blob_name = os.path.splitext(os.path.basename(json_path))[0] + ".bin"
    labels = labels.astype(np.uint8)
    img_raw = images.tobytes()
    lab_raw = labels.tobytes()
    envelope = {
        "version": NETWORK_FORMAT_VERSION,
        "count": int(images.shape[0]),
        "image_shape": list(images.shape[1:]),
        "blob": blob_name,
        "images_ref": {"offset": 0, "length": len(img_raw)},
        "labels_ref": {"offset": len(img_raw), "length": len(lab_raw)},
    }
    with open(os.path.join(base, blob_name), "wb") as fh:
        fh.write(img_raw)
        fh.write(lab_raw)
    fd, tmp = tempfile.mkstemp(dir=base, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(envelope, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, json_path)


def load_dataset(json_path) -> tuple[np.ndarray, np.ndarray]:
    json_path = os.fspath(json_path)
    base = os.path.dirname(json_path) or "."
    try:
        with open(json_path) as fh:
            envelope = json.load(fh)
        with open(os.path.join(base, envelope["blob"]), "rb") as fh:
            blob = fh.read()
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise NetworkFormatError(f"cannot read dataset: {e}")
    count = envelope["count"]
    shape = tuple(envelope["image_shape"])
    iref, lref = envelope["images_ref"], envelope["labels_ref"]
    images = np.frombuffer(
        blob[iref["offset"]:iref["offset"] + iref["length"]],
        dtype=np.uint8).reshape((count,) + shape).copy()
    labels = np.frombuffer(
        blob[lref["offset"]:lref["offset"] + lref["length"]],
        dtype=np.uint8).copy()
    if len(labels) != count:
        raise NetworkFormatError("label count does not match image count")
    return images, labels
