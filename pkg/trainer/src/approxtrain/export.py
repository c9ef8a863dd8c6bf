"""Fold, calibrate, quantize and export a trained ResidualNet.

The exported file follows the approxlab quantized-network format (JSON
envelope + little-endian blob; conv/dense weights int8 with magnitude
<= 127, biases int32, activations uint8 with per-tensor scales, final dense
emits raw logits).  This module writes that format directly and carries its
own integer-arithmetic forward pass, so the export can be validated against
the consuming toolkit purely through files.

Pipeline: BN folding into conv weights -> float forward over a calibration
batch recording the maxima of every tensor that will be quantized ->
per-tensor symmetric weight quantization -> layer-record emission.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np
import torch

from .model import ArchConfig, ResidualBlock, ResidualNet

NETWORK_FORMAT_VERSION = 1


class ExportRefused(RuntimeError):
    """Raised when the quantized network fails its quality gate."""


# ---------------------------------------------------------------------------
# Folding
# ---------------------------------------------------------------------------

def fold_conv_bn(conv: torch.nn.Conv2d, bn: torch.nn.BatchNorm2d,
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Return (weights, bias) float64 with the BN affine folded in."""
    w = conv.weight.detach().numpy().astype(np.float64)
    gamma = bn.weight.detach().numpy().astype(np.float64)
    beta = bn.bias.detach().numpy().astype(np.float64)
    mean = bn.running_mean.detach().numpy().astype(np.float64)
    var = bn.running_var.detach().numpy().astype(np.float64)
    scale = gamma / np.sqrt(var + bn.eps)
    w_folded = w * scale[:, None, None, None]
    bias = beta - mean * scale
    if conv.bias is not None:
        bias = bias + conv.bias.detach().numpy().astype(np.float64) * scale
    return w_folded, bias


# ---------------------------------------------------------------------------
# Float-chain records (folded) and the numpy forward
# ---------------------------------------------------------------------------

@dataclass
class _ConvRec:
    name: str
    w: np.ndarray            # float64 folded (Co, Ci, kh, kw)
    b: np.ndarray
    stride: int
    pad: int
    act_max: float = 0.0     # post-relu calibration maximum


@dataclass
class _AddRec:
    name: str
    other: int               # chain index whose output is added
    act_max: float = 0.0


@dataclass
class _PoolRec:
    name: str


@dataclass
class _DenseRec:
    name: str
    w: np.ndarray
    b: np.ndarray


def _chain_from_model(model: ResidualNet) -> list:
    """Flatten the module tree into the exported sequential chain."""
    chain: list = []

    def add_conv(seq, name):
        conv, bn = seq[0], seq[1]
        w, b = fold_conv_bn(conv, bn)
        chain.append(_ConvRec(name=name, w=w, b=b, stride=conv.stride[0],
                              pad=conv.padding[0]))

    add_conv(model.stem, "stem")
    for s, stage in enumerate(model.stages):
        parts = list(stage)
        bi = 0
        for part in parts:
            if isinstance(part, ResidualBlock):
                entry = len(chain) - 1  # chain index of the block input
                add_conv(part.conv1, f"s{s + 1}b{bi + 1}c1")
                add_conv(part.conv2, f"s{s + 1}b{bi + 1}c2")
                chain.append(_AddRec(name=f"s{s + 1}b{bi + 1}add",
                                     other=entry))
                bi += 1
            else:
                add_conv(part, f"s{s + 1}down")
    chain.append(_PoolRec(name="gap"))
    chain.append(_DenseRec(
        name="head",
        w=model.head.weight.detach().numpy().astype(np.float64),
        b=model.head.bias.detach().numpy().astype(np.float64)))
    return chain


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int,
            ) -> tuple[np.ndarray, int, int]:
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    cols = np.empty((n, ho * wo, c * kh * kw), dtype=x.dtype)
    i = 0
    for ky in range(kh):
        for kx in range(kw):
            patch = x[:, :, ky:ky + stride * ho:stride,
                      kx:kx + stride * wo:stride]
            cols[:, :, i::kh * kw] = patch.reshape(n, c, -1).transpose(0, 2, 1)
            i += 1
    return cols, ho, wo


def _float_forward(chain: list, images: np.ndarray, *, calibrate: bool,
                   ) -> np.ndarray:
    """Forward the folded float chain; optionally record activation maxima.

    ``images`` is uint8 (N, C, H, W); returns logits (N, classes).
    """
    act = images.astype(np.float64) / 255.0
    outputs: list[np.ndarray] = []
    for rec in chain:
        if isinstance(rec, _ConvRec):
            co, ci, kh, kw = rec.w.shape
            cols, ho, wo = _im2col(act, kh, kw, rec.stride, rec.pad)
            z = cols @ rec.w.reshape(co, -1).T + rec.b
            act = np.maximum(z, 0.0).transpose(0, 2, 1).reshape(-1, co, ho, wo)
            if calibrate:
                rec.act_max = max(rec.act_max, float(act.max()))
        elif isinstance(rec, _AddRec):
            act = act + outputs[rec.other]
            if calibrate:
                rec.act_max = max(rec.act_max, float(act.max()))
        elif isinstance(rec, _PoolRec):
            act = act.mean(axis=(2, 3))
        else:  # _DenseRec
            act = act @ rec.w.T + rec.b
        outputs.append(act)
    return act


# ---------------------------------------------------------------------------
# Quantization to layer records
# ---------------------------------------------------------------------------

def _quantize_chain(chain: list) -> list[dict]:
    """Turn the calibrated float chain into format-level layer dicts."""
    layers: list[dict] = []
    # scale of the uint8 tensor produced by each emitted layer
    out_scales: list[float] = []
    # chain index -> emitted layer index of the tensor it produces
    chain_to_layer: dict[int, int] = {}

    def quantize_weights(w: np.ndarray):
        ws = float(np.abs(w).max()) / 127.0
        if ws == 0:
            ws = 1.0
        wq = np.clip(np.rint(w / ws), -127, 127).astype(np.int8)
        return wq, ws

    act_scale = 1.0 / 255.0  # network input
    for ci, rec in enumerate(chain):
        if isinstance(rec, _ConvRec):
            wq, ws = quantize_weights(rec.w)
            scale_in = act_scale * ws
            bq = np.rint(rec.b / scale_in)
            if np.abs(bq).max(initial=0) > np.iinfo(np.int32).max:
                raise ExportRefused(f"{rec.name}: bias overflows int32")
            scale_out = rec.act_max / 255.0
            if scale_out == 0:
                scale_out = scale_in
            layers.append({
                "type": "conv2d", "name": rec.name,
                "weights": wq, "bias": bq.astype(np.int32),
                "stride": rec.stride, "pad": rec.pad,
                "scale_in": scale_in, "scale_out": scale_out,
            })
            chain_to_layer[ci] = len(layers) - 1
            out_scales.append(scale_out)
            layers.append({"type": "relu", "name": rec.name + "_relu"})
            out_scales.append(scale_out)
            chain_to_layer[ci] = len(layers) - 1
            act_scale = scale_out
        elif isinstance(rec, _AddRec):
            other_layer = chain_to_layer[rec.other]
            scale_out = rec.act_max / 255.0
            layers.append({
                "type": "residual_add", "name": rec.name,
                "other": other_layer,
                "scale_in": act_scale,
                "scale_other": out_scales[other_layer],
                "scale_out": scale_out,
            })
            out_scales.append(scale_out)
            chain_to_layer[ci] = len(layers) - 1
            act_scale = scale_out
        elif isinstance(rec, _PoolRec):
            layers.append({"type": "avgpool", "name": rec.name})
            out_scales.append(act_scale)
            layers.append({"type": "flatten", "name": "flatten"})
            out_scales.append(act_scale)
            chain_to_layer[ci] = len(layers) - 1
        else:  # _DenseRec
            wq, ws = quantize_weights(rec.w)
            scale_in = act_scale * ws
            bq = np.rint(rec.b / scale_in)
            if np.abs(bq).max(initial=0) > np.iinfo(np.int32).max:
                raise ExportRefused(f"{rec.name}: bias overflows int32")
            layers.append({
                "type": "dense", "name": rec.name,
                "weights": wq, "bias": bq.astype(np.int32),
                "scale_in": scale_in, "scale_out": None,
            })
            out_scales.append(act_scale)
            chain_to_layer[ci] = len(layers) - 1
    return layers


# ---------------------------------------------------------------------------
# Integer reference forward (format semantics, trainer-side)
# ---------------------------------------------------------------------------

def _round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def int8_forward(layers: list[dict], images: np.ndarray) -> np.ndarray:
    """Batch integer forward with exact products; returns logits."""
    act = images.astype(np.float64)  # holds exact uint8/int values
    outputs: list[np.ndarray] = []
    for layer in layers:
        t = layer["type"]
        if t == "conv2d":
            w = layer["weights"].astype(np.float64)
            co, ci, kh, kw = w.shape
            cols, ho, wo = _im2col(act, kh, kw, layer["stride"], layer["pad"])
            acc = cols @ w.reshape(co, -1).T + layer["bias"].astype(np.float64)
            q = _round_half_away(acc * (layer["scale_in"] / layer["scale_out"]))
            act = np.clip(q, 0, 255).transpose(0, 2, 1).reshape(-1, co, ho, wo)
        elif t == "relu":
            pass
        elif t == "residual_add":
            so = layer["scale_out"]
            v = (act * (layer["scale_in"] / so)
                 + outputs[layer["other"]] * (layer["scale_other"] / so))
            act = np.clip(_round_half_away(v), 0, 255)
        elif t == "avgpool":
            act = np.clip(_round_half_away(act.mean(axis=(2, 3))), 0, 255)
            act = act[:, :, None, None]
        elif t == "flatten":
            act = act.reshape(len(act), -1)
        else:  # dense
            acc = act @ layer["weights"].astype(np.float64).T \
                + layer["bias"].astype(np.float64)
            if layer["scale_out"] is None:
                act = acc
            else:
                q = _round_half_away(
                    acc * (layer["scale_in"] / layer["scale_out"]))
                act = np.clip(q, 0, 255)
        outputs.append(act)
    return act


def int8_accuracy(layers: list[dict], images: np.ndarray,
                  labels: np.ndarray, batch: int = 256) -> float:
    correct = 0
    for start in range(0, len(images), batch):
        logits = int8_forward(layers, images[start:start + batch])
        correct += int((logits.argmax(axis=1)
                        == labels[start:start + batch]).sum())
    return correct / len(images)


# ---------------------------------------------------------------------------
# File emission
# ---------------------------------------------------------------------------

def _conv_out_shape(shape, layer):
    c, h, w = shape
    kh, kw = layer["weights"].shape[2:]
    ho = (h + 2 * layer["pad"] - kh) // layer["stride"] + 1
    wo = (w + 2 * layer["pad"] - kw) // layer["stride"] + 1
    return (layer["weights"].shape[0], ho, wo)


def write_network(layers: list[dict], input_shape, class_count,
                  json_path: str) -> None:
    base = os.path.dirname(json_path) or "."
    os.makedirs(base, exist_ok=True)
    blob_name = os.path.splitext(os.path.basename(json_path))[0] + ".bin"
    blob = bytearray()

    def put(arr: np.ndarray) -> dict:
        raw = arr.tobytes()
        ref = {"offset": len(blob), "length": len(raw)}
        blob.extend(raw)
        return ref

    shape = tuple(input_shape)
    entries = []
    for layer in layers:
        t = layer["type"]
        entry = {"type": t, "name": layer["name"]}
        if t == "conv2d":
            shape = _conv_out_shape(shape, layer)
            co, ci, kh, kw = layer["weights"].shape
            mults = shape[0] * shape[1] * shape[2] * ci * kh * kw
            entry.update(stride=layer["stride"], pad=layer["pad"],
                         kernel=[kh, kw], in_channels=ci, out_channels=co,
                         scale_in=layer["scale_in"],
                         scale_out=layer["scale_out"],
                         weights_ref=put(layer["weights"]),
                         bias_ref=put(layer["bias"]), mults=mults)
        elif t == "dense":
            of, inf = layer["weights"].shape
            shape = (of,)
            entry.update(in_features=inf, out_features=of,
                         scale_in=layer["scale_in"],
                         scale_out=layer["scale_out"],
                         weights_ref=put(layer["weights"]),
                         bias_ref=put(layer["bias"]), mults=of * inf)
        elif t == "residual_add":
            entry.update(other=layer["other"], scale_in=layer["scale_in"],
                         scale_other=layer["scale_other"],
                         scale_out=layer["scale_out"])
        elif t == "avgpool":
            shape = (shape[0], 1, 1)
        elif t == "flatten":
            shape = (shape[0] * shape[1] * shape[2]
                     if len(shape) == 3 else shape[0],)
        entry["shape"] = list(shape)
        entries.append(entry)

    envelope = {
        "version": NETWORK_FORMAT_VERSION,
        "class_count": class_count,
        "input_shape": list(input_shape),
        "blob": blob_name,
        "layers": entries,
    }
    with open(os.path.join(base, blob_name), "wb") as fh:
        fh.write(bytes(blob))
    fd, tmp = tempfile.mkstemp(dir=base, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(envelope, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, json_path)


# ---------------------------------------------------------------------------
# train_and_export
# ---------------------------------------------------------------------------

@dataclass
class ExportManifest:
    architecture: dict
    hyperparameters: dict
    float_accuracy: float
    int8_accuracy: float
    network_path: str
    eval_split_path: str

    def to_json_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "hyperparameters": self.hyperparameters,
            "float_accuracy": self.float_accuracy,
            "int8_accuracy": self.int8_accuracy,
            "files": {"network": self.network_path,
                      "eval_split": self.eval_split_path},
        }


def export_quantized(model: ResidualNet, calib_images: np.ndarray,
                     out_json: str) -> list[dict]:
    """Fold + calibrate + quantize + write; returns the layer records."""
    model.eval()
    chain = _chain_from_model(model)
    _float_forward(chain, calib_images, calibrate=True)
    layers = _quantize_chain(chain)
    write_network(layers, calib_images.shape[1:],
                  model.config.n_classes, out_json)
    return layers


def train_and_export(*, arch: ArchConfig, train_x, train_y, eval_x, eval_y,
                     epochs: int, seed: int, out_dir: str,
                     lr: float = 0.1, batch_size: int = 128,
                     calib_count: int = 512, max_gap: float = 0.05,
                     augment: bool = True, log=print) -> ExportManifest:
    """Full pipeline: train in float, quantize, export, measure the gap.

    Refuses the export (ExportRefused) when the quantized accuracy falls
    more than ``max_gap`` below the float accuracy on the held-out split.
    """
    from .datasets import write_dataset_file
    from .model import eval_model, train_model

    torch.manual_seed(seed)  # covers weight initialization
    model = ResidualNet(arch)
    train_model(model, train_x, train_y, epochs=epochs, seed=seed, lr=lr,
                batch_size=batch_size, augment=augment, log=log)
    float_acc = eval_model(model, eval_x, eval_y)
    log(f"float accuracy: {float_acc:.4f}")

    net_path = os.path.join(out_dir, "net.json")
    layers = export_quantized(model, train_x[:calib_count], net_path)
    int8_acc = int8_accuracy(layers, eval_x, eval_y)
    log(f"int8 accuracy: {int8_acc:.4f}")
    if float_acc - int8_acc > max_gap:
        raise ExportRefused(
            f"quantized accuracy {int8_acc:.4f} is more than "
            f"{max_gap * 100:.0f} points below float {float_acc:.4f}; "
            f"refusing to export (check calibration data and scales)")

    split_path = os.path.join(out_dir, "eval_split.json")
    write_dataset_file(eval_x, eval_y, split_path)

    manifest = ExportManifest(
        architecture=arch.descriptor(),
        hyperparameters={"epochs": epochs, "seed": seed, "lr": lr,
                         "batch_size": batch_size, "momentum": 0.9,
                         "weight_decay": 5e-4, "augment": augment,
                         "calib_count": calib_count},
        float_accuracy=float_acc, int8_accuracy=int8_acc,
        network_path="net.json", eval_split_path="eval_split.json")
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
