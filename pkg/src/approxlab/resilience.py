"""Resilience of quantized inference to approximate multipliers.

An 8x8 unsigned multiplier is materialized as a full 65,536-entry product
table and substituted into conv/dense layers, either one layer at a time or
everywhere, with no retraining.  Reports pair each accuracy figure with the
power-proxy saving of the substitution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cost import CostReport
from .errors import ApproxLabError
from .generators import FunctionalModel
from .genome import Circuit, decode
from .library import LibraryEntry
from .metrics import ErrorReport, _BatchEvaluator
from .qnn import (Dense, QuantizedNetwork, Relu, infer_prepared,
                  prepare_luts)

LUT_BITS = 8


@dataclass(frozen=True)
class MultiplierLut:
    """Full product table of an 8x8 unsigned multiplier.

    ``table[a][b]`` is the circuit output for operand A = a, operand B = b
    (A rides the low input bits).  ``relative_power`` is the weighted-area
    proxy fraction versus the exact multiplier.
    """

    source_id: str
    table: np.ndarray
    relative_power: float
    error: ErrorReport | None = None

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.uint32)
        if t.shape != (256, 256):
            raise ValueError("multiplier table must be 256x256")
        if int(t.max()) >= 1 << (2 * LUT_BITS):
            raise ValueError("table entries must be < 2**16")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)


def build_lut(source: Circuit | FunctionalModel,
              cost: CostReport | None = None,
              source_id: str | None = None,
              error: ErrorReport | None = None) -> MultiplierLut:
    """Exhaustively tabulate an 8x8 multiplier circuit or model."""
    if source.n_i != 2 * LUT_BITS or source.n_o != 2 * LUT_BITS:
        raise ValueError(
            f"LUT source must be 16->16, got {source.n_i}->{source.n_o}")
    ev = _BatchEvaluator(source)
    values = ev.exhaustive_values(0, 1 << (2 * LUT_BITS))
    # index v = a | (b << 8): row-major reshape gives [b][a], transpose
    table = values.reshape(256, 256).T.astype(np.uint32)
    rp = 1.0
    if cost is not None and cost.relative_power is not None:
        rp = cost.relative_power
    if source_id is None:
        source_id = getattr(source, "name", "lut")
    return MultiplierLut(source_id=source_id, table=table,
                         relative_power=rp, error=error)


def exact_lut() -> MultiplierLut:
    a = np.arange(256, dtype=np.uint32)
    return MultiplierLut(source_id="mul8_exact", table=np.outer(a, a),
                         relative_power=1.0)


def lut_from_entry(entry: LibraryEntry) -> MultiplierLut:
    if entry.bit_width != LUT_BITS or entry.family != "multiplier":
        raise ValueError("LUTs are built from 8-bit multiplier entries")
    return build_lut(decode(entry.genome), cost=entry.cost,
                     source_id=entry.id, error=entry.error)


# ---------------------------------------------------------------------------
# Deterministic tiny network for in-repo resilience experiments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlobSpec:
    """Synthetic Gaussian-blob classification dataset."""

    n_features: int = 16
    n_classes: int = 10
    n_train: int = 2000
    n_eval: int = 1000
    center_spread: float = 50.0   # stddev of class centers around mid-gray
    noise: float = 35.0           # per-sample feature noise

    def __post_init__(self):
        if self.n_classes < 2 or self.n_features < 1:
            raise ValueError("need >= 2 classes and >= 1 feature")


def make_blobs(spec: BlobSpec, seed: int) -> tuple[np.ndarray, np.ndarray,
                                                   np.ndarray, np.ndarray]:
    """(train_x, train_y, eval_x, eval_y); features quantized to uint8."""
    rng = np.random.default_rng(seed)
    centers = 128.0 + rng.normal(0.0, spec.center_spread,
                                 (spec.n_classes, spec.n_features))

    def draw(count):
        y = rng.integers(0, spec.n_classes, count)
        x = centers[y] + rng.normal(0.0, spec.noise, (count, spec.n_features))
        return np.clip(np.rint(x), 0, 255).astype(np.uint8), y.astype(np.uint8)

    train_x, train_y = draw(spec.n_train)
    eval_x, eval_y = draw(spec.n_eval)
    return train_x, train_y, eval_x, eval_y


def _softmax_cross_entropy_grads(X, y_onehot, W1, b1, W2, b2):
    z1 = X @ W1.T + b1
    a1 = np.maximum(z1, 0.0)
    logits = a1 @ W2.T + b2
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    p = e / e.sum(axis=1, keepdims=True)
    n = len(X)
    loss = -np.log(np.maximum(p[np.arange(n), y_onehot.argmax(axis=1)],
                              1e-12)).mean()
    d_logits = (p - y_onehot) / n
    gW2 = d_logits.T @ a1
    gb2 = d_logits.sum(axis=0)
    d_a1 = d_logits @ W2
    d_z1 = d_a1 * (z1 > 0)
    gW1 = d_z1.T @ X
    gb1 = d_z1.sum(axis=0)
    return loss, gW1, gb1, gW2, gb2


def train_tiny_net(spec: BlobSpec, seed: int, *, hidden: int = 32,
                   epochs: int = 2000, lr: float = 2.0) -> QuantizedNetwork:
    """Train a dense net on synthetic blobs and quantize it.

    Full-batch gradient descent in float64 on mean-centered inputs (the
    centering offset folds into the first-layer bias, so the quantized net
    stays zero-point-free), then per-tensor symmetric quantization to the
    sign + magnitude int8 scheme.  Deterministic for a fixed (spec, seed).
    """
    train_x, train_y, _, _ = make_blobs(spec, seed)
    X = train_x.astype(np.float64) / 255.0
    mu = X.mean(axis=0)
    Xc = X - mu
    Y = np.eye(spec.n_classes)[train_y]

    rng = np.random.default_rng(seed + 1)
    W1 = rng.normal(0, math.sqrt(2.0 / spec.n_features),
                    (hidden, spec.n_features))
    b1 = np.zeros(hidden)
    W2 = rng.normal(0, math.sqrt(2.0 / hidden), (spec.n_classes, hidden))
    b2 = np.zeros(spec.n_classes)
    for _ in range(epochs):
        _, gW1, gb1, gW2, gb2 = _softmax_cross_entropy_grads(
            Xc, Y, W1, b1, W2, b2)
        W1 -= lr * gW1
        b1 -= lr * gb1
        W2 -= lr * gW2
        b2 -= lr * gb2

    b1_folded = b1 - W1 @ mu
    return quantize_dense_net(X, [(W1, b1_folded), (W2, b2)], spec.n_classes)


def quantize_dense_net(calib_x: np.ndarray, float_layers: list,
                       class_count: int) -> QuantizedNetwork:
    """Per-tensor symmetric quantization of a dense/ReLU stack.

    ``calib_x`` is the float calibration input (already scaled to [0, 1]);
    activation scales map the observed maximum pre-activation to 255.
    """
    layers = []
    act_scale = 1.0 / 255.0
    act = calib_x
    for li, (W, b) in enumerate(float_layers):
        is_output = li == len(float_layers) - 1
        w_scale = float(np.abs(W).max()) / 127.0
        if w_scale == 0:
            w_scale = 1.0
        Wq = np.clip(np.rint(W / w_scale), -127, 127).astype(np.int8)
        scale_in = act_scale * w_scale
        bq = np.rint(b / scale_in).astype(np.int64)
        if np.abs(bq).max(initial=0) > np.iinfo(np.int32).max:
            raise ApproxLabError("bias overflows int32 after quantization")
        bq = bq.astype(np.int32)
        z = act @ W.T + b
        if is_output:
            layers.append(Dense(name=f"dense{li + 1}", weights=Wq, bias=bq,
                                scale_in=scale_in, scale_out=None))
        else:
            pos = np.maximum(z, 0.0)
            scale_out = float(pos.max()) / 255.0
            if scale_out == 0:
                scale_out = scale_in
            layers.append(Dense(name=f"dense{li + 1}", weights=Wq, bias=bq,
                                scale_in=scale_in, scale_out=scale_out))
            layers.append(Relu(name=f"relu{li + 1}"))
            act = pos
            act_scale = scale_out
    return QuantizedNetwork(layers=layers, class_count=class_count,
                            input_shape=(float_layers[0][0].shape[1],))


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerRow:
    layer_index: int
    layer_name: str
    mult_fraction: float
    lut_id: str
    accuracy: float
    accuracy_drop: float
    power_drop: float


@dataclass(frozen=True)
class FullRow:
    lut_id: str
    relative_power: float
    accuracy: float
    accuracy_drop: float
    power_drop: float
    error: ErrorReport | None = None


@dataclass
class SweepReport:
    baseline_accuracy: float
    layer_rows: list = field(default_factory=list)
    full_rows: list = field(default_factory=list)

    def __post_init__(self):
        # mult fractions of any one LUT's rows must partition the total
        by_lut: dict[str, float] = {}
        for r in self.layer_rows:
            by_lut[r.lut_id] = by_lut.get(r.lut_id, 0.0) + r.mult_fraction
        for lut_id, total in by_lut.items():
            if abs(total - 1.0) > 1e-9:
                raise ApproxLabError(
                    f"mult fractions for {lut_id} sum to {total}, expected 1")


def _run_worker(args):
    net, images, table_map = args
    prepared = prepare_luts(net, table_map)
    return [infer_prepared(net, x, prepared)[0] for x in images]


def evaluate_accuracy(net: QuantizedNetwork, images: np.ndarray,
                      labels: np.ndarray, table_map, *,
                      workers: int = 1) -> float:
    """Top-1 accuracy over a fixed split; worker-count invariant."""
    if workers > 1 and len(images) >= 2 * workers:
        import multiprocessing as mp
        chunks = np.array_split(np.arange(len(images)), workers)
        ctx = mp.get_context("fork")
        with ctx.Pool(workers) as pool:
            parts = pool.map(_run_worker,
                             [(net, images[c], table_map) for c in chunks])
        preds = [p for part in parts for p in part]
    else:
        prepared = prepare_luts(net, table_map)
        preds = [infer_prepared(net, x, prepared)[0] for x in images]
    return float(np.mean(np.asarray(preds) == labels))


def layerwise_sweep(net: QuantizedNetwork, images: np.ndarray,
                    labels: np.ndarray, luts: list[MultiplierLut], *,
                    exact: MultiplierLut | None = None,
                    workers: int = 1) -> SweepReport:
    """Replace the multiplier of one layer at a time, for every LUT.

    The power drop of a row is the layer's share of all multiplications
    times the LUT's power saving.
    """
    exact = exact or exact_lut()
    counts = net.mult_layers()
    total = sum(c for _, c in counts)
    baseline = evaluate_accuracy(net, images, labels, exact.table,
                                 workers=workers)
    rows = []
    for lut in luts:
        for idx, count in counts:
            table_map = {i: exact.table for i, _ in counts}
            table_map[idx] = lut.table
            acc = evaluate_accuracy(net, images, labels, table_map,
                                    workers=workers)
            frac = count / total
            rows.append(LayerRow(
                layer_index=idx, layer_name=net.layers[idx].name,
                mult_fraction=frac, lut_id=lut.source_id, accuracy=acc,
                accuracy_drop=baseline - acc,
                power_drop=frac * (1.0 - lut.relative_power)))
    return SweepReport(baseline_accuracy=baseline, layer_rows=rows)


def full_replacement_eval(net: QuantizedNetwork, images: np.ndarray,
                          labels: np.ndarray, luts: list[MultiplierLut], *,
                          exact: MultiplierLut | None = None,
                          workers: int = 1) -> SweepReport:
    """Replace the multiplier in every conv/dense layer, one LUT at a time."""
    exact = exact or exact_lut()
    baseline = evaluate_accuracy(net, images, labels, exact.table,
                                 workers=workers)
    rows = []
    for lut in luts:
        acc = evaluate_accuracy(net, images, labels, lut.table,
                                workers=workers)
        rows.append(FullRow(
            lut_id=lut.source_id, relative_power=lut.relative_power,
            accuracy=acc, accuracy_drop=baseline - acc,
            power_drop=1.0 - lut.relative_power, error=lut.error))
    return SweepReport(baseline_accuracy=baseline, full_rows=rows)
