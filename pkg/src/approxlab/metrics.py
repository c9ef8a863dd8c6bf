"""Error statistics between an approximate circuit and a reference.

Six statistics are computed in one pass over the input space: error rate,
mean absolute error, mean squared error, mean relative error, worst-case
absolute error and worst-case relative error.  Relative errors divide by
``max(1, reference_output)``.

Accumulators are exact: counts and absolute/squared sums are arbitrary-
precision integers, and relative errors are grouped by denominator so that
partial accumulators merge without rounding.  Floating point enters only
when a report is built, via fixed, order-independent conversion rules, so
any partition of the input space yields a bit-identical report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

import numpy as np

from .errors import CapExceededError
from .generators import FunctionalModel
from .genome import Circuit
from .simulator import (BATCH_BITS, DEFAULT_EXHAUSTIVE_CAP, CompiledCircuit,
                        eval_index, exhaustive_input_words, sample_indices,
                        indices_to_input_words)

EvalTarget = Union[Circuit, FunctionalModel]

ERROR_METRICS = ("er", "mae", "mse", "mre", "wce", "wcre",
                 "mae_pct", "wce_pct", "mse_norm")


@dataclass(frozen=True)
class ErrorReport:
    """The six error statistics plus normalized views.

    ``er``, ``mre`` and ``wcre`` are fractions; ``mae``, ``mse`` and ``wce``
    are absolute (output-integer units).  ``mae_pct`` and ``wce_pct`` divide
    by ``2**n_o`` and scale to percent; ``mse_norm`` divides by ``2**(2*n_o)``.
    In sampled mode the worst-case statistics are lower bounds.
    """

    er: float
    mae: float
    mse: float
    mre: float
    wce: int
    wcre: float
    mae_pct: float
    wce_pct: float
    mse_norm: float
    n_i: int
    n_o: int
    mode: str = "exhaustive"
    sample_count: int | None = None
    seed: int | None = None

    def value(self, metric: str) -> float:
        if metric not in ERROR_METRICS:
            raise ValueError(f"unknown error metric {metric!r}")
        return float(getattr(self, metric))

    def to_json_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ERROR_METRICS}
        d.update(mode=self.mode, n_i=self.n_i, n_o=self.n_o)
        if self.mode == "sampled":
            d.update(sample_count=self.sample_count, seed=self.seed)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "ErrorReport":
        return cls(er=d["er"], mae=d["mae"], mse=d["mse"], mre=d["mre"],
                   wce=int(d["wce"]), wcre=d["wcre"], mae_pct=d["mae_pct"],
                   wce_pct=d["wce_pct"], mse_norm=d["mse_norm"],
                   n_i=d["n_i"], n_o=d["n_o"], mode=d["mode"],
                   sample_count=d.get("sample_count"), seed=d.get("seed"))


def _exact_sum(values: np.ndarray, value_bits: int) -> int:
    """Exact integer sum of a nonnegative int64 array.

    ``value_bits`` bounds each element below ``2**value_bits``; chunks are
    sized so every partial int64 sum is overflow-free.
    """
    if len(values) == 0:
        return 0
    room = 62 - value_bits
    if room >= int(len(values)).bit_length():
        return int(values.sum())
    chunk = 1 << max(room, 0)
    if chunk <= 1:
        return sum(int(v) for v in values.tolist())
    total = 0
    for start in range(0, len(values), chunk):
        total += int(values[start:start + chunk].sum())
    return total


class ErrorAccumulator:
    """Mergeable exact accumulator for the six error statistics."""

    def __init__(self, n_o: int):
        self.n_o = n_o
        self.n = 0
        self.mismatches = 0
        self.abs_sum = 0
        self.sq_sum = 0
        self.wce = 0
        self.rel_sums: dict[int, int] = {}
        self.rel_maxes: dict[int, int] = {}

    def update_batch(self, approx: np.ndarray, exact: np.ndarray) -> None:
        """Accumulate one batch of packed output values (n_o <= 40)."""
        if self.n_o > 40:
            raise ValueError("batch accumulation supports n_o <= 40; "
                             "use update_pair for wider outputs")
        a = approx.astype(np.int64)
        e = exact.astype(np.int64)
        diff = np.abs(a - e)
        self.n += len(diff)
        self.mismatches += int(np.count_nonzero(diff))
        self.abs_sum += _exact_sum(diff, self.n_o)
        if self.n_o <= 31:
            self.sq_sum += _exact_sum(diff * diff, 2 * self.n_o)
        else:
            self.sq_sum += sum(int(d) * int(d) for d in diff.tolist())
        batch_wce = int(diff.max(initial=0))
        if batch_wce > self.wce:
            self.wce = batch_wce

        denom = np.maximum(e, 1)
        uniq, inv = np.unique(denom, return_inverse=True)
        sums = np.zeros(len(uniq), dtype=np.int64)
        maxes = np.zeros(len(uniq), dtype=np.int64)
        np.add.at(sums, inv, diff)
        np.maximum.at(maxes, inv, diff)
        rs, rm = self.rel_sums, self.rel_maxes
        for d, s, m in zip(uniq.tolist(), sums.tolist(), maxes.tolist()):
            rs[d] = rs.get(d, 0) + s
            if m > rm.get(d, 0):
                rm[d] = m

    def update_pair(self, approx_value: int, exact_value: int) -> None:
        """Accumulate a single vector; exact for any output width."""
        diff = abs(approx_value - exact_value)
        self.n += 1
        if diff:
            self.mismatches += 1
        self.abs_sum += diff
        self.sq_sum += diff * diff
        if diff > self.wce:
            self.wce = diff
        d = max(1, exact_value)
        self.rel_sums[d] = self.rel_sums.get(d, 0) + diff
        if diff > self.rel_maxes.get(d, 0):
            self.rel_maxes[d] = diff

    def merge(self, other: "ErrorAccumulator") -> "ErrorAccumulator":
        if other.n_o != self.n_o:
            raise ValueError("cannot merge accumulators of different widths")
        out = ErrorAccumulator(self.n_o)
        out.n = self.n + other.n
        out.mismatches = self.mismatches + other.mismatches
        out.abs_sum = self.abs_sum + other.abs_sum
        out.sq_sum = self.sq_sum + other.sq_sum
        out.wce = max(self.wce, other.wce)
        out.rel_sums = dict(self.rel_sums)
        out.rel_maxes = dict(self.rel_maxes)
        for d, s in other.rel_sums.items():
            out.rel_sums[d] = out.rel_sums.get(d, 0) + s
        for d, m in other.rel_maxes.items():
            if m > out.rel_maxes.get(d, 0):
                out.rel_maxes[d] = m
        return out

    def mre_float(self) -> float:
        # Fixed conversion rule: per-denominator terms rounded to float and
        # summed exactly (fsum) in ascending denominator order.
        terms = [self.rel_sums[d] / d for d in sorted(self.rel_sums)]
        return math.fsum(terms) / self.n if self.n else 0.0

    def wcre_float(self) -> float:
        if not self.rel_maxes:
            return 0.0
        if self.wce < (1 << 52):
            # Float prefilter, exact comparison only near the float maximum.
            ds = np.fromiter(self.rel_maxes.keys(), dtype=np.int64)
            ms = np.fromiter(self.rel_maxes.values(), dtype=np.int64)
            ratios = ms / ds
            near = ratios >= ratios.max() * (1.0 - 1e-9)
            candidates = zip(ds[near].tolist(), ms[near].tolist())
        else:
            candidates = ((d, m) for d, m in self.rel_maxes.items())
        best = Fraction(0)
        for d, m in candidates:
            f = Fraction(m, d)
            if f > best:
                best = f
        return float(best)

    def report(self, n_i: int, *, mode: str = "exhaustive",
               sample_count: int | None = None,
               seed: int | None = None) -> ErrorReport:
        if self.n == 0:
            raise ValueError("cannot report on an empty accumulator")
        n, n_o = self.n, self.n_o
        return ErrorReport(
            er=self.mismatches / n,
            mae=self.abs_sum / n,
            mse=self.sq_sum / n,
            mre=self.mre_float(),
            wce=self.wce,
            wcre=self.wcre_float(),
            mae_pct=100 * self.abs_sum / (n << n_o),
            wce_pct=100 * self.wce / (1 << n_o),
            mse_norm=self.sq_sum / (n << (2 * n_o)),
            n_i=n_i, n_o=n_o, mode=mode,
            sample_count=sample_count, seed=seed)


class _BatchEvaluator:
    """Uniform batch interface over circuits and functional models."""

    def __init__(self, target: EvalTarget):
        self.target = target
        self.n_i = target.n_i
        self.n_o = target.n_o
        self._cc = CompiledCircuit(target) if isinstance(target, Circuit) else None

    def exhaustive_values(self, base: int, lanes: int) -> np.ndarray:
        if self._cc is not None:
            padded = (lanes + 63) // 64 * 64
            W = self._cc.run(exhaustive_input_words(self.n_i, base, padded))
            return self._cc.output_values(W, padded)[:lanes]
        idx = np.arange(base, base + lanes, dtype=np.uint64)
        return self.target.eval_indices(idx)

    def sampled_values(self, indices) -> np.ndarray:
        if self._cc is not None:
            words = indices_to_input_words(indices, self.n_i)
            W = self._cc.run(words)
            return self._cc.output_values(W, words.shape[1] * 64)[:len(indices)]
        idx = np.asarray([int(v) for v in indices], dtype=np.uint64)
        return self.target.eval_indices(idx)

    def scalar_value(self, index: int) -> int:
        if self._cc is not None:
            return eval_index(self.target, index)
        return int(self.target(index))


def _check_arity(approx: EvalTarget, reference: EvalTarget) -> None:
    if approx.n_i != reference.n_i or approx.n_o != reference.n_o:
        raise ValueError(
            f"arity mismatch: approx is {approx.n_i}->{approx.n_o}, "
            f"reference is {reference.n_i}->{reference.n_o}")


def error_report(approx: EvalTarget, reference: EvalTarget, *,
                 cap: int = DEFAULT_EXHAUSTIVE_CAP,
                 batch_bits: int = BATCH_BITS) -> ErrorReport:
    """Exhaustive error statistics of ``approx`` against ``reference``.

    Both sides are swept over all ``2**n_i`` input vectors; outputs are read
    as unsigned integers, LSB first.
    """
    _check_arity(approx, reference)
    n_i, n_o = approx.n_i, approx.n_o
    if n_i > cap:
        raise CapExceededError(
            f"error_report over {n_i} input bits exceeds the exhaustive cap "
            f"of {cap}; use sampled_error_report instead")
    acc = ErrorAccumulator(n_o)
    total = 1 << n_i
    if n_o <= 40:
        ea, er = _BatchEvaluator(approx), _BatchEvaluator(reference)
        lanes = max(64, min(total, 1 << batch_bits))
        base = 0
        while base < total:
            n = min(lanes, total - base)
            acc.update_batch(ea.exhaustive_values(base, n),
                             er.exhaustive_values(base, n))
            base += n
    else:
        ea, er = _BatchEvaluator(approx), _BatchEvaluator(reference)
        for v in range(total):
            acc.update_pair(ea.scalar_value(v), er.scalar_value(v))
    return acc.report(n_i, mode="exhaustive")


def sampled_error_report(approx: EvalTarget, reference: EvalTarget,
                         sample_count: int, seed: int, *,
                         batch_bits: int = BATCH_BITS) -> ErrorReport:
    """Error statistics over seeded uniform input samples.

    Worst-case statistics are lower bounds in this mode (flagged by
    ``mode == "sampled"``).
    """
    if sample_count < 1000:
        raise ValueError("sample_count must be >= 1000")
    _check_arity(approx, reference)
    n_i, n_o = approx.n_i, approx.n_o
    rng = np.random.default_rng(seed)
    indices = sample_indices(n_i, sample_count, rng)
    acc = ErrorAccumulator(n_o)
    ea, er = _BatchEvaluator(approx), _BatchEvaluator(reference)
    if n_o <= 40:
        chunk = 1 << batch_bits
        for start in range(0, len(indices), chunk):
            part = indices[start:start + chunk]
            acc.update_batch(ea.sampled_values(part), er.sampled_values(part))
    else:
        for v in indices:
            acc.update_pair(ea.scalar_value(v), er.scalar_value(v))
    return acc.report(n_i, mode="sampled", sample_count=sample_count, seed=seed)


def batch_metric_value(approx_values: np.ndarray, exact_values: np.ndarray,
                       metric: str, n_o: int) -> float:
    """One error statistic over full pre-extracted value arrays.

    Fast path for search loops that evaluate one driving metric per
    candidate; must agree with ErrorReport on the same data.
    """
    a = approx_values.astype(np.int64)
    e = exact_values.astype(np.int64)
    diff = np.abs(a - e)
    n = len(diff)
    if metric == "er":
        return int(np.count_nonzero(diff)) / n
    if metric == "mae":
        return _exact_sum(diff, n_o) / n
    if metric == "mae_pct":
        return 100 * _exact_sum(diff, n_o) / (n << n_o)
    if metric == "wce":
        return float(int(diff.max(initial=0)))
    if metric == "wce_pct":
        return 100 * int(diff.max(initial=0)) / (1 << n_o)
    if metric == "mse":
        return _exact_sum(diff * diff, 2 * n_o) / n if n_o <= 31 else \
            sum(int(d) * int(d) for d in diff.tolist()) / n
    if metric == "mse_norm":
        s = _exact_sum(diff * diff, 2 * n_o) if n_o <= 31 else \
            sum(int(d) * int(d) for d in diff.tolist())
        return s / (n << (2 * n_o))
    if metric in ("mre", "wcre"):
        acc = ErrorAccumulator(n_o)
        acc.update_batch(approx_values, exact_values)
        return acc.mre_float() if metric == "mre" else acc.wcre_float()
    raise ValueError(f"unknown error metric {metric!r}")
