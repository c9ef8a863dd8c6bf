"""Seed and baseline circuit constructors.

Exact seeds (ripple-carry adder, array multiplier) and classic approximate
multipliers (operand truncation, broken-array partial-product omission) are
built both as closed-form functional models and as gate-level genomes.  The
two representations are interchangeable for error measurement and must agree
on every input vector.

Generated genomes use a linear 1-row grid; the grid shape has no effect on
function or cost.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .genome import (FN_AND, FN_CONST0, FN_CONST1, FN_NOT, FN_OR, FN_XOR,
                     CgpParams, FunctionSet, Genome)


@dataclass(frozen=True)
class FunctionalModel:
    """A closed-form reference: pure map from packed input index to output.

    ``fn`` must accept both Python ints and numpy uint64 arrays (elementwise)
    unless ``vectorized`` is False.
    """

    n_i: int
    n_o: int
    fn: Callable
    name: str = "model"
    vectorized: bool = True

    def __call__(self, index: int) -> int:
        return int(self.fn(int(index)))

    def eval_indices(self, indices: np.ndarray) -> np.ndarray:
        if self.vectorized:
            return np.asarray(self.fn(indices.astype(np.uint64)),
                              dtype=np.uint64)
        return np.asarray([self.fn(int(v)) for v in indices], dtype=np.uint64)

    @classmethod
    def from_operands(cls, n: int, fn_ab: Callable, n_o: int,
                      name: str = "model") -> "FunctionalModel":
        """Model over two n-bit operands packed as index = a | (b << n)."""
        mask = (1 << n) - 1

        def fn(v):
            if isinstance(v, np.ndarray):
                a = v & np.uint64(mask)
                b = (v >> np.uint64(n)) & np.uint64(mask)
            else:
                a = v & mask
                b = (v >> n) & mask
            return fn_ab(a, b)

        return cls(n_i=2 * n, n_o=n_o, fn=fn, name=name)


@dataclass(frozen=True)
class BamSpec:
    """Break levels of a broken-array multiplier.

    Partial-product bit ``a_j * b_i * 2**(i+j)`` is omitted whenever the row
    ``i < h`` or the column ``i + j < v``.
    """

    n: int
    h: int
    v: int

    def __post_init__(self):
        if not 0 <= self.h <= self.n:
            raise ValueError("horizontal break level must be in 0..n")
        if not 0 <= self.v <= 2 * self.n:
            raise ValueError("vertical break level must be in 0..2n")

    def keeps(self, row: int, col_a: int) -> bool:
        return row >= self.h and row + col_a >= self.v


# Sentinels for known-constant wires inside the builder.
_C0 = -1
_C1 = -2


class _Builder:
    """Emits gate nodes with constant folding; refs are wire ids or the
    constant sentinels."""

    def __init__(self, n_i: int):
        self.n_i = n_i
        self.nodes: list[tuple[int, int, int]] = []
        self._const_wire = {}

    def _emit(self, in1: int, in2: int, fn: int) -> int:
        self.nodes.append((in1, in2, fn))
        return self.n_i + len(self.nodes) - 1

    def gate_and(self, x: int, y: int) -> int:
        if x == _C0 or y == _C0:
            return _C0
        if x == _C1:
            return y
        if y == _C1:
            return x
        return self._emit(x, y, FN_AND)

    def gate_or(self, x: int, y: int) -> int:
        if x == _C1 or y == _C1:
            return _C1
        if x == _C0:
            return y
        if y == _C0:
            return x
        return self._emit(x, y, FN_OR)

    def gate_xor(self, x: int, y: int) -> int:
        if x == _C0:
            return y
        if y == _C0:
            return x
        if x == _C1 and y == _C1:
            return _C0
        if x == _C1:
            return self._emit(y, 0, FN_NOT)
        if y == _C1:
            return self._emit(x, 0, FN_NOT)
        return self._emit(x, y, FN_XOR)

    def _materialize(self, ref: int) -> int:
        if ref >= 0:
            return ref
        if ref not in self._const_wire:
            fn = FN_CONST0 if ref == _C0 else FN_CONST1
            self._const_wire[ref] = self._emit(0, 0, fn)
        return self._const_wire[ref]

    def finish(self, outputs: list[int]) -> Genome:
        outs = [self._materialize(o) for o in outputs]
        if not self.nodes:
            self._materialize(_C0)  # grids need at least one node
        params = CgpParams(n_i=self.n_i, n_o=len(outs), n_r=1,
                           n_c=len(self.nodes))
        return Genome(params=params, fnset=FunctionSet(),
                      nodes=tuple(self.nodes), outputs=tuple(outs))


def _ripple_add(b: _Builder, xs: list[int], ys: list[int]) -> list[int]:
    """Sum bits of two little-endian bit lists; returns len = max+1 bits."""
    width = max(len(xs), len(ys))
    carry = _C0
    sums = []
    for j in range(width):
        x = xs[j] if j < len(xs) else _C0
        y = ys[j] if j < len(ys) else _C0
        xy = b.gate_xor(x, y)
        sums.append(b.gate_xor(xy, carry))
        carry = b.gate_or(b.gate_and(x, y), b.gate_and(xy, carry))
    sums.append(carry)
    return sums


def ripple_carry_adder(n: int) -> Genome:
    """Exact unsigned adder: inputs a (wires 0..n-1) and b (wires n..2n-1),
    outputs the n+1 bits of a + b."""
    if n < 1:
        raise ValueError("operand width must be >= 1")
    b = _Builder(n_i=2 * n)
    a_bits = list(range(n))
    b_bits = list(range(n, 2 * n))
    return b.finish(_ripple_add(b, a_bits, b_bits))


def adder_model(n: int) -> FunctionalModel:
    return FunctionalModel.from_operands(
        n, lambda a, b: a + b, n_o=n + 1, name=f"add{n}_exact")


def _multiplier_genome(n: int, keeps: Callable[[int, int], bool]) -> Genome:
    """Array multiplier with a partial-product keep predicate.

    Row ``i`` contributes ``a_j & b_i`` at weight ``2**(i+j)`` when
    ``keeps(i, j)``; omitted bits become constant zero and fold away.
    """
    b = _Builder(n_i=2 * n)

    def pp(i: int, j: int) -> int:
        if not keeps(i, j):
            return _C0
        return b.gate_and(j, n + i)  # a_j AND b_i

    acc = [pp(0, j) for j in range(n)]
    outs = [acc.pop(0)]
    for i in range(1, n):
        row = [pp(i, j) for j in range(n)]
        summed = _ripple_add(b, acc, row)
        outs.append(summed[0])
        acc = summed[1:]
    outs.extend(acc)
    while len(outs) < 2 * n:  # n = 1 has no adder rows
        outs.append(_C0)
    return b.finish(outs[: 2 * n])


def array_multiplier(n: int) -> Genome:
    """Exact unsigned array multiplier: 2n inputs, 2n outputs."""
    if n < 1:
        raise ValueError("operand width must be >= 1")
    return _multiplier_genome(n, lambda i, j: True)


def multiplier_model(n: int) -> FunctionalModel:
    return FunctionalModel.from_operands(
        n, lambda a, b: a * b, n_o=2 * n, name=f"mul{n}_exact")


def truncated_multiplier(n: int, k: int) -> tuple[FunctionalModel, Genome]:
    """Multiplier that zeroes the lowest ``n - k`` bits of both operands.

    ``k`` is the number of kept high bits per operand; ``k == n`` is the
    exact multiplier.
    """
    if not 0 <= k <= n:
        raise ValueError("kept bits k must be in 0..n")
    drop = n - k
    mask = ((1 << n) - 1) & ~((1 << drop) - 1)

    def fn_ab(a, b):
        if isinstance(a, np.ndarray):
            m = np.uint64(mask)
            return (a & m) * (b & m)
        return (a & mask) * (b & mask)

    model = FunctionalModel.from_operands(n, fn_ab, n_o=2 * n,
                                          name=f"mul{n}_trunc{k}")
    genome = _multiplier_genome(n, lambda i, j: i >= drop and j >= drop)
    return model, genome


def bam_multiplier(spec: BamSpec) -> tuple[FunctionalModel, Genome]:
    """Broken-array multiplier: partial products below the horizontal break
    row ``h`` or left of the vertical break column ``v`` are omitted."""
    n = spec.n
    op_mask = (1 << n) - 1
    # Per retained row i, the mask of kept a-bits (j >= v - i).
    row_masks = []
    for i in range(n):
        if i < spec.h:
            row_masks.append(0)
        else:
            lo = max(0, spec.v - i)
            row_masks.append(op_mask & ~((1 << lo) - 1) if lo <= n else 0)

    def fn_ab(a, b):
        if isinstance(a, np.ndarray):
            total = np.zeros_like(a)
            for i, m in enumerate(row_masks):
                if m:
                    bit = (b >> np.uint64(i)) & np.uint64(1)
                    total = total + ((a & np.uint64(m)) * bit << np.uint64(i))
            return total
        total = 0
        for i, m in enumerate(row_masks):
            if m and (b >> i) & 1:
                total += (a & m) << i
        return total

    model = FunctionalModel.from_operands(
        n, fn_ab, n_o=2 * n, name=f"mul{n}_bam_h{spec.h}_v{spec.v}")
    genome = _multiplier_genome(n, spec.keeps)
    return model, genome
