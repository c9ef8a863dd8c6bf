"""Machine-word-parallel gate-level simulation.

Circuits are evaluated 64 input vectors at a time: every wire holds an array
of uint64 words whose bit ``l`` belongs to lane ``l``, so one bitwise machine
operation advances 64 independent simulations.  Exhaustive sweeps shard the
input space into batches of up to ``2**BATCH_BITS`` lanes.

Input packing convention (project-wide): input index ``v`` feeds primary
input ``j`` with bit ``(v >> j) & 1``.  For two-operand circuits this puts
operand A in the low ``n_i/2`` index bits and operand B in the high bits,
LSB first per operand.

A numba-compiled gate loop is used when numba is importable; the pure numpy
path computes identical words.  Set ``APPROXLAB_NO_JIT=1`` to force numpy.
"""

from __future__ import annotations

import os
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import CapExceededError
from .genome import (FN_AND, FN_CONST0, FN_CONST1, FN_IDENTITY, FN_NAND,
                     FN_NOR, FN_NOT, FN_OR, FN_XNOR, FN_XOR, Circuit)

DEFAULT_EXHAUSTIVE_CAP = 26
BATCH_BITS = 16  # lanes per exhaustive batch: 2**16

_ALL_ONES = np.uint64(0xFFFFFFFFFFFFFFFF)

# Repeating 64-bit patterns of input bit j for j < 6: bit l is (l >> j) & 1.
_LOW_PATTERNS = np.array(
    [sum(((l >> j) & 1) << l for l in range(64)) for j in range(6)],
    dtype=np.uint64)

try:  # pragma: no cover - exercised indirectly
    if os.environ.get("APPROXLAB_NO_JIT"):
        raise ImportError
    import numba as _numba
except ImportError:
    _numba = None


def _compile_program(circuit: Circuit) -> np.ndarray:
    """Flatten gates to an (n_gates, 3) int64 array of (fn, in1, in2)."""
    prog = np.empty((len(circuit.gates), 3), dtype=np.int64)
    for i, g in enumerate(circuit.gates):
        prog[i, 0] = g.fn
        prog[i, 1] = g.in1
        prog[i, 2] = g.in2
    return prog


def _run_gates_numpy(prog: np.ndarray, W: np.ndarray, n_i: int) -> None:
    for k in range(prog.shape[0]):
        fn, a, b = prog[k]
        out = W[n_i + k]
        if fn == FN_AND:
            np.bitwise_and(W[a], W[b], out=out)
        elif fn == FN_OR:
            np.bitwise_or(W[a], W[b], out=out)
        elif fn == FN_XOR:
            np.bitwise_xor(W[a], W[b], out=out)
        elif fn == FN_NAND:
            np.bitwise_and(W[a], W[b], out=out)
            np.bitwise_not(out, out=out)
        elif fn == FN_NOR:
            np.bitwise_or(W[a], W[b], out=out)
            np.bitwise_not(out, out=out)
        elif fn == FN_XNOR:
            np.bitwise_xor(W[a], W[b], out=out)
            np.bitwise_not(out, out=out)
        elif fn == FN_NOT:
            np.bitwise_not(W[a], out=out)
        elif fn == FN_IDENTITY:
            out[:] = W[a]
        elif fn == FN_CONST0:
            out[:] = 0
        else:  # FN_CONST1
            out[:] = _ALL_ONES


if _numba is not None:

    @_numba.njit(cache=True)
    def _run_gates_jit(prog, W, n_i):  # pragma: no cover - numba code
        nwords = W.shape[1]
        for k in range(prog.shape[0]):
            fn = prog[k, 0]
            wa = W[prog[k, 1]]
            wb = W[prog[k, 2]]
            out = W[n_i + k]
            if fn == 2:
                for w in range(nwords):
                    out[w] = wa[w] & wb[w]
            elif fn == 3:
                for w in range(nwords):
                    out[w] = wa[w] | wb[w]
            elif fn == 4:
                for w in range(nwords):
                    out[w] = wa[w] ^ wb[w]
            elif fn == 5:
                for w in range(nwords):
                    out[w] = ~(wa[w] & wb[w])
            elif fn == 6:
                for w in range(nwords):
                    out[w] = ~(wa[w] | wb[w])
            elif fn == 7:
                for w in range(nwords):
                    out[w] = ~(wa[w] ^ wb[w])
            elif fn == 1:
                for w in range(nwords):
                    out[w] = ~wa[w]
            elif fn == 0:
                for w in range(nwords):
                    out[w] = wa[w]
            elif fn == 8:
                for w in range(nwords):
                    out[w] = np.uint64(0)
            else:
                for w in range(nwords):
                    out[w] = np.uint64(0xFFFFFFFFFFFFFFFF)

    _run_gates = _run_gates_jit
else:
    _run_gates = _run_gates_numpy


class CompiledCircuit:
    """A circuit prepared for repeated word-parallel evaluation.

    Reuses one wire buffer across calls; not thread-safe, create one per
    worker.
    """

    def __init__(self, circuit: Circuit):
        self.circuit = circuit
        self.n_i = circuit.n_i
        self.prog = _compile_program(circuit)
        self._buf: np.ndarray | None = None

    def _wires(self, nwords: int) -> np.ndarray:
        need = self.n_i + len(self.circuit.gates)
        if self._buf is None or self._buf.shape != (need, nwords):
            self._buf = np.empty((max(need, 1), nwords), dtype=np.uint64)
        return self._buf

    def run(self, input_words: np.ndarray) -> np.ndarray:
        """input_words: (n_i, nwords) uint64 -> full wire matrix."""
        W = self._wires(input_words.shape[1])
        W[: self.n_i] = input_words
        if self.prog.shape[0]:
            _run_gates(self.prog, W, self.n_i)
        return W

    def output_values(self, W: np.ndarray, lanes: int) -> np.ndarray:
        """Collect output wires into per-lane unsigned integers (n_o <= 64)."""
        c = self.circuit
        if c.n_o > 64:
            raise ValueError("output_values supports at most 64 output bits")
        out = np.zeros(lanes, dtype=np.uint64)
        for k, wire in enumerate(c.outputs):
            bits = np.unpackbits(W[wire].view(np.uint8), bitorder="little",
                                 count=lanes)
            out |= bits.astype(np.uint64) << np.uint64(k)
        return out


def exhaustive_input_words(n_i: int, base: int, lanes: int) -> np.ndarray:
    """Input-bit patterns for lanes ``base .. base+lanes-1`` of the full sweep."""
    assert lanes % 64 == 0
    nwords = lanes // 64
    words = np.empty((n_i, nwords), dtype=np.uint64)
    starts = np.uint64(base) + np.uint64(64) * np.arange(nwords, dtype=np.uint64)
    for j in range(n_i):
        if j < 6:
            words[j] = _LOW_PATTERNS[j]
        else:
            on = ((starts >> np.uint64(j)) & np.uint64(1)).astype(bool)
            words[j] = np.where(on, _ALL_ONES, np.uint64(0))
    return words


def indices_to_input_words(indices: Sequence[int] | np.ndarray, n_i: int) -> np.ndarray:
    """Pack arbitrary input indices (one per lane) into wire bit patterns."""
    lanes = len(indices)
    pad = (-lanes) % 64
    nwords = (lanes + pad) // 64
    words = np.zeros((n_i, nwords), dtype=np.uint64)
    if n_i <= 64:
        idx = np.zeros(lanes + pad, dtype=np.uint64)
        idx[:lanes] = np.asarray([int(v) for v in indices], dtype=np.uint64)
        for j in range(n_i):
            bits = ((idx >> np.uint64(j)) & np.uint64(1)).astype(np.uint8)
            words[j] = np.packbits(bits, bitorder="little").view(np.uint64)
    else:
        bits = np.zeros(lanes + pad, dtype=np.uint8)
        for j in range(n_i):
            for l, v in enumerate(indices):
                bits[l] = (int(v) >> j) & 1
            words[j] = np.packbits(bits, bitorder="little").view(np.uint64)
    return words


def eval_vector(circuit: Circuit, input_bits: Sequence[int]) -> list[int]:
    """Scalar reference interpreter: one bit-vector in, one bit-vector out."""
    if len(input_bits) != circuit.n_i:
        raise ValueError(
            f"expected {circuit.n_i} input bits, got {len(input_bits)}")
    wires = [1 if b else 0 for b in input_bits]
    for g in circuit.gates:
        fn = g.fn
        if fn == FN_AND:
            v = wires[g.in1] & wires[g.in2]
        elif fn == FN_OR:
            v = wires[g.in1] | wires[g.in2]
        elif fn == FN_XOR:
            v = wires[g.in1] ^ wires[g.in2]
        elif fn == FN_NAND:
            v = 1 - (wires[g.in1] & wires[g.in2])
        elif fn == FN_NOR:
            v = 1 - (wires[g.in1] | wires[g.in2])
        elif fn == FN_XNOR:
            v = 1 - (wires[g.in1] ^ wires[g.in2])
        elif fn == FN_NOT:
            v = 1 - wires[g.in1]
        elif fn == FN_IDENTITY:
            v = wires[g.in1]
        elif fn == FN_CONST0:
            v = 0
        else:
            v = 1
        wires.append(v)
    return [wires[o] for o in circuit.outputs]


def eval_index(circuit: Circuit, index: int) -> int:
    """Evaluate one packed input index to a packed output integer."""
    bits = [(index >> j) & 1 for j in range(circuit.n_i)]
    out = eval_vector(circuit, bits)
    return sum(b << k for k, b in enumerate(out))


def _check_cap(n_i: int, cap: int) -> None:
    if n_i > cap:
        raise CapExceededError(
            f"exhaustive evaluation over {n_i} input bits exceeds the cap of "
            f"{cap}; raise the cap or use sampled evaluation")


def exhaustive_batches(circuit: Circuit, *, cap: int = DEFAULT_EXHAUSTIVE_CAP,
                       batch_bits: int = BATCH_BITS,
                       ) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(base_index, values)`` over the whole input space in order.

    ``values`` is a uint64 array of the packed outputs for input indices
    ``base_index .. base_index+len(values)-1``.  Requires n_o <= 64.
    """
    _check_cap(circuit.n_i, cap)
    total = 1 << circuit.n_i
    lanes = min(total, 1 << batch_bits)
    lanes = max(lanes, 64)
    cc = CompiledCircuit(circuit)
    base = 0
    while base < total:
        n = min(lanes, total - base)
        padded = (n + 63) // 64 * 64
        W = cc.run(exhaustive_input_words(circuit.n_i, base, padded))
        yield base, cc.output_values(W, padded)[:n]
        base += n


def eval_exhaustive(circuit: Circuit, *, cap: int = DEFAULT_EXHAUSTIVE_CAP,
                    ) -> Iterator[tuple[int, int]]:
    """Stream ``(input_index, output_value)`` for all ``2**n_i`` vectors in
    ascending index order."""
    if circuit.n_o <= 64:
        for base, values in exhaustive_batches(circuit, cap=cap):
            for off, v in enumerate(values.tolist()):
                yield base + off, v
    else:
        _check_cap(circuit.n_i, cap)
        for v in range(1 << circuit.n_i):
            yield v, eval_index(circuit, v)


def sample_indices(n_i: int, count: int, rng: np.random.Generator) -> list[int]:
    """``count`` uniform input indices; works for any width via 32-bit draws."""
    nchunks = (n_i + 31) // 32
    draws = rng.integers(0, 1 << 32, size=(count, nchunks), dtype=np.uint64)
    mask = (1 << n_i) - 1
    out = []
    for row in draws:
        v = 0
        for c, d in enumerate(row.tolist()):
            v |= d << (32 * c)
        out.append(v & mask)
    return out


def eval_sampled(circuit: Circuit, sample_count: int,
                 rng: np.random.Generator | int,
                 ) -> Iterator[tuple[int, int]]:
    """Stream ``(input_index, output_value)`` for seeded uniform input draws."""
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    indices = sample_indices(circuit.n_i, sample_count, rng)
    if circuit.n_o <= 64:
        cc = CompiledCircuit(circuit)
        chunk = 1 << BATCH_BITS
        for start in range(0, len(indices), chunk):
            part = indices[start:start + chunk]
            words = indices_to_input_words(part, circuit.n_i)
            W = cc.run(words)
            values = cc.output_values(W, words.shape[1] * 64)[: len(part)]
            for v, out in zip(part, values.tolist()):
                yield v, out
    else:
        for v in indices:
            yield v, eval_index(circuit, v)
