import random

import numpy as np
import pytest

from approxlab import generators, genome as gn, simulator as sim
from approxlab.errors import CapExceededError
from tests.conftest import random_valid_genome


def scalar_sweep(circuit):
    return [sim.eval_index(circuit, v) for v in range(1 << circuit.n_i)]


class TestEvalVector:
    def test_two_bit_multiplier(self):
        c = gn.decode(generators.array_multiplier(2))
        # a=3, b=2 packed LSB-first
        out = sim.eval_vector(c, [1, 1, 0, 1])
        assert sum(b << k for k, b in enumerate(out)) == 6

    def test_const1_drives_all_outputs(self):
        params = gn.CgpParams(n_i=2, n_o=3, n_r=1, n_c=1)
        g = gn.Genome(params=params, fnset=gn.FunctionSet(),
                      nodes=((0, 0, gn.FN_CONST1),), outputs=(2, 2, 2))
        c = gn.decode(g)
        for v in range(4):
            assert sim.eval_index(c, v) == 0b111

    def test_adder_255_plus_1(self):
        c = gn.decode(generators.ripple_carry_adder(8))
        assert sim.eval_index(c, 255 | (1 << 8)) == 256

    def test_arity_mismatch(self):
        c = gn.decode(generators.array_multiplier(2))
        with pytest.raises(ValueError):
            sim.eval_vector(c, [0, 1])


class TestEvalExhaustive:
    def test_two_bit_multiplier_stream(self):
        c = gn.decode(generators.array_multiplier(2))
        pairs = list(sim.eval_exhaustive(c))
        assert len(pairs) == 16
        assert pairs == sorted(pairs)
        assert dict(pairs)[3 | (3 << 2)] == 9

    def test_word_parallel_equals_scalar_8x8(self):
        c = gn.decode(generators.array_multiplier(8))
        batches = np.concatenate([v for _, v in sim.exhaustive_batches(c)])
        idx = np.arange(1 << 16, dtype=np.uint64)
        expect = (idx & np.uint64(255)) * (idx >> np.uint64(8))
        assert np.array_equal(batches, expect)

    def test_word_parallel_equals_scalar_random_genomes(self):
        rng = random.Random(3)
        for _ in range(30):
            g = random_valid_genome(rng, n_i=rng.randrange(2, 9),
                                    n_o=rng.randrange(1, 6),
                                    n_r=rng.randrange(1, 4),
                                    n_c=rng.randrange(1, 6))
            c = gn.decode(g)
            got = [v for _, v in sim.eval_exhaustive(c)]
            assert got == scalar_sweep(c)

    def test_cap_refusal(self):
        c = gn.decode(generators.array_multiplier(16))  # 32 input bits
        with pytest.raises(CapExceededError):
            next(sim.eval_exhaustive(c))

    def test_nonpower_batch_boundaries(self):
        c = gn.decode(generators.ripple_carry_adder(5))  # 10 input bits
        got = [v for _, v in sim.eval_exhaustive(c)]
        expect = [(v & 31) + (v >> 5) for v in range(1 << 10)]
        assert got == expect


class TestEvalSampled:
    def test_deterministic_for_fixed_seed(self):
        c = gn.decode(generators.array_multiplier(4))
        a = list(sim.eval_sampled(c, 1000, 42))
        b = list(sim.eval_sampled(c, 1000, 42))
        assert a == b

    def test_sampled_adder_matches_integer_oracle(self):
        c = gn.decode(generators.ripple_carry_adder(8))
        for v, out in sim.eval_sampled(c, 2000, 7):
            assert out == (v & 255) + (v >> 8)

    def test_zero_count_rejected(self):
        c = gn.decode(generators.array_multiplier(2))
        with pytest.raises(ValueError):
            list(sim.eval_sampled(c, 0, 1))

    def test_wide_circuit_uses_bigint_path(self):
        c = gn.decode(generators.ripple_carry_adder(40))  # n_i = 80
        lo_mask = (1 << 40) - 1
        for v, out in sim.eval_sampled(c, 50, 11):
            assert out == (v & lo_mask) + (v >> 40)


class TestKernelEquivalence:
    def test_numpy_and_jit_paths_agree(self):
        c = gn.decode(generators.array_multiplier(6))
        cc = sim.CompiledCircuit(c)
        words = sim.exhaustive_input_words(c.n_i, 0, 4096)
        W_default = cc.run(words).copy()
        W_numpy = np.empty_like(W_default)
        W_numpy[: c.n_i] = words
        sim._run_gates_numpy(cc.prog, W_numpy, c.n_i)
        assert np.array_equal(W_default, W_numpy)


def naive_genome_interpretation(genome, index):
    """Evaluate ALL nodes directly from the chromosome, no decoding."""
    from approxlab import genome as gnm
    p = genome.params
    wires = [(index >> j) & 1 for j in range(p.n_i)]
    for in1, in2, fn in genome.nodes:
        if fn == gnm.FN_AND:
            v = wires[in1] & wires[in2]
        elif fn == gnm.FN_OR:
            v = wires[in1] | wires[in2]
        elif fn == gnm.FN_XOR:
            v = wires[in1] ^ wires[in2]
        elif fn == gnm.FN_NAND:
            v = 1 - (wires[in1] & wires[in2])
        elif fn == gnm.FN_NOR:
            v = 1 - (wires[in1] | wires[in2])
        elif fn == gnm.FN_XNOR:
            v = 1 - (wires[in1] ^ wires[in2])
        elif fn == gnm.FN_NOT:
            v = 1 - wires[in1]
        elif fn == gnm.FN_IDENTITY:
            v = wires[in1]
        elif fn == gnm.FN_CONST0:
            v = 0
        else:
            v = 1
        wires.append(v)
    return sum(wires[o] << k for k, o in enumerate(genome.outputs))


class TestDecodeEquivalence:
    def test_decode_matches_naive_genome_interpretation(self):
        # decoding drops inactive nodes; the function must not change
        rng = random.Random(21)
        for _ in range(25):
            n_i = rng.randrange(2, 9)
            g = random_valid_genome(rng, n_i=n_i, n_o=rng.randrange(1, 5),
                                    n_r=rng.randrange(1, 4),
                                    n_c=rng.randrange(1, 6))
            c = gn.decode(g)
            for v in range(1 << n_i):
                assert sim.eval_index(c, v) == naive_genome_interpretation(g, v)

    def test_word_parallel_matches_scalar_on_8x8_multiplier(self):
        c = gn.decode(generators.array_multiplier(8))
        values = np.concatenate([v for _, v in sim.exhaustive_batches(c)])
        scalar = [sim.eval_index(c, v) for v in range(1 << 16)]
        assert values.tolist() == scalar
