import random

import pytest

from approxlab import genome as gn
from approxlab.errors import CgpParseError, InvalidGenomeError
from tests.conftest import random_valid_genome


def fig_style_genome():
    # 4-in/4-out on a 3x3 grid, wiring chosen to respect column order.
    params = gn.CgpParams(n_i=4, n_o=4, n_r=3, n_c=3)
    nodes = (
        (0, 1, gn.FN_AND), (1, 2, gn.FN_XOR), (2, 3, gn.FN_AND),   # col 0
        (4, 5, gn.FN_OR), (5, 6, gn.FN_AND), (0, 6, gn.FN_XOR),    # col 1
        (7, 8, gn.FN_XOR), (8, 9, gn.FN_AND), (7, 9, gn.FN_OR),    # col 2
    )
    return gn.Genome(params=params, fnset=gn.FunctionSet(),
                     nodes=nodes, outputs=(10, 11, 12, 4))


class TestValidate:
    def test_well_formed_grid_is_ok(self):
        assert gn.validate(fig_style_genome()).ok

    def test_column_zero_may_only_see_primary_inputs(self):
        g = fig_style_genome()
        nodes = list(g.nodes)
        nodes[0] = (4, 1, gn.FN_AND)  # wire 4 is a node output
        bad = gn.Genome(params=g.params, fnset=g.fnset, nodes=tuple(nodes),
                        outputs=g.outputs)
        res = gn.validate(bad)
        assert not res.ok
        assert any("forward reference" in v for v in res.violations)

    def test_output_selector_out_of_range(self):
        g = fig_style_genome()
        bad = gn.Genome(params=g.params, fnset=g.fnset, nodes=g.nodes,
                        outputs=(13, 0, 1, 2))  # n_i + N == 13 is one past the end
        res = gn.validate(bad)
        assert not res.ok
        assert any("output 0 out of range" in v for v in res.violations)

    def test_bad_function_code(self):
        g = fig_style_genome()
        nodes = list(g.nodes)
        nodes[3] = (4, 5, 10)
        res = gn.validate(gn.Genome(params=g.params, fnset=g.fnset,
                                    nodes=tuple(nodes), outputs=g.outputs))
        assert any("bad function code" in v for v in res.violations)

    def test_levels_back_violation(self):
        params = gn.CgpParams(n_i=2, n_o=1, n_r=1, n_c=3, levels_back=1)
        nodes = ((0, 1, gn.FN_AND), (2, 0, gn.FN_OR), (2, 3, gn.FN_AND))
        res = gn.validate(gn.Genome(params=params, fnset=gn.FunctionSet(),
                                    nodes=nodes, outputs=(4,)))
        assert any("levels-back" in v for v in res.violations)


class TestDecode:
    def test_outputs_on_primary_inputs_give_empty_circuit(self):
        g = fig_style_genome()
        g = gn.Genome(params=g.params, fnset=g.fnset, nodes=g.nodes,
                      outputs=(0, 1, 2, 3))
        c = gn.decode(g)
        assert c.active_gates == 0
        assert c.depth == 0

    def test_single_and_feeding_all_outputs(self):
        g = fig_style_genome()
        g = gn.Genome(params=g.params, fnset=g.fnset, nodes=g.nodes,
                      outputs=(4, 4, 4, 4))
        c = gn.decode(g)
        assert c.active_gates == 1
        assert c.depth == 1

    def test_rejects_invalid(self):
        g = fig_style_genome()
        bad = gn.Genome(params=g.params, fnset=g.fnset, nodes=g.nodes,
                        outputs=(20, 0, 0, 0))
        with pytest.raises(InvalidGenomeError):
            gn.decode(bad)

    def test_unused_not_operand_does_not_activate_nodes(self):
        params = gn.CgpParams(n_i=2, n_o=1, n_r=1, n_c=2)
        nodes = ((0, 1, gn.FN_AND), (0, 2, gn.FN_NOT))
        g = gn.Genome(params=params, fnset=gn.FunctionSet(), nodes=nodes,
                      outputs=(3,))
        c = gn.decode(g)
        assert c.active_gates == 1  # the AND behind the ignored operand stays inactive


class TestCanonicalKey:
    def test_inactive_nodes_do_not_affect_key(self, rng):
        g = fig_style_genome()
        g1 = gn.Genome(params=g.params, fnset=g.fnset, nodes=g.nodes,
                       outputs=(4, 4, 4, 4))
        nodes = list(g.nodes)
        nodes[8] = (7, 7, gn.FN_NOR)  # inactive under these outputs
        g2 = gn.Genome(params=g.params, fnset=g.fnset, nodes=tuple(nodes),
                       outputs=(4, 4, 4, 4))
        assert g1 != g2
        assert gn.canonical_key(g1) == gn.canonical_key(g2)
        assert hash(g1) == hash(g2)

    def test_unused_operand_fields_normalized(self):
        params = gn.CgpParams(n_i=2, n_o=1, n_r=1, n_c=1)
        a = gn.Genome(params=params, fnset=gn.FunctionSet(),
                      nodes=((0, 0, gn.FN_NOT),), outputs=(2,))
        b = gn.Genome(params=params, fnset=gn.FunctionSet(),
                      nodes=((0, 1, gn.FN_NOT),), outputs=(2,))
        assert gn.canonical_key(a) == gn.canonical_key(b)


class TestMutate:
    def test_changes_at_most_h_positions(self, rng):
        g = random_valid_genome(rng, n_i=4, n_o=3, n_r=4, n_c=6)
        for _ in range(100):
            m = gn.mutate(g, 5, rng)
            flat_g = [x for n in g.nodes for x in n] + list(g.outputs)
            flat_m = [x for n in m.nodes for x in n] + list(m.outputs)
            assert sum(a != b for a, b in zip(flat_g, flat_m)) <= 5
            assert m.params == g.params and m.fnset == g.fnset

    def test_h_zero_rejected(self, rng, small_genome):
        with pytest.raises(ValueError):
            gn.mutate(small_genome, 0, rng)

    def test_single_node_genome(self, rng):
        params = gn.CgpParams(n_i=2, n_o=1, n_r=1, n_c=1)
        g = gn.Genome(params=params, fnset=gn.FunctionSet(),
                      nodes=((0, 1, gn.FN_AND),), outputs=(2,))
        m = gn.mutate(g, 1, rng)
        flat_g = list(g.nodes[0]) + list(g.outputs)
        flat_m = list(m.nodes[0]) + list(m.outputs)
        assert sum(a != b for a, b in zip(flat_g, flat_m)) in (0, 1)

    def test_fuzz_mutants_always_valid(self):
        rng = random.Random(99)
        g = random_valid_genome(rng, n_i=5, n_o=4, n_r=3, n_c=8, levels_back=2)
        for _ in range(10_000):
            g = gn.mutate(g, 5, rng)
            assert gn.validate(g).ok


class TestTextFormat:
    def test_round_trip_random_genomes(self):
        rng = random.Random(7)
        for _ in range(1000):
            n_r = rng.randrange(1, 4)
            n_c = rng.randrange(1, 5)
            g = random_valid_genome(
                rng, n_i=rng.randrange(1, 6), n_o=rng.randrange(1, 5),
                n_r=n_r, n_c=n_c, levels_back=rng.randrange(1, n_c + 1))
            assert gn.parse(gn.serialize(g)) == g

    def test_serialize_then_parse_is_identity_up_to_whitespace(self):
        g = fig_style_genome()
        text = gn.serialize(g)
        reflowed = text.replace(" ", "\n")
        assert gn.parse(reflowed) == g

    def test_comments_ignored(self):
        g = fig_style_genome()
        text = "# header comment\n" + gn.serialize(g).replace(
            "\n", " # trailing\n", 1)
        assert gn.parse(text) == g

    def test_node_count_mismatch(self):
        g = fig_style_genome()
        text = gn.serialize(g)
        lines = text.splitlines()
        lines[1] = " ".join(lines[1].split()[:-1])  # drop one triple
        with pytest.raises(CgpParseError, match="node count mismatch"):
            gn.parse("\n".join(lines))

    def test_empty_input(self):
        with pytest.raises(CgpParseError, match="missing header"):
            gn.parse("")
        with pytest.raises(CgpParseError, match="missing header"):
            gn.parse("# only a comment\n")

    def test_out_of_range_ids_rejected(self):
        text = "2,1,1,1,2,1,10\n(0,5,2)\n2\n"
        with pytest.raises(CgpParseError):
            gn.parse(text)

    def test_malformed_header(self):
        with pytest.raises(CgpParseError, match="malformed header"):
            gn.parse("1,2,3\n")
