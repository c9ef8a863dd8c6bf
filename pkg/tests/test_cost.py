import json

import pytest

from approxlab import cost, generators, genome as gn


def single_gate_circuit(fn, n_i=2, n_o=1):
    params = gn.CgpParams(n_i=n_i, n_o=n_o, n_r=1, n_c=1)
    return gn.decode(gn.Genome(params=params, fnset=gn.FunctionSet(),
                               nodes=((0, 1, fn),), outputs=(n_i,)))


class TestCostReport:
    def test_empty_circuit(self):
        params = gn.CgpParams(n_i=2, n_o=1, n_r=1, n_c=1)
        c = gn.decode(gn.Genome(params=params, fnset=gn.FunctionSet(),
                                nodes=((0, 1, gn.FN_AND),), outputs=(0,)))
        r = cost.cost_report(c)
        assert r.area == 0 and r.delay_proxy == 0 and r.active_gates == 0

    def test_single_and_gate(self):
        r = cost.cost_report(single_gate_circuit(gn.FN_AND))
        assert r.area == 1.0
        assert r.delay_proxy == 1.0
        assert r.power_proxy == r.area

    def test_xor_weighs_double(self):
        assert cost.cost_report(single_gate_circuit(gn.FN_XOR)).area == 2.0

    def test_relative_power_of_reference_is_one(self):
        c = gn.decode(generators.array_multiplier(8))
        r = cost.cost_report(c, reference=c, reference_id="mul8_exact")
        assert r.relative_power == 1.0
        assert r.reference_id == "mul8_exact"

    def test_structural_subset_ordering(self):
        exact = gn.decode(generators.array_multiplier(8))
        t7 = gn.decode(generators.truncated_multiplier(8, 7)[1])
        t6 = gn.decode(generators.truncated_multiplier(8, 6)[1])
        a_exact = cost.cost_report(exact).area
        a7 = cost.cost_report(t7).area
        a6 = cost.cost_report(t6).area
        assert a6 < a7 < a_exact

    def test_delay_is_weighted_critical_path(self):
        # AND feeding XOR: path weight 1.0 + 2.0
        params = gn.CgpParams(n_i=2, n_o=1, n_r=1, n_c=2)
        g = gn.Genome(params=params, fnset=gn.FunctionSet(),
                      nodes=((0, 1, gn.FN_AND), (2, 0, gn.FN_XOR)),
                      outputs=(3,))
        r = cost.cost_report(gn.decode(g))
        assert r.delay_proxy == 3.0

    def test_json_table_loading(self, tmp_path):
        path = tmp_path / "table.json"
        path.write_text(json.dumps({"xor": {"area": 3.0}}))
        table = cost.GateCostTable.from_json(path)
        assert table.area["xor"] == 3.0
        assert table.area["and"] == 1.0  # default preserved
        r = cost.cost_report(single_gate_circuit(gn.FN_XOR), table)
        assert r.area == 3.0

    def test_unknown_function_in_table_rejected(self, tmp_path):
        path = tmp_path / "table.json"
        path.write_text(json.dumps({"mux": {"area": 1.0}}))
        with pytest.raises(ValueError, match="unknown gate function"):
            cost.GateCostTable.from_json(path)

    def test_json_round_trip(self):
        c = gn.decode(generators.array_multiplier(4))
        r = cost.cost_report(c, reference=c, reference_id="self")
        assert cost.CostReport.from_json_dict(r.to_json_dict()) == r
