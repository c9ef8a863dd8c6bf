import json
import random

import numpy as np
import pytest

from approxlab import generators, library
from approxlab.errors import ManifestError
from approxlab.genome import canonical_key


def make_baseline_entries(widths=(8,)):
    entries = []
    for n in widths:
        ref = generators.array_multiplier(n)
        entries.append(library.make_entry(
            f"mul{n}_exact", ref, "multiplier", n, reference_genome=ref))
        for k in range(0, n):
            _, g = generators.truncated_multiplier(n, k)
            entries.append(library.make_entry(
                f"mul{n}_trunc{k}", g, "multiplier", n, reference_genome=ref))
        for h, v in [(0, 2), (0, 4), (1, 3), (0, 6), (1, 6), (0, 7), (2, 7),
                     (2, 8), (3, 8), (1, 8)]:
            _, g = generators.bam_multiplier(generators.BamSpec(n, h, v))
            entries.append(library.make_entry(
                f"mul{n}_bam_h{h}v{v}", g, "multiplier", n, reference_genome=ref))
    return entries


@pytest.fixture(scope="module")
def baseline_entries():
    return make_baseline_entries()


def brute_force_front(points):
    """O(n^2) dominance oracle over (x, y, id) triples."""
    front = []
    for i, (x, y, ident) in enumerate(points):
        dominated = False
        for j, (x2, y2, ident2) in enumerate(points):
            if i == j:
                continue
            if x2 <= x and y2 <= y and (x2 < x or y2 < y):
                dominated = True
                break
            if x2 == x and y2 == y and ident2 < ident:
                dominated = True  # tie rule: keep smallest id
                break
        if not dominated:
            front.append(ident)
    return sorted(front)


class FakeEntry:
    """Minimal stand-in exposing the axis interface for pure-geometry tests."""

    def __init__(self, ident, x, y):
        self.id = ident
        self.family = "multiplier"
        self.bit_width = 8
        self._x, self._y = x, y

    def axis_value(self, axis):
        return self._x if axis == "power_proxy" else self._y


class TestParetoFilter:
    def test_drops_dominated_point(self):
        pts = [FakeEntry("a", 1, 5), FakeEntry("b", 2, 4), FakeEntry("c", 3, 3),
               FakeEntry("d", 2, 6)]
        front = library.pareto_filter(pts, "power_proxy", "mae")
        assert [e.id for e in front] == ["a", "b", "c"]

    def test_single_entry(self):
        pts = [FakeEntry("only", 1, 1)]
        assert library.pareto_filter(pts, "power_proxy", "mae") == pts

    def test_matches_brute_force_oracle_on_random_points(self):
        rng = random.Random(0)
        pts = [FakeEntry(f"e{i:05d}", rng.randrange(100), rng.randrange(100))
               for i in range(3000)]
        fast = sorted(e.id for e in
                      library.pareto_filter(pts, "power_proxy", "mae"))
        oracle = brute_force_front([(e._x, e._y, e.id) for e in pts])
        assert fast == oracle

    def test_idempotent(self, baseline_entries):
        front = library.pareto_filter(baseline_entries, "power_proxy", "mae")
        assert library.pareto_filter(front, "power_proxy", "mae") == front

    def test_mixed_families_rejected(self):
        a = FakeEntry("a", 1, 1)
        b = FakeEntry("b", 2, 2)
        b.family = "adder"
        with pytest.raises(ValueError, match="mix"):
            library.pareto_filter([a, b], "power_proxy", "mae")


class TestSelectEvenSpread:
    def test_targets_coincide(self):
        pts = [FakeEntry(f"p{v}", v, 0) for v in (0, 25, 50, 75, 100)]
        out = library.select_even_spread(pts, 5)
        assert [e._x for e in out] == [0, 25, 50, 75, 100]

    def test_k_two_takes_extremes(self):
        pts = [FakeEntry(f"p{v}", v, 0) for v in (0, 10, 100)]
        out = library.select_even_spread(pts, 2)
        assert [e._x for e in out] == [0, 100]

    def test_endpoints_always_included(self):
        rng = random.Random(5)
        for _ in range(50):
            xs = sorted(rng.sample(range(1000), rng.randrange(3, 40)))
            pts = [FakeEntry(f"p{i:03d}", x, 0) for i, x in enumerate(xs)]
            k = rng.randrange(2, 12)
            out = library.select_even_spread(pts, k)
            assert len(out) <= k
            got = [e._x for e in out]
            assert xs[0] in got and xs[-1] in got
            assert set(got) <= set(xs)

    def test_empty_front_rejected(self):
        with pytest.raises(ValueError):
            library.select_even_spread([], 3)


class TestUnionDedup:
    def test_counts_and_distinct_phenotypes(self, baseline_entries):
        out = library.union_dedup_selection(baseline_entries)
        assert 10 <= len(out) <= 50
        keys = [canonical_key(e.genome) for e in out]
        assert len(keys) == len(set(keys))

    def test_one_circuit_optimal_everywhere_appears_once(self):
        # A strictly better point on every metric axis shows up exactly once.
        e1 = FakeEntry("best", 1, 1)
        e2 = FakeEntry("other", 2, 2)
        g = generators.array_multiplier(2)
        _, g2 = generators.truncated_multiplier(2, 1)
        e1.genome, e2.genome = g, g2
        out = library.union_dedup_selection([e1, e2], metrics=("mae", "wce"),
                                            k=1)
        assert [e.id for e in out] == ["best"]


class TestManifest:
    def test_round_trip(self, tmp_path, baseline_entries):
        entries = baseline_entries[:4]
        path = tmp_path / "library.json"
        library.save_manifest(entries, path)
        loaded = library.load_manifest(path)
        assert [e.id for e in loaded] == [e.id for e in entries]
        for a, b in zip(loaded, entries):
            assert a.genome == b.genome
            assert a.error == b.error
            assert a.cost == b.cost

    def test_empty_manifest(self, tmp_path):
        path = tmp_path / "library.json"
        library.save_manifest([], path)
        assert library.load_manifest(path) == []

    def test_tampered_error_field_detected(self, tmp_path, baseline_entries):
        path = tmp_path / "library.json"
        library.save_manifest(baseline_entries[:2], path)
        manifest = json.loads(path.read_text())
        manifest["entries"][0]["error"]["mae"] += 1.0
        path.write_text(json.dumps(manifest))
        with pytest.raises(ManifestError, match="report mismatch"):
            library.load_manifest(path)

    def test_missing_circuit_file(self, tmp_path, baseline_entries):
        path = tmp_path / "library.json"
        library.save_manifest(baseline_entries[:2], path)
        (tmp_path / "circuits" / f"{baseline_entries[0].id}.cgp").unlink()
        with pytest.raises(ManifestError, match="missing circuit file"):
            library.load_manifest(path)

    def test_duplicate_ids_rejected(self, tmp_path, baseline_entries):
        e = baseline_entries[0]
        with pytest.raises(ManifestError, match="duplicate"):
            library.save_manifest([e, e], tmp_path / "library.json")


class TestManifestDeterminism:
    def test_save_load_save_byte_identical(self, tmp_path, baseline_entries):
        a = tmp_path / "a"
        b = tmp_path / "b"
        a.mkdir(); b.mkdir()
        entries = baseline_entries[:5]
        library.save_manifest(entries, a / "library.json")
        loaded = library.load_manifest(a / "library.json")
        library.save_manifest(loaded, b / "library.json")
        assert (a / "library.json").read_bytes() == (b / "library.json").read_bytes()
        for e in entries:
            assert (a / "circuits" / f"{e.id}.cgp").read_bytes() == \
                (b / "circuits" / f"{e.id}.cgp").read_bytes()
