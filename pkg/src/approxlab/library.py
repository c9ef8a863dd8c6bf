"""Circuit library curation and persistence.

A library is a set of entries (genome + error report + cost report +
provenance).  Curation filters Pareto fronts per error metric, thins each
front to an even spread along the power axis, and unions the per-metric
selections with phenotype-level deduplication.

Manifests are JSON files referencing `.cgp` circuit files; loading
re-validates every genome and spot-recomputes one entry's error report,
which must match the stored values exactly.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

from . import MANIFEST_FORMAT_VERSION
from .cost import CostReport, cost_report
from .errors import ManifestError
from .generators import adder_model, multiplier_model
from .genome import Genome, canonical_key, decode, load as load_genome, save as save_genome, validate
from .metrics import (ERROR_METRICS, ErrorReport, error_report,
                      sampled_error_report)

FAMILIES = ("adder", "multiplier")
CURATION_METRICS = ("mae", "wce", "mre", "wcre", "er")

COST_AXES = ("area", "power_proxy", "delay_proxy", "active_gates",
             "relative_power")


@dataclass(frozen=True)
class LibraryEntry:
    id: str
    genome: Genome
    error: ErrorReport
    cost: CostReport
    family: str
    bit_width: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")

    def axis_value(self, axis: str) -> float:
        if axis in ERROR_METRICS:
            return self.error.value(axis)
        if axis in COST_AXES:
            return self.cost.value(axis)
        raise ValueError(f"unknown axis {axis!r}")


def _check_homogeneous(entries) -> None:
    families = {e.family for e in entries}
    widths = {e.bit_width for e in entries}
    if len(families) > 1 or len(widths) > 1:
        raise ValueError(
            f"entries mix families/widths: {sorted(families)} {sorted(widths)}")


def pareto_filter(entries: list[LibraryEntry], x_axis: str = "power_proxy",
                  y_axis: str = "mae") -> list[LibraryEntry]:
    """Non-dominated entries under (minimize x_axis, minimize y_axis).

    Entries tied on both axes keep only the lexicographically smallest id.
    """
    if not entries:
        return []
    _check_homogeneous(entries)
    decorated = sorted(
        ((e.axis_value(x_axis), e.axis_value(y_axis), e.id, e) for e in entries),
        key=lambda t: (t[0], t[1], t[2]))
    front = []
    best_y = None
    for x, y, _, e in decorated:
        if best_y is None or y < best_y:
            front.append(e)
            best_y = y
    return front


def select_even_spread(front: list[LibraryEntry], k: int,
                       axis: str = "power_proxy") -> list[LibraryEntry]:
    """Pick up to ``k`` members nearest to evenly spaced targets on ``axis``.

    Targets span [min, max] so both extremes of the tradeoff always survive;
    ties go to the lower axis value and duplicates collapse.
    """
    if not front:
        raise ValueError("cannot select from an empty front")
    if k < 1:
        raise ValueError("k must be >= 1")
    members = sorted(front, key=lambda e: (e.axis_value(axis), e.id))
    values = [e.axis_value(axis) for e in members]
    lo, hi = values[0], values[-1]
    targets = [lo] if k == 1 else [lo + (hi - lo) * i / (k - 1) for i in range(k)]
    picked = []
    seen = set()
    for t in targets:
        best = min(members, key=lambda e: (abs(e.axis_value(axis) - t),
                                           e.axis_value(axis), e.id))
        if best.id not in seen:
            seen.add(best.id)
            picked.append(best)
    return picked


def union_dedup_selection(entries: list[LibraryEntry],
                          metrics: tuple[str, ...] = CURATION_METRICS,
                          k: int = 10,
                          power_axis: str = "power_proxy",
                          ) -> list[LibraryEntry]:
    """Per-metric Pareto fronts, evenly thinned, unioned, phenotype-deduped."""
    picked: list[LibraryEntry] = []
    seen_keys: set[str] = set()
    for metric in metrics:
        front = pareto_filter(entries, x_axis=power_axis, y_axis=metric)
        if not front:
            continue
        for e in select_even_spread(front, k, axis=power_axis):
            key = canonical_key(e.genome)
            if key not in seen_keys:
                seen_keys.add(key)
                picked.append(e)
    return picked


def _reference_model(family: str, bit_width: int):
    if family == "multiplier":
        return multiplier_model(bit_width)
    return adder_model(bit_width)


def make_entry(entry_id: str, genome: Genome, family: str, bit_width: int,
               provenance: dict | None = None,
               reference_genome: Genome | None = None) -> LibraryEntry:
    """Build an entry by measuring the genome against the exact reference."""
    circuit = decode(genome)
    model = _reference_model(family, bit_width)
    err = error_report(circuit, model)
    ref_circuit = decode(reference_genome) if reference_genome is not None else None
    cost = cost_report(circuit, reference=ref_circuit,
                       reference_id=f"{family}{bit_width}_exact"
                       if ref_circuit is not None else None)
    return LibraryEntry(id=entry_id, genome=genome, error=err, cost=cost,
                        family=family, bit_width=bit_width,
                        provenance=provenance or {})


def save_manifest(entries: list[LibraryEntry], path) -> None:
    """Write ``library.json`` plus one `.cgp` file per entry, atomically."""
    if entries:
        _check_homogeneous(entries)
        family, bit_width = entries[0].family, entries[0].bit_width
    else:
        family, bit_width = "multiplier", 0
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise ManifestError("duplicate entry ids in manifest")
    path = os.fspath(path)
    base = os.path.dirname(path) or "."
    circuits_dir = os.path.join(base, "circuits")
    os.makedirs(circuits_dir, exist_ok=True)
    manifest = {
        "version": MANIFEST_FORMAT_VERSION,
        "family": family,
        "bit_width": bit_width,
        "entries": [],
    }
    for e in entries:
        rel = os.path.join("circuits", f"{e.id}.cgp")
        save_genome(e.genome, os.path.join(base, rel))
        manifest["entries"].append({
            "id": e.id,
            "cgp_path": rel,
            "error": e.error.to_json_dict(),
            "cost": e.cost.to_json_dict(),
            "provenance": e.provenance,
        })
    fd, tmp = tempfile.mkstemp(dir=base, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def load_manifest(path) -> list[LibraryEntry]:
    """Load a manifest; validates genomes and spot-checks the first entry's
    error report against a fresh recomputation."""
    path = os.fspath(path)
    base = os.path.dirname(path) or "."
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"cannot read manifest {path}: {e}")
    if manifest.get("version") != MANIFEST_FORMAT_VERSION:
        raise ManifestError(
            f"unsupported manifest version {manifest.get('version')!r}")
    family = manifest["family"]
    bit_width = manifest["bit_width"]
    entries = []
    for raw in manifest["entries"]:
        cgp_path = os.path.join(base, raw["cgp_path"])
        if not os.path.exists(cgp_path):
            raise ManifestError(
                f"entry {raw['id']}: missing circuit file {raw['cgp_path']}")
        genome = load_genome(cgp_path)
        result = validate(genome)
        if not result.ok:
            raise ManifestError(
                f"entry {raw['id']}: invalid genome: {result.violations[0]}")
        entries.append(LibraryEntry(
            id=raw["id"], genome=genome,
            error=ErrorReport.from_json_dict(raw["error"]),
            cost=CostReport.from_json_dict(raw["cost"]),
            family=family, bit_width=bit_width,
            provenance=raw.get("provenance", {})))
    if entries:
        first = entries[0]
        model = _reference_model(family, bit_width)
        stored = first.error
        if stored.mode == "sampled":
            fresh = sampled_error_report(decode(first.genome), model,
                                         stored.sample_count, stored.seed)
        else:
            fresh = error_report(decode(first.genome), model)
        mismatched = [k for k in ("er", "mae", "mse", "mre", "wce", "wcre")
                      if getattr(fresh, k) != getattr(stored, k)]
        if mismatched:
            raise ManifestError(
                f"entry {first.id}: report mismatch on {', '.join(mismatched)}")
    return entries
