"""Command-line entry point.

Subcommands: ``gen`` (seed/baseline circuits), ``eval`` (error + cost of a
circuit against a reference), ``evolve`` (single- or multi-objective
search), ``curate`` (Pareto curation into a manifest), ``lut`` (materialize
a product table), ``resilience`` (tiny-net training and replacement
sweeps), ``report`` (CSV + figure rendering).

Every run writes ``run.json`` (the fully resolved configuration plus
timestamps) into the output directory.  All other outputs are byte-stable:
rerunning with the same arguments and seed reproduces them exactly,
regardless of ``--workers``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import re
import sys
import time

import numpy as np

from . import __version__, CGP_FORMAT_VERSION, MANIFEST_FORMAT_VERSION, \
    NETWORK_FORMAT_VERSION
from . import cost as cost_mod
from . import evolve as evolve_mod
from . import generators, library, metrics, qnn, report
from . import resilience as rs
from .errors import ApproxLabError
from .genome import decode, load as load_genome, save as save_genome


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path

def _write_run_json(out_dir, subcommand, argv, config, started, elapsed,
                    error=None):
    payload = {
        "subcommand": subcommand,
        "argv": list(argv),
        "config": config,
        "versions": {
            "toolkit": __version__,
            "cgp_format": CGP_FORMAT_VERSION,
            "manifest_format": MANIFEST_FORMAT_VERSION,
            "network_format": NETWORK_FORMAT_VERSION,
        },
        "started_at": started,
        "elapsed_seconds": elapsed,
    }
    if error is not None:
        payload["error"] = error
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


_REF_RE = re.compile(r"^exact-(mult|adder?)(\d+)$")


def _resolve_target(spec: str, kind: str = "reference"):
    """'exact-mult8', 'exact-adder8' or a `.cgp` path -> evaluation target
    plus (family, bit_width) when known."""
    m = _REF_RE.match(spec)
    if m:
        width = int(m.group(2))
        if m.group(1) == "mult":
            return generators.multiplier_model(width), ("multiplier", width)
        return generators.adder_model(width), ("adder", width)
    if not os.path.exists(spec):
        raise ApproxLabError(
            f"{kind} {spec!r} is neither exact-mult<N>/exact-adder<N> nor an "
            f"existing .cgp file")
    return decode(load_genome(spec)), (None, None)


def _resolve_seed_genome(spec: str):
    m = _REF_RE.match(spec)
    if m:
        width = int(m.group(2))
        if m.group(1) == "mult":
            return generators.array_multiplier(width), ("multiplier", width)
        return generators.ripple_carry_adder(width), ("adder", width)
    if not os.path.exists(spec):
        raise ApproxLabError(f"seed circuit file {spec!r} not found")
    return load_genome(spec), (None, None)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> dict:
    if args.kind == "baselines":
        if args.bits != 8:
            raise ApproxLabError("gen baselines currently supports --bits 8")
        ref = generators.array_multiplier(args.bits)
        entries = [library.make_entry(f"mul{args.bits}_exact", ref,
                                      "multiplier", args.bits,
                                      reference_genome=ref)]
        for k in range(args.bits):
            _, g = generators.truncated_multiplier(args.bits, k)
            entries.append(library.make_entry(
                f"mul{args.bits}_trunc{k}", g, "multiplier", args.bits,
                reference_genome=ref))
        for h, v in [(0, 2), (0, 4), (1, 3), (0, 6), (1, 6), (0, 7),
                     (2, 7), (2, 8), (3, 9), (4, 10)]:
            _, g = generators.bam_multiplier(
                generators.BamSpec(args.bits, h, v))
            entries.append(library.make_entry(
                f"mul{args.bits}_bam_h{h}v{v}", g, "multiplier", args.bits,
                reference_genome=ref))
        out = os.path.join(args.out_dir, "library.json")
        library.save_manifest(entries, out)
        print(f"{out}: {len(entries)} baseline multipliers")
        return {"kind": "baselines", "bits": args.bits, "output": out,
                "entries": len(entries)}
    if args.kind == "adder":
        genome = generators.ripple_carry_adder(args.bits)
        default = f"adder{args.bits}.cgp"
    elif args.kind == "mult":
        genome = generators.array_multiplier(args.bits)
        default = f"mult{args.bits}.cgp"
    elif args.kind == "trunc":
        if args.keep is None:
            raise ApproxLabError("gen trunc requires --keep")
        _, genome = generators.truncated_multiplier(args.bits, args.keep)
        default = f"mult{args.bits}_trunc{args.keep}.cgp"
    else:  # bam
        if args.hbreak is None or args.vbreak is None:
            raise ApproxLabError("gen bam requires --hbreak and --vbreak")
        _, genome = generators.bam_multiplier(
            generators.BamSpec(args.bits, args.hbreak, args.vbreak))
        default = f"mult{args.bits}_bam_h{args.hbreak}v{args.vbreak}.cgp"
    out = args.output or os.path.join(args.out_dir, default)
    save_genome(genome, out)
    print(out)
    return {"kind": args.kind, "bits": args.bits, "keep": args.keep,
            "hbreak": args.hbreak, "vbreak": args.vbreak, "output": out}


def cmd_eval(args) -> dict:
    circuit = decode(load_genome(args.circuit))
    ref, _ = _resolve_target(args.ref)
    if args.sample:
        err = metrics.sampled_error_report(circuit, ref, args.sample,
                                           seed=args.seed)
    else:
        err = metrics.error_report(circuit, ref)
    ref_circuit = None
    if isinstance(ref, generators.FunctionalModel):
        fam = _REF_RE.match(args.ref)
        if fam and fam.group(1) == "mult":
            ref_circuit = decode(generators.array_multiplier(int(fam.group(2))))
        elif fam:
            ref_circuit = decode(generators.ripple_carry_adder(int(fam.group(2))))
    else:
        ref_circuit = ref
    cost = cost_mod.cost_report(circuit, reference=ref_circuit,
                                reference_id=args.ref)
    name = os.path.splitext(os.path.basename(args.circuit))[0]
    row = report.eval_row(name, err, cost)
    out = os.path.join(args.out_dir, "eval.csv")
    report.write_csv(out, report.EVAL_HEADER, [row])
    with open(out) as fh:
        print(fh.read(), end="")
    return {"circuit": args.circuit, "ref": args.ref, "sample": args.sample,
            "seed": args.seed, "output": out}


def _search_config(args) -> evolve_mod.SearchConfig:
    objectives = tuple(s for s in (args.objectives or "").split(",") if s)
    return evolve_mod.SearchConfig(
        generations=args.generations, lam=args.lam, h=args.h,
        metric=args.metric, e_min=args.e_min, e_max=args.e_max,
        objectives=objectives, seed=args.seed, workers=args.workers,
        trace_stride=args.trace_stride)


def cmd_evolve(args) -> dict:
    seed_genome, (family, width) = _resolve_seed_genome(args.seed_circuit)
    ref, (rfam, rwidth) = _resolve_target(args.ref)
    family = family or rfam or "multiplier"
    width = width or rwidth or seed_genome.params.n_i // 2
    config = _search_config(args)
    out_dir = args.out_dir

    if args.mode == "single":
        result = evolve_mod.evolve_single(seed_genome, ref, config)
        result.trace.write_csv(os.path.join(out_dir, "trace.csv"),
                               timing=args.timing)
        if not result.found:
            print("no solution: no candidate entered the error window",
                  file=sys.stderr)
            return {"mode": "single", "found": False,
                    "metric": config.metric, "e_max": config.e_max,
                    "generations": config.generations, "seed": config.seed}
        save_genome(result.genome, os.path.join(out_dir, "result.cgp"))
        row = report.eval_row("result", result.error, result.cost)
        report.write_csv(os.path.join(out_dir, "eval.csv"),
                         report.EVAL_HEADER, [row])
        print(f"result.cgp: area={result.cost.area} "
              f"{config.metric}={result.error.value(config.metric)}")
        return {"mode": "single", "found": True, "metric": config.metric,
                "e_max": config.e_max, "generations": config.generations,
                "seed": config.seed}

    result = evolve_mod.evolve_pareto(seed_genome, ref, config)
    result.trace.write_csv(os.path.join(out_dir, "trace.csv"),
                           timing=args.timing)
    entries = []
    for i, m in enumerate(sorted(result.members,
                                 key=lambda m: m.objectives[-1])):
        entries.append(library.LibraryEntry(
            id=f"evo{args.seed}_{i:04d}", genome=m.genome, error=m.error,
            cost=m.cost, family=family, bit_width=width,
            provenance={"seed_circuit": args.seed_circuit, "ref": args.ref,
                        "rng_seed": config.seed,
                        "generations": config.generations,
                        "lam": config.lam, "h": config.h,
                        "objectives": list(config.objectives)}))
    library.save_manifest(entries, os.path.join(out_dir, "library.json"))
    print(f"archive: {len(entries)} non-dominated circuits -> library.json")
    return {"mode": "pareto", "members": len(entries),
            "objectives": list(config.objectives), "seed": config.seed,
            "generations": config.generations}


def cmd_curate(args) -> dict:
    entries = library.load_manifest(args.library)
    metric_list = tuple(s for s in args.metrics.split(",") if s)
    curated = library.union_dedup_selection(entries, metrics=metric_list,
                                            k=args.k)
    library.save_manifest(curated, os.path.join(args.out_dir, "library.json"))
    print(f"curated {len(curated)} of {len(entries)} entries")
    return {"library": args.library, "metrics": list(metric_list),
            "k": args.k, "selected": len(curated)}


def cmd_lut(args) -> dict:
    entries = library.load_manifest(args.library)
    matching = [e for e in entries if e.id == args.id]
    if not matching:
        raise ApproxLabError(f"no entry {args.id!r} in {args.library}")
    lut = rs.lut_from_entry(matching[0])
    bin_path = os.path.join(args.out_dir, f"{args.id}.lut.bin")
    with open(bin_path, "wb") as fh:
        fh.write(lut.table.astype("<u2").tobytes())
    sidecar = {
        "id": lut.source_id,
        "relative_power": lut.relative_power,
        "dtype": "uint16-le",
        "shape": [256, 256],
        "layout": "operand-a-major",
        "error": None if lut.error is None else lut.error.to_json_dict(),
    }
    with open(os.path.join(args.out_dir, f"{args.id}.lut.json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(bin_path)
    return {"library": args.library, "id": args.id, "output": bin_path}


def _load_luts(args) -> list:
    entries = library.load_manifest(args.library)
    if args.luts:
        wanted = [s for s in args.luts.split(",") if s]
        by_id = {e.id: e for e in entries}
        missing = [w for w in wanted if w not in by_id]
        if missing:
            raise ApproxLabError(f"ids not in library: {', '.join(missing)}")
        entries = [by_id[w] for w in wanted]
    return [rs.lut_from_entry(e) for e in entries]


def cmd_resilience(args) -> dict:
    out_dir = args.out_dir
    if args.action == "train-tiny":
        spec = rs.BlobSpec(n_features=args.features, n_classes=args.classes,
                           n_train=args.train_count, n_eval=args.eval_count)
        net = rs.train_tiny_net(spec, seed=args.seed)
        _, _, eval_x, eval_y = rs.make_blobs(spec, args.seed)
        qnn.save_network(net, os.path.join(out_dir, "net.json"))
        qnn.save_dataset(eval_x, eval_y, os.path.join(out_dir, "eval_data.json"))
        acc = rs.evaluate_accuracy(net, eval_x, eval_y, rs.exact_lut().table,
                                   workers=args.workers)
        print(f"exact-multiplier accuracy on held-out split: "
              f"{report.format_num(acc * 100, 2)}%")
        return {"action": "train-tiny", "seed": args.seed,
                "classes": args.classes, "features": args.features,
                "exact_accuracy": acc}

    for flag in ("net", "dataset", "library"):
        if not getattr(args, flag):
            raise ApproxLabError(f"resilience {args.action} requires --{flag}")
    net = qnn.load_network(args.net)
    images, labels = qnn.load_dataset(args.dataset)
    if args.limit:
        images, labels = images[:args.limit], labels[:args.limit]
    luts = _load_luts(args)
    if args.action == "sweep":
        rep = rs.layerwise_sweep(net, images, labels, luts,
                                 workers=args.workers)
        rows = report.layerwise_rows(rep)
        out = os.path.join(out_dir, "layerwise.csv")
        report.write_csv(out, report.LAYERWISE_HEADER, rows)
    else:  # full
        rep = rs.full_replacement_eval(net, images, labels, luts,
                                       workers=args.workers)
        rows = report.full_rows(rep)
        out = os.path.join(out_dir, "full.csv")
        report.write_csv(out, report.FULL_HEADER, rows)
    baseline = {"baseline_accuracy_pct": rep.baseline_accuracy * 100}
    report.write_csv(os.path.join(out_dir, "baseline.csv"),
                     ["baseline_accuracy_pct"], [baseline])
    print(out)
    return {"action": args.action, "net": args.net, "dataset": args.dataset,
            "library": args.library, "luts": args.luts, "limit": args.limit,
            "images": len(images), "baseline_accuracy": rep.baseline_accuracy}


def _read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [dict(r) for r in csv.DictReader(fh)]


def cmd_report(args) -> dict:
    out_dir = args.out_dir
    made = []
    if args.library:
        entries = library.load_manifest(args.library)
        rows = [report.eval_row(e.id, e.error, e.cost) for e in entries]
        table = os.path.join(out_dir, "library_table.csv")
        report.write_csv(table, report.EVAL_HEADER, rows)
        made.append(table)
        for metric in (s for s in args.metrics.split(",") if s):
            front = library.pareto_filter(entries, "power_proxy", metric)
            front_rows = [report.eval_row(e.id, e.error, e.cost) for e in front]
            csv_path = os.path.join(out_dir, f"pareto_{metric}.csv")
            report.write_csv(csv_path, report.EVAL_HEADER, front_rows)
            png = os.path.join(out_dir, f"pareto_{metric}.png")
            report.fig_library(entries, front, metric, png)
            made += [csv_path, png]
    if args.layerwise:
        rows = _read_csv(args.layerwise)
        for r in rows:
            for k in ("layer_index",):
                r[k] = int(r[k])
            for k in ("mult_fraction_pct", "accuracy_pct",
                      "accuracy_drop_pct", "power_drop_pct"):
                r[k] = float(r[k])
        baseline = 0.0
        base_csv = os.path.join(os.path.dirname(args.layerwise), "baseline.csv")
        if os.path.exists(base_csv):
            baseline = float(_read_csv(base_csv)[0]["baseline_accuracy_pct"])
        png = os.path.join(out_dir, "layerwise.png")
        report.fig_layerwise(rows, baseline, png)
        made.append(png)
    if args.full:
        rows = _read_csv(args.full)
        for r in rows:
            for k in ("relative_power_pct", "accuracy_pct", "power_drop_pct"):
                r[k] = float(r[k])
        baseline = 0.0
        base_csv = os.path.join(os.path.dirname(args.full), "baseline.csv")
        if os.path.exists(base_csv):
            baseline = float(_read_csv(base_csv)[0]["baseline_accuracy_pct"])
        png = os.path.join(out_dir, "replacement.png")
        report.fig_full(rows, baseline, png)
        made.append(png)
    if args.trace:
        rows = _read_csv(args.trace)
        for r in rows:
            r["generation"] = int(r["generation"])
            r["best_cost"] = float(r["best_cost"])
            r["best_error"] = float(r["best_error"])
        png = os.path.join(out_dir, "trace.png")
        report.fig_trace(rows, png)
        made.append(png)
    if not made:
        raise ApproxLabError(
            "report needs at least one of --library/--layerwise/--full/--trace")
    for p in made:
        print(p)
    return {"outputs": made}


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    p = _Parser(prog="approxlab",
                description="approximate-circuit evolution, curation and "
                            "resilience analysis")
    p.add_argument("--version", action="version",
                   version=f"approxlab {__version__} "
                           f"(cgp v{CGP_FORMAT_VERSION}, "
                           f"manifest v{MANIFEST_FORMAT_VERSION}, "
                           f"network v{NETWORK_FORMAT_VERSION})")
    sub = p.add_subparsers(dest="subcommand", required=True)

    def common(sp):
        sp.add_argument("-O", "--out-dir", default=".",
                        help="output directory (run.json lands here)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=int, default=1)

    g = sub.add_parser("gen", help="generate seed/baseline circuits")
    g.add_argument("kind",
                   choices=["adder", "mult", "trunc", "bam", "baselines"])
    g.add_argument("--bits", type=int, required=True)
    g.add_argument("--keep", type=int, help="kept high bits (trunc)")
    g.add_argument("--hbreak", type=int, help="horizontal break level (bam)")
    g.add_argument("--vbreak", type=int, help="vertical break level (bam)")
    g.add_argument("-o", "--output", help="output .cgp path")
    common(g)
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("eval", help="error and cost of a circuit vs reference")
    e.add_argument("--circuit", required=True)
    e.add_argument("--ref", required=True,
                   help="exact-mult<N>, exact-adder<N>, or a .cgp path")
    e.add_argument("--sample", type=int, default=0,
                   help="sample count (0: exhaustive)")
    common(e)
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("evolve", help="run a mutation-driven circuit search")
    v.add_argument("--seed-circuit", required=True,
                   help="exact-mult<N>, exact-adder<N>, or a .cgp path")
    v.add_argument("--ref", required=True)
    v.add_argument("--mode", choices=["single", "pareto"], default="single")
    v.add_argument("--metric", default="wce")
    v.add_argument("--e-min", type=float, default=0.0)
    v.add_argument("--e-max", type=float, default=None)
    v.add_argument("--objectives", default="",
                   help="comma list for pareto mode, e.g. mae,area")
    v.add_argument("--generations", type=int, required=True)
    v.add_argument("--lam", type=int, default=1, help="offspring per generation")
    v.add_argument("--h", type=int, default=5, help="mutation intensity")
    v.add_argument("--trace-stride", type=int, default=0)
    v.add_argument("--timing", action="store_true",
                   help="write wall-clock seconds into trace.csv")
    common(v)
    v.set_defaults(func=cmd_evolve)

    c = sub.add_parser("curate", help="pareto/even-spread/union curation")
    c.add_argument("--library", required=True)
    c.add_argument("--metrics", default=",".join(library.CURATION_METRICS))
    c.add_argument("--k", type=int, default=10)
    common(c)
    c.set_defaults(func=cmd_curate)

    l = sub.add_parser("lut", help="materialize a product table from a manifest entry")
    l.add_argument("--library", required=True)
    l.add_argument("--id", required=True)
    common(l)
    l.set_defaults(func=cmd_lut)

    r = sub.add_parser("resilience", help="quantized-inference sweeps")
    r.add_argument("action", choices=["train-tiny", "sweep", "full"])
    r.add_argument("--net")
    r.add_argument("--dataset")
    r.add_argument("--library")
    r.add_argument("--luts", default="", help="comma list of entry ids")
    r.add_argument("--limit", type=int, default=0, help="cap evaluated images")
    r.add_argument("--classes", type=int, default=10)
    r.add_argument("--features", type=int, default=16)
    r.add_argument("--train-count", type=int, default=2000)
    r.add_argument("--eval-count", type=int, default=1000)
    common(r)
    r.set_defaults(func=cmd_resilience)

    t = sub.add_parser("report", help="render CSV tables and figures")
    t.add_argument("--library")
    t.add_argument("--metrics", default="mae")
    t.add_argument("--layerwise", help="layerwise.csv from resilience sweep")
    t.add_argument("--full", help="full.csv from resilience full")
    t.add_argument("--trace", help="trace.csv from evolve")
    common(t)
    t.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    _ensure_dir(args.out_dir)
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    t0 = time.perf_counter()
    try:
        config = args.func(args)
    except (ApproxLabError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        _write_run_json(args.out_dir, args.subcommand, argv, None, started,
                        time.perf_counter() - t0, error=str(e))
        return 2
    _write_run_json(args.out_dir, args.subcommand, argv, config, started,
                    time.perf_counter() - t0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
