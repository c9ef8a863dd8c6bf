"""Mutation-driven circuit search.

Both search modes keep the same kernel: pick a parent, create ``lam``
mutants by point mutation, evaluate, select.  Single-objective mode
minimizes weighted gate area subject to an error window; multi-objective
mode maintains an unbounded archive of non-dominated (error, cost) points
and draws parents uniformly from it.

Determinism contract: (seed genome, config) fully determines the result.
The RNG lives in the main process only and worker results are merged in
offspring-index order, so ``workers`` never changes the outcome.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from random import Random
from typing import Sequence, Union

import numpy as np

from .cost import CostReport, GateCostTable, cost_report
from .errors import ApproxLabError, InvalidGenomeError
from .generators import FunctionalModel
from .genome import FUNCTION_ARITY, Circuit, Genome, decode, mutate, validate
from .metrics import (ERROR_METRICS, ErrorAccumulator, ErrorReport,
                      _BatchEvaluator, _exact_sum, error_report,
                      sampled_error_report)
from .simulator import (BATCH_BITS, DEFAULT_EXHAUSTIVE_CAP, _run_gates,
                        exhaustive_input_words, indices_to_input_words,
                        sample_indices)

EvalTarget = Union[Circuit, FunctionalModel]

COST_OBJECTIVES = ("area", "delay")


@dataclass(frozen=True)
class SearchConfig:
    """Parameters of one search run."""

    generations: int
    lam: int = 1               # offspring per generation
    h: int = 5                 # chromosome integers redrawn per mutation
    metric: str = "wce"        # drives the window in single-objective mode
    e_min: float = 0.0
    e_max: float | None = None
    objectives: tuple[str, ...] = ()   # >= 2 entries enable Pareto mode
    seed: int = 0
    workers: int = 1
    cap: int = DEFAULT_EXHAUSTIVE_CAP
    sample_count: int = 100_000        # fitness sample when n_i exceeds cap
    trace_stride: int = 0              # extra trace rows every N generations

    def __post_init__(self):
        if self.lam < 1:
            raise ValueError("lam must be >= 1")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if self.h < 1:
            raise ValueError("h must be >= 1")
        if self.metric not in ERROR_METRICS:
            raise ValueError(f"unknown error metric {self.metric!r}")
        if self.e_max is not None and self.e_min > self.e_max:
            raise ValueError("e_min must be <= e_max")
        if self.objectives:
            if len(self.objectives) < 2:
                raise ValueError("multi-objective mode needs >= 2 objectives")
            for obj in self.objectives:
                if obj not in ERROR_METRICS and obj not in COST_OBJECTIVES:
                    raise ValueError(f"unknown objective {obj!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class TraceRow:
    generation: int
    best_cost: float
    best_error: float
    evaluations: int
    seconds: float


@dataclass
class SearchTrace:
    rows: list[TraceRow] = field(default_factory=list)
    generations: int = 0
    evaluations: int = 0
    wall_seconds: float = 0.0

    def write_csv(self, path, *, timing: bool = False) -> None:
        """Emit trace rows; wall-clock seconds are zeroed unless ``timing``
        so that result files stay byte-identical across reruns."""
        with open(path, "w", encoding="ascii") as fh:
            fh.write("generation,best_cost,best_error,evals,seconds\n")
            for r in self.rows:
                secs = r.seconds if timing else 0.0
                fh.write(f"{r.generation},{r.best_cost!r},{r.best_error!r},"
                         f"{r.evaluations},{secs!r}\n")


@dataclass(frozen=True)
class EvolvedMember:
    genome: Genome
    error: ErrorReport
    cost: CostReport
    objectives: tuple[float, ...] = ()


@dataclass
class SingleResult:
    """Outcome of a window-constrained cost minimization.

    ``genome`` is None when no candidate ever landed inside the error
    window; the trace still describes the failed run.
    """

    genome: Genome | None
    error: ErrorReport | None
    cost: CostReport | None
    trace: SearchTrace

    @property
    def found(self) -> bool:
        return self.genome is not None


@dataclass
class ParetoResult:
    members: list[EvolvedMember]
    trace: SearchTrace


class _MetricStream:
    """Streaming single-metric accumulator for batched candidate outputs.

    Accumulates only what its metric needs; the grouped accumulator is paid
    for only by the relative-error metrics.
    """

    __slots__ = ("metric", "n_o", "n", "total", "worst", "count", "acc")

    def __init__(self, metric: str, n_o: int):
        self.metric = metric
        self.n_o = n_o
        self.n = 0
        self.total = 0
        self.worst = 0
        self.count = 0
        self.acc = ErrorAccumulator(n_o) if metric in ("mre", "wcre") else None

    def update(self, diff: np.ndarray, approx: np.ndarray,
               exact: np.ndarray) -> None:
        if self.acc is not None:
            self.acc.update_batch(approx, exact)
            return
        self.n += len(diff)
        m = self.metric
        if m == "er":
            self.count += int(np.count_nonzero(diff))
        elif m in ("mae", "mae_pct"):
            # batches are <= 2**16 lanes and n_o <= 40, so an int64 sum is exact
            self.total += int(np.sum(diff, dtype=np.int64))
        elif m in ("mse", "mse_norm"):
            d = diff.astype(np.int64)
            self.total += _exact_sum(d * d, 2 * self.n_o)
        else:  # wce / wce_pct
            w = int(diff.max(initial=0))
            if w > self.worst:
                self.worst = w

    def result(self) -> float:
        m = self.metric
        if m == "mre":
            return self.acc.mre_float()
        if m == "wcre":
            return self.acc.wcre_float()
        if m == "er":
            return self.count / self.n
        if m == "mae":
            return self.total / self.n
        if m == "mae_pct":
            return 100 * self.total / (self.n << self.n_o)
        if m == "mse":
            return self.total / self.n
        if m == "mse_norm":
            return self.total / (self.n << (2 * self.n_o))
        if m == "wce":
            return float(self.worst)
        return 100 * self.worst / (1 << self.n_o)  # wce_pct


class _Evaluator:
    """Evaluates candidate genomes against fixed reference outputs.

    Input-bit patterns and reference values are precomputed once per batch;
    each candidate only runs its gate program and extracts outputs.
    """

    def __init__(self, reference: EvalTarget, n_nodes: int,
                 error_metrics: Sequence[str], *, cap: int,
                 sample_count: int, seed: int,
                 cost_table: GateCostTable | None = None):
        self.n_i = reference.n_i
        self.n_o = reference.n_o
        if self.n_o > 40:
            raise ApproxLabError(
                "search supports references with at most 40 output bits")
        self.error_metrics = tuple(error_metrics)
        self.cost_table = cost_table or GateCostTable()
        self._area_w, self._delay_w = self.cost_table.weights_by_code()
        self.exhaustive = self.n_i <= cap

        ref_eval = _BatchEvaluator(reference)
        self.batches: list[tuple[np.ndarray, np.ndarray, int]] = []
        if self.exhaustive:
            total = 1 << self.n_i
            lanes = max(64, min(total, 1 << BATCH_BITS))
            base = 0
            while base < total:
                n = min(lanes, total - base)
                padded = (n + 63) // 64 * 64
                words = exhaustive_input_words(self.n_i, base, padded)
                self.batches.append(
                    (words, ref_eval.exhaustive_values(base, n), n))
                base += n
        else:
            rng = np.random.default_rng(seed)
            indices = sample_indices(self.n_i, sample_count, rng)
            chunk = 1 << BATCH_BITS
            for start in range(0, len(indices), chunk):
                part = indices[start:start + chunk]
                words = indices_to_input_words(part, self.n_i)
                self.batches.append(
                    (words, ref_eval.sampled_values(part), len(part)))

        # Narrow value/reference dtypes cut memory traffic in the hot loop.
        self._vdtype = np.uint16 if self.n_o <= 16 else (
            np.uint32 if self.n_o <= 32 else np.uint64)
        self._rdtype = np.int32 if self.n_o <= 30 else np.int64
        self._refs = [b[1].astype(self._rdtype) for b in self.batches]

        # Wire buffers sized for the largest possible candidate, reused
        # across evaluations.
        self._bufs = [np.empty((self.n_i + n_nodes, w.shape[1]), dtype=np.uint64)
                      for w, _, _ in self.batches]
        for buf, (words, _, _) in zip(self._bufs, self.batches):
            buf[: self.n_i] = words

    def _fast_program(self, genome: Genome):
        """Active extraction, dense renumbering, area and weighted depth in
        one pass.

        Skips re-validation: search candidates are valid by construction.
        Returns (prog array, dense output refs, area, delay).
        """
        n_i = self.n_i
        nodes = genome.nodes
        n_nodes = len(nodes)
        flags = bytearray(n_nodes)
        stack = [w - n_i for w in genome.outputs if w >= n_i]
        while stack:
            k = stack.pop()
            if flags[k]:
                continue
            flags[k] = 1
            in1, in2, fn = nodes[k]
            arity = FUNCTION_ARITY[fn]
            if arity >= 1 and in1 >= n_i and not flags[in1 - n_i]:
                stack.append(in1 - n_i)
            if arity >= 2 and in2 >= n_i and not flags[in2 - n_i]:
                stack.append(in2 - n_i)

        dense = {}
        prog_rows = []
        area = 0.0
        levels = []
        area_w, delay_w = self._area_w, self._delay_w

        def lvl(wire):
            return levels[dense[wire] - n_i] if wire >= n_i else 0.0

        next_id = n_i
        for k in range(n_nodes):
            if not flags[k]:
                continue
            in1, in2, fn = nodes[k]
            arity = FUNCTION_ARITY[fn]
            a = dense[in1] if (arity >= 1 and in1 >= n_i) else (in1 if arity >= 1 else 0)
            b = dense[in2] if (arity >= 2 and in2 >= n_i) else (in2 if arity >= 2 else 0)
            depth = delay_w[fn]
            if arity >= 1:
                depth = delay_w[fn] + (levels[a - n_i] if a >= n_i else 0.0)
            if arity >= 2:
                other = levels[b - n_i] if b >= n_i else 0.0
                if delay_w[fn] + other > depth:
                    depth = delay_w[fn] + other
            levels.append(depth)
            area += area_w[fn]
            prog_rows.append((fn, a, b))
            dense[n_i + k] = next_id
            next_id += 1

        prog = np.array(prog_rows, dtype=np.int64).reshape(-1, 3)
        out_refs = [dense[w] if w >= n_i else w for w in genome.outputs]
        delay = max((lvl(w) for w in genome.outputs), default=0.0)
        return prog, out_refs, area, delay

    def evaluate(self, genome: Genome) -> tuple[dict[str, float], float, float]:
        """Returns ({metric: value}, area, delay) for one candidate."""
        prog, out_refs, area, delay = self._fast_program(genome)
        streams = [_MetricStream(m, self.n_o) for m in self.error_metrics]
        need_diff = any(s.acc is None for s in streams)
        vdtype, rdtype = self._vdtype, self._rdtype
        for i, (buf, (_, ref_vals, lanes)) in enumerate(
                zip(self._bufs, self.batches)):
            if prog.shape[0]:
                _run_gates(prog, buf, self.n_i)
            padded = buf.shape[1] * 64
            values = None
            for k, wire in enumerate(out_refs):
                bits = np.unpackbits(buf[wire].view(np.uint8),
                                     bitorder="little", count=padded)
                if values is None:
                    values = bits.astype(vdtype)
                else:
                    values |= bits.astype(vdtype) << vdtype(k)
            values = values[:lanes]
            diff = None
            if need_diff:
                diff = np.abs(values.astype(rdtype) - self._refs[i])
            for s in streams:
                s.update(diff, values, ref_vals)
        return ({m: s.result() for m, s in zip(self.error_metrics, streams)},
                area, delay)


# Worker-side state for parallel offspring evaluation (fork start method).
_WORKER_EVALUATOR: _Evaluator | None = None


def _worker_init(evaluator):
    global _WORKER_EVALUATOR
    _WORKER_EVALUATOR = evaluator


def _worker_eval(genome):
    return _WORKER_EVALUATOR.evaluate(genome)


class _EvalPool:
    """Maps genomes to evaluations, optionally across forked workers.

    Results are returned in argument order whatever the scheduling, so the
    search outcome is independent of the worker count.
    """

    def __init__(self, evaluator: _Evaluator, workers: int):
        self.evaluator = evaluator
        self.pool = None
        if workers > 1:
            import multiprocessing as mp
            ctx = mp.get_context("fork")
            self.pool = ctx.Pool(workers, initializer=_worker_init,
                                 initargs=(evaluator,))

    def evaluate_all(self, genomes: Sequence[Genome]) -> list:
        if self.pool is None or len(genomes) == 1:
            return [self.evaluator.evaluate(g) for g in genomes]
        return self.pool.map(_worker_eval, genomes)

    def close(self) -> None:
        if self.pool is not None:
            self.pool.close()
            self.pool.join()


def _require_valid_seed(seed_genome: Genome, reference: EvalTarget) -> None:
    result = validate(seed_genome)
    if not result.ok:
        raise InvalidGenomeError(result.violations)
    p = seed_genome.params
    if p.n_i != reference.n_i or p.n_o != reference.n_o:
        raise ValueError(
            f"seed genome is {p.n_i}->{p.n_o} but reference is "
            f"{reference.n_i}->{reference.n_o}")


def _verify_report(genome: Genome, reference: EvalTarget,
                   config: SearchConfig) -> ErrorReport:
    circuit = decode(genome)
    if reference.n_i <= config.cap:
        return error_report(circuit, reference, cap=config.cap)
    return sampled_error_report(circuit, reference,
                                max(4 * config.sample_count, 1000),
                                seed=config.seed + 1)


def evolve_single(seed_genome: Genome, reference: EvalTarget,
                  config: SearchConfig) -> SingleResult:
    """Minimize weighted gate area while keeping ``config.metric`` inside
    ``[e_min, e_max]``.

    Candidates outside the window are ranked by their distance to it and
    never beat an in-window candidate; ties between parent and offspring go
    to the offspring so the search can drift across fitness plateaus.
    """
    if config.e_max is None:
        raise ValueError("single-objective search needs e_max")
    _require_valid_seed(seed_genome, reference)
    rng = Random(config.seed)
    evaluator = _Evaluator(reference, seed_genome.params.n_nodes,
                           (config.metric,), cap=config.cap,
                           sample_count=config.sample_count, seed=config.seed)
    pool = _EvalPool(evaluator, config.workers)
    t0 = time.perf_counter()
    trace = SearchTrace()

    def fitness(metric_value: float, area: float) -> tuple:
        if config.e_min <= metric_value <= config.e_max:
            return (0, area)
        dist = max(config.e_min - metric_value, metric_value - config.e_max)
        return (1, dist)

    try:
        mvals, area, _ = evaluator.evaluate(seed_genome)
        parent, parent_m, parent_area = seed_genome, mvals[config.metric], area
        parent_fit = fitness(parent_m, parent_area)
        evaluations = 1
        trace.rows.append(TraceRow(0, parent_area, parent_m, evaluations,
                                   time.perf_counter() - t0))

        for gen in range(1, config.generations + 1):
            offspring = [mutate(parent, config.h, rng)
                         for _ in range(config.lam)]
            results = pool.evaluate_all(offspring)
            evaluations += len(offspring)
            best_i, best_fit = None, None
            for i, (mv, a, _) in enumerate(results):
                fit = fitness(mv[config.metric], a)
                if best_fit is None or fit < best_fit:
                    best_i, best_fit = i, fit
            improved = False
            if best_fit is not None and best_fit <= parent_fit:
                improved = best_fit < parent_fit
                parent = offspring[best_i]
                parent_m = results[best_i][0][config.metric]
                parent_area = results[best_i][1]
                parent_fit = best_fit
            if improved or gen == config.generations or (
                    config.trace_stride and gen % config.trace_stride == 0):
                trace.rows.append(TraceRow(gen, parent_area, parent_m,
                                           evaluations,
                                           time.perf_counter() - t0))
        trace.generations = config.generations
        trace.evaluations = evaluations
        trace.wall_seconds = time.perf_counter() - t0
    finally:
        pool.close()

    if parent_fit[0] != 0:
        return SingleResult(genome=None, error=None, cost=None, trace=trace)

    report = _verify_report(parent, reference, config)
    if not config.e_min <= report.value(config.metric) <= config.e_max:
        # Fitness was sampled and the exhaustive/larger-sample check
        # disagrees; report honestly as no solution.
        return SingleResult(genome=None, error=None, cost=None, trace=trace)
    circuit = decode(parent)
    seed_circuit = decode(seed_genome)
    cost = cost_report(circuit, evaluator.cost_table, reference=seed_circuit,
                       reference_id="seed")
    return SingleResult(genome=parent, error=report, cost=cost, trace=trace)


def _dominates(a: tuple, b: tuple) -> bool:
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def _weakly_dominates(a: tuple, b: tuple) -> bool:
    return all(x <= y for x, y in zip(a, b))


def evolve_pareto(seed_genome: Genome, reference: EvalTarget,
                  config: SearchConfig) -> ParetoResult:
    """Archive-based multi-objective search over ``config.objectives``.

    The archive holds one genome per non-dominated objective vector; each
    generation mutates a uniformly drawn archive member and inserts the
    non-dominated offspring, evicting members they dominate.  Every returned
    member is re-verified with a fresh exhaustive (or enlarged sampled)
    error report.
    """
    if len(config.objectives) < 2:
        raise ValueError("pareto search needs >= 2 objectives")
    _require_valid_seed(seed_genome, reference)
    error_objs = tuple(o for o in config.objectives if o in ERROR_METRICS)
    rng = Random(config.seed)
    evaluator = _Evaluator(reference, seed_genome.params.n_nodes, error_objs,
                           cap=config.cap, sample_count=config.sample_count,
                           seed=config.seed)
    pool = _EvalPool(evaluator, config.workers)
    t0 = time.perf_counter()
    trace = SearchTrace()

    def objective_vector(mvals, area, delay):
        out = []
        for o in config.objectives:
            if o == "area":
                out.append(area)
            elif o == "delay":
                out.append(delay)
            else:
                out.append(mvals[o])
        return tuple(out)

    def in_error_cap(mvals) -> bool:
        if config.e_max is None:
            return True
        return all(mvals[o] <= config.e_max for o in error_objs)

    archive: list[tuple[tuple, Genome]] = []
    cost_idx = next((i for i, o in enumerate(config.objectives)
                     if o in COST_OBJECTIVES), len(config.objectives) - 1)
    err_idx = next((i for i, o in enumerate(config.objectives)
                    if o in ERROR_METRICS), 0)

    def insert(objs, genome) -> bool:
        if any(_weakly_dominates(m[0], objs) for m in archive):
            return False
        archive[:] = [m for m in archive if not _dominates(objs, m[0])]
        archive.append((objs, genome))
        return True

    try:
        mvals, area, delay = evaluator.evaluate(seed_genome)
        evaluations = 1
        if in_error_cap(mvals):
            insert(objective_vector(mvals, area, delay), seed_genome)
        changed = True

        for gen in range(1, config.generations + 1):
            if not archive:
                # Seed violated the error cap; restart from the seed genome.
                parent = seed_genome
            else:
                parent = archive[rng.randrange(len(archive))][1]
            offspring = [mutate(parent, config.h, rng)
                         for _ in range(config.lam)]
            results = pool.evaluate_all(offspring)
            evaluations += len(offspring)
            for child, (mv, a, d) in zip(offspring, results):
                if in_error_cap(mv):
                    if insert(objective_vector(mv, a, d), child):
                        changed = True
            if (changed and len(trace.rows) < 4096) or gen == config.generations or (
                    config.trace_stride and gen % config.trace_stride == 0):
                if archive:
                    best_cost = min(m[0][cost_idx] for m in archive)
                    best_err = min(m[0][err_idx] for m in archive)
                else:
                    best_cost = best_err = math.nan
                trace.rows.append(TraceRow(gen, best_cost, best_err,
                                           evaluations,
                                           time.perf_counter() - t0))
                changed = False
        trace.generations = config.generations
        trace.evaluations = evaluations
        trace.wall_seconds = time.perf_counter() - t0
    finally:
        pool.close()

    members = []
    seed_circuit = decode(seed_genome)
    for objs, genome in archive:
        report = _verify_report(genome, reference, config)
        circuit = decode(genome)
        cost = cost_report(circuit, evaluator.cost_table,
                           reference=seed_circuit, reference_id="seed")
        if reference.n_i <= config.cap:
            recomputed = objective_vector(
                {o: report.value(o) for o in error_objs}, cost.area,
                cost.delay_proxy)
            if recomputed != objs:
                raise ApproxLabError(
                    f"archive member failed re-verification: stored {objs}, "
                    f"recomputed {recomputed}")
        members.append(EvolvedMember(genome=genome, error=report, cost=cost,
                                     objectives=objs))
    return ParetoResult(members=members, trace=trace)
