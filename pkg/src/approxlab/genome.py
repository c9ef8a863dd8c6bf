"""Integer-netlist circuit chromosomes.

A candidate circuit is a fixed-length array of gate nodes laid out on an
``n_r`` x ``n_c`` grid plus one output selector per primary output.  Nodes are
numbered column-major: node ``k`` sits in column ``k // n_r`` and drives wire
``n_i + k``.  A node may only read primary inputs or nodes from the preceding
``levels_back`` columns, so every chromosome describes a feed-forward network
by construction.

This module owns the chromosome itself: validation, point mutation, decoding
into the active subcircuit, and the `.cgp` text round trip.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from random import Random
from typing import Sequence

from .errors import CgpParseError, InvalidGenomeError

# Gate function codes. Unary gates read only their first input; constants
# read neither. Surplus input fields stay in the chromosome so its length
# never changes.
FN_IDENTITY = 0
FN_NOT = 1
FN_AND = 2
FN_OR = 3
FN_XOR = 4
FN_NAND = 5
FN_NOR = 6
FN_XNOR = 7
FN_CONST0 = 8
FN_CONST1 = 9

DEFAULT_FUNCTION_NAMES = (
    "identity", "not", "and", "or", "xor", "nand", "nor", "xnor",
    "const0", "const1",
)

# Number of inputs each gate function actually reads.
FUNCTION_ARITY = (1, 1, 2, 2, 2, 2, 2, 2, 0, 0)


@dataclass(frozen=True)
class FunctionSet:
    """An ordered gate alphabet; codes are the positions in ``names``.

    Only prefixes of the default alphabet are supported so that a function
    set is fully described by its size (which is what the text format
    stores).
    """

    names: tuple[str, ...] = DEFAULT_FUNCTION_NAMES

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not 1 <= len(names) <= len(DEFAULT_FUNCTION_NAMES):
            raise ValueError(f"function set must have 1..{len(DEFAULT_FUNCTION_NAMES)} entries")
        if names != DEFAULT_FUNCTION_NAMES[: len(names)]:
            raise ValueError("function set must be a prefix of the default gate alphabet")

    def __len__(self):
        return len(self.names)

    @classmethod
    def of_size(cls, size: int) -> "FunctionSet":
        return cls(DEFAULT_FUNCTION_NAMES[:size])


@dataclass(frozen=True)
class CgpParams:
    """Grid geometry and connectivity horizon of a chromosome."""

    n_i: int
    n_o: int
    n_r: int
    n_c: int
    n_a: int = 2
    levels_back: int | None = None  # None means full connectivity (= n_c)

    def __post_init__(self):
        if self.levels_back is None:
            object.__setattr__(self, "levels_back", self.n_c)
        if self.n_i < 1 or self.n_o < 1 or self.n_r < 1 or self.n_c < 1:
            raise ValueError("n_i, n_o, n_r, n_c must all be >= 1")
        if self.n_a != 2:
            raise ValueError("node arity is fixed at 2")
        if not 1 <= self.levels_back <= self.n_c:
            raise ValueError("levels_back must be in 1..n_c")

    @property
    def n_nodes(self) -> int:
        return self.n_c * self.n_r

    def column_of(self, node_index: int) -> int:
        return node_index // self.n_r

    def input_ranges(self, column: int) -> tuple[range, range]:
        """Legal wire ids for a node in ``column``: primary inputs plus the
        node wires of the preceding ``levels_back`` columns."""
        first_col = max(0, column - self.levels_back)
        lo = self.n_i + first_col * self.n_r
        hi = self.n_i + column * self.n_r
        return range(0, self.n_i), range(lo, hi)


@dataclass(frozen=True)
class Genome:
    """A complete chromosome: grid parameters, gate alphabet, node triples
    ``(in1, in2, fn)`` and one output selector per primary output.

    Genomes are immutable value types; all mutating operations return new
    instances.
    """

    params: CgpParams
    fnset: FunctionSet
    nodes: tuple[tuple[int, int, int], ...]
    outputs: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(tuple(n) for n in self.nodes))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if len(self.nodes) != self.params.n_nodes:
            raise ValueError(
                f"expected {self.params.n_nodes} nodes, got {len(self.nodes)}")
        if len(self.outputs) != self.params.n_o:
            raise ValueError(
                f"expected {self.params.n_o} outputs, got {len(self.outputs)}")

    def __hash__(self):
        # Duplicate detection is phenotype-based: genomes that differ only in
        # inactive nodes hash (and dedupe) together.
        return hash(canonical_key(self))


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


@dataclass(frozen=True)
class Gate:
    """One active gate after decoding; operands are dense wire ids."""

    fn: int
    in1: int
    in2: int


@dataclass(frozen=True)
class Circuit:
    """The active subcircuit of a genome, renumbered densely.

    Wires ``0..n_i-1`` are the primary inputs; gate ``g`` drives wire
    ``n_i + g``.  Gates are stored in topological order and unused operand
    slots are normalized to 0, so two genomes with the same phenotype decode
    to equal circuits.
    """

    n_i: int
    n_o: int
    gates: tuple[Gate, ...]
    outputs: tuple[int, ...]
    depth: int

    @property
    def active_gates(self) -> int:
        return len(self.gates)

    @property
    def key(self) -> str:
        """Canonical text form; the dedup key for phenotype equality."""
        gates = ";".join(f"{g.fn},{g.in1},{g.in2}" for g in self.gates)
        outs = ",".join(str(o) for o in self.outputs)
        return f"{self.n_i},{self.n_o}|{gates}|{outs}"


def validate(genome: Genome) -> ValidationResult:
    """Check every connection, function code and output selector.

    Returns the list of violated constraints; an empty list means the genome
    is well formed.
    """
    p = genome.params
    n_fn = len(genome.fnset)
    violations: list[str] = []
    for k, (in1, in2, fn) in enumerate(genome.nodes):
        col = p.column_of(k)
        inputs_rng, nodes_rng = p.input_ranges(col)
        for slot, wire in ((1, in1), (2, in2)):
            if wire in inputs_rng or wire in nodes_rng:
                continue
            if wire >= p.n_i + p.n_nodes or wire < 0:
                violations.append(
                    f"node {k} input {slot}: wire {wire} out of range")
            elif wire >= nodes_rng.stop:
                violations.append(
                    f"node {k} (column {col}) input {slot}: forward reference to wire {wire}")
            else:
                violations.append(
                    f"node {k} (column {col}) input {slot}: wire {wire} violates levels-back")
        if not 0 <= fn < n_fn:
            violations.append(f"node {k}: bad function code {fn}")
    limit = p.n_i + p.n_nodes
    for i, sel in enumerate(genome.outputs):
        if not 0 <= sel < limit:
            violations.append(f"output {i} out of range: {sel}")
    return ValidationResult(tuple(violations))


def decode(genome: Genome) -> Circuit:
    """Extract the active subcircuit reachable from the outputs.

    Reachability follows only the inputs a gate actually reads, so a NOT
    gate does not keep the subtree behind its ignored second operand alive.
    Raises InvalidGenomeError for malformed genomes.
    """
    result = validate(genome)
    if not result.ok:
        raise InvalidGenomeError(result.violations)

    p = genome.params
    n_i = p.n_i
    nodes = genome.nodes

    active: set[int] = set()
    stack = [w for w in genome.outputs if w >= n_i]
    while stack:
        wire = stack.pop()
        if wire in active:
            continue
        active.add(wire)
        in1, in2, fn = nodes[wire - n_i]
        arity = FUNCTION_ARITY[fn]
        if arity >= 1 and in1 >= n_i and in1 not in active:
            stack.append(in1)
        if arity >= 2 and in2 >= n_i and in2 not in active:
            stack.append(in2)

    # Column-major ids already give a topological order.
    order = sorted(active)
    dense = {w: n_i + i for i, w in enumerate(order)}

    def remap(wire: int) -> int:
        return wire if wire < n_i else dense[wire]

    gates = []
    level: dict[int, int] = {}
    for w in order:
        in1, in2, fn = nodes[w - n_i]
        arity = FUNCTION_ARITY[fn]
        a = remap(in1) if arity >= 1 else 0
        b = remap(in2) if arity >= 2 else 0
        gates.append(Gate(fn, a, b))
        deps = []
        if arity >= 1:
            deps.append(level.get(remap(in1), 0))
        if arity >= 2:
            deps.append(level.get(remap(in2), 0))
        level[dense[w]] = 1 + max(deps, default=0)

    outputs = tuple(remap(w) for w in genome.outputs)
    depth = max((level.get(o, 0) for o in outputs), default=0)
    return Circuit(n_i=n_i, n_o=p.n_o, gates=tuple(gates), outputs=outputs,
                   depth=depth)


def canonical_key(genome: Genome) -> str:
    """Phenotype dedup key: the canonical form of the active subcircuit."""
    return decode(genome).key


def mutate(genome: Genome, h: int, rng: Random) -> Genome:
    """Redraw up to ``h`` chromosome integers uniformly over their legal values.

    Positions are drawn with replacement and a redraw may pick the current
    value, so the result differs from the input in at most ``h`` positions.
    The result is valid whenever the input is.
    """
    if h < 1:
        raise ValueError("mutation intensity h must be >= 1")
    p = genome.params
    n_nodes = p.n_nodes
    n_fn = len(genome.fnset)
    total = 3 * n_nodes + p.n_o

    nodes = [list(n) for n in genome.nodes]
    outputs = list(genome.outputs)
    for _ in range(h):
        pos = rng.randrange(total)
        if pos < 3 * n_nodes:
            k, slot = divmod(pos, 3)
            if slot == 2:
                nodes[k][2] = rng.randrange(n_fn)
            else:
                inputs_rng, nodes_rng = p.input_ranges(p.column_of(k))
                r = rng.randrange(len(inputs_rng) + len(nodes_rng))
                nodes[k][slot] = r if r < len(inputs_rng) else nodes_rng.start + r - len(inputs_rng)
        else:
            outputs[pos - 3 * n_nodes] = rng.randrange(p.n_i + n_nodes)
    return Genome(params=p, fnset=genome.fnset,
                  nodes=tuple(tuple(n) for n in nodes), outputs=tuple(outputs))


# ---------------------------------------------------------------------------
# `.cgp` text format
#
#   line 1: ni,no,nr,nc,na,lb,fns      (fns = size of the gate alphabet)
#   line 2: N whitespace-separated triples (in1,in2,fn)
#   line 3: n_o comma-separated output wire ids
#
# `#` starts a comment that runs to end of line. Parsing is whitespace
# tolerant: triples may be re-flowed across lines.
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"\([^()]*\)|[^\s()]+")


def serialize(genome: Genome) -> str:
    p = genome.params
    header = f"{p.n_i},{p.n_o},{p.n_r},{p.n_c},{p.n_a},{p.levels_back},{len(genome.fnset)}"
    nodes = " ".join(f"({a},{b},{f})" for a, b, f in genome.nodes)
    outs = ",".join(str(o) for o in genome.outputs)
    return f"{header}\n{nodes}\n{outs}\n"


def _int_field(text: str, line: int, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise CgpParseError(f"{what}: expected integer, got {text!r}", line)


def parse(text: str) -> Genome:
    tokens: list[tuple[str, int]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0]
        for m in _TOKEN_RE.finditer(line):
            tokens.append((m.group(0), lineno))
    if not tokens:
        raise CgpParseError("missing header")

    head_tok, head_line = tokens[0]
    parts = head_tok.split(",")
    if head_tok.startswith("(") or len(parts) != 7:
        raise CgpParseError(
            f"malformed header {head_tok!r}: expected ni,no,nr,nc,na,lb,fns", head_line)
    n_i, n_o, n_r, n_c, n_a, lb, fns = (
        _int_field(s, head_line, "header") for s in parts)
    if not 1 <= fns <= len(DEFAULT_FUNCTION_NAMES):
        raise CgpParseError(f"unsupported function set size {fns}", head_line)
    try:
        params = CgpParams(n_i=n_i, n_o=n_o, n_r=n_r, n_c=n_c, n_a=n_a, levels_back=lb)
    except ValueError as e:
        raise CgpParseError(str(e), head_line)

    nodes: list[tuple[int, int, int]] = []
    i = 1
    while i < len(tokens) and tokens[i][0].startswith("("):
        tok, lineno = tokens[i]
        fields = tok[1:-1].split(",")
        if len(fields) != 3:
            raise CgpParseError(f"malformed node triple {tok!r}", lineno)
        nodes.append(tuple(_int_field(s.strip(), lineno, "node") for s in fields))
        i += 1
    if len(nodes) != params.n_nodes:
        raise CgpParseError(
            f"node count mismatch: header claims {params.n_nodes}, found {len(nodes)}",
            tokens[min(i, len(tokens) - 1)][1])

    if i >= len(tokens):
        raise CgpParseError("missing output line", tokens[-1][1])
    out_line = tokens[i][1]
    out_text = "".join(tok for tok, _ in tokens[i:])
    if "(" in out_text:
        raise CgpParseError("unexpected node triple after output line", out_line)
    outputs = tuple(_int_field(s.strip(), out_line, "output")
                    for s in out_text.split(",") if s.strip() != "")
    if len(outputs) != params.n_o:
        raise CgpParseError(
            f"output count mismatch: header claims {params.n_o}, found {len(outputs)}",
            out_line)

    genome = Genome(params=params, fnset=FunctionSet.of_size(fns),
                    nodes=tuple(nodes), outputs=outputs)
    result = validate(genome)
    if not result.ok:
        raise CgpParseError("; ".join(result.violations), out_line)
    return genome


def load(path) -> Genome:
    with open(path, "r", encoding="ascii") as fh:
        return parse(fh.read())


def save(genome: Genome, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(serialize(genome))


def random_genome(params: CgpParams, rng: Random,
                  fnset: FunctionSet = FunctionSet()) -> Genome:
    """Uniformly random valid genome for the given grid."""
    nodes = []
    for k in range(params.n_nodes):
        inputs_rng, nodes_rng = params.input_ranges(params.column_of(k))
        pool = len(inputs_rng) + len(nodes_rng)

        def draw():
            r = rng.randrange(pool)
            return r if r < len(inputs_rng) else nodes_rng.start + r - len(inputs_rng)

        nodes.append((draw(), draw(), rng.randrange(len(fnset))))
    outputs = tuple(rng.randrange(params.n_i + params.n_nodes)
                    for _ in range(params.n_o))
    return Genome(params=params, fnset=fnset, nodes=tuple(nodes), outputs=outputs)
