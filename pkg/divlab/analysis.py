"""Control-flow graphs and register liveness over Functions."""
from collections import Counter
from dataclasses import dataclass
from typing import Dict, FrozenSet, Tuple

import networkx as nx

from divlab.isa import (
    ARITHMETIC, CONDITIONAL, GENERAL_REGISTERS, R0, SP, Function, Instruction,
    Register, preserves_registers,
)

# pseudo-resource written by cmp and read by conditional jumps
FLAGS = "flags"

EDGE_KINDS = ("fallthrough", "jump", "branch-taken")


@dataclass(frozen=True)
class Cfg:
    """Control-flow graph of one function.

    `graph` is a networkx MultiDiGraph keyed by block label; node attributes
    are `histogram` (mnemonic Counter), `size` and `terminator`; edge
    attribute `kind` is one of EDGE_KINDS.
    """
    function: str
    graph: nx.MultiDiGraph
    entry: str

    @property
    def nodes(self):
        return list(self.graph.nodes)

    @property
    def edges(self):
        return [(u, v, d["kind"]) for u, v, d in self.graph.edges(data=True)]

    def successors(self, label):
        return [(v, d["kind"]) for _, v, d in self.graph.out_edges(label, data=True)]

    def histogram(self, label):
        return self.graph.nodes[label]["histogram"]


def build_cfg(f: Function) -> Cfg:
    g = nx.MultiDiGraph()
    for b in f.blocks:
        g.add_node(
            b.label,
            histogram=Counter(i.mnemonic for i in b.instructions),
            size=len(b.instructions),
            terminator=b.terminator_kind,
        )
    for index, b in enumerate(f.blocks):
        term = b.terminator
        if term is not None and term.mnemonic == "jmp":
            g.add_edge(b.label, term.target, kind="jump")
        elif term is not None and term.is_conditional:
            g.add_edge(b.label, term.target, kind="branch-taken")
        nxt = f.fallthrough_of(index)
        if nxt is not None:
            g.add_edge(b.label, nxt, kind="fallthrough")
    return Cfg(f.name, g, f.entry)


def defs_uses(insn: Instruction):
    """Registers (and FLAGS) written and read by one instruction."""
    m, ops = insn.mnemonic, insn.operands
    if m in ("mov", "lea"):
        return {ops[0]}, {ops[1]}
    if m == "movi":
        return {ops[0]}, set()
    if m in ARITHMETIC:
        dest = ops[0]
        return {dest}, {dest} | {op for op in ops[1:] if isinstance(op, Register)}
    if m == "load":
        return {ops[0]}, {ops[1]}
    if m == "store":
        return set(), {ops[0], ops[1]}
    if m == "push":
        return {SP}, {ops[0], SP}
    if m == "pop":
        return {ops[0], SP}, {SP}
    if m == "cmp":
        return {FLAGS}, {ops[0], ops[1]}
    if m in CONDITIONAL:
        return set(), {FLAGS}
    if m == "call":
        if preserves_registers(insn.target):
            return set(), {SP}
        # callee clobbers the general registers and the flags
        return set(GENERAL_REGISTERS) | {FLAGS}, {SP}
    if m == "ret":
        return set(), {R0, SP}
    if m == "out":
        return set(), {ops[0]}
    return set(), set()


LiveMap = Dict[Tuple[str, int], FrozenSet[Register]]


def liveness(f: Function) -> LiveMap:
    """Live-in register sets before every instruction of `f`.

    sp is live everywhere; r0 is live at every `ret`, and so is every
    register in a function that preserves registers for its caller.
    """
    cfg = build_cfg(f)
    exit_uses = set(GENERAL_REGISTERS) | {FLAGS} if preserves_registers(f.name) else set()
    blocks = {b.label: b for b in f.blocks}
    live_in = {b.label: frozenset() for b in f.blocks}
    order = list(reversed(list(nx.dfs_postorder_nodes(cfg.graph, f.entry))))
    reached = set(order)
    order += [label for label in blocks if label not in reached]
    changed = True
    while changed:
        changed = False
        for label in reversed(order):
            out = set()
            for succ in cfg.graph.successors(label):
                out |= live_in[succ]
            new = frozenset(_transfer(blocks[label].instructions, out, exit_uses)[0])
            if new != live_in[label]:
                live_in[label] = new
                changed = True
    result: LiveMap = {}
    for label, block in blocks.items():
        out = set()
        for succ in cfg.graph.successors(label):
            out |= live_in[succ]
        per_insn = _transfer(block.instructions, out, exit_uses)
        for idx, live in enumerate(per_insn):
            result[(label, idx)] = frozenset(r for r in live if r != FLAGS) | {SP}
    return result


def _transfer(instructions, live_out, exit_uses=frozenset()):
    """Backward pass over one block; element i is the live set before instruction i."""
    live = set(live_out) | {SP}
    before = [None] * len(instructions)
    for idx in range(len(instructions) - 1, -1, -1):
        insn = instructions[idx]
        defs, uses = defs_uses(insn)
        if insn.mnemonic == "ret":
            uses = uses | exit_uses
        live = (live - defs) | uses | {SP}
        before[idx] = set(live)
    return before
