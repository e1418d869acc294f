"""Normalization passes that map diversified variants to one canonical form.

`canonicalize` strips nops, normalizes substitution classes, puts every
function's blocks into a CFG-derived order and summarizes each block by
a histogram of register-erased instructions. Two programs with equal
digests are likely, not certainly, built from the same source.
"""
import hashlib
import logging
from collections import Counter, deque
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from divlab.isa import (
    INT_MIN, BasicBlock, DataRef, Function, Imm, Instruction, LabelRef,
    Program, Register,
)

log = logging.getLogger(__name__)

GOTO = "goto"
EDGE_RANK = {"taken": 0, "next": 1}


# --- nops and substitutions -------------------------------------------------------

def strip_nops(p: Program) -> Program:
    """Remove every nop; blocks left empty hand their label to the block they fell into."""
    functions = []
    for f in p.functions:
        alias: Dict[str, str] = {}
        kept: List[BasicBlock] = []
        pending = []
        for b in f.blocks:
            body = tuple(i for i in b.instructions if i.mnemonic != "nop")
            if not body:
                pending.append(b.label)
                continue
            for label in pending:
                alias[label] = b.label
            pending = []
            kept.append(BasicBlock(b.label, body))
        if alias:
            kept = [BasicBlock(b.label, tuple(_retarget(i, alias) for i in b.instructions)) for b in kept]
        functions.append(Function(f.name, tuple(kept)))
    return p.with_functions(functions)


def _retarget(insn, alias):
    if insn.is_terminator and insn.operands and insn.target in alias:
        return insn.retarget(alias[insn.target])
    return insn


def normal_form(insn: Instruction) -> Instruction:
    m, ops = insn.mnemonic, insn.operands
    if m == "lea" and ops[2] == Imm(0):
        return Instruction("mov", (ops[0], ops[1]))
    if m == "xor" and ops[0] == ops[1]:
        return Instruction("movi", (ops[0], Imm(0)))
    if m in ("addi", "subi") and isinstance(ops[1], Imm):
        k = ops[1].value
        if k < 0 and k != INT_MIN:
            return Instruction("subi" if m == "addi" else "addi", (ops[0], Imm(-k)))
        if m == "subi" and k == 0:
            return Instruction("addi", (ops[0], Imm(0)))
    return insn


def normalize_substitutions(p: Program) -> Program:
    """Rewrite each substitution-class member to the class form with a non-negative immediate."""
    functions = [
        Function(f.name, tuple(BasicBlock(b.label, tuple(normal_form(i) for i in b.instructions)) for b in f.blocks))
        for f in p.functions
    ]
    return p.with_functions(functions)


# --- register abstraction -------------------------------------------------------------

class _Ordinals:
    def __init__(self):
        self.seen: Dict[Register, int] = {}

    def __call__(self, reg):
        if reg not in self.seen:
            self.seen[reg] = len(self.seen)
        return f"ρ{self.seen[reg]}"


def _abstract(insn: Instruction, ordinal) -> str:
    if insn.mnemonic in ("load", "store"):
        reg, base, disp = insn.operands
        return f"{insn.mnemonic} {ordinal(reg)}, [{ordinal(base)}+{disp}]"
    ops = [ordinal(op) if isinstance(op, Register) else str(op) for op in insn.operands]
    return f"{insn.mnemonic} {', '.join(ops)}" if ops else insn.mnemonic


def canonical_register_abstraction(p: Program) -> Tuple[Tuple[str, Tuple[str, ...]], ...]:
    """Per function, the instruction stream with registers numbered by first use."""
    out = []
    for f in p.functions:
        ordinal = _Ordinals()
        out.append((f.name, tuple(_abstract(i, ordinal) for b in f.blocks for i in b.instructions)))
    return tuple(out)


# --- block order -------------------------------------------------------------------------

@dataclass
class _Node:
    """A block with layout erased: implicit fallthrough and jmp are both a goto."""
    body: Tuple[Instruction, ...]
    kind: str
    taken: Optional[str] = None
    next: Optional[str] = None

    def successors(self):
        if self.kind == GOTO:
            return [(self.next, "next")]
        if self.taken is not None:
            return [(self.taken, "taken"), (self.next, "next")]
        return []

    def redirect(self, old, new):
        if self.taken == old:
            self.taken = new
        if self.next == old:
            self.next = new


def _abstract_cfg(f: Function) -> Dict[str, _Node]:
    nodes = {}
    for index, b in enumerate(f.blocks):
        term = b.terminator
        if term is None:
            nodes[b.label] = _Node(b.instructions, GOTO, next=f.fallthrough_of(index))
        elif term.mnemonic == "jmp":
            nodes[b.label] = _Node(b.body, GOTO, next=term.target)
        elif term.is_conditional:
            nodes[b.label] = _Node(b.body, term.mnemonic, taken=term.target, next=f.fallthrough_of(index))
        else:
            nodes[b.label] = _Node(b.body, term.mnemonic)
    return nodes


def _thread(nodes: Dict[str, _Node], entry: str):
    """Drop non-entry blocks that hold nothing but a goto."""
    for label in list(nodes):
        node = nodes[label]
        if label == entry or node.body or node.kind != GOTO or node.next == label:
            continue
        target = node.next
        del nodes[label]
        for other in nodes.values():
            other.redirect(label, target)


def _merge(nodes: Dict[str, _Node], entry: str):
    """Append a block to its predecessor while that predecessor is its only one and just a goto."""
    preds = Counter(t for node in nodes.values() for t, _ in node.successors())
    changed = True
    while changed:
        changed = False
        for label in list(nodes):
            node = nodes.get(label)
            while node is not None and node.kind == GOTO:
                target = node.next
                if target == entry or target == label or preds[target] != 1:
                    break
                absorbed = nodes.pop(target)
                node.body = node.body + absorbed.body
                node.kind, node.taken, node.next = absorbed.kind, absorbed.taken, absorbed.next
                changed = True


def _histogram_key(body) -> bytes:
    counts = Counter(i.mnemonic for i in body)
    return ";".join(f"{m}:{c}" for m, c in sorted(counts.items())).encode("utf-8")


def _order(nodes: Dict[str, _Node], entry: str) -> List[str]:
    """BFS from the entry, successors visited by (histogram, terminator kind, edge kind)."""
    position = {label: i for i, label in enumerate(nodes)}

    def key(label, edge="next"):
        node = nodes[label]
        return (_histogram_key(node.body), node.kind, EDGE_RANK[edge])

    order, seen = [], set()

    def visit(root):
        queue = deque([root])
        seen.add(root)
        while queue:
            label = queue.popleft()
            order.append(label)
            succs = sorted(nodes[label].successors(), key=lambda s: key(s[0], s[1]))
            for target, _ in succs:
                if target not in seen:
                    seen.add(target)
                    queue.append(target)

    visit(entry)
    while len(order) < len(nodes):
        rest = [label for label in nodes if label not in seen]
        visit(min(rest, key=lambda label: (key(label), position[label])))
    return order


def _canonical_nodes(f: Function):
    nodes = _abstract_cfg(f)
    _thread(nodes, f.entry)
    _merge(nodes, f.entry)
    order = _order(nodes, f.entry)
    return nodes, order


def _materialize(nodes, order) -> Tuple[BasicBlock, ...]:
    names = {label: f"b{i}" for i, label in enumerate(order)}
    blocks = []
    for i, label in enumerate(order):
        node = nodes[label]
        following = order[i + 1] if i + 1 < len(order) else None
        name = names[label]
        if node.kind == GOTO:
            if node.body and node.next == following:
                blocks.append(BasicBlock(name, node.body))
            else:
                blocks.append(BasicBlock(name, node.body + (Instruction("jmp", (LabelRef(names[node.next]),)),)))
        elif node.taken is not None:
            branch = Instruction(node.kind, (LabelRef(names[node.taken]),))
            blocks.append(BasicBlock(name, node.body + (branch,)))
            if node.next != following:
                blocks.append(BasicBlock(f"{name}.ft", (Instruction("jmp", (LabelRef(names[node.next]),)),)))
        else:
            blocks.append(BasicBlock(name, node.body + (Instruction(node.kind),)))
    return tuple(blocks)


def canonical_block_order(p: Program) -> Program:
    """Undo block splitting and layout shuffling: merge goto chains, order blocks by BFS, rename b0, b1, ..."""
    functions = []
    for f in p.functions:
        nodes, order = _canonical_nodes(f)
        functions.append(Function(f.name, _materialize(nodes, order)))
    return p.with_functions(functions)


# --- canonical form ----------------------------------------------------------------------

@dataclass(frozen=True)
class BlockSummary:
    histogram: Tuple[Tuple[str, int], ...]
    registers: int
    terminator: str
    successors: Tuple[int, ...]

    def line(self, index):
        hist = " ".join(f"{key}*{count}" for key, count in self.histogram)
        succ = ",".join(str(s) for s in self.successors)
        return f"  b{index} regs={self.registers} term={self.terminator} succ=[{succ}] {{{hist}}}"


@dataclass(frozen=True)
class CanonicalForm:
    stream: Tuple[Tuple[BlockSummary, ...], ...]
    entry: int
    digest: str

    def dump(self) -> str:
        return _dump(self.stream, self.entry)


def _dump(stream, entry):
    lines = [f"entry f{entry}"]
    for fi, blocks in enumerate(stream):
        lines.append(f"fn f{fi}")
        lines.extend(b.line(i) for i, b in enumerate(blocks))
    return "\n".join(lines) + "\n"


def _erased(insn: Instruction, addresses, functions) -> str:
    parts = []
    for op in insn.operands:
        if isinstance(op, Register):
            parts.append("_")
        elif isinstance(op, DataRef):
            parts.append(f"#{addresses[op.name]}")
        elif isinstance(op, LabelRef):
            parts.append(f"f{functions[op.name]}")
        else:
            parts.append(str(op.value))
    return f"{insn.mnemonic}({','.join(parts)})"


def canonicalize(p: Program) -> CanonicalForm:
    normalized = normalize_substitutions(strip_nops(p))
    addresses = p.data_addresses()
    functions = p.function_index()
    stream = []
    for f in normalized.functions:
        nodes, order = _canonical_nodes(f)
        index = {label: i for i, label in enumerate(order)}
        blocks = []
        for label in order:
            node = nodes[label]
            ordinal = _Ordinals()
            for insn in node.body:
                _abstract(insn, ordinal)
            hist = Counter(_erased(i, addresses, functions) for i in node.body)
            blocks.append(BlockSummary(
                tuple(sorted(hist.items())),
                len(ordinal.seen),
                node.kind,
                tuple(index[t] for t, _ in node.successors()),
            ))
        stream.append(tuple(blocks))
    stream = tuple(stream)
    entry = functions[p.entry_function]
    digest = hashlib.sha256(_dump(stream, entry).encode("utf-8")).hexdigest()
    return CanonicalForm(stream, entry, digest)


def canonical_match(a: Program, b: Program) -> bool:
    """Equal digests: a likelihood of shared source, not a proof."""
    return canonicalize(a).digest == canonicalize(b).digest
