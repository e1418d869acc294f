"""Seed-driven diversifying transformations.

Each pass maps a valid Program to a semantically equivalent Program and
draws its randomness from its own stream, derived from
(seed, pass name, function index). `diversify` chains the passes in a
fixed order.
"""
import logging
from dataclasses import replace
from typing import List

import networkx as nx

from divlab.analysis import defs_uses, liveness
from divlab.config import DiversityConfig
from divlab.encoding import symbol_offsets
from divlab.isa import (
    ALL_REGISTERS, DECODER_NAME, GENERAL_REGISTERS, INT_MIN, BasicBlock, DataBlob, DataRef,
    Function, Imm, Instruction, LabelRef, Program, Register, ins,
)
from divlab.rng import Rng

log = logging.getLogger(__name__)

EFFECTS = frozenset({"load", "store", "push", "pop", "out", "call"})
NOP = Instruction("nop")


def _stream(cfg, name, index=0):
    return Rng.derive(cfg.seed, name, index)


def _active(cfg, name):
    return cfg.enabled(name) and not cfg.identity


def _relink(p: Program) -> Program:
    if p.symbols is None:
        return p
    return replace(p, symbols=symbol_offsets(p))


def _map_blocks(p, fn):
    functions = [Function(f.name, tuple(fn(fi, f))) for fi, f in enumerate(p.functions)]
    return _relink(p.with_functions(functions))


def flag_window(block: BasicBlock):
    """Positions (before instruction i) lying between a cmp and the conditional it feeds."""
    term = block.terminator
    if term is None or not term.is_conditional:
        return frozenset()
    last = len(block.instructions) - 1
    for idx in range(last - 1, -1, -1):
        if block.instructions[idx].mnemonic == "cmp":
            return frozenset(range(idx + 1, last + 1))
    return frozenset()


class _Labels:
    """Fresh block labels that cannot clash with the labels of one function."""

    def __init__(self, taken):
        self.taken = set(taken)

    def fresh(self, stem):
        n = 1
        while f"{stem}.s{n}" in self.taken:
            n += 1
        label = f"{stem}.s{n}"
        self.taken.add(label)
        return label


# --- instruction substitution ------------------------------------------------

def alternate_form(insn: Instruction):
    """The other member of insn's substitution class, or None."""
    m, ops = insn.mnemonic, insn.operands
    if m == "mov":
        return Instruction("lea", (ops[0], ops[1], Imm(0)))
    if m == "lea" and ops[2] == Imm(0):
        return Instruction("mov", (ops[0], ops[1]))
    if m == "movi" and ops[1] == Imm(0):
        return Instruction("xor", (ops[0], ops[0]))
    if m == "xor" and ops[0] == ops[1]:
        return Instruction("movi", (ops[0], Imm(0)))
    if m in ("addi", "subi") and isinstance(ops[1], Imm) and ops[1].value != INT_MIN:
        other = "subi" if m == "addi" else "addi"
        return Instruction(other, (ops[0], Imm(-ops[1].value)))
    return None


def substitute_instructions(p: Program, cfg: DiversityConfig) -> Program:
    if not _active(cfg, "substitute"):
        return p

    def rewrite(fi, f):
        rng = _stream(cfg, "substitute", fi)
        for b in f.blocks:
            out = []
            for insn in b.instructions:
                alt = alternate_form(insn)
                if alt is not None and rng.coin(cfg.p_substitute):
                    insn = alt
                out.append(insn)
            yield BasicBlock(b.label, tuple(out))

    return _map_blocks(p, rewrite)


# --- nop and garbage insertion -------------------------------------------------

def insert_nops(p: Program, cfg: DiversityConfig) -> Program:
    if not _active(cfg, "nops"):
        return p

    def rewrite(fi, f):
        rng = _stream(cfg, "nops", fi)
        for b in f.blocks:
            forbidden = flag_window(b)
            out = []
            for idx, insn in enumerate(b.instructions):
                if idx not in forbidden and rng.coin(cfg.p_nop):
                    out.extend([NOP] * rng.randint(1, cfg.max_garbage_len))
                out.append(insn)
            yield BasicBlock(b.label, tuple(out))

    return _map_blocks(p, rewrite)


def garbage_instruction(rng: Rng, dest: Register, mix) -> Instruction:
    """One random arithmetic/mov instruction writing only `dest`."""
    names = sorted(mix)
    mnemonic = rng.weighted_choice(names, [mix[n] for n in names])
    source = rng.choice(ALL_REGISTERS)
    if mnemonic == "movi":
        return Instruction("movi", (dest, Imm(rng.signed32())))
    if mnemonic in ("addi", "subi"):
        return Instruction(mnemonic, (dest, Imm(rng.signed32())))
    if mnemonic == "lea":
        return Instruction("lea", (dest, source, Imm(rng.signed32())))
    return Instruction(mnemonic, (dest, source))


def insert_garbage(p: Program, cfg: DiversityConfig) -> Program:
    if not _active(cfg, "garbage"):
        return p

    def rewrite(fi, f):
        rng = _stream(cfg, "garbage", fi)
        live = liveness(f)
        for b in f.blocks:
            forbidden = flag_window(b)
            out = []
            for idx, insn in enumerate(b.instructions):
                if idx not in forbidden and rng.coin(cfg.p_garbage):
                    dead = [r for r in GENERAL_REGISTERS if r not in live[(b.label, idx)]]
                    if dead:
                        dest = rng.choice(dead)
                        count = rng.randint(1, cfg.max_garbage_len)
                        out.extend(garbage_instruction(rng, dest, cfg.garbage_mix) for _ in range(count))
                out.append(insn)
            yield BasicBlock(b.label, tuple(out))

    return _map_blocks(p, rewrite)


# --- instruction reordering --------------------------------------------------------

def dependency_dag(body) -> nx.DiGraph:
    """Ordering constraints between the non-terminator instructions of a block."""
    dag = nx.DiGraph()
    dag.add_nodes_from(range(len(body)))
    effects = [defs_uses(insn) for insn in body]
    for j in range(len(body)):
        defs_j, uses_j = effects[j]
        for i in range(j):
            defs_i, uses_i = effects[i]
            if (defs_i & uses_j) or (uses_i & defs_j) or (defs_i & defs_j):
                dag.add_edge(i, j)
            elif body[i].mnemonic in EFFECTS and body[j].mnemonic in EFFECTS:
                dag.add_edge(i, j)
    return dag


def random_topological_order(dag: nx.DiGraph, rng: Rng) -> List[int]:
    """Kahn's algorithm picking uniformly among ready nodes."""
    indegree = {node: dag.in_degree(node) for node in dag.nodes}
    ready = sorted(node for node, deg in indegree.items() if deg == 0)
    order = []
    while ready:
        node = ready.pop(rng.below(len(ready)))
        order.append(node)
        for succ in dag.successors(node):
            indegree[succ] -= 1
            if indegree[succ] == 0:
                ready.append(succ)
        ready.sort()
    if len(order) != dag.number_of_nodes():
        raise nx.NetworkXUnfeasible("dependency graph has a cycle")
    return order


def reorder_instructions(p: Program, cfg: DiversityConfig) -> Program:
    if not _active(cfg, "reorder"):
        return p

    def rewrite(fi, f):
        rng = _stream(cfg, "reorder", fi)
        for b in f.blocks:
            body = b.body
            if len(body) < 2 or not rng.coin(cfg.p_reorder):
                yield b
                continue
            order = random_topological_order(dependency_dag(body), rng)
            tail = (b.terminator,) if b.terminator is not None else ()
            yield BasicBlock(b.label, tuple(body[i] for i in order) + tail)

    return _map_blocks(p, rewrite)


# --- register permutation -------------------------------------------------------------

def draw_permutation(cfg: DiversityConfig):
    rng = _stream(cfg, "registers")
    targets = list(range(1, 8))
    rng.shuffle(targets)
    return {Register(i): Register(t) for i, t in zip(range(1, 8), targets)}


def apply_register_map(p: Program, mapping) -> Program:
    def rewrite(fi, f):
        for b in f.blocks:
            yield BasicBlock(b.label, tuple(i.map_registers(mapping) for i in b.instructions))

    return _map_blocks(p, rewrite)


def permute_registers(p: Program, cfg: DiversityConfig) -> Program:
    if not _active(cfg, "registers"):
        return p
    mapping = draw_permutation(cfg)
    log.debug("register permutation %s", {str(k): str(v) for k, v in mapping.items()})
    return apply_register_map(p, mapping)


# --- block splitting and layout randomization -------------------------------------------

def split_blocks(f: Function, rng: Rng, p_split: float, labels: _Labels) -> List[BasicBlock]:
    out = []
    for b in f.blocks:
        forbidden = flag_window(b)
        cuts = [k for k in range(1, len(b.instructions))
                if k not in forbidden and rng.coin(p_split)]
        start, label = 0, b.label
        for k in cuts:
            out.append(BasicBlock(label, b.instructions[start:k]))
            start, label = k, labels.fresh(b.label)
        out.append(BasicBlock(label, b.instructions[start:]))
    return out


def layout_blocks(blocks: List[BasicBlock], order: List[BasicBlock], labels: _Labels) -> List[BasicBlock]:
    """Lay `order` out, materializing every fallthrough that is no longer adjacent."""
    fallthrough = {}
    for i, b in enumerate(blocks):
        if b.falls_through and i + 1 < len(blocks):
            fallthrough[b.label] = blocks[i + 1].label
    out = []
    for i, b in enumerate(order):
        target = fallthrough.get(b.label)
        following = order[i + 1].label if i + 1 < len(order) else None
        if target is None or target == following:
            out.append(b)
        elif b.terminator is None:
            out.append(BasicBlock(b.label, b.instructions + (Instruction("jmp", (LabelRef(target),)),)))
        else:
            out.append(b)
            out.append(BasicBlock(labels.fresh(b.label), (Instruction("jmp", (LabelRef(target),)),)))
    return out


def randomize_blocks(p: Program, cfg: DiversityConfig) -> Program:
    if not _active(cfg, "blocks"):
        return p

    def rewrite(fi, f):
        rng = _stream(cfg, "blocks", fi)
        labels = _Labels(f.labels)
        blocks = split_blocks(f, rng, cfg.p_split, labels)
        rest = blocks[1:]
        rng.shuffle(rest)
        return layout_blocks(blocks, [blocks[0]] + rest, labels)

    return _map_blocks(p, rewrite)


# --- static data obfuscation ------------------------------------------------------------------

SAVED = tuple(f"r{i}" for i in range(1, 6))


def _decoder_function(name, blobs, keys) -> Function:
    """Byte-wise XOR loop per blob; r1-r5 are saved and the flags left as at program start."""
    blocks = [BasicBlock("save", tuple(ins("push", r) for r in SAVED))]
    live = [(i, blob) for i, blob in enumerate(blobs) if len(blob)]
    for pos, (i, blob) in enumerate(live):
        after = f"setup{live[pos + 1][0]}" if pos + 1 < len(live) else "done"
        blocks.append(BasicBlock(f"setup{i}", (
            ins("movi", "r1", DataRef(blob.label)),
            ins("movi", "r2", len(blob)),
            ins("movi", "r3", keys[i]),
            ins("movi", "r4", 0),
        )))
        blocks.append(BasicBlock(f"loop{i}", (
            ins("cmp", "r2", "r4"),
            ins("jz", after),
        )))
        # a word store rewrites only the addressed byte: the key sits in the low byte
        blocks.append(BasicBlock(f"body{i}", (
            ins("load", "r5", "r1", 0),
            ins("xor", "r5", "r3"),
            ins("store", "r5", "r1", 0),
            ins("addi", "r1", 1),
            ins("subi", "r2", 1),
            ins("jmp", f"loop{i}"),
        )))
    # 1 > 0 yields (not equal, not less): the reset flag state
    restore = (ins("movi", "r1", 1), ins("movi", "r2", 0), ins("cmp", "r1", "r2"))
    restore += tuple(ins("pop", r) for r in reversed(SAVED))
    blocks.append(BasicBlock("done", restore + (Instruction("ret"),)))
    return Function(name, tuple(blocks))


def obfuscate_data(p: Program, cfg: DiversityConfig) -> Program:
    if not _active(cfg, "obfuscate_data"):
        return p
    if not p.data and not cfg.emit_empty_decoder:
        return p
    rng = _stream(cfg, "obfuscate_data")
    keys = [rng.below(256) for _ in p.data]
    blobs = tuple(
        DataBlob(blob.label, bytes(b ^ key for b in blob.data), (blob.key or 0) ^ key)
        for blob, key in zip(p.data, keys)
    )
    taken = {f.name for f in p.functions} | {b.label for b in p.data}
    name, n = DECODER_NAME, 0
    while name in taken:
        n += 1
        name = f"{DECODER_NAME}_{n}"
    decoder = _decoder_function(name, p.data, keys)

    functions = []
    for f in p.functions:
        if f.name == p.entry_function:
            start = _Labels(f.labels).fresh("start")
            call = BasicBlock(start, (Instruction("call", (LabelRef(name),)),))
            f = Function(f.name, (call,) + f.blocks)
        functions.append(f)
    log.debug("encoded %d data blobs, decoder %s", len(blobs), name)
    return _relink(replace(p, functions=(decoder,) + tuple(functions), data=blobs))


def strip_symbols(p: Program) -> Program:
    if p.symbols is None:
        return p
    return replace(p, symbols=None)


PIPELINE = (
    ("obfuscate_data", obfuscate_data),
    ("substitute", substitute_instructions),
    ("garbage", insert_garbage),
    ("nops", insert_nops),
    ("reorder", reorder_instructions),
    ("registers", permute_registers),
    ("blocks", randomize_blocks),
)


def diversify(p: Program, cfg: DiversityConfig) -> Program:
    for _, transform in PIPELINE:
        p = transform(p, cfg)
    if cfg.enabled("strip"):
        p = strip_symbols(p)
    return p


def variant_seed(seed, index):
    return Rng.derive(seed, "variant", index).next_u64()


def variant_config(cfg: DiversityConfig, index) -> DiversityConfig:
    return cfg.with_seed(variant_seed(cfg.seed, index))


def diversify_population(p: Program, cfg: DiversityConfig, count: int) -> List[Program]:
    return [diversify(p, variant_config(cfg, i)) for i in range(count)]
