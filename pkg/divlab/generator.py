"""Seeded random programs for property tests.

Generated programs always halt without a fault: loops are counted,
branches jump forward, calls go only to later functions. They keep the
calling convention the diversifier relies on. Every register is written
before it is read, flags are read right after the `cmp` that sets them
and no r1-r7 value is read across a call.
"""
from dataclasses import replace
from typing import List

from divlab.encoding import symbol_offsets
from divlab.isa import (
    INPUT_PORT, BasicBlock, DataBlob, DataRef, Function, Instruction, Program,
    ins,
)
from divlab.rng import Rng

POOL = ("r1", "r2", "r3", "r4", "r5")
COUNTER, SCRATCH = "r6", "r7"
SCRATCH_WORDS = 8
SEGMENTS = ("arith", "arith", "out", "input", "memory", "branch", "loop", "call", "stack")
BINARY = ("add", "sub", "mul", "xor", "and", "or", "mov")


class _FunctionBuilder:
    def __init__(self, name, rng: Rng):
        self.name = name
        self.rng = rng
        self.blocks: List[BasicBlock] = []
        self.label = "entry"
        self.current: List[Instruction] = []
        self.counter = 0

    def fresh(self, stem):
        self.counter += 1
        return f"{stem}{self.counter}"

    def emit(self, *insns):
        self.current.extend(insns)

    def open(self, label):
        if not self.current:
            self.emit(ins("movi", SCRATCH, 0))
        self.blocks.append(BasicBlock(self.label, tuple(self.current)))
        self.label, self.current = label, []

    def close(self, terminator):
        self.emit(terminator)
        self.open(self.fresh("b"))

    def finish(self, *tail):
        self.emit(*tail)
        self.blocks.append(BasicBlock(self.label, tuple(self.current)))
        return Function(self.name, tuple(self.blocks))

    def reg(self):
        return self.rng.choice(POOL)

    def imm(self):
        return self.rng.randint(-1000, 1000)

    def arith(self):
        for _ in range(self.rng.randint(1, 4)):
            kind = self.rng.below(4)
            if kind == 0:
                self.emit(ins(self.rng.choice(BINARY), self.reg(), self.reg()))
            elif kind == 1:
                self.emit(ins(self.rng.choice(("addi", "subi")), self.reg(), self.imm()))
            elif kind == 2:
                self.emit(ins("movi", self.reg(), self.imm()))
            else:
                self.emit(ins("lea", self.reg(), self.reg(), self.imm()))

    def reset_registers(self, first=None):
        for r in POOL:
            if r == "r1" and first is not None:
                self.emit(first)
            else:
                self.emit(ins("movi", r, self.imm()))


def _segment(b: _FunctionBuilder, kind, callees):
    rng = b.rng
    if kind == "arith":
        b.arith()
    elif kind == "out":
        b.emit(ins("out", b.reg()))
    elif kind == "input":
        b.emit(ins("movi", SCRATCH, 0), ins("load", b.reg(), SCRATCH, INPUT_PORT))
    elif kind == "memory":
        b.emit(
            ins("movi", SCRATCH, DataRef("scratch")),
            ins("store", b.reg(), SCRATCH, 4 * rng.below(SCRATCH_WORDS)),
            ins("load", b.reg(), SCRATCH, 4 * rng.below(SCRATCH_WORDS)),
        )
    elif kind == "branch":
        skip = b.fresh("skip")
        b.emit(ins("cmp", b.reg(), b.reg()))
        b.close(ins(rng.choice(("jz", "jnz", "jlt", "jge")), skip))
        b.arith()
        b.open(skip)
    elif kind == "loop":
        head = b.fresh("loop")
        b.emit(ins("movi", COUNTER, rng.randint(1, 4)))
        b.open(head)
        b.arith()
        b.emit(ins("subi", COUNTER, 1), ins("movi", SCRATCH, 0), ins("cmp", COUNTER, SCRATCH))
        b.close(ins("jnz", head))
    elif kind == "call" and callees:
        b.emit(ins("push", b.reg()), ins("call", rng.choice(callees)), ins("addi", "sp", 4))
        b.reset_registers(first=ins("mov", "r1", "r0"))
    elif kind == "stack":
        b.emit(ins("push", b.reg()), ins("pop", b.reg()))
    else:
        b.arith()


def random_program(seed: int, functions: int = 3, segments: int = 6) -> Program:
    """A valid, terminating, fault-free Program drawn from `seed`."""
    rng = Rng.derive(seed, "generator")
    names = ["main"] + [f"f{i}" for i in range(1, functions)]
    built = []
    for index, name in enumerate(names):
        b = _FunctionBuilder(name, Rng.derive(seed, "generator", name))
        if index == 0:
            b.reset_registers()
        else:
            b.reset_registers(first=ins("load", "r1", "sp", 0))
        callees = names[index + 1:]
        for _ in range(segments):
            _segment(b, b.rng.choice(SEGMENTS), callees)
        if index == 0:
            built.append(b.finish(ins("out", b.reg()), Instruction("halt")))
        else:
            built.append(b.finish(ins("mov", "r0", b.reg()), Instruction("ret")))
    scratch = bytes(rng.below(256) for _ in range(4 * SCRATCH_WORDS))
    p = Program(tuple(built), (DataBlob("scratch", scratch),))
    return replace(p, symbols=symbol_offsets(p))
