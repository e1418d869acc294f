"""Deterministic interpreter for ByteImages: the equivalence oracle."""
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

from divlab.encoding import ByteImage, sweep
from divlab.isa import (
    DATA_BASE, DEFAULT_STEP_LIMIT, INPUT_PORT, MAX_CALL_DEPTH, MEMORY_SIZE,
    STACK_LIMIT, STACK_TOP, WORD_MASK, to_signed,
)


class Termination(Enum):
    HALTED = "halted"
    STEP_LIMIT = "step-limit"
    FAULT = "fault"


@dataclass(frozen=True)
class Trace:
    outputs: Tuple[int, ...]
    steps: int
    termination: Termination
    fault: Optional[str] = None

    def describe(self):
        if self.termination is Termination.FAULT:
            return f"fault({self.fault})"
        return self.termination.value


class _Fault(Exception):
    def __init__(self, kind):
        super().__init__(kind)
        self.kind = kind


class Machine:
    """Private machine state for one run of an image."""

    def __init__(self, img: ByteImage, inputs: Sequence[int] = ()):
        self.program = {d.offset: d for d in sweep(img.code)}
        self.memory = bytearray(MEMORY_SIZE)
        data = img.region_bytes("data")
        self.memory[DATA_BASE:DATA_BASE + len(data)] = data
        self.regs = [0] * 9
        self.regs[8] = STACK_TOP
        self.pc = img.entry
        self.flags = (False, False)
        self.calls = []
        self.inputs = [v & WORD_MASK for v in inputs]
        self.input_pos = 0
        self.outputs = []
        self.halted = False

    def read32(self, address):
        address &= WORD_MASK
        if address == INPUT_PORT:
            if self.input_pos < len(self.inputs):
                self.input_pos += 1
                return self.inputs[self.input_pos - 1]
            return 0
        if address > MEMORY_SIZE - 4:
            raise _Fault("out-of-bounds")
        return int.from_bytes(self.memory[address:address + 4], "little")

    def write32(self, address, value):
        address &= WORD_MASK
        if address > MEMORY_SIZE - 4:
            raise _Fault("out-of-bounds")
        self.memory[address:address + 4] = (value & WORD_MASK).to_bytes(4, "little")

    def step(self):
        d = self.program.get(self.pc)
        if d is None:
            raise _Fault("bad-pc")
        m, a, regs = d.mnemonic, d.args, self.regs
        next_pc = d.offset + d.size
        if m == "mov":
            regs[a[0]] = regs[a[1]]
        elif m == "movi":
            regs[a[0]] = a[1] & WORD_MASK
        elif m == "lea":
            regs[a[0]] = (regs[a[1]] + a[2]) & WORD_MASK
        elif m == "add":
            regs[a[0]] = (regs[a[0]] + regs[a[1]]) & WORD_MASK
        elif m == "sub":
            regs[a[0]] = (regs[a[0]] - regs[a[1]]) & WORD_MASK
        elif m == "mul":
            regs[a[0]] = (regs[a[0]] * regs[a[1]]) & WORD_MASK
        elif m == "xor":
            regs[a[0]] = regs[a[0]] ^ regs[a[1]]
        elif m == "and":
            regs[a[0]] = regs[a[0]] & regs[a[1]]
        elif m == "or":
            regs[a[0]] = regs[a[0]] | regs[a[1]]
        elif m == "addi":
            regs[a[0]] = (regs[a[0]] + a[1]) & WORD_MASK
        elif m == "subi":
            regs[a[0]] = (regs[a[0]] - a[1]) & WORD_MASK
        elif m == "load":
            regs[a[0]] = self.read32(regs[a[1]] + a[2])
        elif m == "store":
            self.write32(regs[a[1]] + a[2], regs[a[0]])
        elif m == "push":
            sp = regs[8] - 4
            if sp < STACK_LIMIT:
                raise _Fault("stack-overflow")
            self.write32(sp, regs[a[0]])
            regs[8] = sp
        elif m == "pop":
            sp = regs[8]
            if sp + 4 > STACK_TOP:
                raise _Fault("stack-underflow")
            value = self.read32(sp)
            regs[8] = sp + 4
            regs[a[0]] = value
        elif m == "cmp":
            x, y = to_signed(regs[a[0]]), to_signed(regs[a[1]])
            self.flags = (x == y, x < y)
        elif m == "jmp":
            next_pc = a[0]
        elif m == "jz":
            if self.flags[0]:
                next_pc = a[0]
        elif m == "jnz":
            if not self.flags[0]:
                next_pc = a[0]
        elif m == "jlt":
            if self.flags[1]:
                next_pc = a[0]
        elif m == "jge":
            if not self.flags[1]:
                next_pc = a[0]
        elif m == "call":
            if len(self.calls) >= MAX_CALL_DEPTH:
                raise _Fault("call-depth")
            self.calls.append(next_pc)
            next_pc = a[0]
        elif m == "ret":
            if not self.calls:
                self.halted = True
            else:
                next_pc = self.calls.pop()
        elif m == "out":
            self.outputs.append(regs[a[0]])
        elif m == "halt":
            self.halted = True
        self.pc = next_pc


def interpret(img: ByteImage, inputs: Sequence[int] = (), step_limit: int = DEFAULT_STEP_LIMIT) -> Trace:
    if step_limit <= 0:
        raise ValueError("step_limit must be positive")
    machine = Machine(img, inputs)
    steps = 0
    try:
        while steps < step_limit:
            steps += 1
            machine.step()
            if machine.halted:
                return Trace(tuple(machine.outputs), steps, Termination.HALTED)
    except _Fault as fault:
        return Trace(tuple(machine.outputs), steps, Termination.FAULT, fault.kind)
    return Trace(tuple(machine.outputs), steps, Termination.STEP_LIMIT)


def observable(trace: Trace):
    """The part of a trace that equivalence checks compare: outputs and how the run ended."""
    return trace.outputs, trace.termination, trace.fault
