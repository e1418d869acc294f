"""Toy instruction set: tables, program model and structural validation.

A Program is a tree of immutable values: functions hold basic blocks,
blocks hold instructions. Every transformation in divlab builds new
values instead of mutating old ones.
"""
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Mapping, Optional, Tuple, Union

from divlab.errors import ProgramError

# Machine constants
WORD_MASK = 0xFFFFFFFF
INT_MIN = -(1 << 31)
INT_MAX = (1 << 31) - 1
MEMORY_SIZE = 0x10000
DATA_BASE = 0x8000
INPUT_PORT = 0xFFFC
STACK_TOP = 0xFFFC
STACK_LIMIT = 0xC000
MAX_CALL_DEPTH = 1024
DEFAULT_STEP_LIMIT = 10 ** 6

MNEMONICS = (
    "mov", "movi", "lea", "add", "sub", "mul", "xor", "and", "or",
    "addi", "subi", "load", "store", "push", "pop", "cmp",
    "jmp", "jz", "jnz", "jlt", "jge", "call", "ret", "nop", "out", "halt",
)


def _number_opcodes():
    table = {"nop": 0x00}
    code = 0x01
    for mnemonic in MNEMONICS:
        if mnemonic == "nop":
            continue
        table[mnemonic] = code
        code += 1
    return table


OPCODES: Dict[str, int] = _number_opcodes()
MNEMONIC_OF: Dict[int, str] = {code: name for name, code in OPCODES.items()}


class OperandKind(Enum):
    REG = "register"
    IMM = "immediate"
    LABEL = "label"
    FUNC = "function"


R, I, L, F = OperandKind.REG, OperandKind.IMM, OperandKind.LABEL, OperandKind.FUNC

# load/store carry (register, base, displacement) and print as `rd, [rb+k]`
ARITY: Dict[str, Tuple[OperandKind, ...]] = {
    "mov": (R, R), "movi": (R, I), "lea": (R, R, I),
    "add": (R, R), "sub": (R, R), "mul": (R, R),
    "xor": (R, R), "and": (R, R), "or": (R, R),
    "addi": (R, I), "subi": (R, I),
    "load": (R, R, I), "store": (R, R, I),
    "push": (R,), "pop": (R,), "cmp": (R, R),
    "jmp": (L,), "jz": (L,), "jnz": (L,), "jlt": (L,), "jge": (L,),
    "call": (F,), "ret": (), "nop": (), "out": (R,), "halt": (),
}

CONDITIONAL = frozenset({"jz", "jnz", "jlt", "jge"})
TERMINATORS = frozenset({"jmp", "ret", "halt"}) | CONDITIONAL
EXITS = frozenset({"ret", "halt"})
ARITHMETIC = ("mov", "movi", "lea", "add", "sub", "mul", "xor", "and", "or", "addi", "subi")
MEMORY_OPS = frozenset({"load", "store", "push", "pop"})
# mnemonics whose first operand is written
WRITES_FIRST = frozenset(ARITHMETIC) | {"load", "pop"}


@dataclass(frozen=True, order=True)
class Register:
    index: int

    def __post_init__(self):
        if not 0 <= self.index <= 8:
            raise ProgramError(f"register index out of range: {self.index}")

    @property
    def name(self):
        return "sp" if self.index == 8 else f"r{self.index}"

    @property
    def is_sp(self):
        return self.index == 8

    @classmethod
    def parse(cls, text):
        text = text.strip().lower()
        if text == "sp":
            return cls(8)
        if len(text) == 2 and text[0] == "r" and text[1] in "01234567":
            return cls(int(text[1]))
        raise ValueError(f"not a register: {text!r}")

    def __str__(self):
        return self.name


SP = Register(8)
R0 = Register(0)
GENERAL_REGISTERS = tuple(Register(i) for i in range(8))
ALL_REGISTERS = GENERAL_REGISTERS + (SP,)

# functions named with this prefix restore every register and the flags before `ret`
DECODER_NAME = "__data_decoder"


def preserves_registers(function_name):
    return function_name.startswith(DECODER_NAME)


@dataclass(frozen=True)
class Imm:
    value: int

    def __str__(self):
        return str(self.value)


@dataclass(frozen=True)
class DataRef:
    """Address of a data blob, resolved at encode time."""
    name: str

    def __str__(self):
        return f"@{self.name}"


@dataclass(frozen=True)
class LabelRef:
    """Block label (jumps) or function name (calls)."""
    name: str

    def __str__(self):
        return self.name


Operand = Union[Register, Imm, DataRef, LabelRef]


@dataclass(frozen=True)
class Instruction:
    mnemonic: str
    operands: Tuple[Operand, ...] = ()

    @property
    def is_terminator(self):
        return self.mnemonic in TERMINATORS

    @property
    def is_conditional(self):
        return self.mnemonic in CONDITIONAL

    @property
    def target(self):
        if self.mnemonic in TERMINATORS and self.operands:
            return self.operands[0].name
        if self.mnemonic == "call":
            return self.operands[0].name
        return None

    def registers(self):
        return tuple(op for op in self.operands if isinstance(op, Register))

    def map_registers(self, mapping):
        ops = tuple(mapping.get(op, op) if isinstance(op, Register) else op for op in self.operands)
        return Instruction(self.mnemonic, ops)

    def retarget(self, label):
        return Instruction(self.mnemonic, (LabelRef(label),))

    def __str__(self):
        ops = self.operands
        if self.mnemonic in ("load", "store"):
            reg, base, disp = ops
            return f"{self.mnemonic} {reg}, {_memory_text(base, disp)}"
        if not ops:
            return self.mnemonic
        return f"{self.mnemonic} " + ", ".join(str(op) for op in ops)


def _memory_text(base, disp):
    if isinstance(disp, DataRef):
        return f"[{base}+{disp}]"
    if disp.value == 0:
        return f"[{base}]"
    if disp.value < 0:
        return f"[{base}-{-disp.value}]"
    return f"[{base}+{disp.value}]"


def ins(mnemonic, *operands):
    """Shorthand constructor: ints become Imm, 'rN'/'sp' strings become registers."""
    converted = []
    for kind, op in zip(ARITY[mnemonic], operands):
        if isinstance(op, (Register, Imm, DataRef, LabelRef)):
            converted.append(op)
        elif kind is R:
            converted.append(Register.parse(op))
        elif kind is I:
            converted.append(DataRef(op[1:]) if isinstance(op, str) else Imm(op))
        else:
            converted.append(LabelRef(op))
    return Instruction(mnemonic, tuple(converted))


@dataclass(frozen=True)
class BasicBlock:
    label: str
    instructions: Tuple[Instruction, ...]

    @property
    def terminator(self) -> Optional[Instruction]:
        """Final control transfer, or None for an implicit fallthrough."""
        if self.instructions and self.instructions[-1].is_terminator:
            return self.instructions[-1]
        return None

    @property
    def terminator_kind(self):
        term = self.terminator
        return term.mnemonic if term is not None else "fallthrough"

    @property
    def falls_through(self):
        term = self.terminator
        return term is None or term.is_conditional

    @property
    def body(self):
        """Instructions without the terminator."""
        if self.terminator is not None:
            return self.instructions[:-1]
        return self.instructions

    def __len__(self):
        return len(self.instructions)


@dataclass(frozen=True)
class Function:
    name: str
    blocks: Tuple[BasicBlock, ...]

    @property
    def entry(self):
        return self.blocks[0].label

    @property
    def labels(self):
        return tuple(b.label for b in self.blocks)

    def block(self, label):
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)

    def fallthrough_of(self, index):
        """Label of the layout successor that block `index` falls into, if any."""
        block = self.blocks[index]
        if not block.falls_through:
            return None
        if index + 1 < len(self.blocks):
            return self.blocks[index + 1].label
        return None

    def instruction_count(self):
        return sum(len(b) for b in self.blocks)


@dataclass(frozen=True)
class DataBlob:
    """Static data. `data` holds the stored bytes; with a key they are XOR-encoded."""
    label: str
    data: bytes
    key: Optional[int] = None

    @property
    def encoding(self):
        return "plain" if self.key is None else f"xored(0x{self.key:02x})"

    @property
    def logical(self):
        if self.key is None:
            return self.data
        return bytes(b ^ self.key for b in self.data)

    def __len__(self):
        return len(self.data)


@dataclass(frozen=True)
class Program:
    functions: Tuple[Function, ...]
    data: Tuple[DataBlob, ...] = ()
    symbols: Optional[Mapping[str, int]] = field(default=None, compare=False)
    entry_function: str = "main"

    def function(self, name):
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    def function_index(self):
        return {f.name: i for i, f in enumerate(self.functions)}

    def data_addresses(self):
        addresses, offset = {}, 0
        for blob in self.data:
            addresses[blob.label] = DATA_BASE + offset
            offset += len(blob)
        return addresses

    def instruction_count(self):
        return sum(f.instruction_count() for f in self.functions)

    def instructions(self):
        for f in self.functions:
            for b in f.blocks:
                yield from b.instructions

    def with_functions(self, functions):
        return replace(self, functions=tuple(functions))


def validate_program(p: Program):
    """Raise ProgramError when `p` breaks a structural invariant."""
    if not p.functions:
        raise ProgramError("program has no functions")
    names = [f.name for f in p.functions]
    if len(set(names)) != len(names):
        raise ProgramError("duplicate function name")
    if p.entry_function not in names:
        raise ProgramError(f"entry function {p.entry_function!r} not defined")
    blob_names = [d.label for d in p.data]
    if len(set(blob_names)) != len(blob_names):
        raise ProgramError("duplicate data label")
    for blob in p.data:
        if blob.key is not None and not 0 <= blob.key <= 0xFF:
            raise ProgramError(f"data key out of range for {blob.label}")
    known_blobs = set(blob_names)
    known_functions = set(names)
    for f in p.functions:
        _validate_function(f, known_functions, known_blobs)
    if p.symbols is not None:
        missing = (known_functions | known_blobs) - set(p.symbols)
        if missing:
            raise ProgramError(f"symbol table misses {sorted(missing)}")


def _validate_function(f, known_functions, known_blobs):
    if not f.blocks:
        raise ProgramError(f"function {f.name} has no blocks")
    labels = f.labels
    if len(set(labels)) != len(labels):
        raise ProgramError(f"duplicate block label in {f.name}")
    label_set = set(labels)
    for block in f.blocks:
        if not block.instructions:
            raise ProgramError(f"empty block {f.name}:{block.label}")
        for pos, insn in enumerate(block.instructions):
            where = f"{f.name}:{block.label}[{pos}]"
            check_instruction(insn, where)
            if insn.is_terminator and pos != len(block.instructions) - 1:
                raise ProgramError(f"control transfer before block end at {where}")
            if insn.mnemonic in TERMINATORS and insn.operands and insn.target not in label_set:
                raise ProgramError(f"unknown label {insn.target!r} at {where}")
            if insn.mnemonic == "call" and insn.target not in known_functions:
                raise ProgramError(f"unknown function {insn.target!r} at {where}")
            for op in insn.operands:
                if isinstance(op, DataRef) and op.name not in known_blobs:
                    raise ProgramError(f"unknown data label {op.name!r} at {where}")
    if f.blocks[-1].falls_through:
        raise ProgramError(f"function {f.name} falls off its last block")


def check_instruction(insn: Instruction, where=""):
    kinds = ARITY.get(insn.mnemonic)
    if kinds is None:
        raise ProgramError(f"unknown mnemonic {insn.mnemonic!r} {where}".strip())
    if len(kinds) != len(insn.operands):
        raise ProgramError(f"{insn.mnemonic} takes {len(kinds)} operands {where}".strip())
    for kind, op in zip(kinds, insn.operands):
        ok = {
            R: isinstance(op, Register),
            I: isinstance(op, (Imm, DataRef)),
            L: isinstance(op, LabelRef),
            F: isinstance(op, LabelRef),
        }[kind]
        if not ok:
            raise ProgramError(f"bad operand {op} for {insn.mnemonic} {where}".strip())
    if insn.mnemonic in WRITES_FIRST and insn.operands[0] == SP and insn.mnemonic not in ("addi", "subi"):
        raise ProgramError(f"sp written by {insn.mnemonic} {where}".strip())


def to_signed(value):
    value &= WORD_MASK
    return value - (1 << 32) if value & 0x80000000 else value
