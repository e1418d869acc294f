"""Parser and printer for .tasm assembly text.

    data greeting = "hi"
    data table = hex"0102"
    entry main

    fn main {
    entry:
        movi r1, @greeting   ; address of a data blob
        load r0, [r1+0]
        out r0
        halt
    }
"""
import re
from typing import Dict, List, Optional, Tuple

from divlab.encoding import symbol_offsets
from divlab.errors import (
    AssemblySyntaxError, DuplicateSymbolError, ProgramError, UnresolvedLabelError,
)
from divlab.isa import (
    ARITY, TERMINATORS, BasicBlock, DataBlob, DataRef, F, Function, I,
    Imm, Instruction, L, LabelRef, Program, R, Register, check_instruction,
    validate_program,
)

# dots appear in labels minted by the diversifier (`loop.s1`)
IDENT = r"[A-Za-z_][A-Za-z0-9_.]*"
_FN_OPEN = re.compile(rf"fn\s+({IDENT})\s*\{{\s*$")
_DATA = re.compile(rf"data\s+({IDENT})\s*=\s*(hex)?\"([^\"]*)\"\s*$")
_ENTRY = re.compile(rf"entry\s+({IDENT})\s*$")
_LABEL = re.compile(rf"({IDENT})\s*:")
_MEMORY = re.compile(r"\[\s*(r[0-7]|sp)\s*(?:([+-])\s*(@?[A-Za-z0-9_.]+))?\s*\]$", re.IGNORECASE)


class _Line:
    def __init__(self, number, text, column):
        self.number = number
        self.text = text
        self.column = column

    def error(self, cls, message, offset=0):
        return cls(message, self.number, self.column + offset)


def _strip(raw_lines):
    for number, raw in enumerate(raw_lines, start=1):
        text = raw.split(";", 1)[0]
        stripped = text.strip()
        if stripped:
            yield _Line(number, stripped, len(text) - len(text.lstrip()) + 1)


def parse_int(text):
    text = text.strip().lower()
    negative = text.startswith("-")
    body = text[1:] if negative else text
    if body.startswith("0x"):
        value = int(body, 16)
        if not negative and value > 0x7FFFFFFF and value <= 0xFFFFFFFF:
            value -= 1 << 32
    else:
        if not body.isdigit():
            raise ValueError(text)
        value = int(body)
    return -value if negative else value


class _FunctionBuilder:
    def __init__(self, name, line):
        self.name = name
        self.line = line
        self.blocks: List[Tuple[str, List[Instruction]]] = []
        self.label_lines: Dict[str, _Line] = {}
        self.references: List[Tuple[str, _Line]] = []
        self._synthetic = 0

    @property
    def open_block(self):
        if not self.blocks:
            return None
        label, instructions = self.blocks[-1]
        if instructions and instructions[-1].mnemonic in TERMINATORS:
            return None
        return instructions

    def add_label(self, label, line):
        if label in self.label_lines:
            raise line.error(DuplicateSymbolError, f"duplicate label {label!r} in {self.name}")
        self.label_lines[label] = line
        if self.blocks and not self.blocks[-1][1]:
            raise line.error(AssemblySyntaxError, f"label {self.blocks[-1][0]!r} has no instructions")
        self.blocks.append((label, []))

    def add(self, insn, line):
        current = self.open_block
        if current is None:
            if not self.blocks:
                raise line.error(AssemblySyntaxError, "instruction before the first label")
            self._synthetic += 1
            self.blocks.append((f"{self.blocks[-1][0]}.{self._synthetic}", []))
            current = self.blocks[-1][1]
        current.append(insn)

    def build(self):
        if not self.blocks:
            raise self.line.error(AssemblySyntaxError, f"function {self.name} is empty")
        if not self.blocks[-1][1]:
            line = self.label_lines[self.blocks[-1][0]]
            raise line.error(AssemblySyntaxError, f"label {self.blocks[-1][0]!r} has no instructions")
        for label, line in self.references:
            if label not in self.label_lines:
                raise line.error(UnresolvedLabelError, f"unresolved label {label!r} in {self.name}")
        return Function(self.name, tuple(BasicBlock(lbl, tuple(body)) for lbl, body in self.blocks))


def parse_assembly(text: str) -> Program:
    functions: List[Function] = []
    blobs: List[DataBlob] = []
    entry: Optional[str] = None
    calls: List[Tuple[str, _Line]] = []
    data_refs: List[Tuple[str, _Line]] = []
    current: Optional[_FunctionBuilder] = None
    seen: Dict[str, _Line] = {}

    def declare(name, line):
        if name in seen:
            raise line.error(DuplicateSymbolError, f"duplicate symbol {name!r}")
        seen[name] = line

    for line in _strip(text.splitlines()):
        body = line.text
        if current is None:
            m = _FN_OPEN.match(body)
            if m:
                declare(m.group(1), line)
                current = _FunctionBuilder(m.group(1), line)
                continue
            m = _DATA.match(body)
            if m:
                declare(m.group(1), line)
                blobs.append(DataBlob(m.group(1), _data_bytes(m, line)))
                continue
            m = _ENTRY.match(body)
            if m:
                entry = m.group(1)
                continue
            raise line.error(AssemblySyntaxError, f"unexpected text {body.split()[0]!r}")
        if body == "}":
            functions.append(current.build())
            current = None
            continue
        offset = 0
        m = _LABEL.match(body)
        while m:
            current.add_label(m.group(1), line)
            offset += m.end()
            body = body[m.end():].lstrip()
            m = _LABEL.match(body)
        if body:
            insn = _parse_instruction(body, line, offset)
            for kind, op in zip(ARITY[insn.mnemonic], insn.operands):
                if kind is L:
                    current.references.append((op.name, line))
                elif kind is F:
                    calls.append((op.name, line))
                elif isinstance(op, DataRef):
                    data_refs.append((op.name, line))
            current.add(insn, line)

    if current is not None:
        raise current.line.error(AssemblySyntaxError, f"function {current.name} is not closed")
    if not functions:
        raise AssemblySyntaxError("no functions defined", 1, 1)

    names = {f.name for f in functions}
    blob_names = {b.label for b in blobs}
    for name, line in calls:
        if name not in names:
            raise line.error(UnresolvedLabelError, f"unresolved function {name!r}")
    for name, line in data_refs:
        if name not in blob_names:
            raise line.error(UnresolvedLabelError, f"unresolved data label {name!r}")
    if entry is None:
        entry = "main" if "main" in names else functions[0].name
    elif entry not in names:
        raise UnresolvedLabelError(f"entry function {entry!r} not defined", None)

    program = Program(tuple(functions), tuple(blobs), None, entry)
    try:
        validate_program(program)
    except ProgramError as e:
        raise AssemblySyntaxError(str(e)) from e
    return Program(program.functions, program.data, symbol_offsets(program), entry)


def _data_bytes(match, line):
    payload = match.group(3)
    if match.group(2):
        digits = payload.replace(" ", "")
        if len(digits) % 2 or not re.fullmatch(r"[0-9A-Fa-f]*", digits):
            raise line.error(AssemblySyntaxError, "malformed hex literal")
        return bytes.fromhex(digits)
    return payload.encode("latin-1")


def _parse_instruction(body, line, offset):
    parts = body.split(None, 1)
    mnemonic = parts[0].lower()
    if mnemonic not in ARITY:
        raise line.error(AssemblySyntaxError, f"unknown mnemonic {parts[0]!r}", offset)
    operand_text = parts[1] if len(parts) > 1 else ""
    raw = _split_operands(operand_text)
    if mnemonic in ("load", "store"):
        if len(raw) != 2:
            raise line.error(AssemblySyntaxError, f"{mnemonic} takes a register and a memory operand", offset)
        base, disp = _parse_memory(raw[1], line, offset)
        ops = (_parse_operand(R, raw[0], line, offset), base, disp)
    else:
        kinds = ARITY[mnemonic]
        if len(raw) != len(kinds):
            raise line.error(AssemblySyntaxError,
                             f"{mnemonic} takes {len(kinds)} operands, got {len(raw)}", offset)
        ops = tuple(_parse_operand(k, t, line, offset) for k, t in zip(kinds, raw))
    insn = Instruction(mnemonic, ops)
    try:
        check_instruction(insn)
    except ProgramError as e:
        raise line.error(AssemblySyntaxError, str(e), offset) from e
    return insn


def _split_operands(text):
    text = text.strip()
    if not text:
        return []
    out, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        elif ch == "," and depth == 0:
            out.append(text[start:i].strip())
            start = i + 1
    out.append(text[start:].strip())
    return out


def _parse_operand(kind, text, line, offset):
    if kind is R:
        try:
            return Register.parse(text)
        except ValueError:
            raise line.error(AssemblySyntaxError, f"expected register, got {text!r}", offset) from None
    if kind is I:
        if text.startswith("@") and re.fullmatch(IDENT, text[1:]):
            return DataRef(text[1:])
        try:
            return Imm(parse_int(text))
        except ValueError:
            raise line.error(AssemblySyntaxError, f"expected immediate, got {text!r}", offset) from None
    if not re.fullmatch(IDENT, text):
        raise line.error(AssemblySyntaxError, f"expected label, got {text!r}", offset)
    return LabelRef(text)


def _parse_memory(text, line, offset):
    m = _MEMORY.match(text.strip())
    if not m:
        raise line.error(AssemblySyntaxError, f"malformed memory operand {text!r}", offset)
    base = Register.parse(m.group(1))
    sign, value = m.group(2), m.group(3)
    if value is None:
        return base, Imm(0)
    if value.startswith("@"):
        if sign != "+":
            raise line.error(AssemblySyntaxError, "data references can only be added", offset)
        return base, DataRef(value[1:])
    try:
        number = parse_int(value)
    except ValueError:
        raise line.error(AssemblySyntaxError, f"malformed displacement {value!r}", offset) from None
    return base, Imm(-number if sign == "-" else number)


def format_program(p: Program) -> str:
    """Assembly text that parses back to an equivalent Program."""
    out = []
    for blob in p.data:
        out.append(f'data {blob.label} = hex"{blob.data.hex()}"')
    out.append(f"entry {p.entry_function}")
    for f in p.functions:
        out.append("")
        out.append(f"fn {f.name} {{")
        for block in f.blocks:
            out.append(f"{block.label}:")
            for insn in block.instructions:
                out.append(f"    {insn}")
        out.append("}")
    return "\n".join(out) + "\n"
