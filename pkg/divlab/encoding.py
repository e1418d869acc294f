"""Byte encoding of Programs and the .tbin container.

Layout of the raw bytes: code region, data region, optional symbol
table. Instructions are one opcode byte followed by one byte per
register operand and four little-endian bytes per immediate; label
operands are displacements relative to the end of the instruction.
"""
import hashlib
import struct
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Tuple

from divlab.errors import DecodeError, EncodingError, ProgramError
from divlab.isa import (
    ARITY, DATA_BASE, INT_MAX, INT_MIN, MNEMONIC_OF, OPCODES, STACK_LIMIT,
    BasicBlock, DataBlob, DataRef, Function, I, Imm, Instruction, LabelRef,
    OperandKind, Program, R, Register, validate_program,
)

MAGIC = b"TBIN"
VERSION = 1
HEADER = struct.Struct("<4sHIH4x")
REGION = struct.Struct("<BII")
REGION_KINDS = ("code", "data", "symtab")
_KIND_CODES = {k: i for i, k in enumerate(REGION_KINDS)}

MAX_DATA = STACK_LIMIT - DATA_BASE


class Region(NamedTuple):
    kind: str
    start: int
    length: int

    @property
    def end(self):
        return self.start + self.length


@dataclass(frozen=True)
class ByteImage:
    raw: bytes
    layout: Tuple[Region, ...]
    entry: int = 0

    def region(self, kind) -> Optional[Region]:
        for r in self.layout:
            if r.kind == kind:
                return r
        return None

    def region_bytes(self, kind):
        r = self.region(kind)
        return b"" if r is None else self.raw[r.start:r.end]

    @property
    def code(self):
        return self.region_bytes("code")

    @property
    def searchable(self):
        """Code and data bytes, the text scanners and signatures see."""
        return self.code + self.region_bytes("data")

    def region_of(self, offset):
        for r in self.layout:
            if r.start <= offset < r.end:
                return r.kind
        return None

    def sha256(self):
        return hashlib.sha256(to_tbin(self)).hexdigest()

    def __len__(self):
        return len(self.raw)


class Decoded(NamedTuple):
    """One instruction found by a linear sweep; label operands carry absolute offsets."""
    offset: int
    size: int
    mnemonic: str
    args: Tuple[int, ...]

    @property
    def end(self):
        return self.offset + self.size


def instruction_size(mnemonic):
    return 1 + sum(1 if kind is R else 4 for kind in ARITY[mnemonic])


def code_layout(p: Program):
    """Offsets of every function and block in the code region."""
    function_offsets: Dict[str, int] = {}
    block_offsets: Dict[Tuple[str, str], int] = {}
    offset = 0
    for f in p.functions:
        function_offsets[f.name] = offset
        for b in f.blocks:
            block_offsets[(f.name, b.label)] = offset
            offset += sum(instruction_size(i.mnemonic) for i in b.instructions)
    return function_offsets, block_offsets, offset


def symbol_offsets(p: Program):
    functions, _, _ = code_layout(p)
    symbols = dict(functions)
    offset = 0
    for blob in p.data:
        symbols[blob.label] = offset
        offset += len(blob)
    return symbols


def _imm32(value, where):
    if not INT_MIN <= value <= INT_MAX:
        raise EncodingError(f"immediate {value} out of 32-bit range at {where}")
    return struct.pack("<i", value)


def encode(p: Program) -> ByteImage:
    try:
        validate_program(p)
    except ProgramError as e:
        raise EncodingError(str(e)) from e
    functions, blocks, code_length = code_layout(p)
    addresses = p.data_addresses()
    code = bytearray()
    for f in p.functions:
        for b in f.blocks:
            for pos, insn in enumerate(b.instructions):
                where = f"{f.name}:{b.label}[{pos}]"
                end = len(code) + instruction_size(insn.mnemonic)
                code.append(OPCODES[insn.mnemonic])
                for kind, op in zip(ARITY[insn.mnemonic], insn.operands):
                    if kind is R:
                        code.append(op.index)
                    elif kind is I:
                        value = addresses[op.name] if isinstance(op, DataRef) else op.value
                        code += _imm32(value, where)
                    else:
                        if kind is OperandKind.FUNC:
                            target = functions[op.name]
                        else:
                            target = blocks[(f.name, op.name)]
                        disp = target - end
                        if not INT_MIN <= disp <= INT_MAX:
                            raise EncodingError(f"displacement overflow at {where}")
                        code += struct.pack("<i", disp)
    data = b"".join(blob.data for blob in p.data)
    if len(data) > MAX_DATA:
        raise EncodingError(f"data region of {len(data)} bytes exceeds {MAX_DATA}")

    regions = [Region("code", 0, len(code)), Region("data", len(code), len(data))]
    raw = bytes(code) + data
    if p.symbols is not None:
        table = _encode_symtab(p)
        regions.append(Region("symtab", len(raw), len(table)))
        raw += table
    return ByteImage(raw, tuple(regions), functions[p.entry_function])


def _encode_symtab(p):
    offsets = symbol_offsets(p)
    out = bytearray(struct.pack("<H", len(p.functions) + len(p.data)))
    entries = [(0, f.name) for f in p.functions] + [(1, d.label) for d in p.data]
    for kind, name in entries:
        encoded = name.encode("utf-8")
        if len(encoded) > 255:
            raise EncodingError(f"symbol name too long: {name}")
        out += struct.pack("<BB", kind, len(encoded)) + encoded + struct.pack("<I", offsets[name])
    return bytes(out)


def _decode_symtab(table):
    try:
        (count,) = struct.unpack_from("<H", table, 0)
        pos, entries = 2, []
        for _ in range(count):
            kind, size = struct.unpack_from("<BB", table, pos)
            pos += 2
            name = table[pos:pos + size].decode("utf-8")
            if len(name.encode("utf-8")) != size:
                raise DecodeError("symbol table truncated")
            pos += size
            (offset,) = struct.unpack_from("<I", table, pos)
            pos += 4
            entries.append((kind, name, offset))
    except struct.error as e:
        raise DecodeError(f"symbol table truncated: {e}") from e
    return entries


def sweep(code: bytes) -> List[Decoded]:
    """Linear-sweep decode of a code region."""
    out, offset, n = [], 0, len(code)
    while offset < n:
        mnemonic = MNEMONIC_OF.get(code[offset])
        if mnemonic is None:
            raise DecodeError(f"unknown opcode 0x{code[offset]:02X} at offset {offset}")
        size = instruction_size(mnemonic)
        if offset + size > n:
            raise DecodeError(f"truncated instruction {mnemonic} at offset {offset}")
        pos, args = offset + 1, []
        for kind in ARITY[mnemonic]:
            if kind is R:
                reg = code[pos]
                if reg > 8:
                    raise DecodeError(f"bad register byte 0x{reg:02X} at offset {pos}")
                args.append(reg)
                pos += 1
            else:
                (value,) = struct.unpack_from("<i", code, pos)
                pos += 4
                args.append(value if kind is I else offset + size + value)
        out.append(Decoded(offset, size, mnemonic, tuple(args)))
        offset += size
    return out


def instruction_offsets(img: ByteImage) -> Tuple[int, ...]:
    return tuple(d.offset for d in sweep(img.code))


def decode(img: ByteImage) -> Program:
    _check_layout(img)
    code = img.code
    if not code:
        raise DecodeError("empty code region")
    decoded = sweep(code)
    starts = {d.offset for d in decoded}

    symtab = img.region("symtab")
    entries = _decode_symtab(img.region_bytes("symtab")) if symtab is not None else []
    function_names = {off: name for kind, name, off in entries if kind == 0}

    function_starts = {0, img.entry} | set(function_names)
    function_starts |= {d.args[0] for d in decoded if d.mnemonic == "call"}
    for off in function_starts:
        if off not in starts:
            raise DecodeError(f"function start {off} is not an instruction boundary")
    ordered = sorted(function_starts)
    names = {off: function_names.get(off, f"fn_{off:04x}") for off in ordered}

    functions = []
    for idx, begin in enumerate(ordered):
        end = ordered[idx + 1] if idx + 1 < len(ordered) else len(code)
        body = [d for d in decoded if begin <= d.offset < end]
        functions.append(_decode_function(names[begin], body, begin, end, names))

    data = _decode_data(img.region_bytes("data"), entries)
    symbols = None
    if symtab is not None:
        symbols = {name: off for _, name, off in entries}
    p = Program(tuple(functions), data, symbols, names[img.entry])
    try:
        validate_program(p)
    except ProgramError as e:
        raise DecodeError(str(e)) from e
    return p


def _decode_function(name, body, begin, end, names):
    leaders = {begin}
    for d in body:
        if d.mnemonic in ("jmp", "jz", "jnz", "jlt", "jge"):
            target = d.args[0]
            if not begin <= target < end:
                raise DecodeError(f"branch at {d.offset} leaves function {name}")
            leaders.add(target)
        if d.mnemonic in ("jmp", "jz", "jnz", "jlt", "jge", "ret", "halt") and d.end < end:
            leaders.add(d.end)
    blocks, current, label = [], [], None
    for d in body:
        if d.offset in leaders:
            if current:
                blocks.append(BasicBlock(label, tuple(current)))
            current, label = [], f"L{d.offset:04x}"
        current.append(_lift(d, names))
    blocks.append(BasicBlock(label, tuple(current)))
    return Function(name, tuple(blocks))


def _lift(d: Decoded, names) -> Instruction:
    ops = []
    for kind, value in zip(ARITY[d.mnemonic], d.args):
        if kind is R:
            ops.append(Register(value))
        elif kind is I:
            ops.append(Imm(value))
        elif kind is OperandKind.FUNC:
            ops.append(LabelRef(names[value]))
        else:
            ops.append(LabelRef(f"L{value:04x}"))
    return Instruction(d.mnemonic, tuple(ops))


def _decode_data(data, entries):
    named = [(name, off) for kind, name, off in entries if kind == 1]
    if not named:
        return (DataBlob("data_0000", bytes(data)),) if data else ()
    if named[0][1] != 0:
        raise DecodeError("first data symbol does not start the data region")
    blobs = []
    for i, (name, start) in enumerate(named):
        stop = named[i + 1][1] if i + 1 < len(named) else len(data)
        if not start <= stop <= len(data):
            raise DecodeError(f"data symbol {name} out of order")
        blobs.append(DataBlob(name, bytes(data[start:stop])))
    return tuple(blobs)


def _check_layout(img: ByteImage):
    pos = 0
    for r in sorted(img.layout, key=lambda r: r.start):
        if r.kind not in REGION_KINDS:
            raise DecodeError(f"unknown region kind {r.kind!r}")
        if r.start != pos or r.end > len(img.raw):
            raise DecodeError(f"region {r.kind} overruns the image")
        pos = r.end
    if pos != len(img.raw):
        raise DecodeError("regions do not cover the image")
    code = img.region("code")
    if code is None or not 0 <= img.entry < max(code.length, 1):
        raise DecodeError("entry offset outside the code region")


def to_tbin(img: ByteImage) -> bytes:
    out = bytearray(HEADER.pack(MAGIC, VERSION, img.entry, len(img.layout)))
    for r in img.layout:
        out += REGION.pack(_KIND_CODES[r.kind], r.start, r.length)
    return bytes(out) + img.raw


def from_tbin(blob: bytes) -> ByteImage:
    if len(blob) < HEADER.size:
        raise DecodeError("file shorter than the container header")
    magic, version, entry, count = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise DecodeError(f"bad magic {magic!r}")
    if version != VERSION:
        raise DecodeError(f"unsupported container version {version}")
    table_end = HEADER.size + count * REGION.size
    if len(blob) < table_end:
        raise DecodeError("region table truncated")
    layout = []
    for i in range(count):
        kind, start, length = REGION.unpack_from(blob, HEADER.size + i * REGION.size)
        if kind >= len(REGION_KINDS):
            raise DecodeError(f"unknown region kind {kind}")
        layout.append(Region(REGION_KINDS[kind], start, length))
    img = ByteImage(bytes(blob[table_end:]), tuple(layout), entry)
    _check_layout(img)
    return img


def write_tbin(img: ByteImage, path):
    with open(path, "wb") as fh:
        fh.write(to_tbin(img))


def read_tbin(path) -> ByteImage:
    with open(path, "rb") as fh:
        return from_tbin(fh.read())
