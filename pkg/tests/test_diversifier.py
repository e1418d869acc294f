import networkx as nx
import pytest

from conftest import program_of, traces
from divlab.assembler import parse_assembly
from divlab.config import DiversityConfig, identity_config
from divlab.diversifier import (
    DECODER_NAME, PIPELINE, _Labels, alternate_form, apply_register_map, dependency_dag,
    diversify, diversify_population, insert_garbage, insert_nops, layout_blocks,
    obfuscate_data, permute_registers, random_topological_order, randomize_blocks,
    reorder_instructions, strip_symbols, substitute_instructions,
)
from divlab.encoding import encode
from divlab.generator import random_program
from divlab.isa import BasicBlock, GENERAL_REGISTERS, Register, ins
from divlab.rng import Rng


def only(**changes):
    """Config with every pass off except the ones named."""
    enable = {name: False for name in ("obfuscate_data", "substitute", "garbage", "nops", "reorder",
                                       "registers", "blocks")}
    enable.update(changes.pop("enable", {}))
    return DiversityConfig(enable=enable, **changes)


# --- substitution ---

def test_substitution_probability_zero_is_identity(corpus):
    cfg = DiversityConfig(p_substitute=0.0)
    for p in corpus.values():
        assert substitute_instructions(p, cfg) == p


def test_alternate_forms():
    assert alternate_form(ins("mov", "r1", "r2")) == ins("lea", "r1", "r2", 0)
    assert alternate_form(ins("movi", "r3", 0)) == ins("xor", "r3", "r3")
    assert alternate_form(ins("addi", "r1", 5)) == ins("subi", "r1", -5)
    assert alternate_form(ins("addi", "r1", -(1 << 31))) is None
    assert alternate_form(ins("out", "r1")) is None


def test_forced_substitution_flips_every_class_member(corpus_program):
    _, p = corpus_program
    out = substitute_instructions(p, DiversityConfig(p_substitute=1.0))
    members = flips = 0
    for before, after in zip(p.instructions(), out.instructions()):
        alt = alternate_form(before)
        if alt is None:
            assert after == before
        else:
            members += 1
            flips += after == alt
    assert flips == members
    assert traces(out) == traces(p)


# --- reordering ---

def test_reorder_keeps_dependency_chain():
    p = program_of("movi r1, 1", "movi r2, 2", "out r1", "halt")
    for seed in range(50):
        body = reorder_instructions(p, DiversityConfig(seed=seed, p_reorder=1.0)).functions[0].blocks[0].instructions
        assert body[-1] == ins("halt")
        assert body.index(ins("movi", "r1", 1)) < body.index(ins("out", "r1"))


def test_reorder_single_instruction_block_unchanged():
    p = program_of("halt")
    assert reorder_instructions(p, DiversityConfig(p_reorder=1.0)) == p


def test_random_orders_are_topological():
    body = (
        ins("movi", "r1", 1), ins("movi", "r2", 2), ins("add", "r1", "r2"),
        ins("movi", "r3", 3), ins("out", "r3"), ins("out", "r1"),
    )
    dag = dependency_dag(body)
    valid = {tuple(order) for order in nx.all_topological_sorts(dag)}
    for seed in range(500):
        assert tuple(random_topological_order(dag, Rng(seed))) in valid


def test_memory_operations_stay_ordered():
    body = (ins("push", "r1"), ins("movi", "r2", 0), ins("out", "r2"), ins("pop", "r3"))
    dag = dependency_dag(body)
    assert nx.has_path(dag, 0, 3)
    assert nx.has_path(dag, 2, 3)


# --- register permutation ---

def test_identity_register_map_is_noop(fib):
    identity = {r: r for r in GENERAL_REGISTERS}
    assert apply_register_map(fib, identity) == fib


def test_register_swap_example():
    p = program_of("movi r1, 5", "out r1", "halt")
    swapped = apply_register_map(p, {Register(1): Register(2), Register(2): Register(1)})
    assert swapped.functions[0].blocks[0].instructions[:2] == (ins("movi", "r2", 5), ins("out", "r2"))
    assert traces(swapped) == traces(p)


def test_permutation_fixes_r0_and_sp(corpus_program):
    _, p = corpus_program
    for seed in range(20):
        out = permute_registers(p, DiversityConfig(seed=seed))
        assert traces(out) == traces(p)
        for before, after in zip(p.instructions(), out.instructions()):
            for a, b in zip(before.registers(), after.registers()):
                if a.index in (0, 8):
                    assert a == b


# --- nops and garbage ---

def test_nop_probability_zero_is_identity(fib):
    assert insert_nops(fib, DiversityConfig(p_nop=0.0)) == fib


def test_nop_count_is_deterministic_at_probability_one():
    p = program_of("movi r0, 7", "out r0", "halt")
    out = insert_nops(p, DiversityConfig(p_nop=1.0, max_garbage_len=1))
    assert sum(i.mnemonic == "nop" for i in out.instructions()) == 3


def test_nops_never_split_cmp_from_branch(corpus):
    cfg = DiversityConfig(p_nop=1.0)
    for p in corpus.values():
        for f in insert_nops(p, cfg).functions:
            for b in f.blocks:
                if b.terminator is not None and b.terminator.is_conditional:
                    assert b.instructions[-2].mnemonic == "cmp"


def test_nops_grow_code_and_keep_traces(corpus_program):
    _, p = corpus_program
    out = insert_nops(p, DiversityConfig(seed=42, p_nop=0.5))
    assert traces(out) == traces(p)
    assert len(encode(out).code) > len(encode(p).code)


def _garbage_segments(original, rewritten):
    """Inserted instructions grouped by the original index they precede."""
    segments, current, pos = {}, [], 0
    for insn in rewritten:
        if pos < len(original) and insn == original[pos]:
            segments[pos] = current
            current, pos = [], pos + 1
        else:
            current.append(insn)
    assert pos == len(original)
    return segments


def test_garbage_writes_only_dead_registers():
    p = program_of("movi r1, 5", "movi r2, 6", "out r1", "out r2", "halt")
    original = p.functions[0].blocks[0].instructions
    live_before = {1: {Register(1)}, 2: {Register(1), Register(2)}, 3: {Register(2)}}
    for seed in range(20):
        out = insert_garbage(p, DiversityConfig(seed=seed, p_garbage=1.0))
        segments = _garbage_segments(original, out.functions[0].blocks[0].instructions)
        for index, inserted in segments.items():
            dests = {insn.operands[0] for insn in inserted}
            assert len(dests) <= 1
            assert not dests & live_before.get(index, set())
        assert traces(out) == traces(p)


def test_garbage_skips_points_without_dead_registers():
    # every register is read by a later out, so the first out has no dead register
    lines = [f"movi r{i}, {i}" for i in range(8)] + [f"out r{i}" for i in range(7, -1, -1)] + ["halt"]
    p = program_of(*lines)
    out = insert_garbage(p, DiversityConfig(p_garbage=1.0))
    body = out.functions[0].blocks[0].instructions
    outs = [i for i, insn in enumerate(body) if insn.mnemonic == "out"]
    assert body[outs[0] - 1] == ins("movi", "r7", 7)


def test_garbage_preserves_corpus_traces(corpus_program):
    _, p = corpus_program
    for seed in range(10):
        assert traces(insert_garbage(p, DiversityConfig(seed=seed, p_garbage=0.5))) == traces(p)


# --- blocks ---

def test_layout_repairs_broken_fallthrough():
    a = BasicBlock("a", (ins("movi", "r1", 1),))
    a1 = BasicBlock("a.s1", (ins("out", "r1"), ins("halt")))
    c = BasicBlock("c", (ins("halt"),))
    blocks = [a, a1, c]
    out = layout_blocks(blocks, [a, c, a1], _Labels(["a", "a.s1", "c"]))
    assert out[0].instructions[-1] == ins("jmp", "a.s1")
    assert layout_blocks(blocks, list(blocks), _Labels(["a", "a.s1", "c"])) == blocks


def test_randomized_blocks_keep_entry_and_traces(corpus_program):
    _, p = corpus_program
    for seed in range(10):
        out = randomize_blocks(p, DiversityConfig(seed=seed))
        assert traces(out) == traces(p)
        for before, after in zip(p.functions, out.functions):
            assert len(after.blocks) >= len(before.blocks)
            assert after.blocks[0].label == before.blocks[0].label


# --- data ---

def test_obfuscated_blob_decodes_back():
    p = parse_assembly(
        'data blob = hex"0000"\n'
        "fn main {\nentry:\n  movi r1, @blob\n  load r2, [r1]\n  out r2\n  halt\n}\n"
    )
    out = obfuscate_data(p, DiversityConfig(seed=3))
    blob = out.data[0]
    assert blob.data == bytes([blob.key, blob.key])
    assert blob.logical == b"\x00\x00"
    assert out.functions[0].name == DECODER_NAME
    assert out.function("main").blocks[0].instructions == (ins("call", DECODER_NAME),)
    assert traces(out) == traces(p)


def test_obfuscation_preserves_string_outputs(corpus):
    for name in ("strsearch", "backdoor", "statemachine"):
        p = corpus[name]
        for seed in range(5):
            assert traces(obfuscate_data(p, DiversityConfig(seed=seed))) == traces(p)


def test_empty_decoder_is_flag_controlled():
    p = program_of("movi r1, 3", "out r1", "halt")
    assert obfuscate_data(p, DiversityConfig(emit_empty_decoder=False)) == p
    with_decoder = obfuscate_data(p, DiversityConfig())
    assert with_decoder.functions[0].name == DECODER_NAME
    assert traces(with_decoder) == traces(p)


def test_decoder_preserves_caller_registers():
    p = parse_assembly('data msg = "hi"\nfn main {\nentry:\n  out r1\n  out r2\n  halt\n}\n')
    expected = traces(p)
    for seed in range(5):
        out = obfuscate_data(p, DiversityConfig(seed=seed))
        assert traces(out) == expected, seed
        assert traces(diversify(p, DiversityConfig(seed=seed))) == expected, seed


def test_decoder_restores_start_flags():
    # either branch is taken only if a flag was left set
    p = parse_assembly(
        'data msg = "ab"\n'
        "fn main {\nentry:\n  jz bad\n"
        "next:\n  jlt bad\n"
        "good:\n  movi r1, 1\n  out r1\n  halt\n"
        "bad:\n  movi r1, 2\n  out r1\n  halt\n}\n"
    )
    for seed in range(5):
        assert traces(diversify(p, DiversityConfig(seed=seed))) == traces(p)


# --- symbols and the full pipeline ---

def test_strip_symbols_drops_symtab(fib):
    stripped = strip_symbols(fib)
    assert len(encode(fib).layout) == 3
    assert len(encode(stripped).layout) == 2
    assert strip_symbols(stripped) == stripped
    assert encode(stripped).searchable == encode(fib).searchable


def test_identity_config_equals_stripping(corpus):
    for p in corpus.values():
        assert encode(diversify(p, identity_config(5))).raw == encode(strip_symbols(p)).raw


def test_diversify_is_seed_deterministic(fib):
    one, two = diversify(fib, DiversityConfig(seed=1)), diversify(fib, DiversityConfig(seed=2))
    assert encode(one).raw == encode(diversify(fib, DiversityConfig(seed=1))).raw
    assert encode(one).raw != encode(two).raw
    assert traces(one) == traces(fib) == traces(two)


def test_default_population_preserves_semantics(corpus_program):
    _, p = corpus_program
    expected = traces(p)
    for variant in diversify_population(p, DiversityConfig(seed=11), 10):
        assert traces(variant) == expected


def test_single_pass_configs_preserve_semantics(backdoor):
    for name in ("obfuscate_data", "substitute", "garbage", "nops", "reorder", "registers", "blocks"):
        cfg = only(enable={name: True}, seed=9)
        assert traces(diversify(backdoor, cfg)) == traces(backdoor), name


@pytest.mark.parametrize("program_seed", range(100))
def test_random_programs_diversify_equivalently(program_seed):
    p = random_program(program_seed)
    expected = traces(p)
    for seed in range(10):
        assert traces(diversify(p, DiversityConfig(seed=seed))) == expected, seed


@pytest.mark.parametrize("name", [name for name, _ in PIPELINE])
def test_disabled_pass_is_identity(corpus, name):
    cfg = DiversityConfig(seed=5, enable={name: False})
    for p in corpus.values():
        assert dict(PIPELINE)[name](p, cfg) == p


@pytest.mark.parametrize("transform", [insert_nops, insert_garbage])
def test_padding_passes_never_shrink_code(corpus, transform):
    for p in corpus.values():
        size = len(encode(p).code)
        for seed in range(5):
            for prob in (0.1, 0.5, 1.0):
                cfg = DiversityConfig(seed=seed, p_nop=prob, p_garbage=prob)
                once = transform(p, cfg)
                assert len(encode(once).code) >= size
                assert len(encode(transform(once, cfg.with_seed(seed + 100))).code) >= len(encode(once).code)


def test_backdoor_variants_have_distinct_code(backdoor):
    codes = [encode(v).code for v in diversify_population(backdoor, DiversityConfig(), 10)]
    assert len(set(codes)) == 10
