"""The committed toy-program corpus and the fixed input vectors used for equivalence checks."""
import os
from typing import Dict

from divlab.assembler import parse_assembly
from divlab.isa import Program

CORPUS_NAMES = ("fib", "sort", "strsearch", "checksum", "statemachine", "matmul", "bytecode", "backdoor")
INPUT_VECTORS = ((), (3, 1, 4, 1, 5), (7, 0, 2, 9, 6, 5, 3, 8))


def corpus_dir():
    return os.path.dirname(os.path.abspath(__file__))


def corpus_path(name):
    return os.path.join(corpus_dir(), f"{name}.tasm")


def load_program(name) -> Program:
    with open(corpus_path(name), "r", encoding="utf-8") as fh:
        return parse_assembly(fh.read())


def load_corpus() -> Dict[str, Program]:
    return {name: load_program(name) for name in CORPUS_NAMES}
