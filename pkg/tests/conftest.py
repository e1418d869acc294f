import pytest

from divlab.assembler import parse_assembly
from divlab.corpus import CORPUS_NAMES, INPUT_VECTORS, load_corpus, load_program
from divlab.encoding import encode
from divlab.interpreter import interpret, observable

FIB_OUTPUTS = (0, 1, 1, 2, 3, 5, 8, 13)


def assemble(source):
    return parse_assembly(source)


def program_of(*lines, name="main"):
    """One-block function `name` built from instruction lines."""
    body = "\n".join(f"    {line}" for line in lines)
    return parse_assembly(f"fn {name} {{\nentry:\n{body}\n}}\n")


def traces(p, vectors=INPUT_VECTORS):
    image = encode(p)
    return [observable(interpret(image, v)) for v in vectors]


@pytest.fixture(scope="session")
def corpus():
    return load_corpus()


@pytest.fixture(scope="session")
def fib():
    return load_program("fib")


@pytest.fixture(scope="session")
def backdoor():
    return load_program("backdoor")


@pytest.fixture(params=CORPUS_NAMES)
def corpus_program(request):
    return request.param, load_program(request.param)
