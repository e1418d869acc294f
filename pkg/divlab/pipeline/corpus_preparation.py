# ==============================================================================
# Module: corpus_preparation.py
# Description: Assembles every .tasm file of a corpus directory, writes the
#              encoded .tbin images and a size table that sorts programs
#              into "small" and "large" classes.
# ==============================================================================
import logging
import os
from dataclasses import dataclass, field
from typing import Dict

import pandas as pd

from divlab.assembler import parse_assembly
from divlab.encoding import ByteImage, encode, write_tbin
from divlab.errors import DivlabError
from divlab.isa import Program
from divlab.log import COMPLETE, SEPARATOR, SKIP, STATUS

log = logging.getLogger(__name__)

# instruction-count ranges per size class; small programs leave the diversifier less room
SIZE_CLASSES = {
    "small": (0, 100),
    "large": (100, None),
}


def size_class(instructions):
    for name, (low, high) in SIZE_CLASSES.items():
        if instructions >= low and (high is None or instructions < high):
            return name
    return "large"


@dataclass
class CorpusBatch:
    programs: Dict[str, Program] = field(default_factory=dict)
    images: Dict[str, ByteImage] = field(default_factory=dict)
    sizes: pd.DataFrame = None
    failed: int = 0


def size_row(name, program: Program, image: ByteImage):
    instructions = program.instruction_count()
    return {
        "program": name,
        "functions": len(program.functions),
        "blocks": sum(len(f.blocks) for f in program.functions),
        "instructions": instructions,
        "code_bytes": len(image.code),
        "data_bytes": len(image.region_bytes("data")),
        "size_class": size_class(instructions),
    }


def assemble_corpus(source_dir, target_dir=None) -> CorpusBatch:
    """Assemble each .tasm in `source_dir`; failures are logged and skipped."""
    batch = CorpusBatch()
    if not os.path.isdir(source_dir):
        raise DivlabError(f"corpus directory not found: {source_dir}")
    files = sorted(f for f in os.listdir(source_dir) if f.endswith(".tasm"))
    if not files:
        log.warning("No .tasm files found in: %s", source_dir)
    if target_dir:
        os.makedirs(target_dir, exist_ok=True)

    log.info("Assembling %d corpus programs...", len(files))
    rows = []
    for file in files:
        name = os.path.splitext(file)[0]
        try:
            with open(os.path.join(source_dir, file), "r", encoding="utf-8") as fh:
                program = parse_assembly(fh.read())
            image = encode(program)
            if target_dir:
                write_tbin(image, os.path.join(target_dir, f"{name}.tbin"))
            batch.programs[name] = program
            batch.images[name] = image
            rows.append(size_row(name, program, image))
            log.info("Processed: %s (%d instructions)", file, program.instruction_count(), extra=STATUS)
        except (DivlabError, OSError) as e:
            batch.failed += 1
            log.error("Failed to process %s: %s", file, e)

    batch.sizes = pd.DataFrame(rows, columns=[
        "program", "functions", "blocks", "instructions", "code_bytes", "data_bytes", "size_class",
    ])
    if batch.failed:
        log.warning("%d of %d corpus files skipped", batch.failed, len(files), extra=SKIP)
    log.info(SEPARATOR)
    log.info("Corpus ready: %d programs", len(batch.programs), extra=COMPLETE)
    return batch
