# ==============================================================================
# Module: diversification.py
# Description: Generates populations of diversified variants with per-variant
#              derived seeds, writes them with a manifest.csv (and the config
#              used) and checks variants against the source by interpreting
#              both on fixed input vectors.
# ==============================================================================
import json
import logging
import os
from dataclasses import dataclass
from typing import List, Sequence

import pandas as pd

from divlab.config import DiversityConfig, from_mapping
from divlab.corpus import INPUT_VECTORS
from divlab.diversifier import diversify, variant_seed
from divlab.encoding import ByteImage, encode, read_tbin, write_tbin
from divlab.errors import DivlabError, PopulationError
from divlab.interpreter import interpret, observable
from divlab.isa import Program
from divlab.log import COMPLETE, SEPARATOR, STATUS

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.csv"
CONFIG_NAME = "config.json"
MANIFEST_COLUMNS = ["source", "config_digest", "variant_id", "seed", "image", "byte_length", "sha256"]


@dataclass(frozen=True)
class Variant:
    variant_id: int
    seed: int
    program: Program
    image: ByteImage


def generate_population(program: Program, cfg: DiversityConfig, count: int) -> List[Variant]:
    if count < 1:
        raise PopulationError("population size must be >= 1")
    variants = []
    for i in range(count):
        seed = variant_seed(cfg.seed, i)
        variant = diversify(program, cfg.with_seed(seed))
        variants.append(Variant(i, seed, variant, encode(variant)))
    return variants


def image_name(variant_id):
    return f"variant_{variant_id:03d}.tbin"


def write_population(source, variants: Sequence[Variant], cfg: DiversityConfig, out_dir) -> pd.DataFrame:
    """Write every variant image, the manifest and the config; returns the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for v in variants:
        name = image_name(v.variant_id)
        write_tbin(v.image, os.path.join(out_dir, name))
        rows.append({
            "source": source,
            "config_digest": cfg.digest(),
            "variant_id": v.variant_id,
            "seed": v.seed,
            "image": name,
            "byte_length": len(v.image),
            "sha256": v.image.sha256(),
        })
    manifest = pd.DataFrame(rows, columns=MANIFEST_COLUMNS)
    manifest.to_csv(os.path.join(out_dir, MANIFEST_NAME), index=False, lineterminator="\n")
    with open(os.path.join(out_dir, CONFIG_NAME), "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    log.info("Population of %d variants written to: %s", len(variants), out_dir, extra=COMPLETE)
    return manifest


def read_manifest(out_dir) -> pd.DataFrame:
    # seeds are 64-bit unsigned; keep them exact
    return pd.read_csv(os.path.join(out_dir, MANIFEST_NAME), dtype={"seed": str, "sha256": str})


def read_config(out_dir) -> DiversityConfig:
    with open(os.path.join(out_dir, CONFIG_NAME), "r", encoding="utf-8") as fh:
        return from_mapping(json.load(fh))


def load_population(out_dir) -> List[ByteImage]:
    manifest = read_manifest(out_dir)
    return [read_tbin(os.path.join(out_dir, name)) for name in manifest["image"]]


def regenerate(program: Program, out_dir) -> pd.DataFrame:
    """Rebuild each manifest variant from its seed; one row per variant with a `reproduced` flag."""
    manifest = read_manifest(out_dir)
    cfg = read_config(out_dir)
    rows = []
    for _, row in manifest.iterrows():
        image = encode(diversify(program, cfg.with_seed(int(row["seed"]))))
        rows.append({
            "variant_id": int(row["variant_id"]),
            "reproduced": image.sha256() == row["sha256"],
        })
    return pd.DataFrame(rows, columns=["variant_id", "reproduced"])


def check_equivalence(source: ByteImage, variants: Sequence[ByteImage], inputs=INPUT_VECTORS) -> pd.DataFrame:
    """Compare observable traces (outputs and termination) of each variant with the source."""
    rows = []
    reference = [interpret(source, vector) for vector in inputs]
    for vid, image in enumerate(variants):
        for index, vector in enumerate(inputs):
            try:
                trace = interpret(image, vector)
                equal = observable(trace) == observable(reference[index])
                steps = trace.steps
            except DivlabError as e:
                log.error("Failed to run variant %d on vector %d: %s", vid, index, e)
                equal, steps = False, -1
            rows.append({
                "variant_id": vid,
                "vector": index,
                "equivalent": equal,
                "source_steps": reference[index].steps,
                "variant_steps": steps,
            })
    frame = pd.DataFrame(rows, columns=["variant_id", "vector", "equivalent", "source_steps", "variant_steps"])
    failed = int((~frame["equivalent"]).sum()) if not frame.empty else 0
    log.info(SEPARATOR)
    log.info("Equivalence: %d/%d runs match the source", len(frame) - failed, len(frame), extra=STATUS)
    return frame
