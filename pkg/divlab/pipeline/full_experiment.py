# ==============================================================================
# Module: full_experiment.py
# Description: End-to-end run over a corpus directory:
#              1. assemble the corpus and record program sizes,
#              2. generate one diversified population per program and check
#                 every variant against its source on the input vectors,
#              3. similarity analyses (substring histograms, n-gram tables,
#                 S / Jaccard / CFG group tables, canonical digests),
#              4. signature evasion with the other programs' variants as the
#                 benign pool, plus the identical-copies control arm.
#              The output tree is a pure function of (corpus, config, seed).
# ==============================================================================
import logging
import os
from dataclasses import dataclass
from typing import Dict, List

import numpy as np
import pandas as pd

from divlab.config import DiversityConfig, collapse_config
from divlab.diversifier import diversify_population
from divlab.encoding import encode
from divlab.errors import DivlabError, PopulationError
from divlab.log import BANNER, COMPLETE, SEPARATOR
from divlab.pipeline import similarity_analysis as sim
from divlab.pipeline.corpus_preparation import assemble_corpus
from divlab.pipeline.diversification import check_equivalence, generate_population, write_population
from divlab.pipeline.report import ExperimentReport
from divlab.pipeline.signature_evasion import identical_copies, pairwise_longest, run_evasion
from divlab.signatures import SIGNATURE_MIN_LEN

log = logging.getLogger(__name__)

MATRIX_METRICS = ("S", "jaccard_pairs", "jaccard_weighted", "cfg")


@dataclass(frozen=True)
class ExperimentSettings:
    variants: int = 10
    k: int = 2
    min_len: int = SIGNATURE_MIN_LEN
    subseq_min_len: int = 10
    trials: int = 20
    # structural similarity protocol: lowest similarity within this many variants
    cfg_min_variants: int = 5
    subseq_variants: int = 5


def _group_means(table: pd.DataFrame):
    values = table.set_index("program").to_numpy(dtype=float)
    diagonal = np.diag(values)
    off = values[~np.eye(len(values), dtype=bool)]
    return float(diagonal.mean()), float(off.mean()) if off.size else float("nan")


def run_full_experiment(corpus_dir, out_dir, cfg: DiversityConfig = None,
                        settings: ExperimentSettings = None) -> ExperimentReport:
    cfg = cfg or DiversityConfig()
    settings = settings or ExperimentSettings()
    os.makedirs(out_dir, exist_ok=True)
    report = ExperimentReport("full_experiment", {
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "variants": settings.variants,
        "k": settings.k,
        "min_len": settings.min_len,
        "subseq_min_len": settings.subseq_min_len,
        "trials": settings.trials,
    })

    # --- 1. corpus ---
    corpus = assemble_corpus(corpus_dir, os.path.join(out_dir, "corpus"))
    if len(corpus.programs) < 2:
        raise PopulationError("the full experiment needs at least two corpus programs")
    sizes = report.add_payload(corpus.sizes, os.path.join(out_dir, "corpus"), "sizes", out_dir)
    report.summary["corpus.programs"] = int(len(sizes))
    report.summary["corpus.failed"] = corpus.failed
    names = list(corpus.programs)

    # --- 2. populations ---
    programs: Dict[str, List] = {}
    images: Dict[str, List] = {}
    equivalence = []
    for name in names:
        log.info(SEPARATOR)
        log.info("Diversifying %s ...", name)
        try:
            variants = generate_population(corpus.programs[name], cfg, settings.variants)
            write_population(name, variants, cfg, os.path.join(out_dir, "populations", name))
            frame = check_equivalence(corpus.images[name], [v.image for v in variants])
            frame.insert(0, "program", name)
            equivalence.append(frame)
            programs[name] = [v.program for v in variants]
            images[name] = [v.image for v in variants]
        except DivlabError as e:
            log.error("Failed to process %s: %s", name, e)
    equivalence = report.add_payload(pd.concat(equivalence, ignore_index=True),
                                     os.path.join(out_dir, "populations"), "equivalence", out_dir)
    report.summary["equivalence.rate"] = float(equivalence["equivalent"].astype(bool).mean())
    names = [name for name in names if name in programs]

    # --- 3. similarity ---
    sim_dir = os.path.join(out_dir, "similarity")
    histograms, dumps = [], []
    for name in names:
        subset = images[name][:settings.subseq_variants]
        quorums = [q for q in sim.QUORUMS if q <= len(subset)]
        frame, substrings = sim.subsequence_analysis(subset, settings.subseq_min_len, quorums)
        frame.insert(0, "program", name)
        substrings.insert(0, "program", name)
        histograms.append(frame)
        dumps.append(substrings)
    histograms = report.add_payload(pd.concat(histograms, ignore_index=True), sim_dir, "subseq_histograms", out_dir)
    report.add_payload(pd.concat(dumps, ignore_index=True), sim_dir, "subseq_substrings", out_dir)
    for q, count in histograms.groupby("quorum")["count"].sum().items():
        report.summary[f"subseq.quorum_{q}.count"] = int(count)
    fits = []
    for name, group in histograms.groupby("program", sort=False):
        frame = sim.decay_fits(group)
        frame.insert(0, "program", name)
        fits.append(frame)
    fits = report.add_payload(pd.concat(fits, ignore_index=True), sim_dir, "subseq_decay", out_dir)
    report.summary["subseq.decay.mean_slope"] = float(fits["slope"].mean())

    table, tendency = sim.ngram_analysis(programs)
    report.add_payload(table, sim_dir, "ngram_S", out_dir)
    tendency = report.add_payload(tendency, sim_dir, "ngram_tendency", out_dir)
    for _, row in tendency.iterrows():
        report.summary[f"ngram.n{int(row['n'])}.mean_S"] = float(row["mean_S"])

    for metric in MATRIX_METRICS:
        long, groups = sim.matrix_frames(programs, metric)
        report.add_payload(long, sim_dir, f"matrix_{metric}", out_dir)
        groups = report.add_payload(groups, sim_dir, f"groups_{metric}", out_dir)
        within, cross = _group_means(groups)
        report.summary[f"similarity.{metric}.within_mean"] = within
        report.summary[f"similarity.{metric}.cross_mean"] = cross
    subsets = {name: population[:settings.cfg_min_variants] for name, population in programs.items()}
    _, cfg_min = sim.matrix_frames(subsets, "cfg", aggregation="min")
    cfg_min = report.add_payload(cfg_min, sim_dir, "groups_cfg_min", out_dir)
    report.summary["similarity.cfg.within_min"] = float(np.diag(cfg_min.set_index("program").to_numpy(dtype=float)).mean())

    digests = sim.canonical_digest_table(programs)
    digests = report.add_payload(digests, sim_dir, "canonical_default", out_dir)
    collapsing = {
        name: diversify_population(corpus.programs[name], collapse_config(cfg.seed), settings.variants)
        for name in names
    }
    collapse = report.add_payload(sim.canonical_digest_table(collapsing), sim_dir, "canonical_collapse", out_dir)
    for key, value in sim.digest_summary(collapse).items():
        report.summary[f"canonical.collapse.{key}"] = value
    report.summary["canonical.default.max_digests_per_program"] = sim.digest_summary(digests)["max_digests_per_program"]

    # --- 4. evasion ---
    ev_dir = os.path.join(out_dir, "evasion")
    trials, controls, longest = [], [], []
    for name in names:
        benign = [img for other in names if other != name for img in images[other]]
        result = run_evasion(name, images[name], benign, settings.k, settings.min_len, settings.trials, cfg.seed)
        frame = result.to_frame()
        frame.insert(0, "program", name)
        trials.append(frame)
        control = run_evasion(f"{name} (identical copies)",
                              identical_copies(encode(corpus.programs[name]), settings.variants),
                              (), settings.k, settings.min_len, settings.trials, cfg.seed)
        frame = control.to_frame()
        frame.insert(0, "program", name)
        controls.append(frame)
        frame = pairwise_longest(images[name])
        frame.insert(0, "program", name)
        longest.append(frame)
    trials = report.add_payload(pd.concat(trials, ignore_index=True), ev_dir, "trials", out_dir)
    controls = report.add_payload(pd.concat(controls, ignore_index=True), ev_dir, "control_trials", out_dir)
    longest = report.add_payload(pd.concat(longest, ignore_index=True), ev_dir, "longest_shared", out_dir)
    report.summary["evasion.mean_match_rate"] = float(trials["match_rate"].mean())
    report.summary["evasion.mean_false_positive_rate"] = float(trials["false_positive_rate"].mean())
    report.summary["evasion.no_signature_trials"] = int(trials["signature_length"].isna().sum())
    report.summary["evasion.control.mean_match_rate"] = float(controls["match_rate"].mean())
    report.summary["diversity.max_longest_fraction"] = float(longest["fraction"].max())

    report.write(out_dir)
    log.info(BANNER)
    log.info("Full experiment written to: %s", out_dir, extra=COMPLETE)
    return report
