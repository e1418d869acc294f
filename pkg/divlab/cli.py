"""divlab command line: assemble, run, diversify, analyze, experiment, verify."""
import argparse
import logging
import os
import sys

import pandas as pd

from divlab.assembler import parse_assembly
from divlab.config import DiversityConfig, from_mapping, load_config, parse_config
from divlab.corpus import INPUT_VECTORS, corpus_dir
from divlab.encoding import decode, encode, read_tbin, write_tbin
from divlab.errors import ConfigError, DivlabError
from divlab.interpreter import Termination, interpret
from divlab.isa import DEFAULT_STEP_LIMIT
from divlab.log import SEPARATOR, configure_logging
from divlab.metrics import mnemonic_histogram
from divlab.pipeline import similarity_analysis as sim
from divlab.pipeline.diversification import (
    check_equivalence, generate_population, load_population, read_manifest, regenerate,
    write_population,
)
from divlab.pipeline.full_experiment import ExperimentSettings, run_full_experiment
from divlab.pipeline.report import ExperimentReport

log = logging.getLogger("divlab.cli")

EXIT_OK, EXIT_ERROR, EXIT_STEP_LIMIT, EXIT_FAULT = 0, 1, 2, 3
_EXIT_FOR = {
    Termination.HALTED: EXIT_OK,
    Termination.STEP_LIMIT: EXIT_STEP_LIMIT,
    Termination.FAULT: EXIT_FAULT,
}
ANALYSES = ("subseq", "histogram", "s-matrix", "jaccard", "cfg", "canon")


def default_out():
    return os.environ.get("DIVLAB_OUT_DIR", "divlab_out")


def _read_text(path):
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def load_program(path):
    """A Program from .tasm source or a .tbin image."""
    if path.endswith(".tbin"):
        return decode(read_tbin(path))
    return parse_assembly(_read_text(path))


def load_image(path):
    if path.endswith(".tbin"):
        return read_tbin(path)
    return encode(parse_assembly(_read_text(path)))


def _parse_inputs(text):
    if not text:
        return ()
    try:
        return tuple(int(v, 0) for v in text.replace(",", " ").split())
    except ValueError as e:
        raise ConfigError(f"malformed input list {text!r}") from e


def build_config(args) -> DiversityConfig:
    """Config file first, then --set overrides, then the dedicated flags."""
    cfg = load_config(args.config) if args.config else DiversityConfig()
    for assignment in args.set or ():
        cfg = parse_config(assignment, cfg)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.identity:
        overrides["identity"] = True
    return from_mapping(overrides, cfg) if overrides else cfg


# --- subcommands -------------------------------------------------------------------

def cmd_assemble(args):
    image = encode(parse_assembly(_read_text(args.input)))
    output = args.output or os.path.splitext(args.input)[0] + ".tbin"
    write_tbin(image, output)
    log.info("Assembled %s -> %s (%d bytes)", args.input, output, len(image))
    return EXIT_OK


def cmd_run(args):
    trace = interpret(load_image(args.image), _parse_inputs(args.inputs), args.step_limit)
    for value in trace.outputs:
        print(value)
    print(trace.describe(), file=sys.stderr)
    return _EXIT_FOR[trace.termination]


def cmd_diversify(args):
    cfg = build_config(args)
    program = load_program(args.input)
    variants = generate_population(program, cfg, args.variants)
    manifest = write_population(args.input, variants, cfg, args.out)
    print(manifest.to_string(index=False))
    return EXIT_OK


def _populations(dirs):
    images = {}
    for d in dirs:
        name = os.path.basename(os.path.normpath(d))
        images[name] = load_population(d)
    return images


def cmd_analyze(args):
    images = _populations(args.populations)
    programs = {name: [decode(img) for img in pop] for name, pop in images.items()}
    report = ExperimentReport(f"analyze-{args.analysis}", {
        "populations": sorted(images),
        "min_len": args.min_len,
        "quorum": args.quorum,
        "ngram": args.ngram,
        "metric": args.metric,
        "aggregation": args.aggregation,
    })
    out = args.out
    if args.analysis == "subseq":
        frames, dumps = [], []
        for name, pop in images.items():
            quorums = args.quorum or [q for q in sim.QUORUMS if q <= len(pop)]
            frame, substrings = sim.subsequence_analysis(pop, args.min_len, quorums)
            frame.insert(0, "population", name)
            substrings.insert(0, "population", name)
            frames.append(frame)
            dumps.append(substrings)
        hist = report.add_payload(pd.concat(frames, ignore_index=True), out, "subseq_histograms")
        report.add_payload(pd.concat(dumps, ignore_index=True), out, "subseq_substrings")
        for q, count in hist.groupby("quorum")["count"].sum().items():
            report.summary[f"quorum_{q}.count"] = int(count)
    elif args.analysis == "histogram":
        rows = []
        for name, pop in programs.items():
            for vid, p in enumerate(pop):
                h = mnemonic_histogram(p, args.ngram)
                rows.extend({"population": name, "variant_id": vid, "key": " ".join(k), "count": c}
                            for k, c in sorted(h.counts.items()))
        frame = report.add_payload(pd.DataFrame(rows, columns=["population", "variant_id", "key", "count"]),
                                   out, "histograms")
        report.summary["distinct_keys"] = int(frame["key"].nunique())
    elif args.analysis == "canon":
        digests = report.add_payload(sim.canonical_digest_table(programs), out, "canonical_digests")
        report.summary.update(sim.digest_summary(digests))
    else:
        metric = {"s-matrix": "S", "cfg": "cfg"}.get(args.analysis, args.metric)
        if args.analysis == "jaccard" and metric not in ("jaccard_pairs", "jaccard_weighted"):
            metric = "jaccard_weighted"
        long, groups = sim.matrix_frames(programs, metric, args.ngram, args.aggregation)
        report.add_payload(long, out, f"matrix_{metric}")
        groups = report.add_payload(groups, out, f"groups_{metric}")
        for _, row in groups.iterrows():
            report.summary[f"{row['program']}.within_{args.aggregation}"] = float(row[row["program"]])
    report.write(out)
    report.print_summary()
    return EXIT_OK


def cmd_experiment(args):
    cfg = build_config(args)
    settings = ExperimentSettings(variants=args.variants, trials=args.trials, min_len=args.min_len)
    report = run_full_experiment(args.corpus or corpus_dir(), args.out, cfg, settings)
    report.print_summary()
    return EXIT_OK


def cmd_verify(args):
    program = load_program(args.source)
    reproduced = regenerate(program, args.population)
    manifest = read_manifest(args.population)
    images = load_population(args.population)
    equivalence = check_equivalence(encode(program), images, INPUT_VECTORS)
    ok = bool(reproduced["reproduced"].all()) and bool(equivalence["equivalent"].all())
    print(SEPARATOR)
    print(f"Variants           : {len(manifest)}")
    print(f"Reproduced         : {int(reproduced['reproduced'].sum())}/{len(reproduced)}")
    print(f"Equivalent runs    : {int(equivalence['equivalent'].sum())}/{len(equivalence)}")
    print(SEPARATOR)
    return EXIT_OK if ok else EXIT_ERROR


# --- parser ---------------------------------------------------------------------------

def _config_flags(p):
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
    p.add_argument("--seed", type=int)
    p.add_argument("--identity", action="store_true", help="skip every pass but symbol stripping")


def build_parser():
    parser = argparse.ArgumentParser(prog="divlab", description="toy-ISA diversification lab")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assemble", help="assemble .tasm into a .tbin image")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("run", help="interpret an image (.tbin or .tasm)")
    p.add_argument("image")
    p.add_argument("--inputs", default="", help="comma separated input words")
    p.add_argument("--step-limit", type=int, default=DEFAULT_STEP_LIMIT)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("diversify", help="write a population of variants and its manifest")
    p.add_argument("input")
    p.add_argument("--variants", type=int, default=10)
    p.add_argument("--out", default=default_out())
    _config_flags(p)
    p.set_defaults(func=cmd_diversify)

    p = sub.add_parser("analyze", help="similarity analyses over population directories")
    p.add_argument("analysis", choices=ANALYSES)
    p.add_argument("populations", nargs="+", help="directories holding manifest.csv")
    p.add_argument("--min-len", type=int, default=10)
    p.add_argument("--quorum", type=int, action="append")
    p.add_argument("--ngram", type=int, default=1)
    p.add_argument("--metric", default="jaccard_weighted", choices=("jaccard_pairs", "jaccard_weighted"))
    p.add_argument("--aggregation", default="mean", choices=("mean", "min"))
    p.add_argument("--out", default=default_out())
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("experiment", help="full experiment over a corpus directory")
    p.add_argument("corpus", nargs="?")
    p.add_argument("--variants", type=int, default=10)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--min-len", type=int, default=25)
    p.add_argument("--out", default=default_out())
    _config_flags(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("verify", help="regenerate a population and check trace equivalence")
    p.add_argument("population")
    p.add_argument("--source", required=True)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.func(args)
    except (DivlabError, OSError) as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
