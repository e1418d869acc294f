import filecmp
import os
import shutil

import pandas as pd
import pytest

from conftest import FIB_OUTPUTS
from divlab.cli import EXIT_ERROR, EXIT_FAULT, EXIT_OK, EXIT_STEP_LIMIT, main
from divlab.config import DiversityConfig, identity_config
from divlab.corpus import corpus_path
from divlab.diversifier import strip_symbols
from divlab.encoding import encode
from divlab.errors import PopulationError
from divlab.pipeline import similarity_analysis as sim
from divlab.pipeline.corpus_preparation import assemble_corpus, size_class
from divlab.pipeline.diversification import (
    check_equivalence, generate_population, load_population, read_config, read_manifest,
    regenerate, write_population,
)
from divlab.pipeline.full_experiment import ExperimentSettings, run_full_experiment
from divlab.pipeline.report import ExperimentReport, load_report
from divlab.pipeline.signature_evasion import hash_matches


def _write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return str(path)


# --- populations ---

def test_population_is_reproducible(tmp_path, fib):
    cfg = DiversityConfig(seed=7)
    first = write_population("fib", generate_population(fib, cfg, 10), cfg, tmp_path / "a")
    second = write_population("fib", generate_population(fib, cfg, 10), cfg, tmp_path / "b")
    pd.testing.assert_frame_equal(first, second)
    assert filecmp.cmp(tmp_path / "a" / "manifest.csv", tmp_path / "b" / "manifest.csv", shallow=False)
    assert first["sha256"].nunique() == 10
    assert read_config(tmp_path / "a") == cfg
    assert read_manifest(tmp_path / "a")["seed"].tolist() == [str(s) for s in first["seed"]]


def test_regenerate_and_equivalence(tmp_path, backdoor):
    cfg = DiversityConfig(seed=3)
    write_population("backdoor", generate_population(backdoor, cfg, 4), cfg, tmp_path)
    assert regenerate(backdoor, tmp_path)["reproduced"].all()
    frame = check_equivalence(encode(backdoor), load_population(tmp_path))
    assert len(frame) == 4 * 3
    assert frame["equivalent"].all()


def test_single_identity_variant_is_stripped_source(fib):
    (variant,) = generate_population(fib, identity_config(1), 1)
    assert variant.image.raw == encode(strip_symbols(fib)).raw
    with pytest.raises(PopulationError):
        generate_population(fib, DiversityConfig(), 0)


def test_hash_scanner_sees_no_duplicates(fib):
    variants = generate_population(fib, DiversityConfig(seed=5), 6)
    assert hash_matches([v.image for v in variants]) == 0
    image = encode(fib)
    assert hash_matches([image, image, image]) == 3


# --- corpus and reports ---

def test_size_classes():
    assert size_class(0) == "small"
    assert size_class(99) == "small"
    assert size_class(100) == "large"


def test_assemble_corpus_skips_broken_files(tmp_path):
    shutil.copy(corpus_path("fib"), tmp_path / "fib.tasm")
    _write(tmp_path / "broken.tasm", "fn main {\nentry:\n  bogus r0\n}\n")
    batch = assemble_corpus(tmp_path, tmp_path / "out")
    assert list(batch.programs) == ["fib"]
    assert batch.failed == 1
    assert (tmp_path / "out" / "fib.tbin").exists()
    assert batch.sizes.loc[0, "size_class"] == "small"


def test_report_round_trip(tmp_path):
    report = ExperimentReport("unit", {"seed": 1})
    frame = pd.DataFrame({"x": [1 / 3, 2 / 3], "y": [1, 2]})
    written = report.add_payload(frame, tmp_path, "values")
    assert written["x"].tolist() == [0.3333, 0.6667]
    report.summary["x.mean"] = float(written["x"].mean())
    report.summary["missing"] = float("nan")
    report.write(tmp_path)
    loaded = load_report(tmp_path)
    assert loaded.payloads == {"values": "values.csv"}
    assert loaded.summary["missing"] is None
    on_disk = pd.read_csv(tmp_path / loaded.payloads["values"])
    assert loaded.summary["x.mean"] == float(on_disk["x"].mean())


def test_ngram_tendency_on_corpus_populations(corpus):
    populations = {
        name: [v.program for v in generate_population(p, DiversityConfig(seed=1), 4)]
        for name, p in corpus.items()
    }
    _, tendency = sim.ngram_analysis(populations)
    assert tendency["n"].tolist()[0] == 1
    assert tendency["within_slack"].all()


# --- command line ---

def test_cli_assemble_and_run(tmp_path, capsys):
    image = str(tmp_path / "fib.tbin")
    assert main(["assemble", corpus_path("fib"), "-o", image]) == EXIT_OK
    capsys.readouterr()
    assert main(["run", image]) == EXIT_OK
    out = capsys.readouterr()
    assert tuple(int(v) for v in out.out.split()) == FIB_OUTPUTS
    assert "halted" in out.err


def test_cli_run_inputs(tmp_path, capsys):
    src = _write(tmp_path / "echo.tasm",
                 "fn main {\nentry:\n  movi r7, 0\n  load r1, [r7+65532]\n  out r1\n  halt\n}\n")
    assert main(["run", src, "--inputs", "41,2"]) == EXIT_OK
    assert capsys.readouterr().out.split() == ["41"]


def test_cli_exit_codes(tmp_path, capsys):
    bad = _write(tmp_path / "bad.tasm", "fn main {\nentry:\n  bogus r0\n}\n")
    assert main(["assemble", bad]) == EXIT_ERROR
    assert "[ERROR]" in capsys.readouterr().err

    loop = _write(tmp_path / "loop.tasm", "fn main {\nentry:\n  jmp entry\n}\n")
    assert main(["run", loop, "--step-limit", "100"]) == EXIT_STEP_LIMIT

    fault = _write(tmp_path / "fault.tasm",
                   "fn main {\nentry:\n  movi r1, 65535\n  load r2, [r1]\n  halt\n}\n")
    assert main(["run", fault]) == EXIT_FAULT
    assert "out-of-bounds" in capsys.readouterr().err

    assert main(["run", str(tmp_path / "missing.tbin")]) == EXIT_ERROR


def test_cli_diversify_analyze_verify(tmp_path, capsys):
    population = str(tmp_path / "fib")
    assert main(["diversify", corpus_path("fib"), "--variants", "4", "--seed", "2", "--out", population]) == EXIT_OK
    assert len(read_manifest(population)) == 4

    assert main(["verify", population, "--source", corpus_path("fib")]) == EXIT_OK
    assert "Reproduced         : 4/4" in capsys.readouterr().out

    out = str(tmp_path / "jaccard")
    assert main(["analyze", "jaccard", population, "--metric", "jaccard_pairs", "--out", out]) == EXIT_OK
    assert load_report(out).summary["fib.within_mean"] <= 1.0

    out = str(tmp_path / "subseq")
    assert main(["analyze", "subseq", population, "--quorum", "2", "--out", out]) == EXIT_OK
    assert set(pd.read_csv(os.path.join(out, "subseq_histograms.csv"))["quorum"]) <= {2}
    dumps = pd.read_csv(os.path.join(out, "subseq_substrings.csv"), dtype={"hex": str, "support": str})
    assert set(dumps["quorum"]) <= {2}
    assert all(len(s.split(";")) >= 2 for s in dumps["support"])
    assert "subseq_substrings" in load_report(out).payloads


def test_cli_canon_collapses_nop_only_population(tmp_path):
    population = str(tmp_path / "fib")
    off = ["obfuscate_data", "substitute", "garbage", "reorder", "registers", "blocks"]
    flags = [arg for name in off for arg in ("--set", f"enable.{name} = false")]
    assert main(["diversify", corpus_path("fib"), "--variants", "5", "--out", population] + flags) == EXIT_OK
    out = str(tmp_path / "canon")
    assert main(["analyze", "canon", population, "--out", out]) == EXIT_OK
    assert load_report(out).summary["max_digests_per_program"] == 1


def test_cli_rejects_bad_config(tmp_path, capsys):
    args = ["diversify", corpus_path("fib"), "--out", str(tmp_path), "--set", "bogus = 1"]
    assert main(args) == EXIT_ERROR
    assert "unknown config keys" in capsys.readouterr().err


# --- end to end ---

def _tree(root):
    return sorted(os.path.relpath(os.path.join(d, f), root) for d, _, files in os.walk(root) for f in files)


def test_full_experiment_is_deterministic(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    for name in ("fib", "sort"):
        shutil.copy(corpus_path(name), corpus / f"{name}.tasm")
    settings = ExperimentSettings(variants=4, trials=2, subseq_variants=3)
    first = run_full_experiment(corpus, tmp_path / "one", DiversityConfig(seed=4), settings)
    run_full_experiment(corpus, tmp_path / "two", DiversityConfig(seed=4), settings)

    files = _tree(tmp_path / "one")
    assert files == _tree(tmp_path / "two")
    assert "report.json" in files
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "one", tmp_path / "two", files, shallow=False)
    assert not mismatch and not errors

    assert first.summary["equivalence.rate"] == 1.0
    assert first.summary["corpus.programs"] == 2
    assert first.summary["evasion.control.mean_match_rate"] == 1.0
    for path in first.payloads.values():
        assert os.path.exists(tmp_path / "one" / path)

    longest = pd.read_csv(tmp_path / "one" / first.payloads["longest_shared"])
    assert longest.groupby("program").size().to_dict() == {"fib": 6, "sort": 6}
    dumps = pd.read_csv(tmp_path / "one" / first.payloads["subseq_substrings"], dtype={"hex": str})
    assert set(dumps["quorum"]) <= {2, 3}
    assert (dumps["hex"].str.len() == 2 * dumps["length"]).all()
