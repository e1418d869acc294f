import math

import numpy as np
import pytest

from divlab.config import DiversityConfig
from divlab.diversifier import DECODER_NAME, diversify_population, obfuscate_data
from divlab.encoding import ByteImage, Region, code_layout, decode, encode
from divlab.errors import PopulationError
from divlab.pipeline.signature_evasion import identical_copies, pairwise_longest
from divlab.signatures import (
    SUBSTRING_COLUMNS, SharedSubstring, Signature, Tag, category_counts, classify_subsequence,
    evasion_experiment, extract_signature, hash_match, lcp_array, length_histogram,
    match_signature, maximal_repeats, shared_substrings, substrings_frame, suffix_array, view_image,
)
from divlab.statistics import cumulative_counts


def raw_image(data: bytes) -> ByteImage:
    return ByteImage(data, (Region("code", 0, len(data)), Region("data", len(data), 0)))


def naive_maximal(texts, min_len, quorum):
    """Every substring maximal for its support set, by brute force."""
    def support(s):
        return frozenset(m for m, t in enumerate(texts) if s in t)

    alphabet = {b for t in texts for b in t}
    candidates = {t[i:j] for t in texts for i in range(len(t)) for j in range(i + min_len, len(t) + 1)}
    found = set()
    for s in candidates:
        members = support(s)
        if len(members) < quorum:
            continue
        extensions = [bytes([c]) + s for c in alphabet] + [s + bytes([c]) for c in alphabet]
        if all(support(e) != members for e in extensions):
            found.add((s, members))
    return found


@pytest.fixture(scope="module")
def fib_population(fib):
    return [encode(p) for p in diversify_population(fib, DiversityConfig(seed=3), 5)]


@pytest.fixture(scope="module")
def backdoor_population(backdoor):
    return [encode(p) for p in diversify_population(backdoor, DiversityConfig(seed=0), 10)]


def test_suffix_array_orders_suffixes():
    text = b"banana"
    sa = suffix_array(np.frombuffer(text, dtype=np.uint8).astype(np.int64)).tolist()
    assert sa == sorted(range(len(text)), key=lambda i: text[i:])
    assert lcp_array(list(text), sa) == [0, 1, 3, 0, 0, 2]


def test_threshold_boundary_example():
    subs = shared_substrings([raw_image(b"AAAAABBBBBC"), raw_image(b"XAAAAABBBBB")], 10, 2)
    assert [s.data for s in subs] == [b"AAAAABBBBB"]
    assert subs[0].support == frozenset({0, 1})
    assert subs[0].occurrences == ((0, 0), (1, 1))


def test_substring_dump_lists_hex_and_support():
    images = [raw_image(b"AAAAABBBBBC"), raw_image(b"XAAAAABBBBB")]
    frame = substrings_frame(shared_substrings(images, 10, 2), images)
    assert frame.to_dict("records") == [{
        "length": 10, "hex": b"AAAAABBBBB".hex(), "support": "0;1", "occurrences": 2, "regions": "code",
    }]
    assert list(substrings_frame((), images).columns) == list(SUBSTRING_COLUMNS)


def test_identical_images_share_one_whole_substring(backdoor):
    image = encode(backdoor)
    subs = shared_substrings(identical_copies(image, 2), 25, 2)
    assert len(subs) == 1
    assert subs[0].data == image.searchable


@pytest.mark.parametrize("seed", range(20))
def test_matches_naive_oracle(seed):
    rng = np.random.default_rng(seed)
    texts = [bytes(rng.choice([65, 66, 67], size=int(rng.integers(5, 40))).tolist()) for _ in range(5)]
    quorum = int(rng.integers(2, 6))
    got = {(s.data, s.support) for s in maximal_repeats(texts, 3, quorum)}
    assert got == naive_maximal(texts, 3, quorum)


def test_occurrences_point_at_the_substring():
    texts = [b"xxabcabcyy", b"abcabczz", b"qqabcabc"]
    for s in maximal_repeats(texts, 3, 2):
        for member, offset in s.occurrences:
            assert texts[member][offset:offset + s.length] == s.data
        assert {m for m, _ in s.occurrences} == set(s.support)


def test_argument_validation(fib_population):
    with pytest.raises(PopulationError):
        shared_substrings(fib_population, 10, 6)
    with pytest.raises(PopulationError):
        shared_substrings([], 10, 2)
    with pytest.raises(PopulationError):
        maximal_repeats([b"abc", b"abc"], 0, 2)


def test_quorum_monotonicity(fib_population, backdoor_population):
    for population in (fib_population, backdoor_population[:5]):
        results = {q: shared_substrings(population, 10, q) for q in (2, 3, 4, 5)}
        counts = [len(results[q]) for q in (2, 3, 4, 5)]
        assert counts == sorted(counts, reverse=True)
        for q in (3, 4, 5):
            wider = {(s.data, s.support) for s in results[q - 1]}
            assert {(s.data, s.support) for s in results[q]} <= wider
        for q in (2, 3, 4, 5):
            at_least = cumulative_counts(length_histogram(results[q]))["count_at_least"].tolist()
            assert at_least == sorted(at_least, reverse=True)


def test_length_histogram():
    assert length_histogram([]) == {}
    subs = [SharedSubstring(b"x" * 12, frozenset({0, 1}), ()), SharedSubstring(b"y" * 12, frozenset({0, 1}), ())]
    assert length_histogram(subs) == {12: 2}


def test_histogram_total_matches_substring_count(fib_population):
    subs = shared_substrings(fib_population, 10, 2)
    assert sum(length_histogram(subs).values()) == len(subs)


def test_nop_sled_classification():
    s = SharedSubstring(bytes(12), frozenset({0, 1}), ((0, 0), (1, 0)))
    assert classify_subsequence(s, []).tag is Tag.NOP_SLED


def test_category_totals_partition_substrings(backdoor_population):
    population = backdoor_population[:5]
    subs = shared_substrings(population, 10, 2)
    counts = category_counts(subs, population)
    assert set(counts) == {tag.value for tag in Tag}
    assert sum(counts.values()) == len(subs)


def test_signature_from_identical_images(fib):
    image = encode(fib)
    sig = extract_signature([image, image], 10)
    assert sig.data == image.searchable
    assert match_signature(sig, image)


def test_no_signature_without_common_run():
    assert extract_signature([raw_image(b"abcdefghijkl"), raw_image(b"mnopqrstuvwx")], 10) is None


def test_signature_is_longest_common_substring(backdoor_population):
    subset = backdoor_population[:3]
    sig = extract_signature(subset, 25)
    if sig is None:
        assert not shared_substrings(subset, 25, 3)
        return
    assert all(match_signature(sig, img) for img in subset)
    assert len(sig) == max(s.length for s in shared_substrings(subset, 25, 3))


def test_flipped_byte_breaks_match():
    data = bytes(range(40))
    sig = Signature(data[5:30], (0,))
    assert match_signature(sig, raw_image(data))
    flipped = bytearray(data)
    flipped[17] ^= 0xFF
    assert not match_signature(sig, raw_image(bytes(flipped)))
    with pytest.raises(ValueError):
        match_signature(Signature(b"", ()), raw_image(data))


def test_hash_match(fib):
    image = encode(fib)
    assert hash_match(image, image)
    other = encode(diversify_population(fib, DiversityConfig(), 1)[0])
    assert not hash_match(image, other)


def test_identical_copies_always_match(backdoor):
    report = evasion_experiment(identical_copies(encode(backdoor), 10), 2, 25, 20)
    assert report.mean_match_rate == 1.0
    assert report.no_signature_trials == 0


def test_no_signature_trials_are_recorded():
    population = [raw_image(bytes([i]) * 30) for i in range(4)]
    report = evasion_experiment(population, 2, 25, 5)
    assert report.no_signature_trials == 5
    assert math.isnan(report.mean_match_rate)
    assert report.to_frame()["signature_length"].isna().all()


def test_evasion_on_diversified_population(backdoor_population, corpus):
    benign = [encode(p) for name, p in corpus.items() if name != "backdoor"]
    report = evasion_experiment(backdoor_population, 2, 25, 20, benign=benign)
    rate = report.mean_match_rate
    assert math.isnan(rate) or rate <= 0.5
    assert len(report.to_frame()) == 20


def test_evasion_rejects_bad_k(fib_population):
    with pytest.raises(PopulationError):
        evasion_experiment(fib_population, 5, 25, 1)


def test_diversity_effect_on_longest_shared_run(backdoor, backdoor_population):
    assert pairwise_longest(backdoor_population)["fraction"].max() < 0.5
    control = pairwise_longest(identical_copies(encode(backdoor), 2))
    assert control["fraction"].tolist() == [1.0]


def test_decoder_body_is_start_code(corpus):
    image = encode(obfuscate_data(corpus["strsearch"], DiversityConfig(seed=2)))
    functions, _, code_end = code_layout(decode(image))
    begin = functions[DECODER_NAME]
    end = min([off for off in functions.values() if off > begin] + [code_end])
    s = SharedSubstring(image.code[begin:end], frozenset({0, 1}), ((0, begin), (1, begin)))
    views = [view_image(image), view_image(image)]
    assert classify_subsequence(s, views).tag is Tag.START_CODE
